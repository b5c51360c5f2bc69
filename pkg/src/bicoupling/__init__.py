"""Bi-coupling distances, tree observables and mean-field dynamics on the torus."""
