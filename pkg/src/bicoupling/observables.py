"""Tree-indexed observables and the weighted-supremum observable metric.

An observable of a tree T with signature s is the measure on T^{|heads|}

    tau = N^{-v} sum_{l in [N]^v} prod_{(i,j) in e, s_ij = 1} w[l_i, l_j]  (x)_{j in heads} delta_{X[l_j]}

for a finite system, and the analogous class-weighted mixture of density
tensors for a step-graphon continuum system.  Observables are stored as sums
of product-supported components: every axis has a support (agent states or
grid cells) and a weight tensor lives on the product of the supports.  This
keeps H^-1 tensor inner products exact and cheap: they are contractions of
the weight tensors with one Gram matrix per axis.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .systems import ContinuumSystem, FiniteSystem
from .torus import (
    LAMBDA_MAX,
    AtomicMeasure,
    h_neg1_tensor_inner,
    kernel_atoms_cells,
    kernel_cells_cells,
    lambda_kernel,
)
from .trees import EdgeSignature, OrientedTree, enumerate_trees, signatures

__all__ = [
    "Cells",
    "ProductComponent",
    "Observable",
    "plain_observable",
    "plain_observable_norep",
    "law_observable",
    "continuum_observable",
    "observable_inner",
    "observable_distance",
    "pushforward_to_normal",
    "term_weight",
    "MetricTerm",
    "MetricResult",
    "observable_metric",
    "network_inner",
    "MAX_HEADS",
]

MAX_HEADS = 3
NOREP_MAX_VERTICES = 4
NOREP_MAX_TUPLES = 10**8
GRID_MAX_HEADS = 2
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class Cells:
    """Axis support made of the G cells of the uniform torus grid."""

    grid_size: int

    def __len__(self) -> int:
        return self.grid_size


def _axis_gram(sa, sb) -> np.ndarray:
    """Gram matrix of H^-1 inner products between the unit masses of two supports.

    Agent states carry Dirac masses; a cell carries the uniform probability on
    that cell.
    """
    if isinstance(sa, Cells) and isinstance(sb, Cells):
        if sa.grid_size != sb.grid_size:
            raise ValueError("grid observables must share a grid size")
        return kernel_cells_cells(sa.grid_size)
    if isinstance(sa, Cells):
        return kernel_atoms_cells(sb, sa.grid_size).T
    if isinstance(sb, Cells):
        return kernel_atoms_cells(sa, sb.grid_size)
    return lambda_kernel(np.asarray(sa)[:, None] - np.asarray(sb)[None, :])


@dataclass(frozen=True, eq=False)
class ProductComponent:
    """Weight tensor on the product of per-axis supports."""

    supports: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        supports = tuple(s if isinstance(s, Cells) else np.asarray(s, dtype=float) for s in self.supports)
        if w.shape != tuple(len(s) for s in supports):
            raise ValueError(f"weight tensor {w.shape} does not match supports {[len(s) for s in supports]}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "supports", supports)

    @property
    def arity(self) -> int:
        return len(self.supports)

    @property
    def is_atomic(self) -> bool:
        return not any(isinstance(s, Cells) for s in self.supports)

    def to_atomic(self) -> AtomicMeasure:
        if not self.is_atomic:
            raise ValueError("grid components have no atomic form")
        grids = np.meshgrid(*self.supports, indexing="ij")
        pos = np.stack([g.ravel() for g in grids], axis=1)
        return AtomicMeasure(pos, self.weights.ravel(), self.arity)


def _component_inner(a, b) -> float:
    if isinstance(a, AtomicMeasure) and isinstance(b, AtomicMeasure):
        return h_neg1_tensor_inner(a, b)
    if isinstance(a, AtomicMeasure):
        a, b = b, a
    k = a.arity
    if isinstance(b, AtomicMeasure):
        # atoms against a product component: one Gram row per atom and axis
        grams = [_axis_gram(a.supports[i], b.positions[:, i]) for i in range(k)]
        sa = _LETTERS[:k]
        spec = sa + "," + ",".join(f"{c}z" for c in sa) + ",z->"
        return float(np.einsum(spec, a.weights, *grams, b.weights, optimize="greedy"))
    grams = [_axis_gram(a.supports[i], b.supports[i]) for i in range(k)]
    sa, sb = _LETTERS[:k], _LETTERS[k : 2 * k]
    spec = sa + "," + ",".join(x + y for x, y in zip(sa, sb)) + "," + sb + "->"
    return float(np.einsum(spec, a.weights, *grams, b.weights, optimize="greedy"))


@dataclass(frozen=True, eq=False)
class Observable:
    """Signed measure on T^arity stored as a sum of components.

    ``variant`` is one of ``tau`` (plain), ``tau_e`` (distinct indices),
    ``tau_p`` and ``tau_m`` (realization averages of the two), ``continuum``,
    or ``normal`` for a pushforward onto one coordinate per edge.
    """

    tree: OrientedTree
    signature: EdgeSignature
    heads: tuple
    variant: str
    components: tuple
    meta: dict = field(default_factory=dict)

    @property
    def arity(self) -> int:
        comp = self.components[0]
        return comp.arity

    def total_mass(self) -> float:
        total = 0.0
        for c in self.components:
            total += c.total_mass() if isinstance(c, AtomicMeasure) else float(c.weights.sum())
        return total

    @property
    def measure(self):
        """The observable as one AtomicMeasure (merged), or the single grid component."""
        if len(self.components) == 1 and isinstance(self.components[0], ProductComponent) and not self.components[0].is_atomic:
            return self.components[0]
        atoms = [c if isinstance(c, AtomicMeasure) else c.to_atomic() for c in self.components]
        out = atoms[0]
        for a in atoms[1:]:
            out = out + a
        return out.merged()

    def to_dict(self) -> dict:
        d = {
            "tree": self.tree.to_dict(),
            "signature": list(self.signature.s),
            "heads": list(self.heads),
            "variant": self.variant,
            "total_mass": self.total_mass(),
            "meta": self.meta,
        }
        m = self.measure
        if isinstance(m, AtomicMeasure):
            d["atoms"] = {"positions": m.positions.tolist(), "weights": m.weights.tolist()}
        else:
            d["grid"] = {"grid_size": m.supports[0].grid_size, "arity": m.arity}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_signature(t: OrientedTree, s: EdgeSignature):
    if len(s) != t.n_edges:
        raise ValueError(f"signature length {len(s)} does not match {t.n_edges} edges")


def _head_weights(t: OrientedTree, s: EdgeSignature, edge_matrix, vertex_weights) -> np.ndarray:
    """Contract the tree network over non-head vertices; result indexed by heads."""
    heads = t.heads
    terms = t.einsum_terms(s)
    ops = [edge_matrix] * len(terms)
    terms += list(_LETTERS[: t.v])
    ops += [vertex_weights] * t.v
    out = "".join(_LETTERS[h] for h in heads)
    return np.einsum(",".join(terms) + "->" + out, *ops, optimize="greedy")


def plain_observable(sys: FiniteSystem, t: OrientedTree, s: EdgeSignature, max_heads: int = MAX_HEADS) -> Observable:
    """Observable with repeated indices, by tree contraction of non-head vertices."""
    _check_signature(t, s)
    if len(t.heads) > max_heads:
        raise ValueError(f"tree has {len(t.heads)} heads; the cap is {max_heads}")
    n = sys.n
    weights = _head_weights(t, s, sys.w, np.full(n, 1.0 / n))
    comp = ProductComponent(tuple(sys.x for _ in t.heads), weights)
    return Observable(t, s, t.heads, "tau", (comp,), {"n": n})


def _distinct_tuples(n: int, v: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n), v)), dtype=int).reshape(-1, v)


def plain_observable_norep(sys: FiniteSystem, t: OrientedTree, s: EdgeSignature) -> Observable:
    """Observable summed over pairwise distinct index tuples only (direct loops)."""
    _check_signature(t, s)
    n = sys.n
    if t.v > NOREP_MAX_VERTICES or n**t.v > NOREP_MAX_TUPLES:
        raise ValueError(f"distinct-index observable limited to {NOREP_MAX_VERTICES} vertices and {NOREP_MAX_TUPLES} tuples")
    heads = t.heads
    tuples = _distinct_tuples(n, t.v)
    weights = np.full(tuples.shape[0], float(n) ** -t.v)
    for (i, j), on in zip(t.edges, s.s):
        if on:
            weights = weights * sys.w[tuples[:, i], tuples[:, j]]
    # every tuple lands on the states of its head agents, so accumulate a head-indexed tensor
    head_weights = np.zeros((n,) * len(heads))
    if tuples.shape[0]:
        np.add.at(head_weights, tuple(tuples[:, h] for h in heads), weights)
    comp = ProductComponent(tuple(sys.x for _ in heads), head_weights)
    return Observable(t, s, heads, "tau_e", (comp,), {"n": n})


def law_observable(sys0: FiniteSystem, coefficients, time_grid, t: OrientedTree, s: EdgeSignature, realizations: int, seed: int, distinct: bool = False) -> Observable:
    """Monte-Carlo expectation of the observable at the end of the particle dynamics.

    Realization r uses the child seed ``(seed, r)``.  With ``distinct=True`` the
    averaged observable is the distinct-index one (variant ``tau_m``).
    """
    from .dynamics import simulate_particles
    from .systems import child_seed

    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    comps = []
    for r in range(realizations):
        end = simulate_particles(sys0, coefficients, time_grid, child_seed(seed, r))
        obs = plain_observable_norep(end, t, s) if distinct else plain_observable(end, t, s)
        for c in obs.components:
            comps.append(c.scaled(1.0 / realizations) if isinstance(c, AtomicMeasure) else ProductComponent(c.supports, c.weights / realizations))
    variant = "tau_m" if distinct else "tau_p"
    return Observable(t, s, t.heads, variant, tuple(comps), {"n": sys0.n, "realizations": realizations, "seed": seed})


def continuum_observable(cont: ContinuumSystem, t: OrientedTree, s: EdgeSignature) -> Observable:
    """Class-indexed tree contraction, expanded into a density tensor on the grid."""
    _check_signature(t, s)
    heads = t.heads
    if len(heads) > GRID_MAX_HEADS:
        raise ValueError(f"grid observables limited to {GRID_MAX_HEADS} heads")
    coef = _head_weights(t, s, cont.W, cont.kappa)
    g = cont.grid_size
    masses = cont.densities / g
    k = len(heads)
    sa = _LETTERS[:k]
    spec = sa + "," + ",".join(f"{c}{c.upper()}" for c in sa) + "->" + sa.upper()
    weights = np.einsum(spec, coef, *([masses] * k))
    comp = ProductComponent(tuple(Cells(g) for _ in heads), weights)
    return Observable(t, s, heads, "continuum", (comp,), {"k": cont.k, "grid": g})


def observable_inner(a: Observable, b: Observable) -> float:
    if a.arity != b.arity:
        raise ValueError(f"arity mismatch: {a.arity} vs {b.arity}")
    return float(sum(_component_inner(x, y) for x in a.components for y in b.components))


def observable_distance(a: Observable, b: Observable) -> float:
    """H^-1 tensor distance between two observables of equal arity."""
    if a.arity != b.arity:
        raise ValueError(f"arity mismatch: {a.arity} vs {b.arity}")
    if a is b:
        return 0.0
    sq = observable_inner(a, a) - 2 * observable_inner(a, b) + observable_inner(b, b)
    return float(np.sqrt(max(sq, 0.0)))


def pushforward_to_normal(o: Observable) -> Observable:
    """Duplicate head coordinates so there is one coordinate per edge (edge-list order)."""
    m = o.measure
    if not isinstance(m, AtomicMeasure):
        raise ValueError("pushforward needs an atomic observable")
    col = {h: i for i, h in enumerate(o.heads)}
    idx = [col[j] for _, j in o.tree.edges]
    atoms = AtomicMeasure(m.positions[:, idx], m.weights, len(idx))
    return Observable(o.tree, o.signature, tuple(j for _, j in o.tree.edges), "normal", (atoms,), dict(o.meta))


# ---------------------------------------------------------------------------
# metric by network contraction


@dataclass(frozen=True, eq=False)
class _IndexView:
    """A system as index weights, an edge matrix and one measure per index."""

    weights: np.ndarray
    edges: np.ndarray
    support: object  # agent states, or (Cells, class densities)
    w_max: float

    @classmethod
    def of(cls, sys):
        if isinstance(sys, FiniteSystem):
            return cls(np.full(sys.n, 1.0 / sys.n), sys.w, np.asarray(sys.x), sys.w_max)
        if isinstance(sys, ContinuumSystem):
            return cls(sys.kappa, sys.W, (Cells(sys.grid_size), sys.densities / sys.grid_size), sys.w_max)
        raise TypeError(f"unsupported system type {type(sys).__name__}")


def _cross_gram(a: _IndexView, b: _IndexView) -> np.ndarray:
    """``<mu_a[l], mu_b[m]>`` in H^-1 for every index pair."""
    if isinstance(a.support, tuple) and isinstance(b.support, tuple):
        cells, ma = a.support
        _, mb = b.support
        return ma @ _axis_gram(cells, b.support[0]) @ mb.T
    if isinstance(a.support, tuple):
        return _cross_gram(b, a).T
    if isinstance(b.support, tuple):
        cells, mb = b.support
        return _axis_gram(a.support, cells) @ mb.T
    return _axis_gram(a.support, b.support)


def network_inner(t: OrientedTree, s: EdgeSignature, a: _IndexView, b: _IndexView, gram: np.ndarray) -> float:
    """``<tau_a, tau_b>`` as one contraction: two copies of the tree joined at the heads."""
    la, lb = _LETTERS[: t.v], _LETTERS[t.v : 2 * t.v]
    terms, ops = [], []
    for letters, view in ((la, a), (lb, b)):
        for (i, j), on in zip(t.edges, s.s):
            if on:
                terms.append(letters[i] + letters[j])
                ops.append(view.edges)
        for i in range(t.v):
            terms.append(letters[i])
            ops.append(view.weights)
    for h in t.heads:
        terms.append(la[h] + lb[h])
        ops.append(gram)
    return float(np.einsum(",".join(terms) + "->", *ops, optimize="greedy"))


def term_weight(t: OrientedTree, w_max: float) -> float:
    return float((4 * (1 + w_max) * np.sqrt(LAMBDA_MAX)) ** (-t.n_edges))


@dataclass(frozen=True)
class MetricTerm:
    tree: OrientedTree
    signature: EdgeSignature
    distance: float
    weight: float

    @property
    def weighted(self) -> float:
        return self.weight * self.distance


@dataclass
class MetricResult:
    value: float
    argmax: MetricTerm
    terms: list
    max_vertices: int

    @property
    def saturated(self) -> bool:
        """True when the maximizing tree has the largest allowed vertex count."""
        return self.argmax.tree.v == self.max_vertices

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["tree", "signature", "edges", "distance", "weight", "weighted"])
            for term in self.terms:
                wr.writerow([str(term.tree), str(term.signature), term.tree.n_edges, repr(term.distance), repr(term.weight), repr(term.weighted)])


def observable_metric(a, b, max_vertices: int = 4, w_max: float | None = None) -> MetricResult:
    """Weighted supremum of observable distances over trees and signatures.

    Each term is ``(4 (1 + w_max) sqrt(Lambda_max))^{-|e|} ||tau_a - tau_b||``
    with the squared distance expanded as ``<a,a> - 2<a,b> + <b,b>``; every
    inner product is an exact tensor-network contraction, so no observable is
    materialized.  ``a`` and ``b`` may be finite or continuum systems.
    """
    va, vb = _IndexView.of(a), _IndexView.of(b)
    if w_max is None:
        w_max = max(va.w_max, vb.w_max)
    g_aa, g_ab, g_bb = _cross_gram(va, va), _cross_gram(va, vb), _cross_gram(vb, vb)
    terms = []
    for t in enumerate_trees(max_vertices):
        for s in signatures(t):
            sq = network_inner(t, s, va, va, g_aa) - 2 * network_inner(t, s, va, vb, g_ab) + network_inner(t, s, vb, vb, g_bb)
            terms.append(MetricTerm(t, s, float(np.sqrt(max(sq, 0.0))), term_weight(t, w_max)))
    best = max(terms, key=lambda m: m.weighted)
    return MetricResult(best.weighted, best, terms, max_vertices)
