"""Finite multi-agent systems, step-graphon continuum systems, and maps between them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .torus import AtomicMeasure, GridDensity, wrap

__all__ = [
    "FiniteSystem",
    "ContinuumSystem",
    "HilbertKernelView",
    "sample_finite",
    "discretize_lift",
    "step_extension",
    "validate",
    "child_seed",
    "system_to_dict",
    "system_from_dict",
    "load_system",
    "save_system",
]

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteSystem:
    """N agents with weights ``w[i, j]`` (effect of j on i) and torus states ``x``.

    ``w`` stores the interaction prefactor before the ``1/N`` of the particle
    dynamics.  ``w_max`` defaults to ``max |w|``.
    """

    w: np.ndarray
    x: np.ndarray
    w_max: float | None = None
    classes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        x = np.array(self.x, dtype=float).reshape(-1)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] != x.shape[0]:
            raise ValueError(f"w must be n x n with n = len(x); got {w.shape} and {x.shape}")
        w.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        if self.w_max is None:
            object.__setattr__(self, "w_max", float(np.abs(w).max()) if w.size else 0.0)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def with_states(self, x) -> "FiniteSystem":
        return FiniteSystem(self.w, wrap(x), self.w_max, self.classes)

    def permuted(self, perm) -> "FiniteSystem":
        """Relabel agents: new agent ``a`` is old agent ``perm[a]``."""
        perm = np.asarray(perm)
        classes = None if self.classes is None else self.classes[perm]
        return FiniteSystem(self.w[np.ix_(perm, perm)], self.x[perm], self.w_max, classes)

    def empirical(self) -> AtomicMeasure:
        return AtomicMeasure.empirical(self.x)

    def kernel_view(self) -> "HilbertKernelView":
        return HilbertKernelView(self)


@dataclass(frozen=True, eq=False)
class ContinuumSystem:
    """k-class step graphon with per-class densities on a G-cell torus grid."""

    kappa: np.ndarray
    W: np.ndarray
    densities: np.ndarray
    w_max: float | None = None

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float).reshape(-1)
        W = np.array(self.W, dtype=float)
        dens = np.array(self.densities, dtype=float)
        k = kappa.shape[0]
        if W.shape != (k, k):
            raise ValueError(f"W must be {k} x {k}, got {W.shape}")
        if dens.ndim != 2 or dens.shape[0] != k:
            raise ValueError(f"densities must be {k} x G, got {dens.shape}")
        for a in (kappa, W, dens):
            a.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "densities", dens)
        if self.w_max is None:
            object.__setattr__(self, "w_max", float(np.abs(W).max()))

    @property
    def k(self) -> int:
        return self.kappa.shape[0]

    @property
    def grid_size(self) -> int:
        return self.densities.shape[1]

    def density(self, c: int) -> GridDensity:
        return GridDensity(self.densities[c])

    def mixture(self) -> np.ndarray:
        return self.kappa @ self.densities

    def with_densities(self, densities) -> "ContinuumSystem":
        return ContinuumSystem(self.kappa, self.W, densities, self.w_max)


class HilbertKernelView:
    """Entry ``(i, j)`` is the pair ``(delta_{x_j}, w_ij delta_{x_j})`` in H^-1 + H^-1."""

    def __init__(self, system: FiniteSystem):
        self.system = system

    def __getitem__(self, ij):
        i, j = ij
        xj = self.system.x[j]
        first = AtomicMeasure.dirac(xj)
        return first, first.scaled(self.system.w[i, j])


def child_seed(seed: int, index: int) -> int:
    """Independent child seed for task ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _inverse_cdf(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Quantiles of a piecewise-constant density given by cell values."""
    g = values.shape[0]
    masses = np.clip(values, 0.0, None) / g
    total = masses.sum()
    if not total > 0:
        raise ValueError("degenerate density: zero total mass")
    cdf = np.concatenate([[0.0], np.cumsum(masses / total)])
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u, side="right") - 1
    idx = np.clip(idx, 0, g - 1)
    # skip empty cells so interpolation never divides by zero
    m = masses[idx] / total
    frac = np.where(m > 0, (u - cdf[idx]) / np.where(m > 0, m, 1.0), 0.5)
    return wrap((idx + np.clip(frac, 0.0, 1.0)) / g)


def sample_finite(cont: ContinuumSystem, n: int, seed: int) -> FiniteSystem:
    """Sample n agents: i.i.d. class labels from kappa, states from the class densities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    for c in range(cont.k):
        if not np.any(cont.densities[c] > 0):
            raise ValueError(f"degenerate density for class {c}")
    rng = np.random.default_rng(seed)
    classes = rng.choice(cont.k, size=n, p=cont.kappa / cont.kappa.sum())
    u = rng.random(n)
    x = np.empty(n)
    for c in range(cont.k):
        sel = classes == c
        if sel.any():
            x[sel] = _inverse_cdf(cont.densities[c], u[sel])
    w = cont.W[np.ix_(classes, classes)]
    return FiniteSystem(w, x, cont.w_max, classes)


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(quotas).astype(int)
    short = total - base.sum()
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:short]] += 1
    return base


def discretize_lift(cont: ContinuumSystem, m_per_class: int) -> FiniteSystem:
    """Deterministic quadrature of the lift: agents at class quantile midpoints.

    Class ``c`` gets about ``kappa_c * k * m_per_class`` agents (largest
    remainder apportionment), placed at the ``(j - 1/2)/n_c`` quantiles.
    """
    if m_per_class < 1:
        raise ValueError("m_per_class must be >= 1")
    total = cont.k * m_per_class
    counts = _largest_remainder(cont.kappa / cont.kappa.sum() * total, total)
    xs, labels = [], []
    for c, nc in enumerate(counts):
        if nc == 0:
            continue
        u = (np.arange(nc) + 0.5) / nc
        xs.append(_inverse_cdf(cont.densities[c], u))
        labels.append(np.full(nc, c))
    classes = np.concatenate(labels)
    w = cont.W[np.ix_(classes, classes)]
    return FiniteSystem(w, np.concatenate(xs), cont.w_max, classes)


def step_extension(sys: FiniteSystem, grid_size: int = 256) -> ContinuumSystem:
    """Piecewise-extended kernel: n classes of mass 1/n, W = w, one-cell bumps at x_i."""
    n = sys.n
    dens = np.zeros((n, grid_size))
    cells = np.floor(sys.x * grid_size).astype(int) % grid_size
    dens[np.arange(n), cells] = grid_size
    return ContinuumSystem(np.full(n, 1.0 / n), sys.w, dens, sys.w_max)


def validate(sys) -> list[str]:
    """List invariant violations (empty when the system is valid)."""
    report: list[str] = []
    if isinstance(sys, FiniteSystem):
        bad = np.where(~np.isfinite(sys.x) | (sys.x < 0) | (sys.x >= 1))[0]
        for i in bad:
            report.append(f"x[{i}] = {sys.x[i]!r} outside [0, 1)")
        if not np.all(np.isfinite(sys.w)):
            report.append("w has non-finite entries")
        elif sys.w.size and np.abs(sys.w).max() > sys.w_max + 1e-12:
            i, j = np.unravel_index(np.abs(sys.w).argmax(), sys.w.shape)
            report.append(f"|w[{i},{j}]| = {abs(sys.w[i, j])} exceeds w_max = {sys.w_max}")
    elif isinstance(sys, ContinuumSystem):
        if abs(sys.kappa.sum() - 1) > MASS_TOL:
            report.append(f"kappa sums to {sys.kappa.sum()!r}, not 1")
        for c in np.where(sys.kappa <= 0)[0]:
            report.append(f"kappa[{c}] = {sys.kappa[c]} not positive")
        if np.abs(sys.W).max() > sys.w_max + 1e-12:
            report.append(f"max |W| = {np.abs(sys.W).max()} exceeds w_max = {sys.w_max}")
        g = sys.grid_size
        for c in range(sys.k):
            d = sys.densities[c]
            if np.any(d < 0):
                report.append(f"density[{c}] has negative cells at {np.where(d < 0)[0].tolist()}")
            mass = d.sum() / g
            if abs(mass - 1) > MASS_TOL:
                report.append(f"density[{c}] has mass {mass!r}, not 1")
    else:
        report.append(f"unknown system type {type(sys).__name__}")
    return report


# ---------------------------------------------------------------------------
# JSON


def system_to_dict(sys) -> dict:
    if isinstance(sys, FiniteSystem):
        return {"type": "finite", "n": sys.n, "w": sys.w.tolist(), "x": sys.x.tolist()}
    return {
        "type": "continuum",
        "kappa": sys.kappa.tolist(),
        "W": sys.W.tolist(),
        "grid": sys.grid_size,
        "densities": sys.densities.tolist(),
    }


def _matrix(value, name, rows=None, cols=None) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ValueError(f"{name}: expected a list of lists")
    lengths = {len(r) for r in value}
    if len(lengths) > 1:
        raise ValueError(f"{name}: ragged rows {sorted(lengths)}")
    a = np.array(value, dtype=float)
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: NaN or Inf entries")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name}: expected {rows} rows, got {a.shape[0]}")
    if cols is not None and (a.ndim != 2 or a.shape[1] != cols):
        raise ValueError(f"{name}: expected {cols} columns")
    return a


def _vector(value, name, length=None) -> np.ndarray:
    if not isinstance(value, list) or any(isinstance(v, list) for v in value):
        raise ValueError(f"{name}: expected a flat list")
    a = np.array(value, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: NaN or Inf entries")
    if length is not None and a.shape[0] != length:
        raise ValueError(f"{name}: expected length {length}, got {a.shape[0]}")
    return a


def system_from_dict(d: dict):
    kind = d.get("type")
    if kind == "finite":
        x = _vector(d["x"], "x", d.get("n"))
        w = _matrix(d["w"], "w", x.shape[0], x.shape[0])
        return FiniteSystem(w, x)
    if kind == "continuum":
        kappa = _vector(d["kappa"], "kappa")
        k = kappa.shape[0]
        W = _matrix(d["W"], "W", k, k)
        dens = _matrix(d["densities"], "densities", k, d.get("grid"))
        return ContinuumSystem(kappa, W, dens)
    raise ValueError(f"type: expected 'finite' or 'continuum', got {kind!r}")


def _reject_constant(token):
    raise ValueError(f"non-finite JSON constant {token}")


def load_system(path):
    with open(path) as fh:
        return system_from_dict(json.load(fh, parse_constant=_reject_constant))


def save_system(sys, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), allow_nan=False))

