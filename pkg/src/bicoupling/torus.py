"""Fourier analysis on the 1-torus R/Z and negative Sobolev norms.

The workhorse is the H^-1 kernel ``Lambda`` with Fourier multiplier
``(1 + 4 pi^2 m^2)^-1``.  On the torus it has the explicit periodized form

    Lambda(x) = sum_l 0.5 * exp(-|x + l|) = cosh(x - 1/2) / (2 sinh(1/2)),  x in [0, 1],

so H^-1 inner products between atoms, and between piecewise-constant
densities, can be evaluated exactly without any Fourier truncation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "wrap",
    "torus_dist",
    "lambda1",
    "lambda_kernel",
    "LambdaConstants",
    "lambda_extrema",
    "LAMBDA_MAX",
    "LAMBDA_MIN",
    "lambda_s_grid",
    "AtomicMeasure",
    "GridDensity",
    "h_neg1_tensor_inner",
    "h_neg1_dist",
    "h_neg1_inner",
    "h_neg_s_norm_grid",
    "bin_atoms",
    "kernel_atoms_atoms",
    "kernel_atoms_cells",
    "kernel_cells_cells",
    "cell_centers",
]

_SINH_HALF = np.sinh(0.5)

LAMBDA_MAX = float(np.cosh(0.5) / (2 * _SINH_HALF))
LAMBDA_MIN = float(1.0 / (2 * _SINH_HALF))

MERGE_TOL = 1e-12


def wrap(x):
    """Canonical representative in [0, 1)."""
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    return np.where(x >= 1.0, 0.0, x)


def torus_dist(x, y):
    """Min-image distance on R/Z, in [0, 1/2]."""
    d = np.abs(wrap(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return np.minimum(d, 1.0 - d)


def lambda1(x, truncation: int = 40):
    """Truncated symmetric image sum ``sum_{|l|<=L} exp(-|x + l|) / 2``.

    The neglected tail is below ``exp(-L)``.
    """
    if truncation < 10:
        raise ValueError("truncation must be >= 10")
    x = wrap(x)
    ls = np.arange(-truncation, truncation + 1, dtype=float)
    terms = 0.5 * np.exp(-np.abs(np.asarray(x)[..., None] + ls))
    # sum from the smallest terms up
    order = np.argsort(np.abs(ls))[::-1]
    return terms[..., order].sum(axis=-1)


def lambda_kernel(d):
    """Closed form of Lambda at arbitrary real offsets (vectorized)."""
    r = wrap(d)
    return np.cosh(r - 0.5) / (2 * _SINH_HALF)


@dataclass(frozen=True)
class LambdaConstants:
    lambda_max: float
    lambda_min: float
    truncation: int

    @property
    def dirac_norm(self) -> float:
        """H^-1 norm of any Dirac mass, ``sqrt(lambda_max)``."""
        return float(np.sqrt(self.lambda_max))


def lambda_extrema(truncation: int = 40) -> LambdaConstants:
    lmax = float(lambda1(0.0, truncation))
    lmin = float(lambda1(0.5, truncation))
    return LambdaConstants(lmax, lmin, truncation)


def _multiplier(m, s):
    return (1.0 + 4.0 * np.pi**2 * np.asarray(m, dtype=float) ** 2) ** (-s)


@dataclass(frozen=True)
class GridDensity:
    """Cell values of a function on a uniform periodic grid of ``T^k``.

    ``values`` has one axis per torus coordinate, each of length G; cell ``j``
    covers ``[j/G, (j+1)/G)``.  For a probability density the cell masses
    ``values / G^k`` sum to one.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0:
            raise ValueError("GridDensity needs at least one axis")
        if len(set(v.shape)) != 1:
            raise ValueError(f"grid must be square, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def arity(self) -> int:
        return self.values.ndim

    @property
    def cell_width(self) -> float:
        return 1.0 / self.grid_size

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.cell_width**self.arity

    def total_mass(self) -> float:
        return float(self.masses.sum())


def cell_centers(grid_size: int) -> np.ndarray:
    return (np.arange(grid_size) + 0.5) / grid_size


def lambda_s_grid(s: float, grid_size: int, mode_cutoff: int) -> GridDensity:
    """Samples of ``Lambda_s`` at the nodes ``j/G`` from its truncated Fourier series.

    Modes ``|m| <= mode_cutoff`` are kept and folded onto the G nodes, so the
    node at 0 sits in cell 0.  The pointwise truncation error at ``s = 1`` is
    bounded by ``1 / (2 pi^2 M)``.
    """
    if s <= 0.25:
        raise ValueError("Lambda_s is not square integrable for s <= 1/4")
    if grid_size < 16:
        raise ValueError("grid_size must be >= 16")
    if mode_cutoff < grid_size // 2:
        raise ValueError("mode_cutoff must be >= grid_size / 2")
    m = np.arange(-mode_cutoff, mode_cutoff + 1)
    folded = np.zeros(grid_size)
    np.add.at(folded, np.mod(m, grid_size), _multiplier(m, s))
    # folded[k] multiplies exp(2 pi i k j / G); kernel is even so the result is real
    vals = np.real(np.fft.ifft(folded)) * grid_size
    return GridDensity(vals)


# ---------------------------------------------------------------------------
# atomic measures


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite signed sum of Dirac masses on ``T^arity``.

    ``positions`` is ``(n_atoms, arity)``; ``weights`` is ``(n_atoms,)``.
    Positions are wrapped to [0, 1) on construction.
    """

    positions: np.ndarray
    weights: np.ndarray
    arity: int = field(default=0)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1) if self.arity in (0, 1) else pos.reshape(-1, self.arity)
        arity = self.arity or pos.shape[1]
        if pos.shape != (w.shape[0], arity):
            raise ValueError(f"positions {pos.shape} inconsistent with {w.shape[0]} weights of arity {arity}")
        object.__setattr__(self, "positions", wrap(pos))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "arity", int(arity))

    @classmethod
    def dirac(cls, *coords: float, weight: float = 1.0) -> "AtomicMeasure":
        return cls(np.array([coords], dtype=float), np.array([weight]))

    @classmethod
    def empirical(cls, x) -> "AtomicMeasure":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x.reshape(-1, 1), np.full(x.shape[0], 1.0 / x.shape[0]))

    def __len__(self) -> int:
        return self.weights.shape[0]

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def total_variation(self) -> float:
        return float(np.abs(self.merged().weights).sum())

    def scaled(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.positions, c * self.weights, self.arity)

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        if other.arity != self.arity:
            raise ValueError("arity mismatch")
        return AtomicMeasure(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.weights, other.weights]),
            self.arity,
        )

    def __sub__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return self + other.scaled(-1.0)

    def merged(self, tol: float = MERGE_TOL) -> "AtomicMeasure":
        """Merge atoms whose coordinates agree within ``tol``; weights add."""
        if len(self) == 0:
            return self
        key = np.round(self.positions / tol).astype(np.int64) if tol > 0 else self.positions
        # positions near 1 and near 0 are the same point on the torus
        key = np.where(key == int(round(1.0 / tol)), 0, key) if tol > 0 else key
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inv, self.weights)
        first = np.full(uniq.shape[0], -1)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        return AtomicMeasure(self.positions[first], w, self.arity)


def _check_arity(a, b):
    if a.arity != b.arity:
        raise ValueError(f"arity mismatch: {a.arity} vs {b.arity}")


def h_neg1_tensor_inner(a: AtomicMeasure, b: AtomicMeasure, chunk: int = 2048) -> float:
    """Exact ``sum_ij a_i b_j prod_k Lambda(x_ik - y_jk)`` over atom pairs."""
    _check_arity(a, b)
    total = 0.0
    for start in range(0, len(a), chunk):
        pa = a.positions[start : start + chunk]
        wa = a.weights[start : start + chunk]
        k = np.ones((pa.shape[0], len(b)))
        for ax in range(a.arity):
            k *= lambda_kernel(pa[:, ax, None] - b.positions[None, :, ax])
        total += float(wa @ k @ b.weights)
    return total


def kernel_atoms_atoms(x, y) -> np.ndarray:
    return lambda_kernel(np.asarray(x)[:, None] - np.asarray(y)[None, :])


def _lambda_antiderivative(u):
    """Real-line antiderivative F of Lambda with F(0) = 0 (F(n) = n)."""
    u = np.asarray(u, dtype=float)
    k = np.floor(u)
    r = u - k
    return k + (np.sinh(r - 0.5) + _SINH_HALF) / (2 * _SINH_HALF)


def _lambda_second_antiderivative(u):
    """Real-line A with A'' = Lambda and A(0) = A'(0) = 0."""
    u = np.asarray(u, dtype=float)
    k = np.floor(u)
    r = u - k
    return 0.5 * k * k + k * r + 0.5 * r + (np.cosh(r - 0.5) - np.cosh(0.5)) / (2 * _SINH_HALF)


def kernel_atoms_cells(x, grid_size: int) -> np.ndarray:
    """``K[i, c]`` = average of ``Lambda(x_i - y)`` over ``y`` in cell ``c``."""
    x = wrap(np.asarray(x, dtype=float))
    h = 1.0 / grid_size
    left = np.arange(grid_size) * h
    d = x[:, None] - left[None, :]
    # average over y in [left, left + h] of Lambda(x - y) = (F(d) - F(d - h)) / h
    return (_lambda_antiderivative(d) - _lambda_antiderivative(d - h)) / h


def _cell_cell_offsets(grid_size: int) -> np.ndarray:
    h = 1.0 / grid_size
    d = np.arange(grid_size) * h
    a = _lambda_second_antiderivative
    # offsets in [0, 1): periodic, so shift far from the kink-free branch is harmless
    return (a(d + h) - 2 * a(d) + a(d - h)) / (h * h)


def kernel_cells_cells(grid_size: int) -> np.ndarray:
    """Double cell average of Lambda, as a circulant G x G matrix."""
    row = _cell_cell_offsets(grid_size)
    idx = np.mod(np.arange(grid_size)[:, None] - np.arange(grid_size)[None, :], grid_size)
    return row[idx]


def _grid_inner(fa: GridDensity, fb: GridDensity) -> float:
    if fa.grid_size != fb.grid_size:
        raise ValueError("grid sizes differ")
    g = fa.grid_size
    row = _cell_cell_offsets(g)
    khat = np.real(np.fft.fft(row))
    ma = np.fft.fftn(fa.masses)
    mb = np.fft.fftn(fb.masses)
    mult = np.ones([g] * fa.arity)
    for ax in range(fa.arity):
        shape = [1] * fa.arity
        shape[ax] = g
        mult = mult * khat.reshape(shape)
    # sum_{c,c'} ma[c] K[c - c'] mb[c'] via Parseval; K is even and real
    return float(np.real(np.sum(np.conj(ma) * mult * mb)) / g**fa.arity)


def bin_atoms(a: AtomicMeasure, grid_size: int) -> GridDensity:
    """Mass-preserving nearest-cell binning; moves each atom by at most ``1/(2G)``."""
    idx = np.floor(a.positions * grid_size).astype(int) % grid_size
    masses = np.zeros([grid_size] * a.arity)
    np.add.at(masses, tuple(idx.T), a.weights)
    return GridDensity(masses * grid_size**a.arity)


def h_neg1_inner(a, b) -> float:
    """H^-1 tensor inner product for atomic or gridded inputs.

    Grid inputs are treated as piecewise-constant densities and handled
    exactly; a mixed atomic/grid pair bins the atoms onto the grid first.
    """
    _check_arity(a, b)
    if isinstance(a, AtomicMeasure) and isinstance(b, AtomicMeasure):
        return h_neg1_tensor_inner(a, b)
    if isinstance(a, AtomicMeasure):
        a = bin_atoms(a, b.grid_size)
    if isinstance(b, AtomicMeasure):
        b = bin_atoms(b, a.grid_size)
    return _grid_inner(a, b)


def h_neg1_dist(a, b) -> float:
    """``||a - b||`` in the tensorized H^-1 norm."""
    _check_arity(a, b)
    if isinstance(a, AtomicMeasure) and isinstance(b, AtomicMeasure):
        return float(np.sqrt(max(h_neg1_tensor_inner(a - b, a - b), 0.0)))
    sq = h_neg1_inner(a, a) - 2 * h_neg1_inner(a, b) + h_neg1_inner(b, b)
    return float(np.sqrt(max(sq, 0.0)))


def h_neg_s_norm_grid(f: GridDensity, s: float) -> float:
    """``(sum_m (1 + 4 pi^2 m^2)^-s |f^(m)|^2)^(1/2)`` over the modes the grid resolves.

    Fourier coefficients are the DFT of the point samples divided by G.
    """
    if s <= 0.25:
        raise ValueError("s must exceed 1/4")
    g = f.grid_size
    fh = np.fft.fftn(f.values) / g**f.arity
    m = np.fft.fftfreq(g, d=1.0 / g)
    mult = np.ones([g] * f.arity)
    for ax in range(f.arity):
        shape = [1] * f.arity
        shape[ax] = g
        mult = mult * _multiplier(m, s).reshape(shape)
    return float(np.sqrt(np.sum(mult * np.abs(fh) ** 2)))
