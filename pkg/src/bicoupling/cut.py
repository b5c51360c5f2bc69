"""Cut norms, operator norms and weak-regularity partitions for step kernels.

Matrices are read as step kernels on [0,1]^2 with equal-width steps, so every
cut-type value here is the matrix quantity divided by ``n1 * n2``.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CutCertificate",
    "Partition",
    "cut_norm_exact",
    "cut_norm_heuristic",
    "cut_value",
    "inf_to_one_norm_exact",
    "op_norm_l2",
    "top_singular_triplet",
    "block_average",
    "weak_regularity_partition",
    "ConvergenceWarning",
    "EXACT_MAX_N",
]

EXACT_MAX_N = 20
_CHUNK = 1 << 14


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CutCertificate:
    value: float
    row_set: tuple[int, ...]
    col_set: tuple[int, ...]
    exact: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "row_set": list(self.row_set), "col_set": list(self.col_set), "exact": self.exact}


def cut_value(w, rows, cols) -> float:
    """``|sum_{i in S, j in T} w_ij| / (n1 n2)``."""
    w = np.asarray(w, dtype=float)
    if len(rows) == 0 or len(cols) == 0:
        return 0.0
    return abs(float(w[np.ix_(list(rows), list(cols))].sum())) / w.size


def _subset_masks(n: int, start: int, stop: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(float)


def cut_norm_exact(w) -> CutCertificate:
    """Exact cut norm by enumerating row subsets.

    For a fixed row set the best column set is all positive (or all negative)
    column sums, so only ``2^n1`` row subsets are scanned.
    """
    w = np.asarray(w, dtype=float)
    n1, n2 = w.shape
    if n1 > EXACT_MAX_N:
        # enumerate over the shorter side
        if n2 <= EXACT_MAX_N:
            c = cut_norm_exact(w.T)
            return CutCertificate(c.value, c.col_set, c.row_set, True)
        raise ValueError(f"cut_norm_exact supports n <= {EXACT_MAX_N}; use cut_norm_heuristic")
    best, best_code, best_sign = 0.0, 0, 1
    for start in range(0, 1 << n1, _CHUNK):
        stop = min(1 << n1, start + _CHUNK)
        colsums = _subset_masks(n1, start, stop) @ w
        pos = np.clip(colsums, 0, None).sum(axis=1)
        neg = -np.clip(colsums, None, 0).sum(axis=1)
        for vals, sign in ((pos, 1), (neg, -1)):
            i = int(np.argmax(vals))
            if vals[i] > best:
                best, best_code, best_sign = float(vals[i]), start + i, sign
    rows = tuple(int(i) for i in range(n1) if (best_code >> i) & 1)
    if not rows:
        return CutCertificate(0.0, (), (), True)
    colsums = w[list(rows)].sum(axis=0)
    cols = tuple(int(j) for j in np.where(best_sign * colsums > 0)[0])
    return CutCertificate(cut_value(w, rows, cols), rows, cols, True)


def inf_to_one_norm_exact(w) -> float:
    """``max_{x, y in {-1,1}^n} x^T w y / (n1 n2)`` by enumerating sign vectors."""
    w = np.asarray(w, dtype=float)
    n1 = w.shape[0]
    if n1 > EXACT_MAX_N:
        raise ValueError(f"inf_to_one_norm_exact supports n <= {EXACT_MAX_N}")
    best = 0.0
    # x and -x give the same value, so fix the last sign
    total = 1 << max(n1 - 1, 0)
    for start in range(0, total, _CHUNK):
        stop = min(total, start + _CHUNK)
        signs = 2 * _subset_masks(n1, start, stop) - 1
        if n1 >= 1:
            signs[:, -1] = 1.0
        best = max(best, float(np.abs(signs @ w).sum(axis=1).max()))
    return best / w.size


def _alternate(w, rows_mask, sign, max_sweeps=1000):
    """Coordinate ascent on ``sign * 1_S^T w 1_T``; ties keep the current membership."""
    cols_mask = np.zeros(w.shape[1], dtype=bool)
    val_old = -np.inf
    for _ in range(max_sweeps):
        c = sign * (rows_mask.astype(float) @ w)
        cols_mask = np.where(c > 0, True, np.where(c < 0, False, cols_mask))
        r = sign * (w @ cols_mask.astype(float))
        rows_mask = np.where(r > 0, True, np.where(r < 0, False, rows_mask))
        val = float(sign * rows_mask.astype(float) @ w @ cols_mask.astype(float))
        if val <= val_old:
            break
        val_old = val
    return rows_mask, cols_mask


def cut_norm_heuristic(w, restarts: int = 16, seed: int = 0) -> CutCertificate:
    """Lower bound on the cut norm by alternating maximization from random starts."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    w = np.asarray(w, dtype=float)
    rng = np.random.default_rng(seed)
    best = (0.0, (), ())
    for r in range(restarts):
        start = rng.random(w.shape[0]) < 0.5
        if r == 0:
            start = np.ones(w.shape[0], dtype=bool)
        for sign in (1.0, -1.0):
            rows, cols = _alternate(w, start.copy(), sign)
            S = tuple(int(i) for i in np.where(rows)[0])
            T = tuple(int(j) for j in np.where(cols)[0])
            v = cut_value(w, S, T)
            if v > best[0]:
                best = (v, S, T)
    return CutCertificate(best[0], best[1], best[2], False)


def _matrix_seed(a: np.ndarray) -> int:
    digest = hashlib.blake2b(np.ascontiguousarray(a).tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def top_singular_triplet(a, tol: float = 1e-10, max_iter: int = 10_000, v0=None):
    """Largest singular value with unit singular vectors ``(s, u, v)`` by power iteration on ``a^T a``.

    The start vector is seeded from a hash of ``a`` unless ``v0`` is given.
    Emits :class:`ConvergenceWarning` and returns the best iterate if the
    relative change never drops below ``tol``.
    """
    a = np.asarray(a, dtype=float)
    n1, n2 = a.shape
    if a.size == 0 or not np.any(a):
        u = np.zeros(n1)
        v = np.zeros(n2)
        if n1:
            u[0] = 1.0
        if n2:
            v[0] = 1.0
        return 0.0, u, v
    rng = np.random.default_rng(_matrix_seed(a))
    v = rng.standard_normal(n2) if v0 is None else np.array(v0, dtype=float)
    if not np.any(v):
        v = rng.standard_normal(n2)
    v /= np.linalg.norm(v)
    s_old = 0.0
    stalled = 0
    best = (0.0, None, None)
    for it in range(max_iter):
        u = a @ v
        s = np.linalg.norm(u)
        if s == 0.0:
            # start vector fell in the kernel
            v = rng.standard_normal(n2)
            v /= np.linalg.norm(v)
            continue
        u /= s
        v_new = a.T @ u
        s2 = np.linalg.norm(v_new)
        v = v_new / s2
        if s2 > best[0]:
            best = (s2, u, v)
        if abs(s2 - s_old) <= tol * s2:
            return float(s2), u, v
        if s2 <= s_old * (1 + 1e-15):
            stalled += 1
            if stalled > 50:
                v = v + 1e-3 * rng.standard_normal(n2)
                v /= np.linalg.norm(v)
                stalled = 0
        s_old = s2
    warnings.warn(f"power iteration did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    return float(best[0]), best[1], best[2]


def op_norm_l2(w, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """ell^2 -> ell^2 operator norm (largest singular value)."""
    return top_singular_triplet(w, tol, max_iter)[0]


@dataclass(frozen=True)
class Partition:
    class_of: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_of", np.asarray(self.class_of, dtype=int))

    @property
    def n_classes(self) -> int:
        return int(self.class_of.max()) + 1 if self.class_of.size else 0

    def sizes(self) -> np.ndarray:
        return np.bincount(self.class_of, minlength=self.n_classes)

    def relabeled(self) -> "Partition":
        _, inv = np.unique(self.class_of, return_inverse=True)
        return Partition(inv.reshape(-1))


def block_average(w, partition: Partition) -> np.ndarray:
    """Replace each block ``(P_a x P_b)`` by its mean (conditional expectation)."""
    w = np.asarray(w, dtype=float)
    p = partition.class_of
    if p.shape[0] != w.shape[0] or w.shape[0] != w.shape[1]:
        raise ValueError("partition must label every row and column of a square matrix")
    sizes = partition.sizes()
    if np.any(sizes == 0):
        raise ValueError(f"empty classes: {np.where(sizes == 0)[0].tolist()}")
    ind = np.zeros((w.shape[0], partition.n_classes))
    ind[np.arange(w.shape[0]), p] = 1.0
    means = (ind.T @ w @ ind) / np.outer(sizes, sizes)
    return means[np.ix_(p, p)]


def weak_regularity_partition(w, max_classes: int, restarts: int = 16, seed: int = 0, exact: bool | None = None):
    """Greedy Frieze-Kannan refinement.

    Each round finds a near-optimal cut ``(S, T)`` of ``w - w_P`` and splits the
    classes by membership in S and in T, keeping whichever admissible split
    (by S, by T, or by both) lowers ``||w - w_P||_F`` the most.  Stops when no
    split fits within ``max_classes`` or nothing improves.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if max_classes < 1:
        raise ValueError("max_classes must be >= 1")
    if exact is None:
        exact = n <= 14
    part = Partition(np.zeros(n, dtype=int))
    wp = block_average(w, part)
    rnd = 0
    while True:
        resid = w - wp
        cert = cut_norm_exact(resid) if exact else cut_norm_heuristic(resid, restarts, seed + rnd)
        rnd += 1
        if cert.value <= 1e-14:
            break
        in_s = np.isin(np.arange(n), cert.row_set).astype(int)
        in_t = np.isin(np.arange(n), cert.col_set).astype(int)
        candidates = []
        for tag in (2 * in_s + in_t, in_s, in_t):
            cand = Partition(part.class_of * 4 + tag).relabeled()
            if cand.n_classes <= max_classes and cand.n_classes > part.n_classes:
                wc = block_average(w, cand)
                candidates.append((float(np.sum((w - wc) ** 2)), cand, wc))
        if not candidates:
            break
        err, cand, wc = min(candidates, key=lambda t: t[0])
        if err >= float(np.sum(resid**2)) - 1e-15:
            break
        part, wp = cand, wc
    return part, wp
