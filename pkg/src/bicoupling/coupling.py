"""Couplings between weighted multi-agent systems and the bi-coupling distance.

For systems ``(w1, x1)`` with N1 agents and ``(w2, x2)`` with N2 agents and a
coupling ``gamma`` (nonnegative, row sums ``1/N1``, column sums ``1/N2``) the
objective is

    sum_ij |x1_i - x2_j| gamma_ij
      + ( ||N2 w1 gamma - N1 gamma w2|| + ||N2 gamma^T w1 - N1 w2 gamma^T|| ) / sqrt(N1 N2)

with the ell^2 -> ell^2 operator norm.  It is convex in gamma; the solver
below is a projected subgradient method returning the best feasible iterate,
so every reported distance is an upper bound.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import linear_sum_assignment, linprog

from .cut import cut_norm_heuristic, inf_to_one_norm_exact
from .systems import FiniteSystem
from .torus import LAMBDA_MAX, AtomicMeasure, torus_dist

__all__ = [
    "Coupling",
    "BicouplingResult",
    "SolverConfig",
    "circular_w1",
    "transport_cost",
    "optimal_transport_coupling",
    "project_to_couplings",
    "bicoupling_objective",
    "solve_bicoupling",
    "compose_couplings",
    "hilbert_coupling_estimate",
    "hilbert_estimate_bound",
]

log = logging.getLogger(__name__)

MARGINAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Coupling:
    """Nonnegative N1 x N2 matrix with row sums 1/N1 and column sums 1/N2."""

    gamma: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.ndim != 2:
            raise ValueError("coupling must be a matrix")
        if self.check:
            if g.min(initial=0.0) < -1e-15:
                raise ValueError(f"negative coupling entry {g.min()}")
            res = marginal_residual(g)
            if res > MARGINAL_TOL:
                raise ValueError(f"marginal residual {res:.3e} exceeds {MARGINAL_TOL}")
        g = np.clip(g, 0.0, None)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def shape(self):
        return self.gamma.shape

    @property
    def T(self) -> "Coupling":
        return Coupling(self.gamma.T, check=False)

    @classmethod
    def identity(cls, n: int) -> "Coupling":
        return cls(np.eye(n) / n)

    @classmethod
    def product(cls, n1: int, n2: int) -> "Coupling":
        return cls(np.full((n1, n2), 1.0 / (n1 * n2)))

    @classmethod
    def from_permutation(cls, perm) -> "Coupling":
        """Coupling that pairs agent ``i`` of the first system with ``perm[i]`` of the second."""
        perm = np.asarray(perm)
        n = perm.shape[0]
        g = np.zeros((n, n))
        g[np.arange(n), perm] = 1.0 / n
        return cls(g)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.gamma, delimiter=",")


def marginal_residual(g) -> float:
    n1, n2 = g.shape
    return float(max(np.abs(g.sum(axis=1) - 1.0 / n1).max(), np.abs(g.sum(axis=0) - 1.0 / n2).max()))


# ---------------------------------------------------------------------------
# Wasserstein-1 on the circle


def circular_w1(a: AtomicMeasure, b: AtomicMeasure) -> float:
    """Exact W1 between probability measures on R/Z.

    Uses ``W1 = min_alpha int_0^1 |F_a - F_b - alpha|``; the minimizing shift
    is a weighted median of the CDF difference.
    """
    for m in (a, b):
        if m.arity != 1:
            raise ValueError("circular_w1 needs measures on the circle (arity 1)")
        if np.any(m.weights < 0) or abs(m.total_mass() - 1.0) > 1e-9:
            raise ValueError("circular_w1 needs probability measures")
    pos = np.concatenate([a.positions[:, 0], b.positions[:, 0]])
    wt = np.concatenate([a.weights, -b.weights])
    order = np.argsort(pos, kind="stable")
    pos, wt = pos[order], wt[order]
    # D is constant on [pos_k, pos_{k+1}); zero before the first and after the last atom
    d = np.cumsum(wt)
    lengths = np.diff(np.concatenate([pos, [1.0]]))
    vals = np.concatenate([[0.0], d])
    lens = np.concatenate([[pos[0]], lengths])
    keep = lens > 0
    vals, lens = vals[keep], lens[keep]
    o = np.argsort(vals)
    cum = np.cumsum(lens[o])
    alpha = vals[o][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(lens * np.abs(vals - alpha)))


def transport_cost(x1, x2) -> np.ndarray:
    return torus_dist(np.asarray(x1)[:, None], np.asarray(x2)[None, :])


def optimal_transport_coupling(x1, x2) -> Coupling:
    """Exact minimizer of the transport term alone (uniform marginals)."""
    c = transport_cost(x1, x2)
    n1, n2 = c.shape
    if n1 == n2:
        rows, cols = linear_sum_assignment(c)
        g = np.zeros((n1, n2))
        g[rows, cols] = 1.0 / n1
        return Coupling(g)
    a_eq = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        a_eq[i, i * n2 : (i + 1) * n2] = 1.0
    for j in range(n2):
        a_eq[n1 + j, j::n2] = 1.0
    b_eq = np.concatenate([np.full(n1, 1.0 / n1), np.full(n2, 1.0 / n2)])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    g, _, _ = project_to_couplings(res.x.reshape(n1, n2), tol=1e-13)
    return Coupling(g)


# ---------------------------------------------------------------------------
# projection onto the transportation polytope


def _simplex_thresholds(y: np.ndarray, total: float) -> np.ndarray:
    """Per-row tau with ``sum_j max(y_ij - tau_i, 0) = total``."""
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - total
    k = np.arange(1, y.shape[1] + 1)
    cond = u - css / k > 0
    rho = y.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    return css[np.arange(y.shape[0]), rho] / (rho + 1)


def _newton_direction(m, grad, eps):
    """Solve ``[[D_r, m], [m^T, D_c]] d = grad`` through the row-block Schur complement.

    ``m`` is the 0/1 active pattern, ``D_r`` and ``D_c`` its row and column
    counts (plus ``eps`` so empty rows or columns stay invertible).
    """
    n1 = m.shape[0]
    dr = m.sum(axis=1) + eps
    dc = m.sum(axis=0) + eps
    ga, gb = grad[:n1], grad[n1:]
    schur = np.diag(dr) - (m / dc) @ m.T
    rhs = ga - m @ (gb / dc)
    try:
        x = cho_solve(cho_factor(schur + eps * np.eye(n1)), rhs)
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(schur, rhs, rcond=None)[0]
    y = (gb - m.T @ x) / dc
    return np.concatenate([x, y])


def project_to_couplings(y, tol: float = 1e-12, max_iter: int = 200, potentials=None):
    """Euclidean projection of ``y`` onto the (N1, N2) transportation polytope.

    The projection is ``max(y - alpha_i - beta_j, 0)`` for dual potentials
    ``(alpha, beta)``.  A few alternating row/column simplex projections (block
    ascent on the dual, Dykstra's scheme for these two constraint families)
    give a starting point, and a semismooth Newton iteration on the dual then
    drives the marginal residual below ``tol``.  Returns
    ``(gamma, (alpha, beta), residual)``.
    """
    y = np.asarray(y, dtype=float)
    n1, n2 = y.shape
    r, c = 1.0 / n1, 1.0 / n2
    if potentials is None:
        alpha, beta = np.zeros(n1), np.zeros(n2)
        for _ in range(3):
            alpha = _simplex_thresholds(y - beta[None, :], r)
            beta = _simplex_thresholds((y - alpha[:, None]).T, c)
    else:
        alpha = np.array(potentials[0], dtype=float)
        beta = np.array(potentials[1], dtype=float)
    alpha = _simplex_thresholds(y - beta[None, :], r)

    def dual(a, b):
        z = y - a[:, None] - b[None, :]
        g = np.maximum(z, 0.0)
        val = 0.5 * np.sum(g * g) + r * a.sum() + c * b.sum()
        grad = np.concatenate([r - g.sum(axis=1), c - g.sum(axis=0)])
        return val, grad, g, z > 0

    val, grad, g, active = dual(alpha, beta)
    res = float(np.abs(grad).max())
    for _ in range(max_iter):
        if res <= tol:
            break
        step = -_newton_direction(active.astype(float), grad, 1e-10 * max(n1, n2))
        t = 1.0
        while True:
            a2, b2 = alpha + t * step[:n1], beta + t * step[n1:]
            val2, grad2, g2, active2 = dual(a2, b2)
            # near the solution the dual decrease drops below round-off; a smaller residual is progress too
            if val2 <= val + 1e-4 * t * grad @ step or np.abs(grad2).max() < res or t < 1e-12:
                break
            t *= 0.5
        alpha, beta, val, grad, g, active = a2, b2, val2, grad2, g2, active2
        res = float(np.abs(grad).max())
    return g, (alpha, beta), res


# ---------------------------------------------------------------------------
# objective


@dataclass
class BicouplingResult:
    gamma: Coupling
    value: float
    w1_term: float
    op_terms: float
    op_term_left: float = 0.0
    op_term_right: float = 0.0
    iterations: int = 0
    marginal_residual: float = 0.0
    converged: bool = True
    lower_bound: float = 0.0
    history: list = field(default_factory=list, repr=False)

    def to_dict(self, include_gamma: bool = False) -> dict:
        d = {
            "value": self.value,
            "w1_term": self.w1_term,
            "op_terms": self.op_terms,
            "op_term_left": self.op_term_left,
            "op_term_right": self.op_term_right,
            "iterations": self.iterations,
            "marginal_residual": self.marginal_residual,
            "converged": self.converged,
            "lower_bound": self.lower_bound,
        }
        if include_gamma:
            d["gamma"] = self.gamma.gamma.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _mismatch(w1, w2, g):
    n1, n2 = g.shape
    left = n2 * (w1 @ g) - n1 * (g @ w2)
    right = n2 * (g.T @ w1) - n1 * (w2 @ g.T)
    return left, right


def _top_triplet(m, ref):
    """Top singular triplet ``(s, u, v)`` from a dense symmetric eigensolver.

    The optimizer is drawn toward couplings where the top singular values
    coalesce, which is exactly where power iteration stalls, so the objective
    uses LAPACK on ``m^T m`` (or ``m m^T``, whichever is smaller).  ``ref``
    bounds the Frobenius norm of the two products subtracted to form ``m``;
    cancellation below ``1e-13 * ref`` is treated as exact zero.
    """
    n1, n2 = m.shape
    if np.linalg.norm(m) <= 1e-13 * ref:
        u, v = np.zeros(n1), np.zeros(n2)
        u[0] = v[0] = 1.0
        return 0.0, u, v
    if n2 <= n1:
        _, vec = eigh(m.T @ m, subset_by_index=[n2 - 1, n2 - 1])
        v = vec[:, 0]
        u = m @ v
        s = float(np.linalg.norm(u))
        return s, u / s, v
    _, vec = eigh(m @ m.T, subset_by_index=[n1 - 1, n1 - 1])
    u = vec[:, 0]
    v = m.T @ u
    s = float(np.linalg.norm(v))
    return s, u, v / s


def _mismatch_scale(w1, w2, g):
    n1, n2 = g.shape
    return (n2 * np.linalg.norm(w1) + n1 * np.linalg.norm(w2)) * np.linalg.norm(g)


def _check_shapes(s1: FiniteSystem, s2: FiniteSystem, g: np.ndarray):
    if g.shape != (s1.n, s2.n):
        raise ValueError(f"coupling shape {g.shape} does not match systems ({s1.n}, {s2.n})")


def bicoupling_objective(s1: FiniteSystem, s2: FiniteSystem, g, norm: str = "l2") -> BicouplingResult:
    """Evaluate the bi-coupling objective at a given coupling.

    ``norm="l2"`` is the ell^2 -> ell^2 operator norm; ``norm="inf1"`` uses the
    exact L^inf -> L^1 norm (both systems must have at most 20 agents).
    """
    if not isinstance(g, Coupling):
        g = Coupling(g)
    gm = g.gamma
    _check_shapes(s1, s2, gm)
    n1, n2 = gm.shape
    w1_term = float(np.sum(transport_cost(s1.x, s2.x) * gm))
    left, right = _mismatch(s1.w, s2.w, gm)
    if norm == "l2":
        scale = 1.0 / np.sqrt(n1 * n2)
        ref = _mismatch_scale(s1.w, s2.w, gm)
        a = _top_triplet(left, ref)[0] * scale
        b = _top_triplet(right, ref)[0] * scale
    elif norm == "inf1":
        a = inf_to_one_norm_exact(left)
        b = inf_to_one_norm_exact(right)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return BicouplingResult(
        gamma=g,
        value=w1_term + a + b,
        w1_term=w1_term,
        op_terms=a + b,
        op_term_left=a,
        op_term_right=b,
        marginal_residual=marginal_residual(gm),
    )


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 2000
    tol: float = 1e-6
    seed: int = 0
    init: str = "auto"  # "auto", "product" or "transport"
    window: int = 200


def _tangent(g):
    return g - g.mean(axis=1, keepdims=True) - g.mean(axis=0, keepdims=True) + g.mean()


class _Objective:
    """Objective value and one subgradient."""

    def __init__(self, s1, s2):
        self.w1, self.w2 = s1.w, s2.w
        self.cost = transport_cost(s1.x, s2.x)
        self.n1, self.n2 = s1.n, s2.n
        self.scale = 1.0 / np.sqrt(self.n1 * self.n2)

    def __call__(self, g):
        n1, n2 = self.n1, self.n2
        left, right = _mismatch(self.w1, self.w2, g)
        ref = _mismatch_scale(self.w1, self.w2, g)
        sa, ua, va = _top_triplet(left, ref)
        sb, ub, vb = _top_triplet(right, ref)
        value = float(np.sum(self.cost * g)) + self.scale * (sa + sb)
        grad = self.cost.copy()
        if sa > 0:
            ga = np.outer(ua, va)
            grad += self.scale * (n2 * self.w1.T @ ga - n1 * ga @ self.w2.T)
        if sb > 0:
            gb = np.outer(ub, vb)
            grad += self.scale * (n2 * self.w1 @ gb.T - n1 * gb.T @ self.w2)
        return value, grad


def solve_bicoupling(s1: FiniteSystem, s2: FiniteSystem, cfg: SolverConfig | None = None, **kwargs) -> BicouplingResult:
    """Minimize the bi-coupling objective by projected subgradient descent.

    Steps are ``c / sqrt(t)`` along the normalized subgradient with
    ``c = value_0 / ||subgradient_0||``.  With ``init="auto"`` the iteration starts
    from the better of the product coupling and the transport-optimal coupling.
    The best feasible iterate is returned.  The optimal transport cost is a
    lower bound (``lower_bound``); the loop stops early once the best value is
    within ``tol`` (relative) of it, or when the best value improved by less
    than ``tol`` over the last ``window`` iterations.  ``converged`` is False
    when ``max_iter`` ran out while the value was still improving.
    """
    cfg = cfg or SolverConfig(**kwargs)
    obj = _Objective(s1, s2)
    n1, n2 = s1.n, s2.n

    if cfg.init not in ("auto", "product", "transport"):
        raise ValueError(f"unknown init {cfg.init!r}")
    transport = optimal_transport_coupling(s1.x, s2.x).gamma
    # the transport term alone is minimized by this plan, so its cost bounds the objective from below
    lower = float(np.sum(obj.cost * transport))
    starts = []
    if cfg.init in ("auto", "product"):
        starts.append(Coupling.product(n1, n2).gamma)
    if cfg.init in ("auto", "transport"):
        starts.append(transport)
    evals = [obj(g) for g in starts]
    i0 = int(np.argmin([e[0] for e in evals]))
    g = starts[i0].copy()
    value, grad = evals[i0]

    best_val, best_g = value, g.copy()
    history = [best_val]
    tg = _tangent(grad)
    gnorm0 = np.linalg.norm(tg)
    c = value / gnorm0 if gnorm0 > 0 else 0.0
    potentials = None
    it = 0
    stalled = False
    for it in range(1, cfg.max_iter + 1):
        if best_val - lower <= cfg.tol * best_val or best_val <= 1e-15 or c == 0.0:
            it -= 1
            break
        if it > cfg.window and history[-cfg.window - 1] - best_val <= cfg.tol * history[-cfg.window - 1]:
            stalled = True
            it -= 1
            break
        tg = _tangent(grad)
        gn = np.linalg.norm(tg)
        if gn == 0:
            break
        y = g - (c / np.sqrt(it)) * tg / gn
        g, potentials, _ = project_to_couplings(y, tol=1e-12, potentials=potentials)
        value, grad = obj(g)
        if value < best_val:
            best_val, best_g = value, g.copy()
        history.append(best_val)

    converged = True
    if not stalled and len(history) > cfg.window:
        old = history[-cfg.window - 1]
        if old - best_val > cfg.tol * max(abs(old), 1e-300):
            converged = False
    # polish feasibility of the returned coupling, then re-evaluate
    final, _, res = project_to_couplings(best_g, tol=1e-13)
    result = bicoupling_objective(s1, s2, Coupling(final))
    result.iterations = it
    result.converged = converged
    result.history = history
    result.marginal_residual = res
    result.lower_bound = lower
    if not converged:
        log.info("bi-coupling solver still improving after %d iterations (value %.3e)", it, result.value)
    return result


def compose_couplings(g12: Coupling, g23: Coupling) -> Coupling:
    """``N2 * g12 @ g23``: glue two couplings along the middle system."""
    a = g12.gamma if isinstance(g12, Coupling) else np.asarray(g12)
    b = g23.gamma if isinstance(g23, Coupling) else np.asarray(g23)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} and {b.shape}")
    return Coupling((a.shape[1] * a) @ b)


# ---------------------------------------------------------------------------
# Hilbert-valued coupling diagnostic


def _trig_basis(x, m_cap):
    """Real trigonometric basis up to ``m_cap`` evaluated at x, and H^1 norms squared."""
    x = np.asarray(x, dtype=float)
    cols = [np.ones_like(x)]
    norms = [1.0]
    for m in range(1, m_cap + 1):
        cols += [np.cos(2 * np.pi * m * x), np.sin(2 * np.pi * m * x)]
        nm = 0.5 * (1 + 4 * np.pi**2 * m * m)
        norms += [nm, nm]
    return np.stack(cols, axis=1), np.array(norms)


class _HilbertTerm:
    """One of the two mismatch kernels, tested against e = (phi1, phi2) in H^1 x H^1."""

    def __init__(self, s1, s2, g, m_cap, transpose):
        self.w1, self.w2, self.g = s1.w, s2.w, g
        self.n1, self.n2 = s1.n, s2.n
        self.b1, self.norms = _trig_basis(s1.x, m_cap)
        self.b2, _ = _trig_basis(s2.x, m_cap)
        self.transpose = transpose
        self.k = self.norms.shape[0]

    def matrix(self, coef):
        """Scalar kernel <e, D(i, j)> for coefficient vector ``coef`` (length 2K)."""
        n1, n2, g, w1, w2 = self.n1, self.n2, self.g, self.w1, self.w2
        c1, c2 = coef[: self.k], coef[self.k :]
        p1, q1 = self.b1 @ c1, self.b1 @ c2
        p2, q2 = self.b2 @ c1, self.b2 @ c2
        if not self.transpose:
            d = np.outer(np.ones(n1), n2 * (g.T @ p1) - p2)
            d += n2 * (w1 * q1[None, :]) @ g - n1 * g @ (w2 * q2[None, :])
        else:
            d = np.outer(np.ones(n2), p1 - n1 * (g @ p2))
            d += n2 * g.T @ (w1 * q1[None, :]) - n1 * (w2 * q2[None, :]) @ g.T
        return d

    def gradient(self, rows, cols):
        """Linear functional ``e -> <e, sum_{S x T} D> / (N1 N2)`` in basis coordinates."""
        n1, n2, g, w1, w2 = self.n1, self.n2, self.g, self.w1, self.w2
        if not self.transpose:
            s = np.zeros(n1)
            s[list(rows)] = 1.0
            t = np.zeros(n2)
            t[list(cols)] = 1.0
            gt = g @ t
            f1 = s.sum() * (n2 * gt @ self.b1 - t @ self.b2)
            f2 = n2 * ((w1.T @ s) * gt) @ self.b1 - n1 * ((w2.T @ (g.T @ s)) * t) @ self.b2
        else:
            s = np.zeros(n2)
            s[list(rows)] = 1.0
            t = np.zeros(n1)
            t[list(cols)] = 1.0
            f1 = s.sum() * (t @ self.b1 - n1 * (g.T @ t) @ self.b2)
            f2 = n2 * ((w1.T @ (g @ s)) * t) @ self.b1 - n1 * ((w2.T @ s) * (g.T @ t)) @ self.b2
        return np.concatenate([f1, f2]) / (n1 * n2)

    def estimate(self, rng, restarts, inner_restarts=4, max_rounds=20):
        norms = np.concatenate([self.norms, self.norms])
        best = 0.0
        for _ in range(restarts):
            coef = rng.standard_normal(2 * self.k) / np.sqrt(norms)
            coef /= np.sqrt(np.sum(norms * coef**2))
            val_old = -1.0
            for _ in range(max_rounds):
                cert = cut_norm_heuristic(self.matrix(coef), inner_restarts, int(rng.integers(2**31)))
                if not cert.row_set or not cert.col_set:
                    break
                f = self.gradient(cert.row_set, cert.col_set)
                val = float(np.sqrt(np.sum(f**2 / norms)))
                best = max(best, val)
                if val <= val_old * (1 + 1e-12):
                    break
                val_old = val
                coef = (f / norms) / val if val > 0 else coef
        return best


def hilbert_coupling_estimate(s1: FiniteSystem, s2: FiniteSystem, g, fourier_cap: int = 8, restarts: int = 8, seed: int = 0) -> float:
    """Heuristic lower bound of the H^-1 + H^-1 valued coupling cut distance at ``g``.

    Test elements e are restricted to trigonometric polynomials of degree at
    most ``fourier_cap``; each term alternates between the cut (S, T) for a fixed
    e and the best e for a fixed cut.  A diagnostic, not a metric.
    """
    gm = g.gamma if isinstance(g, Coupling) else np.asarray(g, dtype=float)
    _check_shapes(s1, s2, gm)
    rng = np.random.default_rng(seed)
    left = _HilbertTerm(s1, s2, gm, fourier_cap, transpose=False).estimate(rng, restarts)
    right = _HilbertTerm(s1, s2, gm, fourier_cap, transpose=True).estimate(rng, restarts)
    return left + right


def hilbert_estimate_bound(res: BicouplingResult, w_max: float) -> float:
    """Upper bound for the Hilbert coupling distance at the same coupling.

    ``2 (1 + w_max) sqrt(2 Lambda_max W) + sqrt(Lambda_max) * op_terms`` where W is
    the transport term; follows from ``|phi(x) - phi(y)|^2 <= 2 Lambda_max |x - y|``
    for ``||phi||_{H^1} <= 1``.
    """
    return 2 * (1 + w_max) * np.sqrt(2 * LAMBDA_MAX * res.w1_term) + np.sqrt(LAMBDA_MAX) * res.op_terms
