"""Particle SDE and extended Vlasov PDE on the torus.

Particles follow

    dX_i = mu(X_i) dt + (1/N) sum_j w_ij sigma(X_i, X_j) dt + nu dB_i,

integrated by Euler-Maruyama with wrap-around.  A k-class step graphon
evolves per-class densities by

    d_t f_c + d_x(V_c f_c) = (nu^2 / 2) d_xx f_c,
    V_c(x) = mu(x) + sum_c' kappa_c' W[c, c'] int sigma(x, y) f_c'(y) dy,

with a conservative first-order upwind finite-volume scheme and explicit
centered diffusion.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .systems import ContinuumSystem, FiniteSystem, child_seed, discretize_lift, sample_finite
from .torus import wrap

__all__ = [
    "Drift",
    "Interaction",
    "Coefficients",
    "TimeGrid",
    "drift",
    "interaction",
    "particle_velocity",
    "simulate_particles",
    "vlasov_velocity",
    "solve_vlasov",
    "coupled_run",
    "CoupledRun",
    "GuardError",
    "write_trajectory_csv",
    "write_snapshot_json",
]

log = logging.getLogger(__name__)

PARTICLE_GUARD = 0.1
ADVECTION_CFL = 0.9
DIFFUSION_CFL = 0.45
NEGATIVE_TOL = 1e-12
TWO_PI = 2 * np.pi


class GuardError(ValueError):
    """A stability guard or a numerical sanity check failed."""


@dataclass(frozen=True)
class Drift:
    name: str
    params: tuple
    fn: Callable = field(repr=False, compare=False)
    lipschitz: float
    sup: float

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Interaction:
    """``sigma(x, y)``; ``kuramoto_k`` is set when sigma = K sin(2 pi (y - x))."""

    name: str
    params: tuple
    fn: Callable = field(repr=False, compare=False)
    lipschitz: float
    sup: float
    kuramoto_k: float | None = None

    def __call__(self, x, y):
        return self.fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def drift(name: str, *params) -> Drift:
    if name == "zero":
        return Drift("zero", (), lambda x: np.zeros_like(x), 0.0, 0.0)
    if name == "constant":
        (c,) = params
        c = float(c)
        return Drift("constant", (c,), lambda x: np.full_like(x, c), 0.0, abs(c))
    if name == "sin_drift":
        (a,) = params
        a = float(a)
        return Drift("sin_drift", (a,), lambda x: a * np.sin(TWO_PI * x), TWO_PI * abs(a), abs(a))
    raise ValueError(f"unknown drift preset {name!r}")


_BUMP_SUP = float(np.max(np.abs(np.sin(TWO_PI * np.linspace(0, 1, 100_001)) * np.exp(np.cos(TWO_PI * np.linspace(0, 1, 100_001)) - 1))))


def interaction(name: str, *params) -> Interaction:
    if name == "zero":
        return Interaction("zero", (), lambda x, y: np.zeros(np.broadcast(x, y).shape), 0.0, 0.0)
    if name == "kuramoto":
        (k,) = params
        k = float(k)
        return Interaction("kuramoto", (k,), lambda x, y: k * np.sin(TWO_PI * (y - x)), TWO_PI * abs(k), abs(k), kuramoto_k=k)
    if name == "smooth_bump":
        (k,) = params
        k = float(k)

        def bump(x, y):
            u = TWO_PI * (y - x)
            return k * np.sin(u) * np.exp(np.cos(u) - 1.0)

        # d/du [sin u e^{cos u - 1}] = (cos u - sin^2 u) e^{cos u - 1}, largest at u = 0
        return Interaction("smooth_bump", (k,), bump, TWO_PI * abs(k), abs(k) * _BUMP_SUP)
    raise ValueError(f"unknown interaction preset {name!r}")


@dataclass(frozen=True)
class Coefficients:
    mu: Drift
    sigma: Interaction
    nu: float = 0.0

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError("nu must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "Coefficients":
        mu = d.get("mu", {"name": "zero"})
        sg = d.get("sigma", {"name": "zero"})
        return cls(drift(mu["name"], *mu.get("params", [])), interaction(sg["name"], *sg.get("params", [])), float(d.get("nu", 0.0)))

    def to_dict(self) -> dict:
        return {
            "mu": {"name": self.mu.name, "params": list(self.mu.params), "lipschitz": self.mu.lipschitz},
            "sigma": {"name": self.sigma.name, "params": list(self.sigma.params), "lipschitz": self.sigma.lipschitz},
            "nu": self.nu,
        }


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    t_end: float

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if abs(self.steps * self.dt - self.t_end) > 1e-12 * max(1.0, self.t_end):
            raise ValueError(f"t_end = {self.t_end} is not a whole number of steps dt = {self.dt}")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @classmethod
    def from_steps(cls, t_end: float, steps: int) -> "TimeGrid":
        return cls(t_end / steps, t_end)


# ---------------------------------------------------------------------------
# particles


def particle_velocity(w, x, c: Coefficients) -> np.ndarray:
    """Drift plus mean interaction for every agent."""
    n = x.shape[0]
    v = c.mu(x)
    if c.sigma.kuramoto_k is not None:
        # K sin(2pi(y - x)) = K [sin(2pi y) cos(2pi x) - cos(2pi y) sin(2pi x)]
        s, co = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
        v = v + c.sigma.kuramoto_k * ((w @ s) * co - (w @ co) * s) / n
    elif c.sigma.name != "zero":
        v = v + np.sum(w * c.sigma(x[:, None], x[None, :]), axis=1) / n
    return v


def _particle_dt_limit(w_max: float, c: Coefficients) -> float:
    rate = c.mu.lipschitz + w_max * c.sigma.lipschitz
    return np.inf if rate == 0 else PARTICLE_GUARD / rate


def simulate_particles(sys0: FiniteSystem, c: Coefficients, tg: TimeGrid, seed: int = 0, trajectory: bool = False):
    """Euler-Maruyama from ``sys0`` to ``tg.t_end``.

    Brownian increments come from one generator seeded with ``seed`` and drawn
    step by step (N normals per step in agent order), so runs are
    reproducible.  Returns the final system, or ``(final, times, states)``
    when ``trajectory`` is set.
    """
    limit = _particle_dt_limit(sys0.w_max, c)
    if tg.dt > limit:
        raise GuardError(f"dt = {tg.dt} exceeds the particle stability limit {limit:.4g}")
    rng = np.random.default_rng(seed)
    x = wrap(np.array(sys0.x, dtype=float))
    w = sys0.w
    sq = np.sqrt(tg.dt)
    states = [x.copy()] if trajectory else None
    for step in range(tg.steps):
        x = x + tg.dt * particle_velocity(w, x, c)
        if c.nu > 0:
            x = x + c.nu * sq * rng.standard_normal(x.shape[0])
        if not np.all(np.isfinite(x)):
            raise GuardError(f"non-finite particle state at step {step + 1}")
        x = wrap(x)
        if trajectory:
            states.append(x.copy())
    final = sys0.with_states(x)
    if trajectory:
        return final, np.arange(tg.steps + 1) * tg.dt, np.array(states)
    return final


# ---------------------------------------------------------------------------
# Vlasov PDE


def _mean_field(c: Coefficients, cont: ContinuumSystem, f: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """``int sigma(face, y) f_c(y) dy`` per class (rows) and face (columns)."""
    g = f.shape[1]
    if c.sigma.name == "zero":
        return np.zeros((f.shape[0], faces.shape[0]))
    if c.sigma.kuramoto_k is not None:
        # exact integrals of sin and cos over every cell
        edges = np.arange(g + 1) / g
        sin_cells = (np.cos(TWO_PI * edges[:-1]) - np.cos(TWO_PI * edges[1:])) / TWO_PI
        cos_cells = (np.sin(TWO_PI * edges[1:]) - np.sin(TWO_PI * edges[:-1])) / TWO_PI
        s_mom, c_mom = f @ sin_cells, f @ cos_cells
        return c.sigma.kuramoto_k * (np.outer(s_mom, np.cos(TWO_PI * faces)) - np.outer(c_mom, np.sin(TWO_PI * faces)))
    centers = (np.arange(g) + 0.5) / g
    kern = c.sigma(faces[:, None], centers[None, :])
    return f @ kern.T / g


def vlasov_velocity(cont: ContinuumSystem, f: np.ndarray, c: Coefficients) -> np.ndarray:
    """Velocity of every class at the right face of every cell."""
    g = f.shape[1]
    faces = (np.arange(g) + 1.0) / g
    field_ = _mean_field(c, cont, f, faces)
    return c.mu(faces)[None, :] + (cont.W * cont.kappa[None, :]) @ field_


def _vlasov_limits(cont: ContinuumSystem, c: Coefficients, g: int) -> tuple[float, float]:
    vmax = c.mu.sup + float(np.max(np.abs(cont.W) @ cont.kappa)) * c.sigma.sup
    adv = np.inf if vmax == 0 else ADVECTION_CFL / (g * vmax)
    diff = np.inf if c.nu == 0 else 2 * DIFFUSION_CFL / (c.nu**2 * g * g)
    return adv, diff


def solve_vlasov(cont0: ContinuumSystem, c: Coefficients, tg: TimeGrid, snapshots: int | None = None):
    """Integrate the class densities of ``cont0`` on its own grid to ``tg.t_end``.

    The guards use the a priori velocity bound ``sup|mu| + max_c sum_c'
    kappa_c' |W[c, c']| sup|sigma|``.  Returns the final system, or
    ``(final, times, densities)`` with every ``snapshots``-th step recorded.
    """
    g = cont0.grid_size
    adv, diff = _vlasov_limits(cont0, c, g)
    if tg.dt > adv:
        raise GuardError(f"dt = {tg.dt} violates the advection CFL limit {adv:.4g} (G = {g})")
    if tg.dt > diff:
        raise GuardError(f"dt = {tg.dt} violates the diffusion limit {diff:.4g} (G = {g}, nu = {c.nu})")
    f = np.array(cont0.densities, dtype=float)
    dcoef = 0.5 * c.nu**2 * tg.dt * g * g
    times, frames = [0.0], [f.copy()]
    for step in range(tg.steps):
        v = vlasov_velocity(cont0, f, c)
        right, left = np.roll(f, -1, axis=1), np.roll(f, 1, axis=1)
        flux = np.maximum(v, 0.0) * f + np.minimum(v, 0.0) * right  # at right faces
        f = f - tg.dt * g * (flux - np.roll(flux, 1, axis=1)) + dcoef * (right - 2 * f + left)
        low = f.min()
        if low < -NEGATIVE_TOL:
            raise GuardError(f"negative density {low:.3e} at step {step + 1}")
        if not np.all(np.isfinite(f)):
            raise GuardError(f"non-finite density at step {step + 1}")
        if snapshots and (step + 1) % snapshots == 0:
            times.append((step + 1) * tg.dt)
            frames.append(f.copy())
    final = cont0.with_densities(f)
    if snapshots:
        return final, np.array(times), np.array(frames)
    return final


@dataclass
class CoupledRun:
    finals: dict  # (N, seed) -> FiniteSystem
    initials: dict
    pde: ContinuumSystem


def coupled_run(cont0: ContinuumSystem, n_list, c: Coefficients, particle_grid: TimeGrid, pde_grid: TimeGrid, seeds=(0,), mode: str = "lift") -> CoupledRun:
    """Integrate finite systems built from ``cont0`` at every N and seed, and the PDE.

    ``mode="lift"`` uses the deterministic quantile lift with about N agents;
    ``mode="sample"`` samples N agents with child seed ``(seed, 0)``.  Brownian
    motion uses child seed ``(seed, 1)``.
    """
    finals, initials = {}, {}
    for n in n_list:
        for seed in seeds:
            if mode == "lift":
                sys0 = discretize_lift(cont0, max(1, int(round(n / cont0.k))))
            elif mode == "sample":
                sys0 = sample_finite(cont0, n, child_seed(seed, 0))
            else:
                raise ValueError(f"unknown mode {mode!r}")
            initials[(n, seed)] = sys0
            finals[(n, seed)] = simulate_particles(sys0, c, particle_grid, child_seed(seed, 1))
    pde = solve_vlasov(cont0, c, pde_grid)
    return CoupledRun(finals, initials, pde)


def write_trajectory_csv(path, times, states) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "agent", "x"])
        for t, row in zip(times, states):
            for i, x in enumerate(row):
                wr.writerow([repr(float(t)), i, repr(float(x))])


def write_snapshot_json(path, cont: ContinuumSystem, t: float, c: Coefficients) -> None:
    doc = {
        "t": t,
        "grid": cont.grid_size,
        "cell_width": 1.0 / cont.grid_size,
        "kappa": cont.kappa.tolist(),
        "W": cont.W.tolist(),
        "densities": cont.densities.tolist(),
        "coefficients": c.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
