"""Config-driven scenarios that produce result rows and pass/fail verdicts.

A scenario turns a config into rows ``(scenario, N, t, metric, value,
runtime_ms, seed)``.  Verdicts are computed from the rows alone, so a saved
``results.csv`` can be rechecked offline with :func:`evaluate`.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .coupling import Coupling, SolverConfig, bicoupling_objective, circular_w1, solve_bicoupling
from .cut import cut_norm_exact, weak_regularity_partition
from .dynamics import Coefficients, TimeGrid, simulate_particles, solve_vlasov
from .observables import observable_metric
from .systems import ContinuumSystem, FiniteSystem, child_seed, discretize_lift, sample_finite, system_from_dict
from .torus import AtomicMeasure, cell_centers
from .trees import enumerate_trees, homomorphism_density

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "ResultRow",
    "Assertion",
    "validate_config",
    "run_scenario",
    "evaluate",
    "rows_to_csv",
    "rows_from_csv",
    "write_artifacts",
    "svg_chart",
    "trend_ok",
]

CSV_HEADER = ["scenario", "N", "t", "metric", "value", "runtime_ms", "seed"]
NOISE_BAND = 0.10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    N: str
    t: float
    metric: str
    value: float
    runtime_ms: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite value for {self.metric} at N={self.N}")


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


# ---------------------------------------------------------------------------
# config handling

_REQUIRED = {
    "degenerate_w1": ["N", "seeds"],
    "permutation_zero": ["N", "seeds"],
    "compactness": ["N", "seeds", "continuum"],
    "stability": ["N", "seeds", "continuum", "coefficients", "time"],
    "regularity_check": ["N", "seeds", "classes"],
    "counting_check": ["N", "seeds", "pairs"],
    "pde_particle_consistency": ["N", "continuum", "coefficients", "time"],
}

SCENARIOS = tuple(_REQUIRED)


def validate_config(cfg: dict) -> dict:
    """Check required fields and return a normalized copy (errors name the field path)."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object")
    cfg = copy.deepcopy(cfg)
    scen = cfg.get("scenario")
    if scen not in _REQUIRED:
        raise ConfigError(f"scenario: expected one of {', '.join(SCENARIOS)}, got {scen!r}")
    for key in _REQUIRED[scen]:
        if key not in cfg:
            raise ConfigError(f"{key}: required for scenario {scen}")
    cfg.setdefault("name", scen)
    cfg.setdefault("seeds", [0])
    if not isinstance(cfg["seeds"], list) or not all(isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigError("seeds: expected a list of integers")
    n = cfg["N"]
    if isinstance(n, int):
        cfg["N"] = [n]
    if not isinstance(cfg["N"], list) or not cfg["N"] or not all(isinstance(v, int) and v >= 1 for v in cfg["N"]):
        raise ConfigError("N: expected a positive integer or a list of them")
    if "time" in cfg:
        t = cfg["time"]
        for key in ("t_end", "dt"):
            if key not in t:
                raise ConfigError(f"time.{key}: required")
        if t["t_end"] > 2:
            raise ConfigError("time.t_end: horizons are capped at 2")
    cfg.setdefault("tree_cap", 3)
    cfg.setdefault("solver", {})
    return cfg


def _continuum(desc) -> ContinuumSystem:
    """Continuum from a system JSON object or a cosine preset."""
    if desc.get("type") == "continuum":
        return system_from_dict(desc)
    if desc.get("preset") == "cosine_classes":
        g = int(desc.get("grid", 256))
        amp = float(desc.get("amplitude", 0.5))
        x = cell_centers(g)
        k = len(desc["kappa"])
        dens = np.vstack([1 + amp * np.cos(2 * np.pi * (x - c / (2 * k))) for c in range(k)])
        return ContinuumSystem(desc["kappa"], desc["W"], dens)
    raise ConfigError("continuum: expected a continuum system object or preset 'cosine_classes'")


def _coefficients(desc) -> Coefficients:
    try:
        return Coefficients.from_dict(desc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"coefficients: {exc}") from exc


def _solver(cfg) -> SolverConfig:
    try:
        return SolverConfig(**cfg["solver"])
    except TypeError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def _pmap(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


class _Clock:
    def __init__(self, timing: bool):
        self.timing = timing

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self.t0) * 1e3 if self.timing else 0.0


# ---------------------------------------------------------------------------
# scenarios


def _degenerate_w1(cfg, threads, timing):
    solver = _solver(cfg)

    def task(item):
        n, seed = item
        rng = np.random.default_rng(child_seed(seed, n))
        x1, x2 = rng.random(n), rng.random(n)
        ones = np.ones((n, n))
        with _Clock(timing) as clk:
            res = solve_bicoupling(FiniteSystem(ones, x1), FiniteSystem(ones, x2), solver)
        exact = circular_w1(AtomicMeasure.empirical(x1), AtomicMeasure.empirical(x2))
        return [
            ResultRow("degenerate_w1", str(n), 0.0, "solver_value", res.value, clk.ms, seed),
            ResultRow("degenerate_w1", str(n), 0.0, "circular_w1", exact, 0.0, seed),
            ResultRow("degenerate_w1", str(n), 0.0, "relative_error", abs(res.value - exact) / exact, 0.0, seed),
        ]

    items = [(n, s) for n in cfg["N"] for s in cfg["seeds"]]
    return [r for rows in _pmap(task, items, threads) for r in rows]


def _permutation_zero(cfg, threads, timing):
    solver = _solver(cfg)

    def task(item):
        n, seed = item
        rng = np.random.default_rng(child_seed(seed, n))
        sys = FiniteSystem(rng.uniform(-1, 1, (n, n)), rng.random(n))
        perm = rng.permutation(n)
        other = sys.permuted(perm)
        with _Clock(timing) as clk:
            same = solve_bicoupling(sys, sys, solver)
            moved = solve_bicoupling(sys, other, solver)
        inv = np.argsort(perm)
        direct = bicoupling_objective(sys, other, Coupling.from_permutation(inv)).value
        return [
            ResultRow("permutation_zero", str(n), 0.0, "solver_identical", same.value, clk.ms, seed),
            ResultRow("permutation_zero", str(n), 0.0, "solver_permuted", moved.value, 0.0, seed),
            ResultRow("permutation_zero", str(n), 0.0, "objective_at_permutation", direct, 0.0, seed),
        ]

    items = [(n, s) for n in cfg["N"] for s in cfg["seeds"]]
    return [r for rows in _pmap(task, items, threads) for r in rows]


def _compactness(cfg, threads, timing):
    """Distance between samples of size N and 2N from the same continuum."""
    cont = _continuum(cfg["continuum"])
    solver = _solver(cfg)

    def task(item):
        n, seed = item
        a = sample_finite(cont, n, child_seed(seed, 2 * n))
        b = sample_finite(cont, 2 * n, child_seed(seed, 2 * n + 1))
        with _Clock(timing) as clk:
            res = solve_bicoupling(a, b, solver)
        return [ResultRow("compactness", str(n), 0.0, "bicoupling_N_2N", res.value, clk.ms, seed)]

    items = [(n, s) for n in cfg["N"] for s in cfg["seeds"]]
    return [r for rows in _pmap(task, items, threads) for r in rows]


def _time_grids(cfg):
    t = cfg["time"]
    particle = TimeGrid(float(t["dt"]), float(t["t_end"]))
    pde_dt = t.get("pde_dt")
    if pde_dt is None:
        pde = TimeGrid.from_steps(float(t["t_end"]), int(t.get("pde_steps", particle.steps)))
    else:
        pde = TimeGrid(float(pde_dt), float(t["t_end"]))
    return particle, pde


def _stability(cfg, threads, timing):
    """Sampled N-agent endpoints against the PDE endpoint, averaged over seeds."""
    cont = _continuum(cfg["continuum"])
    coeffs = _coefficients(cfg["coefficients"])
    particle, pde_grid = _time_grids(cfg)
    pde = solve_vlasov(cont, coeffs, pde_grid)
    cap = int(cfg["tree_cap"])
    t_end = particle.t_end

    def task(item):
        n, seed = item
        with _Clock(timing) as clk:
            sys0 = sample_finite(cont, n, child_seed(seed, 0))
            end = simulate_particles(sys0, coeffs, particle, child_seed(seed, 1))
            value = observable_metric(end, pde, cap).value
        return ResultRow("stability", str(n), t_end, "observable_metric", value, clk.ms, seed)

    items = [(n, s) for n in cfg["N"] for s in cfg["seeds"]]
    return _pmap(task, items, threads)


def _regularity(cfg, threads, timing):
    rows = []
    for n in cfg["N"]:
        for seed in cfg["seeds"]:
            rng = np.random.default_rng(child_seed(seed, n))
            w = rng.choice([-1.0, 1.0], size=(n, n))
            for k in cfg["classes"]:
                with _Clock(timing) as clk:
                    _, wp = weak_regularity_partition(w, k, seed=seed)
                    resid = cut_norm_exact(w - wp).value
                bound = 2 / np.sqrt(np.log(k)) * np.abs(w).max() ** 2
                rows.append(ResultRow("regularity_check", str(n), 0.0, f"residual_k{k}", resid, clk.ms, seed))
                rows.append(ResultRow("regularity_check", str(n), 0.0, f"bound_k{k}", bound, 0.0, seed))
    return rows


def _counting(cfg, threads, timing):
    """``|t(F, w1) - t(F, w2)| / (4 |e| w_max^{|e|-1} ||w1 - w2||_cut)`` for random pairs and trees."""
    trees = [t for t in enumerate_trees(5) if t.n_edges <= 4]
    rows = []
    for n in cfg["N"]:
        for seed in cfg["seeds"]:
            rng = np.random.default_rng(child_seed(seed, n))
            worst = 0.0
            with _Clock(timing) as clk:
                for _ in range(int(cfg["pairs"])):
                    w1 = rng.uniform(-1, 1, (n, n))
                    w2 = np.clip(w1 + rng.uniform(-0.5, 0.5) * rng.uniform(-1, 1, (n, n)), -1, 1)
                    cut = cut_norm_exact(w1 - w2).value
                    w_max = max(np.abs(w1).max(), np.abs(w2).max())
                    for t in trees:
                        e = t.n_edges
                        gap = abs(homomorphism_density(t, w1) - homomorphism_density(t, w2))
                        bound = 4 * e * w_max ** (e - 1) * cut
                        worst = max(worst, gap / bound if bound > 0 else (np.inf if gap > 1e-14 else 0.0))
            rows.append(ResultRow("counting_check", str(n), 0.0, "max_ratio", worst, clk.ms, seed))
    return rows


def _consistency(cfg, threads, timing):
    """Quantile-lift particle endpoints (nu = 0) against the PDE endpoint."""
    cont = _continuum(cfg["continuum"])
    coeffs = _coefficients(cfg["coefficients"])
    particle, pde_grid = _time_grids(cfg)
    pde = solve_vlasov(cont, coeffs, pde_grid)
    cap = int(cfg["tree_cap"])
    seed = cfg["seeds"][0]

    def task(n):
        with _Clock(timing) as clk:
            sys0 = discretize_lift(cont, max(1, n // cont.k))
            end = simulate_particles(sys0, coeffs, particle, seed)
            res = observable_metric(end, pde, cap)
        return [
            ResultRow("pde_particle_consistency", str(n), particle.t_end, "observable_metric", res.value, clk.ms, seed),
            ResultRow("pde_particle_consistency", str(n), particle.t_end, "argmax_saturated", float(res.saturated), 0.0, seed),
        ]

    return [r for rows in _pmap(task, cfg["N"], threads) for r in rows]


_RUNNERS = {
    "degenerate_w1": _degenerate_w1,
    "permutation_zero": _permutation_zero,
    "compactness": _compactness,
    "stability": _stability,
    "regularity_check": _regularity,
    "counting_check": _counting,
    "pde_particle_consistency": _consistency,
}


def run_scenario(cfg: dict, threads: int = 1, timing: bool = False) -> list[ResultRow]:
    cfg = validate_config(cfg)
    return _RUNNERS[cfg["scenario"]](cfg, threads, timing)


# ---------------------------------------------------------------------------
# verdicts from rows


def trend_ok(values, band: float = NOISE_BAND) -> bool:
    """Each value at most ``(1 + band)`` times its predecessor."""
    return all(b <= (1 + band) * a for a, b in zip(values, values[1:]))


def _by_n(rows, metric):
    """Seed-averaged value of ``metric`` per N, in increasing N."""
    acc: dict[int, list[float]] = {}
    for r in rows:
        if r.metric == metric:
            acc.setdefault(int(r.N), []).append(r.value)
    ns = sorted(acc)
    return ns, [float(np.mean(acc[n])) for n in ns]


def evaluate(scenario: str, rows, thresholds: dict | None = None) -> list[Assertion]:
    th = {"relative": 1e-3, "zero": 1e-3, "direct": 1e-12, "consistency": 0.05}
    th.update(thresholds or {})
    out: list[Assertion] = []
    if scenario == "degenerate_w1":
        worst = max(r.value for r in rows if r.metric == "relative_error")
        out.append(Assertion("solver_matches_circular_w1", worst <= th["relative"], f"max relative error {worst:.3e}"))
    elif scenario == "permutation_zero":
        for metric, key in (("solver_identical", "zero"), ("solver_permuted", "zero"), ("objective_at_permutation", "direct")):
            worst = max(r.value for r in rows if r.metric == metric)
            out.append(Assertion(f"{metric}_is_zero", worst <= th[key], f"max {worst:.3e} (limit {th[key]:g})"))
    elif scenario in ("compactness", "stability", "pde_particle_consistency"):
        metric = {"compactness": "bicoupling_N_2N", "stability": "observable_metric", "pde_particle_consistency": "observable_metric"}[scenario]
        ns, vals = _by_n(rows, metric)
        detail = ", ".join(f"N={n}: {v:.3e}" for n, v in zip(ns, vals))
        out.append(Assertion("non_increasing_within_band", trend_ok(vals), detail))
        if scenario == "stability" and len(vals) > 1:
            out.append(Assertion("last_below_half_first", vals[-1] < vals[0] / 2, detail))
        if scenario == "compactness" and len(vals) > 1:
            out.append(Assertion("last_below_first", vals[-1] < vals[0], detail))
        if scenario == "pde_particle_consistency":
            out.append(Assertion("final_below_threshold", vals[-1] <= th["consistency"], f"{vals[-1]:.3e} vs {th['consistency']}"))
            sat = any(r.value > 0 for r in rows if r.metric == "argmax_saturated")
            out.append(Assertion("argmax_below_tree_cap", not sat, "arg-max tree uses the largest vertex count" if sat else "interior"))
    elif scenario == "regularity_check":
        vals = {(r.N, r.seed, r.metric): r.value for r in rows}
        bad = [k for k in vals if k[2].startswith("residual_") and vals[k] > vals[(k[0], k[1], "bound_" + k[2][9:])]]
        out.append(Assertion("residual_within_bound", not bad, f"{len(bad)} violations"))
    elif scenario == "counting_check":
        worst = max(r.value for r in rows)
        out.append(Assertion("counting_inequality", worst <= 1.0, f"max ratio {worst:.4f}"))
    return out


# ---------------------------------------------------------------------------
# artifacts


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for r in rows:
        wr.writerow([r.scenario, r.N, repr(float(r.t)), r.metric, repr(float(r.value)), f"{r.runtime_ms:.3f}", r.seed])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    rd = csv.DictReader(io.StringIO(text))
    if rd.fieldnames != CSV_HEADER:
        raise ValueError(f"unexpected header {rd.fieldnames}")
    return [ResultRow(d["scenario"], d["N"], float(d["t"]), d["metric"], float(d["value"]), float(d["runtime_ms"]), int(d["seed"])) for d in rd]


def svg_chart(series: dict, x_label: str, y_label: str, width: int = 560, height: int = 360) -> str:
    """Static line chart; ``series`` maps a name to ``(xs, ys)``.  Log scale on y when all ys > 0."""
    pad = 60
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    logy = all(y > 0 for y in ys_all)
    ty = (lambda y: np.log10(y)) if logy else (lambda y: y)
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(map(ty, ys_all)), max(map(ty, ys_all))
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (ty(y) - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 20}" text-anchor="middle">{x_label}</text>',
        f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" text-anchor="middle">{y_label}{" (log)" if logy else ""}</text>',
    ]
    for x in sorted(set(xs_all)):
        parts.append(f'<text x="{px(x):.1f}" y="{height - pad + 15}" text-anchor="middle">{x:g}</text>')
    for y in (min(ys_all), max(ys_all)):
        parts.append(f'<text x="{pad - 5}" y="{py(y):.1f}" text-anchor="end">{y:.2e}</text>')
    for i, (name, (xs, ys)) in enumerate(sorted(series.items())):
        col = colors[i % len(colors)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in sorted(zip(xs, ys)))
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 5}" y="{pad + 15 * i}" fill="{col}">{name}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def write_artifacts(out_dir, cfg: dict, rows, assertions, timings: dict | None = None, chart: tuple | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv(rows))
    summary = {
        "name": cfg.get("name"),
        "scenario": cfg.get("scenario"),
        "passed": all(a.passed for a in assertions),
        "assertions": [asdict(a) for a in assertions],
    }
    if timings:
        summary["timings_ms"] = timings
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if chart is not None:
        (out / "chart.svg").write_text(svg_chart(*chart))
