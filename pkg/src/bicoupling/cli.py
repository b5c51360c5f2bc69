"""Command line: ``bicoupling run CONFIG`` and ``bicoupling sweep CONFIG --param P --values ...``.

Exit status is 0 when every assertion passes, 1 on an assertion failure and
2 on a configuration or numerical error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path

from .dynamics import GuardError
from .experiments import ConfigError, evaluate, run_scenario, validate_config, write_artifacts

log = logging.getLogger("bicoupling")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _load(path) -> dict:
    def reject(token):
        raise ConfigError(f"non-finite constant {token} in config")

    try:
        with open(path) as fh:
            return json.load(fh, parse_constant=reject)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"{dotted}: no such parameter")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"{dotted}: no such parameter")
    node[keys[-1]] = value


def _chart_series(rows):
    series = {}
    for r in rows:
        xs, ys = series.setdefault(r.metric, ([], []))
        xs.append(float(r.N.split("x")[0]) if r.N.replace(".", "").isdigit() else float(len(xs)))
        ys.append(r.value)
    return series


def cmd_run(args) -> int:
    cfg = validate_config(_load(args.config))
    out = Path(args.out or cfg.get("out", "out") or "out")
    t0 = time.perf_counter()
    rows = run_scenario(cfg, threads=args.threads, timing=args.timing)
    checks = evaluate(cfg["scenario"], rows, cfg.get("thresholds"))
    timings = {"total": round((time.perf_counter() - t0) * 1e3, 3)}
    write_artifacts(out, cfg, rows, checks, timings, (_chart_series(rows), "N", "value"))
    for a in checks:
        log.info("%s %s: %s", "PASS" if a.passed else "FAIL", a.name, a.detail)
    return EXIT_OK if all(a.passed for a in checks) else EXIT_FAIL


def cmd_sweep(args) -> int:
    base = validate_config(_load(args.config))
    out = Path(args.out or base.get("out", "out") or "out")
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values: nothing to sweep")
    all_rows, all_checks, series = [], [], {}
    t0 = time.perf_counter()
    for v in values:
        cfg = copy.deepcopy(base)
        _set_path(cfg, args.param, [v] if args.param == "N" else v)
        cfg = validate_config(cfg)
        rows = run_scenario(cfg, threads=args.threads, timing=args.timing)
        all_rows.extend(rows)
        for a in evaluate(cfg["scenario"], rows, cfg.get("thresholds")):
            all_checks.append(type(a)(f"{args.param}={v}:{a.name}", a.passed, a.detail))
        by_metric = {}
        for r in rows:
            by_metric.setdefault(r.metric, []).append(r.value)
        for metric, vals in by_metric.items():
            xs, ys = series.setdefault(metric, ([], []))
            xs.append(float(v) if isinstance(v, (int, float)) else float(len(xs)))
            ys.append(sum(vals) / len(vals))
    timings = {"total": round((time.perf_counter() - t0) * 1e3, 3)}
    write_artifacts(out, base, all_rows, all_checks, timings, (series, args.param, "value"))
    for a in all_checks:
        log.info("%s %s: %s", "PASS" if a.passed else "FAIL", a.name, a.detail)
    return EXIT_OK if all(a.passed for a in all_checks) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bicoupling", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true", help="log every assertion and solver note")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="scenario config (JSON)")
        sp.add_argument("--out", help="output directory (default: config 'out' or ./out)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for independent tasks")
        sp.add_argument("--timing", action="store_true", help="record wall-clock runtimes in results.csv")
        sp.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    run = sub.add_parser("run", help="run one scenario")
    common(run)
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    common(sweep)
    sweep.add_argument("--param", required=True, help="parameter name, dotted for nested keys (e.g. time.dt)")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GuardError, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
