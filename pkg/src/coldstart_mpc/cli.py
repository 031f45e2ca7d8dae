"""Command-line experiment runner.

    coldstart-mpc [--config PATH] [--out DIR] [--seed N] [--dump-plans] \\
        {simulate,compare,forecast-eval,sweep} ...

Every subcommand writes machine-readable results (JSON/CSV) and PNG
figures into the output directory. Exit status is 0 only when every
integrity check passes; 2 means bad configuration, 3 an integrity failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, ExperimentConfig, canonical_key, load_config, with_overrides
from .forecast import ForecastError
from .metrics import (
    MetricsError,
    check_report,
    compare,
    container_timeline,
    forecast_eval,
    report_json,
    rolling_origin,
    summarize,
    write_compare_csv,
    write_requests_csv,
)
from .policies import POLICIES, make_policy, run_scenario
from .simcore import SimulationError
from .workload import TraceError, bin_arrivals

log = logging.getLogger("coldstart_mpc")

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRITY = 0, 2, 3


def _pct(values, q):
    if not len(values):
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=float), q))


def overhead_summary(timings) -> dict:
    t = np.asarray(timings, dtype=float).reshape(-1, 2) if len(timings) else np.zeros((0, 2))
    out = {"ticks": int(t.shape[0])}
    for i, name in enumerate(("forecast_ms", "solve_ms")):
        col = t[:, i]
        out[name] = {
            "median": float(np.median(col)) if col.size else 0.0,
            "p95": _pct(col, 95),
            "max": float(col.max()) if col.size else 0.0,
            "mean": float(col.mean()) if col.size else 0.0,
        }
    return out


def run_one(cfg: ExperimentConfig, policy: str, out: Path, *, dump_plans: bool = False, figures: bool = True) -> dict:
    """Simulate one (workload, policy) pair and write its report files to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    trace = cfg.workload.build()
    plans = open(out / "plans.jsonl", "w", encoding="utf-8") if dump_plans and policy == "mpc" else None
    try:
        pol = make_policy(policy, cfg.mpc, cfg.platform, cfg.forecast, dump_plans=plans)
        res = run_scenario(
            trace, pol, cfg.platform, dt=cfg.mpc.dt, seed=cfg.workload.seed, initial_warm=cfg.initial_warm
        )
    finally:
        if plans is not None:
            plans.close()
    sim = res.sim
    report = summarize(
        sim.event_log,
        sim.requests,
        sample_interval=cfg.sample_interval,
        end_time=res.end_time,
        trace_hash=trace.digest(),
        policy=policy,
    )
    report.overhead = overhead_summary(res.timings)
    report.overhead["degraded_ticks"] = res.degraded_ticks
    report.overhead["wall_s"] = res.wall_s
    errors = sim.audit() + check_report(report, cfg.platform.w_max)

    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        sim.dump_events(fh)
    with open(out / "requests.csv", "w", encoding="utf-8", newline="") as fh:
        write_requests_csv(report, fh)
    doc = report.to_dict()
    doc["integrity_errors"] = errors
    doc["config"] = cfg.to_dict()
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    resp = [m.response for m in report.per_request]
    x, y = plotting.cdf_points(resp)
    with open(out / "response_cdf.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["response_s", "fraction"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(x, y))
    timeline = [(0.0, 0)] + container_timeline(sim.event_log)
    with open(out / "containers.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "live_containers"])
        w.writerows([repr(float(t)), n] for t, n in timeline)
    if res.timings:
        with open(out / "overhead.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tick", "forecast_ms", "solve_ms"])
            w.writerows([i, f"{a:.4f}", f"{b:.4f}"] for i, (a, b) in enumerate(res.timings))
    if figures:
        plotting.response_cdf({policy: resp}, out / "response_cdf.png")
        plotting.container_timeline(
            {policy: ([t for t, _ in timeline], [n for _, n in timeline])}, out / "containers.png", cfg.platform.w_max
        )
        if res.timings:
            t = np.asarray(res.timings)
            plotting.overhead_hist(t[:, 0], t[:, 1], out / "overhead.png")
    return {"report": report, "errors": errors, "timeline": timeline, "result": res}


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    policy = args.policy or cfg.policy
    out = Path(cfg.output_dir)
    r = run_one(cfg, policy, out, dump_plans=args.dump_plans)
    s = r["report"].latency_summary
    print(
        f"{policy}: {len(r['report'].per_request)} requests, mean {s.mean:.3f}s p90 {s.p90:.3f}s "
        f"p95 {s.p95:.3f}s, cold {r['report'].cold_start_count}, "
        f"keep-alive {r['report'].totals['keepalive_total']:.1f}s -> {out}"
    )
    for e in r["errors"]:
        print(f"integrity: {e}", file=sys.stderr)
    return EXIT_INTEGRITY if r["errors"] else EXIT_OK


def _labels(policies) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for p in policies:
        seen[p] = seen.get(p, 0) + 1
        out.append(p if seen[p] == 1 else f"{p}#{seen[p]}")
    return out


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    policies = [p.strip() for p in args.policies.split(",")] if args.policies else list(cfg.policies)
    if len(policies) < 2:
        raise ConfigError("run.policies", "compare needs at least two policies")
    for p in policies:
        if p not in POLICIES:
            raise ConfigError("run.policies", f"unknown policy {p!r}")
    baseline = args.baseline or ("default" if "default" in policies else policies[0])
    out = Path(cfg.output_dir)
    labels = _labels(policies)
    runs = {}
    errors = []
    for lab, pol in zip(labels, policies):
        runs[lab] = run_one(cfg, pol, out / lab.replace("#", "_"), dump_plans=args.dump_plans)
        errors += [f"{lab}: {e}" for e in runs[lab]["errors"]]
    base = runs[baseline]["report"]
    cand_labels = [l for l in labels if l != baseline]
    all_rows = []
    bars = []
    with open(out / "compare.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "baseline", "candidate", "improvement_pct"])
        for lab in cand_labels:
            rows = compare(base, runs[lab]["report"])
            all_rows.append((lab, rows))
            for name, b, c, imp in rows:
                metric = name if len(cand_labels) == 1 else f"{lab}:{name}"
                w.writerow([metric, repr(b), repr(c), repr(imp)])
                bars.append((lab, name, imp))
    for lab, rows in all_rows:
        with open(out / f"compare_{lab.replace('#', '_')}_vs_{baseline}.csv", "w", encoding="utf-8", newline="") as fh:
            write_compare_csv(rows, fh)
    # policy x metric matrix of raw values
    with open(out / "compare_matrix.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        metric_names = [n for n, *_ in compare(base, base)]
        w.writerow(["policy"] + metric_names)
        for lab in labels:
            w.writerow([lab] + [repr(b if lab == baseline else c) for _, b, c, _ in compare(base, runs[lab]["report"])])
    plotting.response_cdf(
        {lab: [m.response for m in runs[lab]["report"].per_request] for lab in labels}, out / "response_cdf.png"
    )
    plotting.container_timeline(
        {lab: ([t for t, _ in runs[lab]["timeline"]], [n for _, n in runs[lab]["timeline"]]) for lab in labels},
        out / "containers.png",
        cfg.platform.w_max,
    )
    plotting.improvement_bars(
        [(l, m, v if math.isfinite(v) else 0.0) for l, m, v in bars], out / "improvement.png",
        title=f"Improvement over {baseline}",
    )
    for lab, rows in all_rows:
        d = {n: imp for n, _, _, imp in rows}
        print(
            f"{lab} vs {baseline}: mean {d['mean_response_s']:+.1f}%  p90 {d['p90_response_s']:+.1f}%  "
            f"p95 {d['p95_response_s']:+.1f}%  keep-alive {d['keepalive_total_s']:+.1f}%"
        )
    for e in errors:
        print(f"integrity: {e}", file=sys.stderr)
    return EXIT_INTEGRITY if errors else EXIT_OK


def cmd_forecast_eval(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = cfg.workload.build()
    series = bin_arrivals(trace, cfg.mpc.dt)
    H = args.horizon or cfg.mpc.H
    min_hist = args.min_history or max(3, 2 * cfg.forecast.harmonics)
    try:
        actual, pred = rolling_origin(series, H, cfg.forecast, min_history=min_hist, stride=args.stride)
    except MetricsError as exc:
        raise ConfigError("forecast", str(exc)) from None
    acc = forecast_eval(actual, pred)
    a2 = actual.reshape(-1, H)
    p2 = pred.reshape(-1, H)
    one = forecast_eval(a2[:, 0], p2[:, 0])
    doc = {
        "trace_hash": trace.digest(),
        "horizon": H,
        "min_history": min_hist,
        "stride": args.stride,
        "origins": int(a2.shape[0]),
        "metric": "accuracy = 100 * (1 - RMSE / mean(actual))",
        "all_steps": {"rmse": acc.rmse, "mae": acc.mae, "accuracy": acc.accuracy, "n": acc.n},
        "one_step": {"rmse": one.rmse, "mae": one.mae, "accuracy": one.accuracy, "n": one.n},
        "config": cfg.to_dict(),
    }
    (out / "forecast_eval.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "forecast.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "actual", "predicted_1step"])
        for i, (a, p) in enumerate(zip(a2[:, 0], p2[:, 0])):
            w.writerow([i, repr(float(a)), repr(float(p))])
    plotting.forecast_vs_actual(a2[:, 0], p2[:, 0], out / "forecast.png")
    print(f"forecast accuracy {acc.accuracy:.2f}% (RMSE {acc.rmse:.3f}, MAE {acc.mae:.3f}, {a2.shape[0]} origins)")
    return EXIT_OK


def parse_grid(items) -> list[tuple[str, list[str]]]:
    grid = []
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "grid entries look like section.key=v1,v2")
        key, vals = item.split("=", 1)
        sec, k = canonical_key(key.strip())
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"{sec}.{k}", "grid axis has no values")
        grid.append((f"{sec}.{k}", values))
    if not grid:
        raise ConfigError("--grid", "sweep needs a non-empty grid")
    return grid


def _sweep_cell(args):
    cfg, policy, cell_dir, dump = args
    r = run_one(cfg, policy, Path(cell_dir), dump_plans=dump, figures=False)
    rep = r["report"]
    return {
        "mean_response_s": rep.latency_summary.mean,
        "p90_response_s": rep.latency_summary.p90,
        "p95_response_s": rep.latency_summary.p95,
        "cold_starts": rep.cold_start_count,
        "containers_launched": rep.totals["containers_launched"],
        "keepalive_total_s": rep.totals["keepalive_total"],
        "mean_live_containers": rep.totals["mean_live_containers"],
        "errors": r["errors"],
    }


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    grid = parse_grid(args.grid)
    policy = args.policy or cfg.policy
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k, _ in grid]
    cells = []
    for i, combo in enumerate(itertools.product(*[v for _, v in grid])):
        ov = dict(zip(keys, combo))
        cell_cfg = with_overrides(cfg, ov)
        cells.append((i, ov, cell_cfg, out / f"cell_{i:03d}"))
    jobs = [(c, policy, str(d), args.dump_plans) for _, _, c, d in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    metric_names = [k for k in results[0] if k != "errors"]
    with open(out / "index.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "dir"] + keys + metric_names)
        for (i, ov, _, d), res in zip(cells, results):
            w.writerow([i, d.name] + [ov[k] for k in keys] + [repr(res[m]) for m in metric_names])
    index = [
        {"cell": i, "dir": d.name, "overrides": ov, **{m: res[m] for m in metric_names}}
        for (i, ov, _, d), res in zip(cells, results)
    ]
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    errors = [f"cell {i}: {e}" for (i, *_), res in zip(cells, results) for e in res["errors"]]
    for row in index:
        print(
            f"cell {row['cell']:03d} {row['overrides']}: mean {row['mean_response_s']:.3f}s "
            f"cold {row['cold_starts']} launched {row['containers_launched']}"
        )
    for e in errors:
        print(f"integrity: {e}", file=sys.stderr)
    return EXIT_INTEGRITY if errors else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coldstart-mpc", description="Predictive cold-start scheduling experiments.")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory (overrides run.output_dir)")
    p.add_argument("--seed", type=int, help="workload/noise seed (overrides workload.seed)")
    p.add_argument("--dump-plans", action="store_true", help="write every MPC plan to plans.jsonl")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one policy on one workload")
    s.add_argument("--policy", choices=POLICIES)

    c = sub.add_parser("compare", help="run several policies on the same workload")
    c.add_argument("--policies", help="comma-separated, e.g. mpc,prewarm,default")
    c.add_argument("--baseline", help="policy label used as the baseline (default: 'default')")

    f = sub.add_parser("forecast-eval", help="rolling-origin forecast accuracy")
    f.add_argument("--horizon", type=int, help="steps ahead (default control.H)")
    f.add_argument("--min-history", type=int, help="first origin (default 2*harmonics)")
    f.add_argument("--stride", type=int, default=1, help="steps between origins")

    w = sub.add_parser("sweep", help="cartesian sweep over config overrides")
    w.add_argument("--grid", action="append", metavar="SECTION.KEY=V1,V2", help="one axis; repeat for more")
    w.add_argument("--policy", choices=POLICIES)
    w.add_argument("--jobs", type=int, default=1, help="cells run in parallel processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(item, "expected SECTION.KEY=VALUE")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v
        if args.out:
            overrides["run.output_dir"] = args.out
        if args.seed is not None:
            overrides["workload.seed"] = str(args.seed)
        cfg = load_config(args.config, overrides=overrides)
        handler = {
            "simulate": cmd_simulate,
            "compare": cmd_compare,
            "forecast-eval": cmd_forecast_eval,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceError, ForecastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricsError, SimulationError) as exc:
        print(f"integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
