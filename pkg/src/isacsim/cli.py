"""Experiment runner CLI.

Three commands driven by YAML scenario files:

  isacsim crlb-sweep  --config cfg.yaml --out sweep.csv
  isacsim ranging-cdf --config cfg.yaml --out cdf.csv [--trials N] [--seed S]
  isacsim run-sim     --config cfg.yaml --out outdir/ [--seed S]

Exit codes: 0 success, 1 config error, 2 runtime failure. Each CSV gets
a companion PNG figure next to it unless --no-plot is given; outputs are
byte-identical for a fixed (config, seed).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import experiments, plots
from .linkbudget import run_sweep
from .scenario import (ConfigError, build_ranging_setup, build_sim_scenario,
                       build_sweep_setup, load_config)
from .simulate import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _write_csv(path: Path, header: list[str], rows: list[tuple]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c)
                             for c in row])


def cmd_crlb_sweep(args) -> int:
    cfg = load_config(args.config)
    setup = build_sweep_setup(cfg)
    points = run_sweep(setup.spec, setup.budget, setup.anchor_config,
                       setup.target)
    out = Path(args.out)
    _write_csv(out, ["overhead_mbps", "rmse_range_m", "rmse_vel_ms"],
               [(p.overhead_mbps, p.rmse_range_m, p.rmse_velocity_mps)
                for p in points])
    print(f"wrote {len(points)} sweep points to {out}")
    if not args.no_plot:
        fig = plots.plot_crlb_sweep(points, out.with_suffix(".png"))
        print(f"rendered {fig}")
    return EXIT_OK


def cmd_ranging_cdf(args) -> int:
    cfg = load_config(args.config)
    setup = build_ranging_setup(cfg, trials_override=args.trials,
                                seed_override=args.seed)
    print(f"running {setup.trials} ranging trials "
          f"(K={setup.k_subcarriers}, M={list(setup.m_values)}) ...")
    errors = experiments.run_ranging_trials(setup, progress=True)
    axis, columns = experiments.cdf_table(errors)
    names = [f"{method}_m{m}" for method in ("peak", "subspace")
             for m in setup.m_values]
    rows = [(x, *(columns[n][i] for n in names))
            for i, x in enumerate(axis)]
    out = Path(args.out)
    _write_csv(out, ["range_error_m"] + names, rows)
    print(f"wrote CDF table ({len(rows)} rows) to {out}")
    if not args.no_plot:
        fig = plots.plot_ranging_cdf(axis, columns, out.with_suffix(".png"))
        print(f"rendered {fig}")
    return EXIT_OK


def cmd_run_sim(args) -> int:
    cfg = load_config(args.config)
    scenario = build_sim_scenario(cfg, seed_override=args.seed)
    result = run_scenario(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "tracks.csv",
               ["t", "track_id", "x", "y", "vx", "vy", "residual"],
               [(t, str(tid), x, y, vx, vy, r)
                for t, tid, x, y, vx, vy, r in result.tracks])
    with open(out / "reports.jsonl", "w") as fh:
        for report in result.reports:
            fh.write(json.dumps(report.to_body(), sort_keys=True) + "\n")
    with open(out / "actions.jsonl", "w") as fh:
        for action in result.actions:
            fh.write(json.dumps({
                "kind": action.kind, "dapp_id": action.dapp_id,
                "cause": action.cause,
                "replacement_model": action.replacement_model},
                sort_keys=True) + "\n")
    with open(out / "kpis.jsonl", "w") as fh:
        for kpi in result.kpis:
            fh.write(json.dumps({
                "dapp_id": kpi.dapp_id,
                "detection_probability": kpi.detection_probability,
                "false_alarm_rate": kpi.false_alarm_rate,
                "localization_rmse_m": kpi.localization_rmse_m,
                "processing_latency_s": kpi.processing_latency_s,
                "n_reports": kpi.n_reports}, sort_keys=True) + "\n")
    _write_csv(out / "stream_stats.csv",
               ["dapp_id", "site_id", "kind", "frames", "payload_bytes",
                "frames_dropped", "payload_rate_mbps",
                "header_overhead_fraction"],
               [(s["dapp_id"], s["site_id"], s["kind"], str(s["frames"]),
                 str(s["payload_bytes"]), str(s["frames_dropped"]),
                 s["payload_rate_mbps"], s["header_overhead_fraction"])
                for s in result.stream_stats])

    for outcome in result.deploy_outcomes:
        status = "RUNNING" if outcome.ok else f"FAILED ({outcome.detail})"
        print(f"deploy {outcome.model_id} @ {outcome.site_id}: {status}")
    for site_id in result.unassignable:
        print(f"site {site_id}: no feasible model")
    print(f"{len(result.reports)} reports, {len(result.tracks)} fused "
          f"updates, {len(result.actions)} orchestrator actions")
    if result.fused_errors_m:
        print(f"final fused position error: {result.fused_errors_m[-1]:.3f} m")
    if not args.no_plot:
        fig = plots.plot_tracks(
            result.tracks,
            [s.position_m for s in scenario.sites],
            scenario.target_position_m, out / "tracks.png")
        print(f"rendered {fig}")
    print(f"outputs in {out}/")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isacsim",
        description="Programmable ISAC simulator: figure reproduction and "
                    "end-to-end RAN-edge sensing runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML scenario file")
    common.add_argument("--out", required=True, help="output CSV or directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    common.add_argument("--no-plot", action="store_true",
                        help="skip the companion figure")

    p = sub.add_parser("crlb-sweep", parents=[common],
                       help="CRLB accuracy vs data-movement overhead sweep")
    p.set_defaults(func=cmd_crlb_sweep)

    p = sub.add_parser("ranging-cdf", parents=[common],
                       help="ranging error CDF: peak baseline vs subspace dApp")
    p.add_argument("--trials", type=int, default=None,
                   help="override the trial count")
    p.set_defaults(func=cmd_ranging_cdf)

    p = sub.add_parser("run-sim", parents=[common],
                       help="end-to-end multi-site scenario")
    p.set_defaults(func=cmd_run_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
