"""Command-line front end: simulate -> regress -> optimize -> report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import gbmu, regression
from .config import ConfigError, ScenarioConfig
from .engine import SampleLog, Simulation, run_realization
from .report import ensure_dir, read_trace, write_convergence, write_histograms, write_surface

log = logging.getLogger("cv2x_gbmu")


class CliError(Exception):
    pass


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _load_config(args) -> tuple[ScenarioConfig, Path | None]:
    if args.config is None:
        cfg = ScenarioConfig()
        base = None
    else:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        cfg = ScenarioConfig.from_json(path)
        base = path.parent
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg, base


def _write_manifest(out: Path, command: str, argv: list[str], config: dict | None, seeds: list[int],
                    outputs: dict[str, Path], timings: dict[str, float]) -> Path:
    path = out / f"manifest_{command}.json"
    manifest = {
        "tool": "cv2x-gbmu",
        "version": _version(),
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def cmd_simulate(args, argv) -> int:
    cfg, base = _load_config(args)
    if args.subframes is not None:
        cfg = cfg.replace(n_subframes=args.subframes)
    out = ensure_dir(args.out_dir)
    t0 = time.perf_counter()
    samples, prr = run_realization(cfg, cfg.seed, base)
    t1 = time.perf_counter()
    paths = {"samples": out / "samples.csv", "prr": out / "prr.json", "snapshot": out / "snapshot.json"}
    samples.to_csv(paths["samples"])
    paths["prr"].write_text(prr.to_json() + "\n")
    sim = Simulation(cfg, cfg.seed, base)
    state = sim.run_until_transmits(args.node)
    gbmu.snapshot_from_state(state, args.node, sim.sentinel_m, cfg.nsv_threshold_m, cfg.log_range_m).save(
        paths["snapshot"]
    )
    t2 = time.perf_counter()
    _write_manifest(out, "simulate", argv, cfg.to_dict(), [cfg.seed], paths,
                    {"simulate": t1 - t0, "write": t2 - t1})
    log.info("simulated %d subframes, %d link samples, aggregated PRR %.4f",
             cfg.n_subframes, len(samples), prr.aggregated)
    return 0


def cmd_regress(args, argv) -> int:
    logs = []
    for p in args.logs:
        if not Path(p).is_file():
            raise CliError(f"sample log not found: {p}")
        logs.append(SampleLog.from_csv(p))
    samples = SampleLog.concat(logs)
    if len(samples) == 0:
        raise CliError("no samples in the given log(s); nothing written")
    out = ensure_dir(args.out_dir)
    t0 = time.perf_counter()
    table = regression.fit(samples, args.nsv_max)
    paths = {"coefficients": out / "coefficients.csv", "fit_report": out / "fit_report.json"}
    regression.save_table(table, paths["coefficients"])
    regression.write_fit_report(table, paths["fit_report"])
    _write_manifest(out, "regress", argv, None, [], paths, {"fit": time.perf_counter() - t0})
    for r in table.rows:
        log.info("NSV=%d n=%d R2=%s", r.nsv, r.n_instances, "n/a" if not r.fitted else f"{r.r_square:.3f}")
    return 0


def _gbmu_config(args) -> gbmu.GbmuConfig:
    return gbmu.GbmuConfig(
        step_size=args.step_size,
        pos_threshold=args.pos_threshold,
        max_iterations=args.max_iterations,
        snap_to_road=args.snap_to_road,
        resnapshot_every=args.resnapshot_every,
    )


def _load_coefficients(path) -> regression.CoefficientTable:
    if path is None:
        log.info("no coefficient file given; using the bundled reference coefficients")
        return regression.reference_table()
    if not Path(path).is_file():
        raise CliError(f"coefficient file not found: {path}")
    return regression.load_table(path)


def cmd_optimize(args, argv) -> int:
    table = _load_coefficients(args.coefficients)
    gcfg = _gbmu_config(args)
    out = ensure_dir(args.out_dir)
    t0 = time.perf_counter()
    if args.batch:
        cfg, _ = _load_config(args)
        seeds = [cfg.seed + k for k in range(args.batch)]
        report = gbmu.run_batch(cfg, args.batch, table, seeds, gcfg, args.node, args.warmup, args.workers)
        paths = {"batch": out / "batch.json"}
        paths["batch"].write_text(report.to_json())
        _write_manifest(out, "optimize", argv, cfg.to_dict(), seeds, paths, {"batch": time.perf_counter() - t0})
        agg = report.aggregate()
        log.info("effectiveness %.3f, mean utility gain %s, mean PRR change %.4f",
                 agg["effectiveness_rate"], agg["mean_utility_gain"], agg["mean_prr_change"])
        return 0
    if args.snapshot is None:
        snap = gbmu.illustrative_snapshot()
        log.info("no snapshot given; using the seven-node illustrative layout")
    else:
        if not Path(args.snapshot).is_file():
            raise CliError(f"snapshot file not found: {args.snapshot}")
        snap = gbmu.Snapshot.load(args.snapshot)
    if not snap.receivers:
        raise CliError("snapshot has no receivers")
    gcfg = replace(gcfg, sentinel_m=snap.sentinel_m)
    result = gbmu.run_gbmu(snap.tx_pos, snap.receivers, table, gcfg)
    paths = {
        "trace": out / "trace.csv",
        "trajectory": out / "trajectory.csv",
        "summary": out / "optimize_summary.json",
        "snapshot": out / "snapshot.json",
    }
    snap.save(paths["snapshot"])
    result.write_trace(paths["trace"])
    with open(paths["trajectory"], "w") as fh:
        fh.write("iteration,x_m,y_m\n")
        for k, (x, y) in enumerate(result.positions):
            fh.write(f"{k},{float(x)!r},{float(y)!r}\n")
    try:
        gain = result.gain
    except gbmu.UndefinedGainError:
        gain = None
    summary = {
        "tx_id": snap.tx_id,
        "initial_pos": list(snap.tx_pos),
        "final_pos": [float(v) for v in result.final_pos],
        "iterations": result.iterations,
        "converged": result.converged,
        "utility_initial": result.utilities[0],
        "utility_final": result.utilities[-1],
        "utility_gain": gain,
    }
    paths["summary"].write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "optimize", argv, None, [], paths, {"optimize": time.perf_counter() - t0})
    log.info("GBMU %s after %d iterations, gain %s",
             "converged" if result.converged else "stopped", result.iterations, gain)
    return 0


def cmd_report(args, argv) -> int:
    out = ensure_dir(args.out_dir)
    paths: dict[str, Path] = {}
    t0 = time.perf_counter()
    figures = not args.no_figures
    if figures:
        from . import plotting
    if args.coefficients:
        table = _load_coefficients(args.coefficients)
        paths["surface"] = out / "surface.csv"
        grids = write_surface(table, paths["surface"], points=args.grid_points)
        if figures:
            for k, (dd, ll, p) in grids.items():
                paths[f"surface_nsv{k}_png"] = plotting.plot_surface(dd, ll, p, k, out / f"surface_nsv{k}.png")
    traces = {}
    for spec in args.trace or []:
        name, _, path = spec.rpartition("=")
        if not Path(path).is_file():
            raise CliError(f"trace file not found: {path}")
        traces[name or Path(path).stem] = read_trace(path)
    if traces:
        paths["convergence"] = out / "convergence.csv"
        write_convergence(traces, paths["convergence"])
        if figures:
            from .report import gain_curve
            curves = {k: gain_curve(v["utility"]) for k, v in traces.items()}
            paths["convergence_png"] = plotting.plot_convergence(curves, out / "convergence.png")
    if args.batch is not None:
        if not Path(args.batch).is_file():
            raise CliError(f"batch report not found: {args.batch}")
        rows = json.loads(Path(args.batch).read_text()).get("realizations", [])
        columns = {
            "utility_gain": [np.nan if r["utility_gain"] is None else r["utility_gain"] for r in rows],
            "prr_change": [np.nan if r["prr_change"] is None else r["prr_change"] for r in rows],
        }
        paths["histogram"] = out / "gain_histogram.csv"
        write_histograms(columns, paths["histogram"], args.bins)
        if figures:
            paths["histogram_png"] = plotting.plot_histograms(columns, out / "gain_histogram.png", args.bins)
    if args.trajectory is not None and figures:
        if args.snapshot is None:
            raise CliError("--trajectory needs --snapshot for the receiver layout")
        snap = gbmu.Snapshot.load(args.snapshot)
        pts = np.loadtxt(args.trajectory, delimiter=",", skiprows=1, ndmin=2)[:, 1:3]
        paths["trajectory_png"] = plotting.plot_trajectory(
            pts,
            [r.pos for r in snap.receivers],
            sorted({r.main_interferer_pos for r in snap.receivers if r.main_interferer_pos is not None}),
            out / "trajectory.png",
        )
    if not paths:
        raise CliError("nothing to report; pass --coefficients, --trace, --batch or --trajectory")
    _write_manifest(out, "report", argv, None, [], paths, {"report": time.perf_counter() - t0})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario config JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cv2x-gbmu", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the network simulation and log link samples")
    p.add_argument("--subframes", type=int, help="override n_subframes")
    p.add_argument("--node", type=int, default=0, help="transmitter captured in snapshot.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("regress", parents=[common], help="fit NSV-specific two-distance coefficients")
    p.add_argument("logs", nargs="+", help="sample log CSV file(s)")
    p.add_argument("--nsv-max", type=int, default=6)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("optimize", parents=[common], help="run GBMU on a snapshot or a batch of realizations")
    p.add_argument("--snapshot", help="snapshot JSON from simulate (default: seven-node layout)")
    p.add_argument("--coefficients", help="coefficient CSV (default: bundled reference table)")
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--pos-threshold", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--snap-to-road", action="store_true")
    p.add_argument("--resnapshot-every", type=int, default=0, metavar="M")
    p.add_argument("--batch", type=int, default=0, metavar="N", help="run N seeded realizations instead")
    p.add_argument("--node", type=int, default=0)
    p.add_argument("--warmup", type=int, default=0, help="subframes simulated before each batch snapshot")
    p.add_argument("--workers", type=int, help="parallel workers (default: CPUs, capped by CV2X_SIM_THREADS)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", parents=[common], help="emit plot-ready CSVs and figures")
    p.add_argument("--coefficients", help="coefficient CSV for the (d, l) surface")
    p.add_argument("--trace", action="append", metavar="[NAME=]PATH", help="utility trace CSV (repeatable)")
    p.add_argument("--batch", help="batch report JSON")
    p.add_argument("--trajectory", help="trajectory CSV from optimize")
    p.add_argument("--snapshot", help="snapshot JSON matching --trajectory")
    p.add_argument("--grid-points", type=int, default=40)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--no-figures", action="store_true", help="write CSVs only")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out_dir", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args, argv)
    except (CliError, ConfigError, FileNotFoundError) as exc:
        print(f"cv2x-gbmu: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"cv2x-gbmu: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
