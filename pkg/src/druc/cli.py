"""Command-line entry point: ``druc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from druc.ambiguity import AmbiguitySet, NominalDistribution, asymptotic_rho, build_nominal
from druc.benders import BendersError, BendersOptions, run, write_trace
from druc.cluster import DistanceMeasure, elbow_scan, kmeans
from druc.model import SystemConfig, default_fleet
from druc.netload import DEFAULT_PEAK_MW, Dataset, ingest_csv, scale_to_peak, synthetic_dataset, window
from druc.sweep import (
    RHO_COLUMNS,
    RHO_GRID,
    SIZE_COLUMNS,
    SIZE_MONTHS,
    VOLATILE,
    Journal,
    SweepSpec,
    emit,
    run_rho_sweep,
    run_size_sweep,
    size_windows,
)
from druc.verify import compare_with_oracle

log = logging.getLogger("druc")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _common(defaults: bool = True) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps a value given
    # before the subcommand from being reset by the subparser default
    def d(value):
        return value if defaults else argparse.SUPPRESS

    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", type=Path, default=d(None), help="fleet JSON (default: built-in three-unit fleet)")
    g.add_argument("--out", type=Path, default=d(Path("out")), help="output directory (default: ./out)")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--jobs", type=int, default=d(1), help="worker processes for sweeps")
    g.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def _data_args(p: argparse.ArgumentParser, months: int | None = 12) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="CSV with header timestamp,net_load_mw (default: synthetic)")
    g.add_argument("--granularity", type=int, default=60, help="minutes per raw sample")
    g.add_argument("--peak-mw", type=float, default=DEFAULT_PEAK_MW)
    g.add_argument("--window-start", type=date.fromisoformat, default=None)
    g.add_argument("--window-months", type=int, default=months)


def _cluster_args(p: argparse.ArgumentParser, single: bool = True) -> None:
    g = p.add_argument_group("clustering")
    g.add_argument("--clusters", type=int, default=12)
    if single:
        g.add_argument("--distance", choices=("ed", "dtw", "sdtw"), default="ed")
    else:
        g.add_argument("--distances", default="ed,dtw,sdtw", help="comma-separated subset of ed,dtw,sdtw")
    g.add_argument("--sdtw-gamma", type=float, default=1.0)


def _solver_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--max-iters", type=int, default=500)
    g.add_argument("--kmax", type=float, default=50.0)
    g.add_argument("--dump-models", type=Path, metavar="DIR", help="write every master LP to DIR")


def build_parser() -> argparse.ArgumentParser:
    common = _common(defaults=False)
    parser = argparse.ArgumentParser(prog="druc", description=__doc__, parents=[_common()])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", parents=[common], help="cluster daily profiles and write the nominal distribution")
    _data_args(p)
    _cluster_args(p)
    p.add_argument("--elbow", metavar="LO:HI", help="also scan S in [LO, HI] and write elbow.csv")

    p = sub.add_parser("solve", parents=[common], help="solve one distributionally robust UC instance")
    _data_args(p)
    _cluster_args(p)
    p.add_argument("--nominal", type=Path, help="use a saved nominal distribution instead of clustering")
    rho = p.add_mutually_exclusive_group()
    rho.add_argument("--rho", type=float)
    rho.add_argument("--calibrate", action="store_true", help="set rho from the chi-square quantile")
    p.add_argument("--eta", type=float, default=0.02, help="1 - confidence level for --calibrate")
    _solver_args(p)

    p = sub.add_parser("sweep-rho", parents=[common], help="cost against the divergence radius")
    _data_args(p)
    _cluster_args(p, single=False)
    p.add_argument("--rho-values", type=_floats, default=list(RHO_GRID))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--resume", action="store_true", help="skip cells already in the journal")
    _solver_args(p)

    p = sub.add_parser("sweep-size", parents=[common], help="cost against the number of days")
    _data_args(p, months=None)
    _cluster_args(p, single=False)
    p.add_argument("--months", type=_ints, default=list(SIZE_MONTHS), help="window lengths in months")
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--resume", action="store_true")
    _solver_args(p)

    p = sub.add_parser("oracle", parents=[common], help="check the solver against enumeration on tiny instances")
    p.add_argument("--instances", type=int, default=24)
    p.add_argument("--tol", type=float, default=1e-6)
    return parser


def _fleet(args) -> SystemConfig:
    return SystemConfig.load(args.config) if args.config else default_fleet()


def _dataset(args) -> Dataset:
    if args.data:
        raw = ingest_csv(args.data, args.granularity, args.peak_mw)
        if raw.dropped_days:
            log.warning("dropped %d incomplete day(s) from %s", raw.dropped_days, args.data)
    else:
        log.info("no --data given; using the synthetic dataset (seed %d)", args.seed)
        raw = synthetic_dataset(seed=args.seed, peak_mw=args.peak_mw)
    # scale the whole record once, then cut windows
    return scale_to_peak(raw, args.peak_mw)


def _window(args, d: Dataset) -> Dataset:
    start = args.window_start or d.dates[0]
    if args.window_months is None:
        return Dataset(tuple(x for x in d.series if x.date >= start), d.peak_mw, d.dropped_days)
    return window(d, start, args.window_months)


def _options(args) -> BendersOptions:
    opts = BendersOptions(tol=args.tol, max_iters=args.max_iters, kmax=args.kmax)
    if args.dump_models:
        opts.dump_dir = args.dump_models
        opts.dump_dir.mkdir(parents=True, exist_ok=True)
    return opts


def _spec(args, rho_values=RHO_GRID, windows=None) -> SweepSpec:
    measures = tuple(DistanceMeasure.parse(n.strip(), args.sdtw_gamma) for n in args.distances.split(","))
    return SweepSpec(
        rho_values=tuple(rho_values), eta=getattr(args, "eta", 0.02), windows=windows, distances=measures,
        clusters=args.clusters, seed=args.seed, tol=args.tol, max_iters=args.max_iters, kmax=args.kmax,
    )


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def cmd_cluster(args) -> int:
    data = _window(args, _dataset(args))
    m = DistanceMeasure.parse(args.distance, args.sdtw_gamma)
    c = kmeans(data, args.clusters, m, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    c.dump(args.out / "clustering.json")
    build_nominal(c, data.N).dump(args.out / "nominal.json")
    print(f"N={data.N} S={c.S} distance={m.name} inertia={c.inertia:.6g} "
          f"variance_captured={c.variance_captured:.6f}")
    if args.elbow:
        lo, hi = (int(t) for t in args.elbow.split(":"))
        scan = elbow_scan(data, range(lo, hi + 1), m, args.seed)
        with (args.out / "elbow.csv").open("w") as fh:
            fh.write("S,variance_captured\n")
            for S, v in scan:
                fh.write(f"{S},{v!r}\n")
                print(f"  S={S:3d} variance_captured={v:.6f}")
    return 0


def cmd_solve(args) -> int:
    cfg = _fleet(args)
    if args.nominal:
        nominal = NominalDistribution.load(args.nominal)
        N = None
    else:
        data = _window(args, _dataset(args))
        c = kmeans(data, args.clusters, DistanceMeasure.parse(args.distance, args.sdtw_gamma), args.seed)
        nominal, N = build_nominal(c, data.N), data.N
    if args.calibrate:
        if N is None:
            raise SystemExit("--calibrate needs the data window (not --nominal) to know N")
        rho = asymptotic_rho(N, nominal.size, args.eta)
    else:
        rho = 0.0 if args.rho is None else args.rho
    amb = AmbiguitySet(nominal, rho)
    try:
        res = run(cfg, amb, args.tol, _options(args))
    except BendersError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    write_trace(res.trace, args.out / "trace.csv")
    _write_json(args.out / "solution.json", {
        "rho": rho,
        "total_cost": res.total_cost,
        "lower_bound": res.lower_bound,
        "gap": res.gap,
        "iterations": res.iterations,
        "first_stage_cost": res.schedule.cost(cfg),
        "recourse": res.q.tolist(),
        "mu": res.mu,
        "zeta": res.zeta,
        "schedule": res.schedule.to_dict(),
        "units": [u.name for u in cfg.units],
    })
    print(f"rho={rho:.6g} total_cost={res.total_cost:.6f} gap={res.gap:.2e} iterations={res.iterations} "
          f"time={res.wall_time:.1f}s")
    return 0


def _emit_sweep(table, args, stem: str, columns) -> None:
    main = emit(table.without(VOLATILE), args.out / f"{stem}.{args.format}", args.format)
    emit(table.select([c for c, _ in columns if c not in ("iterations", "status", "total_cost")]),
         args.out / f"{stem}_timing.{args.format}", args.format)
    failed = [r for r in table.rows if not str(r[-1]).startswith("ok")]
    print(f"wrote {main} ({len(table.rows)} rows, {len(failed)} failed)")
    for r in table.rows:
        print("  " + "  ".join(str(v) for v in r))


def cmd_sweep_rho(args) -> int:
    dataset = _dataset(args)
    start = args.window_start or dataset.dates[0]
    spec = _spec(args, args.rho_values, ((start, args.window_months or 12),))
    journal = Journal(args.out / "sweep_rho.journal")
    table = run_rho_sweep(spec, dataset, _fleet(args), args.jobs, journal, args.resume)
    _emit_sweep(table, args, "sweep_rho", RHO_COLUMNS)
    return 0


def cmd_sweep_size(args) -> int:
    dataset = _dataset(args)
    start = args.window_start or dataset.dates[0]
    spec = _spec(args, windows=size_windows(args.months, start))
    journal = Journal(args.out / "sweep_size.journal")
    table = run_size_sweep(spec, dataset, _fleet(args), args.jobs, journal, args.resume)
    _emit_sweep(table, args, "sweep_size", SIZE_COLUMNS)
    return 0


def cmd_oracle(args) -> int:
    rows = compare_with_oracle(args.instances, args.seed, args.tol)
    worst = max(max(r.rel_error, r.schedule_rel_error) for r in rows)
    for r in rows:
        print(f"{r.index:3d} G={r.units} H={r.hours} S={r.scenarios} rho={r.rho:<4} "
              f"benders={r.benders_cost:.6f} oracle={r.oracle_cost:.6f} rel={r.rel_error:.1e} it={r.iterations}")
    ok = worst <= 1e-4
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.2e} over {len(rows)} instances")
    return 0 if ok else 1


COMMANDS = {
    "cluster": cmd_cluster,
    "solve": cmd_solve,
    "sweep-rho": cmd_sweep_rho,
    "sweep-size": cmd_sweep_size,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        raise SystemExit("--jobs must be >= 1")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
