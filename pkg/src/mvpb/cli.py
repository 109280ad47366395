"""Command line entry point.

Subcommands: ``train``, ``report``, ``sweep``, ``verify``, ``synth`` and
``poison``. Reports are canonical JSON; ``report`` and ``sweep`` also write
CSV tables and plot-data JSON.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .bounds import BoundError
from .data import DatasetError, load_dataset, make_binary_task, poison_views, save_dataset, synth_dataset
from .oracle import brute_stats, oracle_inequalities, random_instance
from .risks import empirical_stats
from .voters import DEPTH_PRESETS

LABELED_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _int_list(text: str) -> list:
    return [int(t) for t in text.split(",") if t.strip()]


def parse_synth(text: str) -> dict:
    """``V,m,C,d,noise_1[,...,noise_V]``; a single noise value is shared."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) < 5:
        raise UsageError("--synth expects V,m,C,d,noise[,noise...]")
    V, m, C, d = (int(p) for p in parts[:4])
    noise = [float(p) for p in parts[4:]]
    if len(noise) == 1:
        noise *= V
    if len(noise) != V:
        raise UsageError(f"--synth gave {len(noise)} noise values for {V} views")
    return {"V": V, "m": m, "C": C, "d_per_view": d, "view_noise": noise}


def _dataset(args):
    if args.data:
        ds = load_dataset(args.data)
    elif args.synth:
        s = parse_synth(args.synth)
        ds = synth_dataset(s["V"], s["m"], s["C"], s["d_per_view"], s["view_noise"],
                           seed=args.synth_seed, n_unlabeled=args.unlabeled)
    else:
        raise UsageError("one of --data or --synth is required")
    if getattr(args, "pair", None):
        a, b = _int_list(args.pair)
        ds = make_binary_task(ds, a, b)
    return ds


def _run_config(args) -> ex.RunConfig:
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    single = []
    if args.single_view:
        single = [v - 1 for v in _int_list(args.single_view)]
    return ex.RunConfig(
        bounds=[b.strip() for b in args.bounds.split(",") if b.strip()],
        alpha=args.alpha, labeled_fraction=args.labeled_frac, test_fraction=args.test_frac,
        depth=args.depth, n_trees=args.trees, seeds=seeds, delta=args.delta, iters=args.iters,
        optimizer=args.optimizer, learning_rate=args.lr, weight_decay=args.weight_decay,
        single_views=single, concat=args.concat, multiview=not args.no_multiview)


def _finish(report: dict) -> int:
    if report["failed"]:
        _log(f"{len(report['failed'])} run(s) failed:")
        for f in report["failed"]:
            _log(f"  seed={f['seed']} mode={f['mode']} kind={f['kind']}: {f['error']}")
        return EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    ds = _dataset(args)
    cfg = _run_config(args)
    report = ex.train_report(ds, cfg, log=None if args.quiet else _log)
    ex.write_report(report, args.out)
    if not args.quiet:
        for row in report["aggregate"]:
            _log(f"mean {row['mode']:>9} {row['kind']:>8}: bound={row['mean_certified_bound']:.4f} "
                 f"mv_test={row['mean_mv_test_risk']}")
        _log(f"wrote {args.out}")
    return _finish(report)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (("certified_bound", "Bnd"), ("gibbs", "G"), ("mv_test_risk", "MV"))


def _mode_order(mode: str):
    if mode.startswith("view_"):
        return (0, int(mode.split("_")[1]))
    return (1, 0) if mode == ex.CONCAT else (2, 0)


def combine_reports(reports) -> tuple:
    """Means over every record of every report, grouped by (kind, mode)."""
    if not reports:
        raise UsageError("report needs at least one run file")
    classes = {r["dataset"]["classes"] for r in reports}
    if len(classes) > 1:
        raise UsageError(f"run files mix class counts {sorted(classes)}")
    records = [rec for r in reports for rec in r["records"]]
    agg = {(row["mode"], row["kind"]): row for row in ex.aggregate(records)}
    kinds = list(dict.fromkeys(rec["kind"] for rec in records))
    modes = sorted({rec["mode"] for rec in records}, key=_mode_order)
    return agg, kinds, modes


def write_table(agg, kinds, modes, csv_path) -> None:
    header = ["bound"] + [f"{mode} {short}" for mode in modes for _, short in REPORT_COLUMNS]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for kind in kinds:
            row = [kind]
            for mode in modes:
                cell = agg.get((mode, kind))
                for field_, _ in REPORT_COLUMNS:
                    v = cell.get(f"mean_{field_}") if cell else None
                    row.append("" if v is None else repr(float(v)))
            w.writerow(row)


def plot_series(agg, kinds, modes) -> dict:
    series = {}
    for mode in modes:
        series[mode] = {field_: [(agg[(mode, k)][f"mean_{field_}"] if (mode, k) in agg else None)
                                 for k in kinds] for field_, _ in REPORT_COLUMNS}
    return {"schema": ex.SCHEMA, "kinds": kinds, "modes": modes, "series": series}


def cmd_report(args) -> int:
    reports = [ex.read_report(p) for p in args.runs]
    agg, kinds, modes = combine_reports(reports)
    out = Path(args.out)
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")
    write_table(agg, kinds, modes, csv_path)
    ex.write_report(plot_series(agg, kinds, modes), json_path)
    if not args.quiet:
        _log(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _grid(args) -> list:
    if args.grid is not None:
        vals = [g.strip() for g in args.grid.split(",") if g.strip()]
    elif args.axis == "labeled":
        vals = [str(v) for v in LABELED_GRID]
    else:
        vals = []
    if not vals:
        raise UsageError("sweep grid is empty")
    return [float(v) for v in vals]


def _sweep_cell(payload):
    ds, cfg, label = payload
    return label, ex.train_report(ds, cfg, command="sweep")


def cmd_sweep(args) -> int:
    ds = _dataset(args)
    base = _run_config(args)
    grid = _grid(args)
    cells = []
    for g in grid:
        cfg = (replace(base, labeled_fraction=g) if args.axis == "labeled"
               else replace(base, alpha=f"fixed:{g!r}"))
        ex.parse_alpha(cfg.alpha)
        ex.validate_kinds(cfg.kinds(), ds.n_classes)
        cells.append((ds, cfg, g))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"schema": ex.SCHEMA, "axis": args.axis, "grid": grid, "series": {}, "files": []}
    failed = []
    for g, rep in results:
        name = f"{args.axis}_{g!r}.json"
        ex.write_report(rep, out / name)
        summary["files"].append(name)
        failed += [dict(f, grid=g) for f in rep["failed"]]
        for row in rep["aggregate"]:
            key = f"{row['mode']}/{row['kind']}"
            s = summary["series"].setdefault(key, {"certified_bound": [], "mv_test_risk": [],
                                                   "gibbs": [], "grid": []})
            s["grid"].append(g)
            for f in ("certified_bound", "mv_test_risk", "gibbs"):
                s[f].append(row[f"mean_{f}"])
    summary["failed"] = failed
    ex.write_report(summary, out / "summary.json")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", args.axis, "certified_bound", "gibbs", "mv_test_risk"])
        for key, s in summary["series"].items():
            for i, g in enumerate(s["grid"]):
                w.writerow([key, repr(g), s["certified_bound"][i], s["gibbs"][i],
                            s["mv_test_risk"][i]])
    if not args.quiet:
        _log(f"wrote {len(results)} report(s) and summary to {out}")
    return _finish({"failed": failed})


# ---------------------------------------------------------------------------
# verify, synth, poison
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst_stats, violations = 0.0, 0
    for _ in range(args.instances):
        cache, rho, Q, labels = random_instance(rng, n_unlabeled=int(rng.integers(0, 6)))
        fast = empirical_stats(cache, rho, Q, labels)
        slow = brute_stats(cache, rho, Q, labels)
        for f in ("gibbs", "joint", "disagreement", "mv_risk"):
            worst_stats = max(worst_stats, abs(getattr(fast, f) - getattr(slow, f)))
        violations += sum(not c.passed for c in oracle_inequalities(cache, rho, Q, labels))
    ok_stats = worst_stats <= 1e-12
    print(f"{'PASS' if ok_stats else 'FAIL'} statistics match brute force "
          f"(max abs diff {worst_stats:.3e} over {args.instances} instances)")
    print(f"{'PASS' if violations == 0 else 'FAIL'} oracle inequalities ({violations} violations)")
    return EXIT_OK if ok_stats and violations == 0 else EXIT_FAILED


def cmd_synth(args) -> int:
    s = parse_synth(args.synth)
    ds = synth_dataset(s["V"], s["m"], s["C"], s["d_per_view"], s["view_noise"],
                       seed=args.seed, n_unlabeled=args.unlabeled)
    save_dataset(ds, args.out)
    if not args.quiet:
        _log(f"wrote {ds.n_views}-view dataset ({ds.m} labeled, {ds.n_unlabeled} unlabeled) "
             f"to {args.out}")
    return EXIT_OK


def cmd_poison(args) -> int:
    ds = load_dataset(args.data)
    views = [v - 1 for v in _int_list(args.views)]
    save_dataset(poison_views(ds, views, args.sigma, args.seed), args.out)
    if not args.quiet:
        _log(f"poisoned view(s) {args.views} with sigma={args.sigma}; wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _run_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset directory")
    src.add_argument("--synth", help="synthetic dataset V,m,C,d,noise[,noise...]")
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--unlabeled", type=int, default=0, help="extra unlabeled rows for --synth")
    p.add_argument("--pair", help="one-versus-one task a,b (relabels a->0, b->1)")
    p.add_argument("--bounds", default="K", help="comma-separated bound kinds")
    p.add_argument("--alpha", default="fixed:1.1", help="kl | fixed:X | learnable")
    p.add_argument("--labeled-frac", type=float, default=1.0)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--depth", default="stump",
                   help=f"{'|'.join(DEPTH_PRESETS)} or an integer")
    p.add_argument("--trees", type=_positive_int, default=100)
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of seeds")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--iters", type=_positive_int, default=1000)
    p.add_argument("--optimizer", choices=("adaptive_moment", "coin_betting"))
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--single-view", help="comma-separated 1-based views to train alone")
    p.add_argument("--concat", action="store_true", help="also train on concatenated views")
    p.add_argument("--no-multiview", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvpb", description="Multi-view PAC-Bayes majority votes")
    parser.add_argument("-q", "--quiet", action="store_true")
    # also accepted after the subcommand, without clobbering the global flag
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[quiet], help="train and certify majority votes")
    _run_flags(p)
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", parents=[quiet],
                       help="aggregate run files into CSV and plot data")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="table", help="output stem; writes .csv and .json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", parents=[quiet],
                       help="repeat train over a labeled-fraction or alpha grid")
    _run_flags(p)
    p.add_argument("--axis", choices=("labeled", "alpha"), default="labeled")
    p.add_argument("--grid", help="comma-separated grid values")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", default="sweep", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", parents=[quiet],
                       help="check fast statistics against the brute-force oracle")
    p.add_argument("--instances", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", parents=[quiet], help="write a synthetic dataset directory")
    p.add_argument("--synth", required=True, help="V,m,C,d,noise[,noise...]")
    p.add_argument("--unlabeled", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("poison", parents=[quiet], help="add Gaussian noise to chosen views")
    p.add_argument("--data", required=True)
    p.add_argument("--views", required=True, help="comma-separated 1-based views")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poison)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DatasetError, BoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
