"""Train runs: split, forests per view, cache, minimize, one record per bound.

Besides the multi-view model a run can train the usual baselines: a single
view at a time and all views concatenated into one, both with KL.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import BINARY_ONLY, EVALUATION_ONLY, BoundError, BoundKind, bound_value, psi_terms
from .data import MultiViewDataset, SplitSpec, concat_views, split
from .optimize import OptimConfig, initial_params, minimize
from .risks import empirical_stats
from .voters import DEPTH_PRESETS, ForestConfig, predict_cache, train_forest

SCHEMA = 1
MULTIVIEW = "multiview"
CONCAT = "concat"


@dataclass
class RunConfig:
    bounds: list = field(default_factory=lambda: ["K"])
    alpha: str = "fixed:1.1"
    labeled_fraction: float = 1.0
    test_fraction: float = 0.2
    depth: str = "stump"
    n_trees: int = 100
    seeds: list = field(default_factory=lambda: [0])
    delta: float = 0.05
    iters: int = 1000
    optimizer: str | None = None
    learning_rate: float = 0.1
    weight_decay: float = 0.05
    single_views: list = field(default_factory=list)   # 0-based view indices
    concat: bool = False
    multiview: bool = True

    def kinds(self) -> list:
        return [BoundKind.parse(b) for b in self.bounds]

    def max_depth(self) -> int:
        if str(self.depth) in DEPTH_PRESETS:
            return DEPTH_PRESETS[str(self.depth)]
        return int(self.depth)


def parse_alpha(spec: str):
    """``kl`` | ``fixed:X`` | ``learnable`` -> (mode, value)."""
    spec = str(spec).strip()
    if spec == "kl":
        return "kl", None
    if spec == "learnable":
        return "learnable", None
    if spec.startswith("fixed:"):
        val = float(spec.split(":", 1)[1])
        if not val > 1.0:
            raise ValueError(f"fixed alpha must be > 1, got {val}")
        return "fixed", val
    raise ValueError(f"--alpha must be kl, fixed:X or learnable, got {spec!r}")


def validate_kinds(kinds, n_classes: int):
    for k in kinds:
        if k in EVALUATION_ONLY:
            raise BoundError(f"{k} is evaluation-only; it is reported alongside every trained bound")
        if k in BINARY_ONLY and n_classes != 2:
            raise BoundError(f"binary-only bound {k} requested on a {n_classes}-class dataset")


def _modes(cfg: RunConfig, V: int) -> list:
    modes = [MULTIVIEW] if cfg.multiview else []
    modes += [f"view_{v + 1}" for v in cfg.single_views]
    if cfg.concat:
        modes.append(CONCAT)
    for v in cfg.single_views:
        if not 0 <= v < V:
            raise ValueError(f"single view {v + 1} out of range 1..{V}")
    return modes


def _select(mode: str, views):
    if mode == MULTIVIEW:
        return list(views)
    if mode == CONCAT:
        return [concat_views(views)]
    return [views[int(mode.split("_")[1]) - 1]]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, BoundKind):
        return str(x)
    return x


def run_seed(ds: MultiViewDataset, cfg: RunConfig, seed: int, log=None) -> tuple:
    """All (mode, kind) cells for one seed; returns (records, failures)."""
    kinds = cfg.kinds()
    validate_kinds(kinds, ds.n_classes)
    sp = split(ds, SplitSpec(seed, cfg.test_fraction, cfg.labeled_fraction))
    train, test = sp.train_labeled, sp.test
    alpha_mode, alpha_val = parse_alpha(cfg.alpha)
    fcfg = ForestConfig(cfg.n_trees, cfg.max_depth(), seed)
    ocfg = OptimConfig(max_iters=cfg.iters, learning_rate=cfg.learning_rate,
                       weight_decay=cfg.weight_decay, optimizer=cfg.optimizer, seed=seed)
    records, failures = [], []
    for mode in _modes(cfg, ds.n_views):
        tr_views = _select(mode, train.views)
        unl_views = _select(mode, train.unlabeled_views) if train.unlabeled_views else None
        te_views = _select(mode, test.views)
        ensembles = [train_forest(x, train.labels, fcfg, view=v, n_classes=ds.n_classes)
                     for v, x in enumerate(tr_views)]
        cache = predict_cache(ensembles, {"train": tr_views, "unlabeled": unl_views,
                                          "test": te_views}, ds.n_classes)
        # baselines over one view use plain KL
        a_mode = alpha_mode if mode == MULTIVIEW else "kl"
        for kind in kinds:
            t0 = time.perf_counter()
            try:
                params, rep = minimize(kind, cache, train.labels, ocfg,
                                       initial_params(cache, a_mode, alpha_val or 1.1),
                                       cfg.delta, test.labels)
            except Exception as exc:  # reported per cell, run continues
                failures.append({"seed": seed, "mode": mode, "kind": str(kind),
                                 "error": f"{type(exc).__name__}: {exc}"})
                if log:
                    log(f"FAILED seed={seed} mode={mode} kind={kind}: {exc}")
                continue
            s = empirical_stats(cache, params.rho, params.Q, train.labels)
            psi = psi_terms(params, s.m, s.n, cfg.delta)
            extra = {str(k): bound_value(k, s, psi, params).certified for k in EVALUATION_ONLY}
            rec = {
                "seed": seed, "mode": mode, "kind": str(kind),
                "certified_bound": rep.certified_value,
                "raw_bound": rep.raw_value,
                "gibbs": s.gibbs, "joint": s.joint, "disagreement": s.disagreement,
                "mv_train_risk": rep.mv_train_risk, "mv_test_risk": rep.mv_test_risk,
                "m": s.m, "n": s.n,
                "rho": params.rho.tolist(),
                "alpha": params.alpha, "alpha_v": params.alpha_v,
                "lambda": params.lam, "lambda1": params.lam1, "lambda2": params.lam2,
                "gamma": params.gamma,
                "trace_length": len(rep.trace), "converged": rep.converged,
                "initial_objective": rep.trace[0], "final_objective": rep.trace[-1],
                "wall_time": time.perf_counter() - t0,
                "components": rep.components,
                "evaluation_bounds": dict(sorted(extra.items())),
                "notes": rep.notes,
            }
            records.append(_jsonable(rec))
            if log:
                log(f"seed={seed} {mode:>9} {str(kind):>8}: bound={rep.certified_value:.4f} "
                    f"gibbs={s.gibbs:.4f} mv_test={rep.mv_test_risk:.4f} iters={len(rep.trace)}")
    return records, failures


NUMERIC_FIELDS = ("certified_bound", "raw_bound", "gibbs", "joint", "disagreement",
                  "mv_train_risk", "mv_test_risk", "trace_length", "wall_time")


def aggregate(records) -> list:
    """Arithmetic means of the numeric fields per (mode, kind)."""
    groups = {}
    for r in records:
        groups.setdefault((r["mode"], r["kind"]), []).append(r)
    out = []
    for (mode, kind), recs in groups.items():
        row = {"mode": mode, "kind": kind, "runs": len(recs)}
        for f in NUMERIC_FIELDS:
            vals = [r[f] for r in recs if r.get(f) is not None]
            row[f"mean_{f}"] = math.fsum(vals) / len(vals) if vals else None
        out.append(row)
    return out


def train_report(ds: MultiViewDataset, cfg: RunConfig, log=None, command="train") -> dict:
    records, failures = [], []
    for seed in cfg.seeds:
        r, f = run_seed(ds, cfg, seed, log)
        records += r
        failures += f
    return {
        "schema": SCHEMA,
        "command": command,
        "dataset": {"name": ds.name, "views": ds.n_views, "classes": ds.n_classes,
                    "m": ds.m, "n_unlabeled": ds.n_unlabeled},
        "config": _jsonable(asdict(cfg)),
        "records": records,
        "aggregate": aggregate(records),
        "failed": failures,
    }


def dumps(report: dict) -> str:
    """Canonical serialization used for every report file."""
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(report))


def read_report(path) -> dict:
    with open(path) as fh:
        rep = json.load(fh)
    if rep.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported report schema {rep.get('schema')!r}")
    return rep
