"""Simulation sweeps and timing runs with machine-readable reports.

Each sweep cell (axis value x replicate) simulates one joint truth, runs
every requested method on the same data and scores the selected edges with
MCC. Timing covers estimation only: data generation and I/O are excluded.
"""

from __future__ import annotations

import json
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from ._timing import StageTimer
from .inference import DF_PARTIAL, SelectionPolicy
from .pipeline import METHODS, infer_networks
from .shrinkage import ShrinkOptions
from .simulate import SimulationConfig, generate_joint_truth, score_groups

SCHEMA_VERSION = 1
AXES = ("n", "shared_fraction", "G")
STAGES = ("covariance", "variance", "shared_target", "qp", "inversion", "testing")

ROW_FIELDS = (
    "method",
    "axis",
    "axis_value",
    "replicate",
    "seed",
    "per_group_mcc",
    "mean_mcc",
    "tp",
    "fp",
    "tn",
    "fn",
    "gamma1",
    "gamma2",
    "wall_clock_seconds",
    "error",
)
TIMING_FIELDS = ("wall_clock_seconds", "stages")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    fixed: SimulationConfig = field(default_factory=SimulationConfig)
    replicates: int = 10
    methods: tuple = METHODS
    workers: int = 1
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    standardize: bool = True
    pre_shrink: bool = True
    df_rule: str = DF_PARTIAL

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        vals = tuple(self.values)
        if not vals:
            raise ValueError("sweep needs at least one value")
        if list(vals) != sorted(vals):
            raise ValueError("sweep values must be sorted")
        object.__setattr__(self, "values", vals)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": list(self.values),
            "fixed": self.fixed.to_dict(),
            "replicates": self.replicates,
            "methods": list(self.methods),
            "policy": policy_to_dict(self.policy),
            "standardize": self.standardize,
            "pre_shrink": self.pre_shrink,
            "df_rule": self.df_rule,
        }


@dataclass
class BenchReport:
    kind: str
    spec: dict
    rows: list
    environment: dict
    summary: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "spec": self.spec,
            "environment": self.environment,
            "summary": self.summary,
            "rows": self.rows,
        }

    def statistical_rows(self) -> list[dict]:
        """Rows without the timing columns, for reproducibility checks."""
        return [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in self.rows]

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_tsv(self, path):
        cols = list(ROW_FIELDS)
        if self.kind == "timing":
            cols += [f"stage_{s}" for s in STAGES]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(cols) + "\n")
            for r in self.rows:
                out = []
                for c in cols:
                    v = r["stages"].get(c[6:]) if c.startswith("stage_") else r.get(c)
                    out.append(_cell(v))
                fh.write("\t".join(out) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ",".join(_cell(x) for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def policy_to_dict(policy: SelectionPolicy) -> dict:
    return {
        "kind": policy.kind,
        "q": policy.q,
        "variant": policy.variant,
        "alpha0": policy.alpha0,
        "k0": policy.k0,
        "k1": policy.k1,
    }


def environment() -> dict:
    return {
        "host": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cores": os.cpu_count(),
        "build": f"jointshrink {__version__}",
    }


def replicate_seed(base_seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), replicate])
    return int(ss.generate_state(1, np.uint64)[0])


def _method_row(method, spec, value, rep, seed, truth, opts) -> dict:
    row = {"method": method, "axis": spec.axis, "axis_value": value, "replicate": rep, "seed": seed}
    t0 = time.perf_counter()
    try:
        res = infer_networks(truth.data, method, opts, spec.policy, spec.df_rule)
    except Exception as exc:  # a failed cell is reported, the sweep goes on
        row.update(_error_fields(exc))
        row["wall_clock_seconds"] = time.perf_counter() - t0
        return row
    elapsed = time.perf_counter() - t0
    G = truth.data.G
    score = score_groups([g.edges for g in res.groups], [truth.truth_edges(g) for g in range(G)], truth.config.p)
    row.update(
        per_group_mcc=[r.mcc for r in score.per_group],
        mean_mcc=score.mcc,
        tp=score.tp,
        fp=score.fp,
        tn=score.tn,
        fn=score.fn,
        gamma1=[g.solution.intensities.gamma1 for g in res.groups],
        gamma2=[g.solution.intensities.gamma2 for g in res.groups],
        wall_clock_seconds=elapsed,
        error=None,
    )
    return row


def _error_fields(exc) -> dict:
    return {
        "per_group_mcc": None,
        "mean_mcc": None,
        "tp": None,
        "fp": None,
        "tn": None,
        "fn": None,
        "gamma1": None,
        "gamma2": None,
        "error": f"{type(exc).__name__}: {exc}",
    }


def _run_cell(spec: SweepSpec, value, rep: int) -> list[dict]:
    seed = replicate_seed(spec.fixed.seed, rep)
    opts = ShrinkOptions(standardize=spec.standardize, pre_shrink=spec.pre_shrink)
    try:
        cfg = replace(spec.fixed, **{spec.axis: value, "seed": seed})
        truth = generate_joint_truth(cfg)
    except Exception as exc:
        base = {"axis": spec.axis, "axis_value": value, "replicate": rep, "seed": seed, "wall_clock_seconds": None}
        return [dict(base, method=m, **_error_fields(exc)) for m in spec.methods]
    return [_method_row(m, spec, value, rep, seed, truth, opts) for m in spec.methods]


def run_sweep(spec: SweepSpec) -> BenchReport:
    """Run every (value, replicate) cell of a sweep.

    Rows come out ordered by value, then replicate, then method, whatever
    the worker count.
    """
    cells = [(v, r) for v in spec.values for r in range(spec.replicates)]
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(lambda c: _run_cell(spec, *c), cells))
    else:
        chunks = [_run_cell(spec, *c) for c in cells]
    rows = [r for chunk in chunks for r in chunk]
    return BenchReport("sweep", spec.to_dict(), rows, environment(), sweep_summary(rows))


def sweep_summary(rows) -> dict:
    """Mean MCC per method and axis value, over replicates without errors."""
    acc: dict = {}
    for r in rows:
        if r.get("mean_mcc") is None:
            continue
        acc.setdefault(r["method"], {}).setdefault(repr(r["axis_value"]), []).append(r["mean_mcc"])
    return {
        "mean_mcc": {m: {v: float(np.mean(x)) for v, x in d.items()} for m, d in acc.items()},
        "errors": sum(1 for r in rows if r.get("error")),
    }


def run_timing(
    config: SimulationConfig,
    iterations: int = 10,
    method: str = "ttls",
    policy: SelectionPolicy | None = None,
) -> BenchReport:
    """Time the full estimation pipeline on one simulated dataset.

    Runs single-threaded. Each row records the total wall-clock seconds and
    the per-stage breakdown for one iteration.
    """
    truth = generate_joint_truth(config)
    policy = policy or SelectionPolicy()
    opts = ShrinkOptions(threads=1)
    truths = [truth.truth_edges(g) for g in range(config.G)]
    rows = []
    for it in range(iterations):
        timer = StageTimer()
        t0 = time.perf_counter()
        res = infer_networks(truth.data, method, opts, policy, timer=timer)
        total = time.perf_counter() - t0
        score = score_groups([g.edges for g in res.groups], truths, config.p)
        stages = {s: timer.seconds.get(s, 0.0) for s in STAGES}
        rows.append(
            {
                "method": method,
                "axis": None,
                "axis_value": None,
                "replicate": it,
                "seed": config.seed,
                "per_group_mcc": [r.mcc for r in score.per_group],
                "mean_mcc": score.mcc,
                "tp": score.tp,
                "fp": score.fp,
                "tn": score.tn,
                "fn": score.fn,
                "gamma1": [g.solution.intensities.gamma1 for g in res.groups],
                "gamma2": [g.solution.intensities.gamma2 for g in res.groups],
                "wall_clock_seconds": total,
                "stages": stages,
                "error": None,
            }
        )
    totals = [r["wall_clock_seconds"] for r in rows]
    stage_totals = {s: sum(r["stages"][s] for r in rows) for s in STAGES}
    summary = {
        "iterations": iterations,
        "median_seconds": statistics.median(totals) if totals else 0.0,
        "total_seconds": sum(totals),
        "stage_totals": stage_totals,
        "stage_fraction_of_total": sum(stage_totals.values()) / sum(totals) if sum(totals) else 1.0,
    }
    spec = {"config": config.to_dict(), "iterations": iterations, "method": method, "policy": policy_to_dict(policy)}
    return BenchReport("timing", spec, rows, environment(), summary)
