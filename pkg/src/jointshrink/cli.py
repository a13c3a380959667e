"""Command-line driver.

Subcommands: ``infer`` (shrink, test and select edges for grouped data),
``simulate`` (write a simulated fixture directory), ``bench`` (sweeps and
timing) and ``score`` (MCC of predicted against true edge lists).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import click
import numpy as np
import scipy
from click.core import ParameterSource

from . import __version__
from .bench import SweepSpec, run_sweep, run_timing
from .errors import DataError, NumericalError
from .inference import DF_PARTIAL, DF_PEARSON, SelectionPolicy
from .io import fmt, load_dataset, read_edge_list, write_edge_list
from .pipeline import METHODS, infer_networks
from .shrinkage import ShrinkOptions
from .simulate import SimulationConfig, generate_joint_truth, mcc, score_groups, write_truth

THREADS_ENV = "JOINTSHRINK_THREADS"
MANIFEST_SCHEMA = 1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    """Everything ``infer`` needs; JSON config files use the same keys."""

    matrix: str | None = None
    labels: str | None = None
    format: str = "dense"
    row_names: str | None = None
    col_names: str | None = None
    transpose: bool = False
    standardize: bool = True
    pre_shrink: bool = True
    policy: str = "auto"
    q: float = 0.05
    hc_variant: str = "DJ"
    alpha0: float = 0.1
    k0: int = 1
    k1: int | None = None
    df_rule: str = DF_PARTIAL
    output: str = "jointshrink_out"
    seed: int = 0
    threads: int = 1
    selected_only: bool = False

    def __post_init__(self):
        if self.matrix is None or self.labels is None:
            raise ValueError("both a matrix and a labels file are required")
        if self.format not in ("dense", "triplet"):
            raise ValueError(f"format must be dense or triplet, got {self.format!r}")
        if self.policy not in ("auto", "fdr", "hc"):
            raise ValueError(f"policy must be auto, fdr or hc, got {self.policy!r}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if self.hc_variant not in ("DJ", "LS"):
            raise ValueError(f"hc_variant must be DJ or LS, got {self.hc_variant!r}")
        if self.k0 < 1 or (self.k1 is not None and self.k1 < self.k0):
            raise ValueError("need 1 <= k0 <= k1")
        if self.df_rule not in (DF_PARTIAL, DF_PEARSON):
            raise ValueError(f"df_rule must be {DF_PARTIAL} or {DF_PEARSON}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def selection_policy(self) -> SelectionPolicy:
        return SelectionPolicy(self.policy, q=self.q, variant=self.hc_variant, alpha0=self.alpha0, k0=self.k0, k1=self.k1)

    def echo(self) -> dict:
        # thread count never changes results, so it stays out of the manifest
        d = asdict(self)
        d.pop("threads")
        return d


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _write_group_edges(path: Path, names, net, selected_only: bool):
    res, sel = net.test, net.selection
    iu, ju = res.pair_indices()
    rho = res.weights()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("gene_i\tgene_j\tpartial_correlation\tp_value\tadjusted_p\tselected\n")
        for k in range(iu.size):
            keep = bool(sel.mask[k])
            if selected_only and not keep:
                continue
            fh.write(
                f"{names[iu[k]]}\t{names[ju[k]]}\t{fmt(rho[k])}\t{fmt(res.pvalues[k])}"
                f"\t{fmt(sel.adjusted[k])}\t{'true' if keep else 'false'}\n"
            )


def _dump_json(path: Path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(config: RunConfig) -> dict:
    """Run ``infer`` end to end and write its artifacts to ``config.output``.

    Files are staged in a sibling temporary directory and moved into place
    only once everything has been written, so a failure leaves no partial
    output behind. Returns the manifest.
    """
    dataset = load_dataset(
        config.matrix,
        config.labels,
        matrix_format=config.format,
        row_names=config.row_names,
        col_names=config.col_names,
        transpose=config.transpose,
    )
    opts = ShrinkOptions(standardize=config.standardize, pre_shrink=config.pre_shrink, threads=config.threads)
    result = infer_networks(dataset, "ttls", opts, config.selection_policy(), config.df_rule)

    out = Path(config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        names = dataset.variable_names
        counts = {}
        for net in result.groups:
            stem = _safe_name(net.group)
            _write_group_edges(staging / f"edges_{stem}.tsv", names, net, config.selected_only)
            sol = net.solution
            hc = net.selection.hc
            _dump_json(
                staging / f"gamma_{stem}.json",
                {
                    "group": net.group,
                    "gamma1": sol.intensities.gamma1,
                    "gamma2": sol.intensities.gamma2,
                    "objective_value": sol.objective_value,
                    "active_constraints": sorted(sol.active_constraints),
                    "warnings": list(sol.warnings) + list(net.test.warnings),
                    "n": net.test.n_effective,
                    "df": net.test.df,
                    "policy": asdict(net.selection.policy),
                    "hc": None if hc is None else {"statistic": hc.statistic, "cut_index": hc.cut_index, "variant": hc.variant},
                    "selected_edges": len(net.edges),
                },
            )
            counts[net.group] = {"n": net.test.n_effective, "selected_edges": len(net.edges)}
        write_edge_list(staging / "shared_edges.tsv", result.shared, names)
        manifest = {
            "schema_version": MANIFEST_SCHEMA,
            "config": config.echo(),
            "seed": config.seed,
            "versions": {
                "jointshrink": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "counts": {
                "p": dataset.p,
                "groups": counts,
                "shared_edges": len(result.shared),
            },
        }
        _dump_json(staging / "run_manifest.json", manifest)
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(staging.iterdir()):
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return manifest


def load_config_file(path) -> dict:
    """Read a JSON config; a run manifest works too (its ``config`` block is used)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


# ---------------------------------------------------------------------- cli


@click.group()
@click.version_option(__version__, prog_name="jointshrink")
def cli():
    """Joint network inference by two-target covariance shrinkage."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON file with RunConfig keys (or a run manifest).")
@click.option("--matrix", type=click.Path(dir_okay=False), help="Observations x variables matrix (dense TSV/CSV or triplet).")
@click.option("--labels", type=click.Path(dir_okay=False), help="Two-column file mapping observation to group, with header.")
@click.option("--format", "format_", type=click.Choice(["dense", "triplet"]), default="dense", show_default=True)
@click.option("--row-names", type=click.Path(dir_okay=False), help="Row names for triplet input.")
@click.option("--col-names", type=click.Path(dir_okay=False), help="Column names for triplet input.")
@click.option("--transpose/--no-transpose", default=False, help="Input is variables x observations.")
@click.option("--standardize/--no-standardize", default=True, show_default=True)
@click.option("--pre-shrink/--no-pre-shrink", default=True, show_default=True)
@click.option("--policy", type=click.Choice(["auto", "fdr", "hc"]), default="auto", show_default=True)
@click.option("--q", type=float, default=0.05, show_default=True, help="FDR level for the fdr policy.")
@click.option("--hc-variant", type=click.Choice(["DJ", "LS"]), default="DJ", show_default=True)
@click.option("--alpha0", type=float, default=0.1, show_default=True)
@click.option("--k0", type=int, default=1, show_default=True)
@click.option("--k1", type=int, default=None)
@click.option("--df-rule", type=click.Choice([DF_PARTIAL, DF_PEARSON]), default=DF_PARTIAL, show_default=True)
@click.option("--output", "-o", type=click.Path(file_okay=False), default="jointshrink_out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True, envvar=THREADS_ENV)
@click.option("--selected-only", is_flag=True, default=False, help="Write only selected pairs to the edge lists.")
@click.pass_context
def infer(ctx, config_path, **kwargs):
    """Estimate per-group and shared networks."""
    kwargs["format"] = kwargs.pop("format_")
    values = {}
    if config_path:
        values.update(load_config_file(config_path))
    for key, val in kwargs.items():
        param = "format_" if key == "format" else key
        src = ctx.get_parameter_source(param)
        if key not in values or src in (ParameterSource.COMMANDLINE, ParameterSource.ENVIRONMENT):
            values[key] = val
    try:
        config = RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from None
    manifest = run_pipeline(config)
    counts = manifest["counts"]
    click.echo(
        f"wrote {len(counts['groups'])} group networks and {counts['shared_edges']} shared edges to {config.output}"
    )


def _sim_options(f):
    opts = [
        click.option("--p", type=int, default=200, show_default=True),
        click.option("--n", type=int, default=200, show_default=True),
        click.option("--groups", "G", type=int, default=5, show_default=True),
        click.option("--shared-fraction", type=float, default=0.4, show_default=True),
        click.option("--edges-per-node", type=float, default=2.0, show_default=True),
        click.option("--magnitude", type=(float, float), default=(0.1, 0.4), show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _sim_config(p, n, G, shared_fraction, edges_per_node, magnitude, seed) -> SimulationConfig:
    return SimulationConfig(p, n, G, shared_fraction, edges_per_node, seed, tuple(magnitude))


@cli.command()
@_sim_options
@click.option("--output", "-o", type=click.Path(file_okay=False), required=True)
def simulate(p, n, G, shared_fraction, edges_per_node, magnitude, seed, output):
    """Write a simulated joint-network fixture directory."""
    truth = generate_joint_truth(_sim_config(p, n, G, shared_fraction, edges_per_node, magnitude, seed))
    write_truth(truth, output)
    click.echo(f"wrote simulation with {len(truth.shared_edges)} shared edges to {output}")


@cli.group()
def bench():
    """Simulation sweeps and timing runs."""


def _parse_values(axis: str, text: str):
    cast = float if axis == "shared_fraction" else int
    try:
        return tuple(sorted(cast(v) for v in text.split(",") if v.strip()))
    except ValueError:
        raise click.UsageError(f"cannot parse sweep values {text!r}") from None


@bench.command("sweep")
@_sim_options
@click.option("--axis", type=click.Choice(["n", "shared_fraction", "G"]), required=True)
@click.option("--values", "values_", required=True, help="Comma-separated axis values.")
@click.option("--replicates", type=int, default=10, show_default=True)
@click.option("--methods", default=",".join(METHODS), show_default=True)
@click.option("--workers", type=int, default=1, show_default=True, envvar=THREADS_ENV)
@click.option("--output", "-o", type=click.Path(file_okay=False), required=True)
def bench_sweep(p, n, G, shared_fraction, edges_per_node, magnitude, seed, axis, values_, replicates, methods, workers, output):
    """MCC sweep over one simulation parameter."""
    try:
        spec = SweepSpec(
            axis=axis,
            values=_parse_values(axis, values_),
            fixed=_sim_config(p, n, G, shared_fraction, edges_per_node, magnitude, seed),
            replicates=replicates,
            methods=tuple(m.strip() for m in methods.split(",") if m.strip()),
            workers=workers,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    report = run_sweep(spec)
    _write_report(report, output)
    for method, by_value in report.summary["mean_mcc"].items():
        click.echo(f"{method}: " + ", ".join(f"{v}={m:.3f}" for v, m in by_value.items()))


@bench.command("timing")
@_sim_options
@click.option("--iterations", type=int, default=10, show_default=True)
@click.option("--output", "-o", type=click.Path(file_okay=False), required=True)
def bench_timing(p, n, G, shared_fraction, edges_per_node, magnitude, seed, iterations, output):
    """Wall-clock timing of the full pipeline with a per-stage breakdown."""
    report = run_timing(_sim_config(p, n, G, shared_fraction, edges_per_node, magnitude, seed), iterations)
    _write_report(report, output)
    s = report.summary
    click.echo(f"median {s['median_seconds']:.3f}s, total {s['total_seconds']:.3f}s over {s['iterations']} iterations")


def _write_report(report, output):
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_tsv(out / "report.tsv")


@cli.command()
@click.option("--predicted", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False), help="Predicted edge list; repeat once per group.")
@click.option("--truth", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False), help="True edge list; same order as --predicted.")
@click.option("--variables", required=True, type=click.Path(exists=True, dir_okay=False), help="Variable names, one per line.")
def score(predicted, truth, variables):
    """MCC of predicted edge lists against true ones (simulator TSV format)."""
    if len(predicted) != len(truth):
        raise click.UsageError("give one --truth per --predicted")
    names = [l.strip() for l in Path(variables).read_text(encoding="utf-8").splitlines() if l.strip()]
    p = len(names)
    preds = [read_edge_list(f, names) for f in predicted]
    truths = [read_edge_list(f, names) for f in truth]
    rep = score_groups(preds, truths, p) if len(preds) > 1 else mcc(preds[0], truths[0], p)
    per = rep.per_group or [rep]
    click.echo(
        json.dumps(
            {
                "mcc": rep.mcc,
                "tp": rep.tp,
                "fp": rep.fp,
                "tn": rep.tn,
                "fn": rep.fn,
                "per_group": [{"mcc": r.mcc, "tp": r.tp, "fp": r.fp, "tn": r.tn, "fn": r.fn} for r in per],
            },
            indent=2,
        )
    )


def _fail(code: int, exc: BaseException) -> int:
    msg = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    click.echo(json.dumps(msg), err=True)
    return code


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="jointshrink", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.Abort) as exc:
        if isinstance(exc, click.UsageError):
            exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (DataError, OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, exc)
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
