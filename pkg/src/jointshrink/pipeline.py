"""Shrink, invert, test and select: the full per-dataset workflow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._timing import NULL_TIMER
from .covariance import GroupedDataset
from .inference import (
    DF_PARTIAL,
    EdgeSet,
    PartialCorrelationResult,
    Selection,
    SelectionPolicy,
    correlation_test,
    partial_correlations,
    select_mask,
    shared_edges,
)
from .shrinkage import ShrinkageSolution, ShrinkOptions, _map, ttls_shrink

METHODS = ("ttls", "single_target")


@dataclass(frozen=True)
class GroupNetwork:
    group: str
    solution: ShrinkageSolution
    test: PartialCorrelationResult
    selection: Selection
    edges: EdgeSet


@dataclass(frozen=True)
class NetworkResult:
    groups: list
    shared: EdgeSet
    method: str


def infer_networks(
    dataset: GroupedDataset,
    method: str = "ttls",
    options: ShrinkOptions | None = None,
    policy: SelectionPolicy | None = None,
    df_rule: str = DF_PARTIAL,
    timer=None,
) -> NetworkResult:
    """Run shrinkage and edge selection for every group.

    ``method="single_target"`` shrinks each group toward the identity alone,
    ignoring the other groups.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    opts = options or ShrinkOptions()
    if method == "single_target" and not opts.identity_only:
        opts = ShrinkOptions(
            standardize=opts.standardize,
            pre_shrink=False,
            gamma_override=opts.gamma_override,
            identity_only=True,
            threads=opts.threads,
        )
    timer = timer or NULL_TIMER
    policy = policy or SelectionPolicy()
    solutions = ttls_shrink(dataset, opts, timer)

    with timer.stage("inversion"):
        rhos = _map(lambda s: partial_correlations(s.sigma_hat), solutions, opts.threads)

    def test(k):
        res = correlation_test(rhos[k], dataset.sizes[k], df_rule)
        sel = select_mask(res.pvalues, dataset.p, policy)
        iu, ju = res.pair_indices()
        edges = EdgeSet(iu[sel.mask], ju[sel.mask], res.weights()[sel.mask], dataset.group_names[k])
        return GroupNetwork(dataset.group_names[k], solutions[k], res, sel, edges)

    with timer.stage("testing"):
        groups = _map(test, range(dataset.G), opts.threads)
        consensus = shared_edges([g.edges for g in groups])
    return NetworkResult(groups, consensus, method)
