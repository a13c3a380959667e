"""Joint network simulation and edge-recovery scoring.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``; the structure draw and each group's sample use
separate spawned child sequences, so adding groups never perturbs the
structure of the existing ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .covariance import GroupedDataset
from .errors import DataError, InfeasibleConfig, NotPositiveDefinite
from .inference import EdgeSet

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence; normals by Generator.standard_normal"

DIAGONAL_MARGIN = 0.1


@dataclass(frozen=True)
class SimulationConfig:
    p: int = 200
    n: int = 200
    G: int = 5
    shared_fraction: float = 0.4
    edges_per_node: float = 2.0
    seed: int = 0
    partial_corr_magnitude: tuple = (0.1, 0.4)

    def __post_init__(self):
        lo, hi = self.partial_corr_magnitude
        object.__setattr__(self, "partial_corr_magnitude", (float(lo), float(hi)))
        if self.p < 4:
            raise InfeasibleConfig(f"p must be >= 4, got {self.p}")
        if self.n < 3:
            raise InfeasibleConfig(f"n must be >= 3, got {self.n}")
        if self.G < 2:
            raise InfeasibleConfig(f"G must be >= 2, got {self.G}")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise InfeasibleConfig(f"shared_fraction must lie in [0, 1], got {self.shared_fraction}")
        if self.edges_per_node < 0:
            raise InfeasibleConfig("edges_per_node must be non-negative")
        if not 0.0 <= lo <= hi:
            raise InfeasibleConfig(f"bad magnitude range ({lo}, {hi})")

    @property
    def edges_per_group(self) -> int:
        return math.ceil(self.edges_per_node * self.p / 2 - 1e-9)

    @property
    def n_shared(self) -> int:
        return math.ceil(self.shared_fraction * self.edges_per_group - 1e-9)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partial_corr_magnitude"] = list(self.partial_corr_magnitude)
        return d


@dataclass(frozen=True)
class SimulationTruth:
    config: SimulationConfig
    precisions: list
    shared_edges: EdgeSet
    unique_edges: list
    data: GroupedDataset

    def truth_edges(self, g: int) -> EdgeSet:
        """All edges of group g, weighted by their true partial correlation."""
        es = [self.shared_edges, self.unique_edges[g]]
        i = np.concatenate([e.i for e in es])
        j = np.concatenate([e.j for e in es])
        return EdgeSet(i, j, true_partial_correlations(self.precisions[g])[i, j], self.data.group_names[g])


@dataclass(frozen=True)
class ScoreReport:
    """Confusion counts over all ``p(p-1)/2`` pairs.

    For a multi-group report the counts are summed over groups and ``mcc`` is
    the mean of the per-group values.
    """

    mcc: float
    tp: int
    fp: int
    tn: int
    fn: int
    per_group: list = field(default_factory=list)


def true_partial_correlations(precision) -> np.ndarray:
    d = 1.0 / np.sqrt(np.diag(precision))
    rho = -precision * d[:, None] * d[None, :]
    np.fill_diagonal(rho, 1.0)
    return rho


def _pd_precision(p: int, i, j, w) -> np.ndarray:
    theta = np.zeros((p, p))
    theta[i, j] = w
    theta[j, i] = w
    np.fill_diagonal(theta, np.abs(theta).sum(axis=1) + DIAGONAL_MARGIN)
    d = 1.0 / np.sqrt(np.diag(theta))
    theta = theta * d[:, None] * d[None, :]
    np.fill_diagonal(theta, 1.0)
    return theta


def generate_joint_truth(config: SimulationConfig) -> SimulationTruth:
    """Draw shared and group-unique edge sets, build PD precisions, sample data.

    Every group has ``E = ceil(edges_per_node * p / 2)`` edges, of which
    ``ceil(shared_fraction * E)`` are common to all groups. Unique edges are
    disjoint from the shared skeleton and from each other. Shared edges keep
    one drawn strength across groups before each precision is made diagonally
    dominant and rescaled to unit diagonal.
    """
    cfg = config
    p, G = cfg.p, cfg.G
    E, n_shared = cfg.edges_per_group, cfg.n_shared
    n_unique = E - n_shared
    n_pairs = p * (p - 1) // 2
    needed = n_shared + G * n_unique
    if needed > n_pairs:
        raise InfeasibleConfig(f"{needed} distinct edges requested but only {n_pairs} pairs exist")

    children = np.random.SeedSequence(cfg.seed).spawn(G + 1)
    rng = np.random.default_rng(children[0])
    iu, ju = np.triu_indices(p, 1)
    picks = rng.choice(n_pairs, size=needed, replace=False)
    lo, hi = cfg.partial_corr_magnitude

    def strengths(k):
        return rng.uniform(lo, hi, k) * rng.choice([-1.0, 1.0], size=k)

    shared_idx = np.sort(picks[:n_shared])
    shared_w = strengths(n_shared)
    unique_idx, unique_w = [], []
    for g in range(G):
        block = np.sort(picks[n_shared + g * n_unique: n_shared + (g + 1) * n_unique])
        unique_idx.append(block)
        unique_w.append(strengths(n_unique))

    precisions = []
    for g in range(G):
        idx = np.concatenate([shared_idx, unique_idx[g]])
        w = np.concatenate([shared_w, unique_w[g]])
        theta = _pd_precision(p, iu[idx], ju[idx], w)
        try:
            np.linalg.cholesky(theta)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"generated precision {g} is not PD") from exc
        precisions.append(theta)

    group_names = [f"group{g + 1}" for g in range(G)]
    pcors = [true_partial_correlations(t) for t in precisions]
    si, sj = iu[shared_idx], ju[shared_idx]
    shared = EdgeSet(si, sj, np.mean([r[si, sj] for r in pcors], axis=0) if G else [], "shared")
    unique = [
        EdgeSet(iu[unique_idx[g]], ju[unique_idx[g]], pcors[g][iu[unique_idx[g]], ju[unique_idx[g]]], group_names[g])
        for g in range(G)
    ]
    groups = [sample_mvn(precisions[g], cfg.n, children[g + 1]) for g in range(G)]
    data = GroupedDataset(groups, [f"V{k + 1}" for k in range(p)], group_names)
    return SimulationTruth(cfg, precisions, shared, unique, data)


def sample_mvn(precision, n: int, seed=None) -> np.ndarray:
    """n zero-mean Gaussian draws with covariance ``precision^-1``.

    With ``precision = L L^T``, ``x = L^-T z`` has covariance
    ``L^-T L^-1 = precision^-1``.
    """
    P = np.asarray(precision, dtype=np.float64)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("precision matrix is not positive definite") from exc
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((P.shape[0], n))
    x = linalg.solve_triangular(L.T, z, lower=False)
    return np.ascontiguousarray(x.T)


# ------------------------------------------------------------------ scoring


def _mcc(tp, fp, tn, fn) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc(predicted: EdgeSet, truth: EdgeSet, p: int) -> ScoreReport:
    """Matthews correlation of predicted vs true edges over all variable pairs.

    A zero factor in the denominator gives 0.
    """
    for es in (predicted, truth):
        if len(es) and (es.j.max() >= p or es.i.min() < 0):
            raise DataError(f"edge index outside 0..{p - 1}")
    total = p * (p - 1) // 2
    tp = int(np.intersect1d(predicted.keys(), truth.keys(), assume_unique=True).size)
    fp = len(predicted) - tp
    fn = len(truth) - tp
    tn = total - tp - fp - fn
    return ScoreReport(_mcc(tp, fp, tn, fn), tp, fp, tn, fn)


def score_groups(predicted, truths, p: int) -> ScoreReport:
    per = [mcc(a, b, p) for a, b in zip(predicted, truths)]
    return ScoreReport(
        float(np.mean([r.mcc for r in per])),
        sum(r.tp for r in per),
        sum(r.fp for r in per),
        sum(r.tn for r in per),
        sum(r.fn for r in per),
        per,
    )


# ------------------------------------------------------------------- export


def write_truth(truth: SimulationTruth, directory) -> Path:
    """Write data, labels, precisions and edge lists as plain-text fixtures."""
    from . import io

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    names = truth.data.variable_names
    obs_names, labels, blocks = [], [], []
    for gname, X in zip(truth.data.group_names, truth.data.groups):
        for k in range(X.shape[0]):
            obs_names.append(f"{gname}_obs{k + 1}")
            labels.append(gname)
        blocks.append(X)
    io.write_dense_matrix(out / "expression.tsv", np.vstack(blocks), obs_names, names)
    io.write_labels(out / "labels.tsv", obs_names, labels)
    (out / "variables.txt").write_text("".join(f"{v}\n" for v in names))
    for gname, theta in zip(truth.data.group_names, truth.precisions):
        io.write_plain_matrix(out / f"precision_{gname}.tsv", theta)
    io.write_edge_list(out / "shared_edges.tsv", truth.shared_edges, names)
    for g, gname in enumerate(truth.data.group_names):
        io.write_edge_list(out / f"unique_edges_{gname}.tsv", truth.unique_edges[g], names)
        io.write_edge_list(out / f"truth_edges_{gname}.tsv", truth.truth_edges(g), names)
    meta = {
        "config": truth.config.to_dict(),
        "rng": RNG_ALGORITHM,
        "groups": truth.data.group_names,
        "edges_per_group": truth.config.edges_per_group,
        "shared_edges": len(truth.shared_edges),
    }
    (out / "truth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out
