"""From a shrunk covariance to a sparse network.

Precision matrix, partial correlations, per-edge t-test p-values,
Benjamini-Hochberg adjustment and higher-criticism cut selection. Edges are
always enumerated in the upper triangle, row-major (``np.triu_indices``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .errors import (
    DataError,
    DegenerateRhoWarning,
    DegreesOfFreedomWarning,
    EmptyInput,
    InvalidRange,
    SingularMatrix,
)

P_EPS = 1e-15
HC_AUTO_THRESHOLD = 1000

DF_PARTIAL = "partial"
DF_PEARSON = "pearson"


@dataclass(frozen=True)
class PartialCorrelationResult:
    rho: np.ndarray
    pvalues: np.ndarray
    n_effective: int
    df: int
    warnings: tuple = ()

    @property
    def p(self) -> int:
        return self.rho.shape[0]

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.p, 1)

    def weights(self) -> np.ndarray:
        return self.rho[np.triu_indices(self.p, 1)]


@dataclass(frozen=True)
class HCResult:
    statistic: float
    cut_index: int
    variant: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EdgeSet:
    """Undirected edges ``(i, j, weight)`` with ``i < j``."""

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    group: str | None = None

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64).ravel()
        j = np.asarray(self.j, dtype=np.int64).ravel()
        w = np.asarray(self.weight, dtype=np.float64).ravel()
        if not (i.shape == j.shape == w.shape):
            raise DataError("edge arrays differ in length")
        if np.any(i == j):
            raise DataError("self-loops are not edges")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1 and np.any((lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])):
            raise DataError("duplicate edge")
        object.__setattr__(self, "i", lo)
        object.__setattr__(self, "j", hi)
        object.__setattr__(self, "weight", w)

    @classmethod
    def empty(cls, group=None):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), group)

    @classmethod
    def from_tuples(cls, edges, group=None):
        edges = list(edges)
        if not edges:
            return cls.empty(group)
        i, j, w = zip(*edges)
        return cls(i, j, w, group)

    def __len__(self) -> int:
        return int(self.i.size)

    def __iter__(self):
        for a, b, w in zip(self.i.tolist(), self.j.tolist(), self.weight.tolist()):
            yield a, b, w

    def pairs(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist()))

    def keys(self) -> np.ndarray:
        return (self.i << 32) | self.j


# ------------------------------------------------------ partial correlation


def precision_matrix(sigma_hat) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via its eigendecomposition.

    Raises :class:`SingularMatrix` when the smallest eigenvalue is below
    ``1e-12`` times the largest.
    """
    S = np.asarray(sigma_hat, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError(f"expected a square matrix, got shape {S.shape}")
    S = (S + S.T) / 2
    lam, V = np.linalg.eigh(S)
    top = max(abs(lam[-1]), abs(lam[0]))
    if lam[0] < 1e-12 * top or top == 0.0:
        raise SingularMatrix(
            f"covariance is singular (smallest eigenvalue {lam[0]:.3g}); "
            "the identity weight is zero with p > n"
        )
    omega = (V / lam) @ V.T
    return (omega + omega.T) / 2


def partial_correlations(sigma_hat) -> np.ndarray:
    """``rho_ij = -Omega_ij / sqrt(Omega_ii Omega_jj)`` with unit diagonal."""
    omega = precision_matrix(sigma_hat)
    d = 1.0 / np.sqrt(np.diag(omega))
    rho = -omega * d[:, None] * d[None, :]
    rho = (rho + rho.T) / 2
    np.fill_diagonal(rho, 1.0)
    return rho


def test_degrees_of_freedom(n: int, p: int, rule: str = DF_PARTIAL) -> tuple[int, bool]:
    """Degrees of freedom for the edge t-test and whether the floor of 1 was hit."""
    if rule == DF_PARTIAL:
        df = n - 2 - (p - 2)
    elif rule == DF_PEARSON:
        df = n - 2
    else:
        raise DataError(f"unknown degrees-of-freedom rule {rule!r}")
    return max(df, 1), df < 1


# keep pytest from collecting the helper above as a test
test_degrees_of_freedom.__test__ = False


def _pvalues_upper(rho: np.ndarray, df: int) -> tuple[np.ndarray, int]:
    r = rho[np.triu_indices(rho.shape[0], 1)]
    r2 = r * r
    out = np.zeros_like(r)
    ok = r2 < 1.0
    # two-sided t tail: P(|T_df| > t) = I_{df/(df+t^2)}(df/2, 1/2), df/(df+t^2) = 1 - r^2
    out[ok] = special.betainc(df / 2.0, 0.5, 1.0 - r2[ok])
    return np.clip(out, 0.0, 1.0), int(np.count_nonzero(~ok))


def edge_pvalues(rho, n: int, df_rule: str = DF_PARTIAL) -> np.ndarray:
    """Two-sided p-values for every upper-triangle entry of ``rho``.

    ``t = rho * sqrt(df / (1 - rho^2))``; see :func:`test_degrees_of_freedom`
    for ``df``.
    """
    res = correlation_test(rho, n, df_rule)
    for w in res.warnings:
        cat = DegreesOfFreedomWarning if w.startswith("df") else DegenerateRhoWarning
        warnings.warn(w, cat, stacklevel=2)
    return res.pvalues


def correlation_test(rho, n: int, df_rule: str = DF_PARTIAL) -> PartialCorrelationResult:
    """p-values for a partial correlation matrix, warnings recorded not raised."""
    rho = np.asarray(rho, dtype=np.float64)
    p = rho.shape[0]
    df, floored = test_degrees_of_freedom(n, p, df_rule)
    pv, n_bad = _pvalues_upper(rho, df)
    notes = []
    if floored:
        notes.append(
            f"df floored at 1 (n={n}, p={p}); p-values are nominal only"
        )
    if n_bad:
        notes.append(f"rho_degenerate: {n_bad} entries with |rho| >= 1 given p-value 0")
    return PartialCorrelationResult(rho, pv, int(n), df, tuple(notes))


def infer_partial_correlations(sigma_hat, n: int, df_rule: str = DF_PARTIAL) -> PartialCorrelationResult:
    return correlation_test(partial_correlations(sigma_hat), n, df_rule)


# --------------------------------------------------------- multiple testing


def fdr_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    N = p.size
    if N == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * N / np.arange(1, N + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(N)
    out[order] = np.minimum(ranked, 1.0)
    # N * p / N can round one ulp below p
    return np.maximum(out, p)


def _check_sorted(ps: np.ndarray):
    if ps.size == 0:
        raise EmptyInput("no p-values")
    if np.any(np.diff(ps) < 0):
        raise DataError("p-values must be sorted ascending")


def hc_dj(pvalues_sorted, alpha0: float = 0.1) -> HCResult:
    """Higher criticism ``sqrt(n) (i/n - p_(i)) / sqrt(p_(i)(1 - p_(i)))``.

    Maximized over ranks ``1 .. floor(alpha0 * n)``; the smallest maximizing
    rank is the cut.
    """
    ps = np.asarray(pvalues_sorted, dtype=np.float64).ravel()
    _check_sorted(ps)
    if not 0.0 < alpha0 <= 1.0:
        raise InvalidRange(f"alpha0 must lie in (0, 1], got {alpha0}")
    n = ps.size
    kmax = max(1, int(math.floor(alpha0 * n + 1e-9)))
    p = ps[:kmax]
    # clamping only keeps the denominator finite at p in {0, 1}
    pc = np.clip(p, P_EPS, 1.0 - P_EPS)
    i = np.arange(1, kmax + 1)
    vals = math.sqrt(n) * (i / n - p) / np.sqrt(pc * (1.0 - pc))
    k = int(np.argmax(vals))
    return HCResult(float(vals[k]), k + 1, "DJ", {"alpha0": alpha0})


def hc_ls(pvalues_sorted, k0: int = 1, k1: int | None = None) -> HCResult:
    """Higher criticism of the likelihood-ratio form.

    ``sqrt(2n) * 1{p_(k) < k/n} * sqrt((k/n) log(k/(n p_(k))) - (k/n - p_(k)))``
    maximized over ``k0 <= k <= k1``. Ranks failing the indicator contribute 0;
    if none passes the cut is 0.
    """
    ps = np.asarray(pvalues_sorted, dtype=np.float64).ravel()
    _check_sorted(ps)
    n = ps.size
    if k1 is None:
        k1 = max(k0, n // 2)
    if not 1 <= k0 <= k1 <= n:
        raise InvalidRange(f"need 1 <= k0 <= k1 <= n, got k0={k0}, k1={k1}, n={n}")
    k = np.arange(k0, k1 + 1)
    a = k / n
    p = np.clip(ps[k0 - 1:k1], P_EPS, 1.0)
    active = p < a
    vals = np.zeros(k.size)
    inner = a[active] * np.log(a[active] / p[active]) - (a[active] - p[active])
    vals[active] = math.sqrt(2 * n) * np.sqrt(np.maximum(inner, 0.0))
    params = {"k0": k0, "k1": k1}
    if not np.any(vals > 0):
        return HCResult(0.0, 0, "LS", params)
    idx = int(np.argmax(vals))
    return HCResult(float(vals[idx]), int(k[idx]), "LS", params)


# ---------------------------------------------------------------- selection


@dataclass(frozen=True)
class SelectionPolicy:
    """Edge selection rule.

    ``kind`` is ``"auto"``, ``"fdr"`` or ``"hc"``. ``auto`` resolves to
    ``fdr(0.05)`` below 1000 variables and ``hc(DJ)`` otherwise.
    """

    kind: str = "auto"
    q: float = 0.05
    variant: str = "DJ"
    alpha0: float = 0.1
    k0: int = 1
    k1: int | None = None

    def __post_init__(self):
        if self.kind not in ("auto", "fdr", "hc"):
            raise InvalidRange(f"unknown selection policy {self.kind!r}")
        if not 0.0 < self.q <= 1.0:
            raise InvalidRange(f"q must lie in (0, 1], got {self.q}")
        if not 0.0 < self.alpha0 <= 1.0:
            raise InvalidRange(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if self.variant not in ("DJ", "LS"):
            raise InvalidRange(f"HC variant must be DJ or LS, got {self.variant!r}")

    @classmethod
    def fdr(cls, q: float = 0.05):
        return cls("fdr", q=q)

    @classmethod
    def hc(cls, variant: str = "DJ", **kw):
        return cls("hc", variant=variant, **kw)

    def resolve(self, p: int) -> "SelectionPolicy":
        if self.kind != "auto":
            return self
        if p < HC_AUTO_THRESHOLD:
            return SelectionPolicy("fdr", q=0.05)
        return SelectionPolicy("hc", variant="DJ", alpha0=self.alpha0)


@dataclass(frozen=True)
class Selection:
    mask: np.ndarray
    adjusted: np.ndarray
    policy: SelectionPolicy
    hc: HCResult | None = None


def select_mask(pvalues, p: int, policy: SelectionPolicy | None = None) -> Selection:
    """Boolean keep-mask over the canonical edge order."""
    pol = (policy or SelectionPolicy()).resolve(p)
    pv = np.asarray(pvalues, dtype=np.float64)
    adjusted = fdr_adjust(pv)
    if pol.kind == "fdr":
        return Selection(adjusted <= pol.q, adjusted, pol)
    mask = np.zeros(pv.size, dtype=bool)
    if pv.size == 0:
        return Selection(mask, adjusted, pol)
    order = np.argsort(adjusted, kind="stable")
    ranked = adjusted[order]
    if pol.variant == "DJ":
        hc = hc_dj(ranked, pol.alpha0)
    else:
        hc = hc_ls(ranked, pol.k0, pol.k1)
    # a non-positive statistic means no rank beats the uniform null
    if hc.statistic > 0.0 and hc.cut_index > 0:
        mask[order[: hc.cut_index]] = True
    return Selection(mask, adjusted, pol, hc)


def select_edges(result: PartialCorrelationResult, policy: SelectionPolicy | None = None, group=None) -> EdgeSet:
    sel = select_mask(result.pvalues, result.p, policy)
    iu, ju = result.pair_indices()
    return EdgeSet(iu[sel.mask], ju[sel.mask], result.weights()[sel.mask], group)


def shared_edges(edge_sets: Sequence[EdgeSet]) -> EdgeSet:
    """Edges present in every set, weighted by the mean of the per-set weights."""
    if len(edge_sets) < 2:
        raise DataError("consensus needs at least two edge sets")
    common = edge_sets[0].keys()
    for es in edge_sets[1:]:
        common = np.intersect1d(common, es.keys(), assume_unique=True)
    if common.size == 0:
        return EdgeSet.empty("shared")
    acc = np.zeros(common.size)
    for es in edge_sets:
        idx = np.searchsorted(es.keys(), common)
        acc += es.weight[idx]
    acc /= len(edge_sets)
    return EdgeSet(common >> 32, common & 0xFFFFFFFF, acc, "shared")
