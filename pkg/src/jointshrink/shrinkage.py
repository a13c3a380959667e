"""Two-target linear covariance shrinkage across related groups.

Each group's sample covariance ``S_i`` is pulled toward two targets at once:
the average covariance of the *other* groups (carrying the common network)
and the identity. The weights ``(gamma1, gamma2)`` minimize the estimated
Frobenius risk ``F(g) = g^T A g - 2 g^T b`` over the simplex
``g1 >= 0, g2 >= 0, g1 + g2 <= 1``. The problem has two variables and is
convex, so it is solved exactly by enumerating the KKT candidates.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._timing import NULL_TIMER
from .covariance import (
    CovarianceEstimate,
    GroupedDataset,
    as_data_matrix,
    sample_covariance,
    standardize,
)
from .errors import (
    DataError,
    DegenerateObjectiveWarning,
    DimensionMismatch,
    SingleGroup,
    TooFewObservations,
)

G1_ZERO = "g1_zero"
G2_ZERO = "g2_zero"
SUM_ONE = "sum_one"

_TIE_TOL = 1e-10
_FEAS_TOL = 1e-12


@dataclass(frozen=True)
class ShrinkageIntensities:
    gamma1: float
    gamma2: float

    def __post_init__(self):
        g1, g2 = self.gamma1, self.gamma2
        if not (g1 >= 0.0 and g2 >= 0.0 and g1 + g2 <= 1.0):
            raise DataError(f"infeasible shrinkage intensities ({g1!r}, {g2!r})")

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma1, self.gamma2])


@dataclass(frozen=True)
class QuadraticObjective:
    A: np.ndarray
    b: np.ndarray

    def value(self, gamma) -> float:
        g = np.asarray(gamma, dtype=np.float64)
        return float(g @ self.A @ g - 2.0 * g @ self.b)


@dataclass(frozen=True)
class KKTSolution:
    intensities: ShrinkageIntensities
    value: float
    active_constraints: frozenset
    degenerate: bool = False


@dataclass(frozen=True)
class ShrinkageSolution:
    """Result of shrinking one group's covariance.

    ``sigma_hat`` is exactly
    ``(1 - g1 - g2) * sample_cov.matrix + g1 * target + g2 * I``
    (the target term is dropped when ``target`` is None).
    """

    intensities: ShrinkageIntensities
    sigma_hat: np.ndarray
    objective_value: float
    active_constraints: frozenset
    sample_cov: CovarianceEstimate
    target: np.ndarray | None = None
    objective: QuadraticObjective | None = None
    group: str | None = None
    warnings: tuple = ()


@dataclass(frozen=True)
class ShrinkOptions:
    """Knobs for :func:`ttls_shrink`.

    ``gamma_override`` skips the optimization and uses the given
    ``(gamma1, gamma2)`` for every group. ``identity_only`` restricts the
    problem to the identity target (gamma1 = 0), which is the single-target
    baseline.
    """

    standardize: bool = True
    pre_shrink: bool = True
    gamma_override: tuple | None = None
    identity_only: bool = False
    threads: int = 1


def combine(S: np.ndarray, target: np.ndarray | None, gamma1: float, gamma2: float) -> np.ndarray:
    """Affine combination ``(1-g1-g2) S + g1 T + g2 I``."""
    out = (1.0 - gamma1 - gamma2) * S
    if target is not None:
        out = out + gamma1 * target
    out[np.diag_indices_from(out)] += gamma2
    return out


# ---------------------------------------------------------------- variance


def v_hat(contributions, estimate, n: int) -> float:
    """Estimated sampling variance of a covariance-type matrix.

    ``n / ((n-1)^2 (n-2)) * sum_k ||M_k - (n-1)/n * M||_F^2`` where ``M_k``
    are the per-observation contributions and ``M`` the estimate.
    """
    if n < 3:
        raise TooFewObservations(f"variance estimate needs n >= 3, got {n}")
    Mk = np.asarray(contributions, dtype=np.float64)
    M = np.asarray(estimate, dtype=np.float64)
    if Mk.shape[0] != n:
        raise DimensionMismatch(f"{Mk.shape[0]} contributions for n={n}")
    if Mk.shape[1:] != M.shape:
        raise DimensionMismatch(f"contribution shape {Mk.shape[1:]} vs estimate {M.shape}")
    dev = Mk - ((n - 1) / n) * M
    total = float(np.einsum("kij,kij->", dev, dev))
    return n / ((n - 1) ** 2 * (n - 2)) * total


def v_hat_from_data(X) -> float:
    """``v_hat`` of the sample covariance of X without building the n*p*p stack.

    With ``w_k`` the centered outer products, ``||w_k||_F^2 = r_k^2`` where
    ``r_k`` is the squared norm of centered row k, and ``sum_k w_k = (n-1) S``,
    which reduces the sum to ``sum_k r_k^2 - (n-1)^2/n * ||S||_F^2``.
    """
    X = as_data_matrix(X, min_rows=1)
    n = X.shape[0]
    if n < 3:
        raise TooFewObservations(f"variance estimate needs n >= 3, got {n}")
    Xc = X - X.mean(axis=0)
    r = np.einsum("ij,ij->i", Xc, Xc)
    G = Xc.T @ Xc
    s2 = float(np.einsum("ij,ij->", G, G)) / (n - 1) ** 2
    total = float(r @ r) - (n - 1) ** 2 / n * s2
    return n / ((n - 1) ** 2 * (n - 2)) * max(total, 0.0)


# ------------------------------------------------------------------ target


def _average_excluding(mats: Sequence[np.ndarray], exclude: int) -> np.ndarray:
    others = [m for j, m in enumerate(mats) if j != exclude]
    acc = others[0].copy()
    for m in others[1:]:
        acc += m
    if len(others) > 1:
        acc /= len(others)
    return acc


def shared_target(
    covariances: Sequence[CovarianceEstimate],
    exclude_index: int,
    pre_shrink: bool = False,
) -> CovarianceEstimate:
    """Average of the other groups' covariances, optionally single-target shrunk first.

    When every averaged estimate carries a ``variance``, the result's
    variance is ``sum_j V_j / (G-1)^2`` over the averaged matrices (groups
    are independent). Pre-shrinking needs those variances.
    """
    G = len(covariances)
    if G < 2:
        raise SingleGroup("the shared target is undefined for a single group")
    if not 0 <= exclude_index < G:
        raise IndexError(f"group index {exclude_index} out of range for {G} groups")
    p = covariances[0].p
    if any(c.matrix.shape != (p, p) for c in covariances):
        raise DimensionMismatch("covariance matrices differ in shape")
    if pre_shrink:
        if any(c.variance is None for j, c in enumerate(covariances) if j != exclude_index):
            raise DataError("pre-shrinking needs the variance of every other group's estimate")
        mats, variances = [], []
        for j, c in enumerate(covariances):
            if j == exclude_index:
                mats.append(c.matrix)
                variances.append(c.variance)
                continue
            sol = single_target_shrink(c)
            mats.append(sol.sigma_hat)
            variances.append(_preshrunk_variance(sol))
    else:
        mats = [c.matrix for c in covariances]
        variances = [c.variance for c in covariances]
    n = sum(c.n for j, c in enumerate(covariances) if j != exclude_index)
    variance = None
    if all(v is not None for j, v in enumerate(variances) if j != exclude_index):
        variance = _shared_variance(variances, exclude_index)
    return CovarianceEstimate(_average_excluding(mats, exclude_index), n, variance)


def _preshrunk_variance(sol: "ShrinkageSolution") -> float:
    # (1 - g2) S + g2 I has variance (1 - g2)^2 V(S): the identity part is constant
    return (1.0 - sol.intensities.gamma2) ** 2 * sol.sample_cov.variance


def _shared_variance(variances: Sequence[float], exclude: int) -> float:
    # groups are independent: variance of a mean of G-1 terms
    G = len(variances)
    return sum(v for j, v in enumerate(variances) if j != exclude) / (G - 1) ** 2


# --------------------------------------------------------------- objective


def assemble_objective(S_i, shared, v_S: float, v_shared: float) -> QuadraticObjective:
    """Plug-in ``A`` (Frobenius Gram matrix of the target differences) and ``b``.

    The identity target is non-random, so its variance term is zero.
    """
    S = S_i.matrix if isinstance(S_i, CovarianceEstimate) else np.asarray(S_i, dtype=np.float64)
    T = shared.matrix if isinstance(shared, CovarianceEstimate) else np.asarray(shared, dtype=np.float64)
    if S.shape != T.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"shapes {S.shape} and {T.shape} are not matching square matrices")
    d1 = (T - S).ravel()
    d2 = -S.copy()
    d2[np.diag_indices_from(d2)] += 1.0
    d2 = d2.ravel()
    a11 = float(d1 @ d1)
    a12 = float(d1 @ d2)
    a22 = float(d2 @ d2)
    A = np.array([[a11, a12], [a12, a22]])
    b = np.array([v_S - v_shared, v_S - 0.0])
    return QuadraticObjective(A, b)


def _identity_objective(S: np.ndarray, v_S: float) -> QuadraticObjective:
    d2 = -S.copy()
    d2[np.diag_indices_from(d2)] += 1.0
    a22 = float(np.einsum("ij,ij->", d2, d2))
    return QuadraticObjective(np.array([[0.0, 0.0], [0.0, a22]]), np.array([0.0, v_S]))


# ------------------------------------------------------------------ solver


def _feasible_point(g1: float, g2: float) -> tuple[float, float]:
    g1 = min(max(float(g1), 0.0), 1.0)
    g2 = min(max(float(g2), 0.0), 1.0)
    if g1 + g2 > 1.0:
        g2 = 1.0 - g1
        while g2 > 0.0 and g1 + g2 > 1.0:
            g2 = float(np.nextafter(g2, 0.0))
    return g1, g2


def _active(g1: float, g2: float) -> frozenset:
    act = set()
    if g1 == 0.0:
        act.add(G1_ZERO)
    if g2 == 0.0:
        act.add(G2_ZERO)
    if g1 + g2 == 1.0:
        act.add(SUM_ONE)
    return frozenset(act)


def _in_simplex(g1: float, g2: float) -> bool:
    return g1 >= -_FEAS_TOL and g2 >= -_FEAS_TOL and g1 + g2 <= 1.0 + _FEAS_TOL


def _symmetrized(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (2, 2):
        raise DimensionMismatch(f"objective matrix must be 2x2, got {A.shape}")
    if abs(A[0, 1] - A[1, 0]) > 1e-10 * max(1.0, np.abs(A).max()):
        A = (A + A.T) / 2
    else:
        A = A.copy()
        A[1, 0] = A[0, 1]
    return A


def solve_gamma_kkt(objective: QuadraticObjective, identity_only: bool = False) -> KKTSolution:
    """Minimize ``g^T A g - 2 g^T b`` over the 2-simplex by KKT enumeration.

    Candidates, in order: the unconstrained stationary point, the stationary
    point on each edge (g1 = 0, g2 = 0, g1 + g2 = 1), then the vertices
    (0,0), (1,0), (0,1). Among feasible candidates the smallest objective
    wins; near-ties go to the smallest g1 + g2, then the smallest g1.
    """
    A = _symmetrized(objective.A)
    b = np.asarray(objective.b, dtype=np.float64)
    obj = QuadraticObjective(A, b)
    a11, a12, a22 = A[0, 0], A[0, 1], A[1, 1]
    b1, b2 = b

    scale = max(abs(a11), abs(a12), abs(a22))
    det = a11 * a22 - a12 * a12
    singular = scale == 0.0 or det <= 1e-12 * scale * scale

    # curvatures this small leave the edge minimum at a vertex to within rounding
    tiny = 1e-14 * scale
    raw: list[tuple[float, float]] = []
    if not identity_only:
        if not singular:
            raw.append(tuple(np.linalg.solve(A, b)))
    if a22 > tiny:
        raw.append((0.0, b2 / a22))
    if not identity_only:
        if a11 > tiny:
            raw.append((b1 / a11, 0.0))
        curv = a11 - 2.0 * a12 + a22
        if curv > tiny:
            t = (a22 - a12 + b1 - b2) / curv
            raw.append((t, 1.0 - t))
        raw += [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    else:
        raw += [(0.0, 0.0), (0.0, 1.0)]

    cands = []
    for g1, g2 in raw:
        if not (np.isfinite(g1) and np.isfinite(g2)) or not _in_simplex(g1, g2):
            continue
        g1, g2 = _feasible_point(g1, g2)
        cands.append((obj.value((g1, g2)), g1, g2))

    best = min(c[0] for c in cands)
    tol = _TIE_TOL * max(1.0, abs(best))
    tied = [c for c in cands if c[0] <= best + tol]
    tied.sort(key=lambda c: (c[1] + c[2], c[1]))
    value, g1, g2 = tied[0]
    distinct = {(round(c[1], 12), round(c[2], 12)) for c in tied}
    degenerate = singular and len(distinct) > 1
    return KKTSolution(ShrinkageIntensities(g1, g2), value, _active(g1, g2), degenerate)


def solve_gamma(objective: QuadraticObjective) -> ShrinkageIntensities:
    """Optimal shrinkage intensities for a 2x2 quadratic objective.

    Warns with :class:`DegenerateObjectiveWarning` when ``A`` is singular and
    several candidates tie; the deterministic tie-break still applies.
    """
    sol = solve_gamma_kkt(objective)
    if sol.degenerate:
        warnings.warn(
            "singular shrinkage objective with tied minimizers; "
            "picked the smallest total shrinkage",
            DegenerateObjectiveWarning,
            stacklevel=2,
        )
    return sol.intensities


# --------------------------------------------------------------- shrinkers


def single_target_shrink(S: CovarianceEstimate, contributions=None, n: int | None = None) -> ShrinkageSolution:
    """Shrink toward the identity only (gamma1 fixed at 0).

    ``gamma2 = clamp(b2 / A22, 0, 1)``; when ``S`` already equals the identity
    (``A22 = 0``) the intensity is 0.
    """
    v = S.variance
    if v is None:
        if contributions is None:
            raise DataError("need either S.variance or the per-observation contributions")
        v = v_hat(contributions, S.matrix, S.n if n is None else n)
        S = replace(S, variance=v)
    obj = _identity_objective(S.matrix, v)
    a22, b2 = obj.A[1, 1], obj.b[1]
    g2 = min(max(b2 / a22, 0.0), 1.0) if a22 > 0.0 else 0.0
    g1, g2 = _feasible_point(0.0, g2)
    return ShrinkageSolution(
        intensities=ShrinkageIntensities(0.0, g2),
        sigma_hat=combine(S.matrix, None, 0.0, g2),
        objective_value=obj.value((0.0, g2)),
        active_constraints=_active(0.0, g2),
        sample_cov=S,
        objective=obj,
    )


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def group_covariances(dataset: GroupedDataset, do_standardize: bool = True, threads: int = 1, timer=None):
    """Sample covariance of every group, with ``variance`` filled in."""
    timer = timer or NULL_TIMER
    with timer.stage("covariance"):
        data = _map(standardize if do_standardize else (lambda X: X), dataset.groups, threads)
        covs = _map(sample_covariance, data, threads)
    with timer.stage("variance"):
        vs = _map(v_hat_from_data, data, threads)
    return [replace(c, variance=v) for c, v in zip(covs, vs)]


def ttls_shrink(dataset: GroupedDataset, options: ShrinkOptions | None = None, timer=None) -> list[ShrinkageSolution]:
    """Two-target shrinkage for every group of ``dataset``.

    Parameters
    ----------
    dataset : GroupedDataset
    options : ShrinkOptions, optional
    timer : StageTimer, optional
        Receives per-stage wall-clock time (``covariance``, ``variance``,
        ``shared_target``, ``qp``).

    Returns
    -------
    list of ShrinkageSolution, one per group in dataset order.
    """
    opts = options or ShrinkOptions()
    timer = timer or NULL_TIMER
    if opts.gamma_override is not None:
        ShrinkageIntensities(*map(float, opts.gamma_override))
    G = dataset.G
    covs = group_covariances(dataset, opts.standardize, opts.threads, timer)

    targets: list = [None] * G
    if not opts.identity_only:
        with timer.stage("shared_target"):
            if opts.pre_shrink:
                pre = _map(single_target_shrink, covs, opts.threads)
                base = [s.sigma_hat for s in pre]
                variances = [_preshrunk_variance(s) for s in pre]
            else:
                base = [c.matrix for c in covs]
                variances = [c.variance for c in covs]
            targets = _map(
                lambda i: CovarianceEstimate(
                    _average_excluding(base, i),
                    sum(c.n for j, c in enumerate(covs) if j != i),
                    _shared_variance(variances, i),
                ),
                range(G),
                opts.threads,
            )

    def solve_one(i):
        S = covs[i]
        T = targets[i]
        if opts.identity_only:
            obj = _identity_objective(S.matrix, S.variance)
        else:
            obj = assemble_objective(S, T, S.variance, T.variance)
        notes = []
        if opts.gamma_override is not None:
            g1, g2 = (float(x) for x in opts.gamma_override)
            if opts.identity_only and g1 != 0.0:
                raise DataError("gamma1 must be 0 when shrinking toward the identity only")
            sol = KKTSolution(ShrinkageIntensities(g1, g2), obj.value((g1, g2)), _active(g1, g2))
            notes.append("gamma_override")
        else:
            sol = solve_gamma_kkt(obj, identity_only=opts.identity_only)
            if sol.degenerate:
                notes.append("degenerate_objective")
        g1, g2 = sol.intensities.gamma1, sol.intensities.gamma2
        Tm = None if T is None else T.matrix
        return ShrinkageSolution(
            intensities=sol.intensities,
            sigma_hat=combine(S.matrix, Tm, g1, g2),
            objective_value=sol.value,
            active_constraints=sol.active_constraints,
            sample_cov=S,
            target=Tm,
            objective=obj,
            group=dataset.group_names[i],
            warnings=tuple(notes),
        )

    with timer.stage("qp"):
        return _map(solve_one, range(G), opts.threads)
