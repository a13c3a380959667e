import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from jointshrink.covariance import CovarianceEstimate, GroupedDataset, observation_contributions, sample_covariance, standardize
from jointshrink.errors import DataError, DegenerateObjectiveWarning, DimensionMismatch, SingleGroup, TooFewObservations
from jointshrink.shrinkage import (
    G1_ZERO,
    G2_ZERO,
    SUM_ONE,
    QuadraticObjective,
    ShrinkageIntensities,
    ShrinkOptions,
    assemble_objective,
    shared_target,
    single_target_shrink,
    solve_gamma,
    solve_gamma_kkt,
    ttls_shrink,
    v_hat,
    v_hat_from_data,
)


def loop_v_hat(X):
    """Variance estimate written out with explicit loops."""
    n, p = X.shape
    mean = X.mean(axis=0)
    S = np.zeros((p, p))
    for k in range(n):
        for a in range(p):
            for b in range(p):
                S[a, b] += (X[k, a] - mean[a]) * (X[k, b] - mean[b])
    S /= n - 1
    total = 0.0
    for k in range(n):
        for a in range(p):
            for b in range(p):
                w = (X[k, a] - mean[a]) * (X[k, b] - mean[b])
                total += (w - (n - 1) / n * S[a, b]) ** 2
    return n / ((n - 1) ** 2 * (n - 2)) * total


def simplex_grid(step):
    m = int(round(1 / step))
    g1, g2 = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = g1 + g2 <= m
    return g1[keep] / m, g2[keep] / m


def grid_min(obj, g1, g2):
    A, b = obj.A, obj.b
    F = A[0, 0] * g1 * g1 + 2 * A[0, 1] * g1 * g2 + A[1, 1] * g2 * g2 - 2 * (b[0] * g1 + b[1] * g2)
    return float(F.min())


def random_dataset(G=3, n=15, p=20, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(p, p)) / np.sqrt(p)
    return GroupedDataset.from_arrays([rng.normal(size=(n, p)) @ (np.eye(p) + 0.5 * base) for _ in range(G)])


# ---------------------------------------------------------------- v_hat


def test_v_hat_zero_when_contributions_constant():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    n = 5
    contributions = np.repeat(((n - 1) / n * M)[None], n, axis=0)
    assert v_hat(contributions, M, n) == 0.0


def test_v_hat_scalar_example():
    # M = mean * n/(n-1) = 8/3; deviations (-1,-1,1,1); 4 * 4/(9*2)
    contributions = np.array([1.0, 1.0, 3.0, 3.0]).reshape(4, 1, 1)
    M = np.array([[8.0 / 3.0]])
    assert v_hat(contributions, M, 4) == pytest.approx(8.0 / 9.0, abs=1e-14)


def test_v_hat_matches_loops_40x8():
    X = np.random.default_rng(11).normal(size=(40, 8))
    S = sample_covariance(X).matrix
    assert v_hat(observation_contributions(X), S, 40) == pytest.approx(loop_v_hat(X), abs=1e-10)
    assert v_hat_from_data(X) == pytest.approx(loop_v_hat(X), abs=1e-10)


def test_v_hat_needs_three_observations():
    X = np.random.default_rng(0).normal(size=(2, 3))
    with pytest.raises(TooFewObservations):
        v_hat(observation_contributions(X), sample_covariance(X).matrix, 2)
    with pytest.raises(TooFewObservations):
        v_hat_from_data(X)


def test_v_hat_length_mismatch():
    X = np.random.default_rng(0).normal(size=(5, 3))
    with pytest.raises(DimensionMismatch):
        v_hat(observation_contributions(X), sample_covariance(X).matrix, 6)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 30), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_v_hat_fast_form_agrees(n, p, seed):
    X = np.random.default_rng(seed).normal(size=(n, p))
    slow = v_hat(observation_contributions(X), sample_covariance(X).matrix, n)
    fast = v_hat_from_data(X)
    assert fast >= 0.0
    assert fast == pytest.approx(slow, rel=1e-9, abs=1e-12)


# --------------------------------------------------------- shared target


def test_shared_target_two_groups():
    rng = np.random.default_rng(1)
    S0, S1 = (sample_covariance(rng.normal(size=(6, 3))) for _ in range(2))
    np.testing.assert_array_equal(shared_target([S0, S1], 0).matrix, S1.matrix)


def test_shared_target_identities():
    mats = [CovarianceEstimate(np.diag([3.0, 1.0]), 5), CovarianceEstimate(np.eye(2), 5), CovarianceEstimate(np.eye(2), 5)]
    np.testing.assert_array_equal(shared_target(mats, 0).matrix, np.eye(2))


def test_shared_target_average_of_others():
    rng = np.random.default_rng(2)
    covs = [sample_covariance(rng.normal(size=(9, 4))) for _ in range(5)]
    expected = sum(covs[j].matrix for j in (0, 1, 3, 4)) / 4
    np.testing.assert_allclose(shared_target(covs, 2).matrix, expected, atol=1e-12)


def test_shared_target_preshrunk():
    rng = np.random.default_rng(3)
    data = [standardize(rng.normal(size=(8, 6))) for _ in range(3)]
    covs = [CovarianceEstimate(sample_covariance(X).matrix, 8, v_hat_from_data(X)) for X in data]
    expected = (single_target_shrink(covs[1]).sigma_hat + single_target_shrink(covs[2]).sigma_hat) / 2
    np.testing.assert_allclose(shared_target(covs, 0, pre_shrink=True).matrix, expected, atol=1e-12)


def test_shared_target_single_group():
    with pytest.raises(SingleGroup):
        shared_target([CovarianceEstimate(np.eye(2), 4)], 0)


# -------------------------------------------------------------- objective


def test_objective_zero_difference():
    S = sample_covariance(np.random.default_rng(4).normal(size=(7, 3))).matrix
    obj = assemble_objective(S, S, 0.3, 0.1)
    assert obj.A[0, 0] == 0.0 and obj.A[0, 1] == 0.0
    np.testing.assert_allclose(obj.b, [0.2, 0.3])


def test_objective_identity_data():
    obj = assemble_objective(np.eye(3), np.full((3, 3), 0.2), 0.0, 0.0)
    assert obj.A[1, 1] == 0.0


def test_objective_matches_loops():
    rng = np.random.default_rng(5)
    S = sample_covariance(rng.normal(size=(20, 6))).matrix
    T = sample_covariance(rng.normal(size=(20, 6))).matrix
    I = np.eye(6)
    a11 = a12 = a22 = 0.0
    for r in range(6):
        for c in range(6):
            d1, d2 = T[r, c] - S[r, c], I[r, c] - S[r, c]
            a11 += d1 * d1
            a12 += d1 * d2
            a22 += d2 * d2
    obj = assemble_objective(S, T, 0.7, 0.2)
    np.testing.assert_allclose(obj.A, [[a11, a12], [a12, a22]], atol=1e-12)
    np.testing.assert_allclose(obj.b, [0.5, 0.7], atol=1e-15)


def test_objective_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        assemble_objective(np.eye(3), np.eye(4), 0.0, 0.0)


# ---------------------------------------------------------------- solver


@pytest.mark.parametrize(
    "b, expected",
    [((0.3, 0.2), (0.3, 0.2)), ((-1.0, -1.0), (0.0, 0.0)), ((2.0, 2.0), (0.5, 0.5))],
)
def test_solve_gamma_identity_examples(b, expected):
    obj = QuadraticObjective(np.eye(2), np.array(b))
    g = solve_gamma(obj)
    assert (g.gamma1, g.gamma2) == pytest.approx(expected, abs=1e-15)


def test_solve_gamma_edge_example_against_grid():
    obj = QuadraticObjective(np.eye(2), np.array([2.0, 2.0]))
    g = solve_gamma(obj)
    assert obj.value(g.as_array()) <= grid_min(obj, *simplex_grid(1e-3)) + 1e-12
    assert solve_gamma_kkt(obj).active_constraints == frozenset({SUM_ONE})


def test_solve_gamma_vertices_and_active_sets():
    sol = solve_gamma_kkt(QuadraticObjective(np.eye(2), np.array([-1.0, -1.0])))
    assert sol.active_constraints == frozenset({G1_ZERO, G2_ZERO})
    sol = solve_gamma_kkt(QuadraticObjective(np.eye(2), np.array([-1.0, 5.0])))
    assert (sol.intensities.gamma1, sol.intensities.gamma2) == (0.0, 1.0)
    assert sol.active_constraints == frozenset({G1_ZERO, SUM_ONE})


def test_degenerate_objective_tie_break_warns():
    obj = QuadraticObjective(np.zeros((2, 2)), np.zeros(2))
    with pytest.warns(DegenerateObjectiveWarning):
        g = solve_gamma(obj)
    assert (g.gamma1, g.gamma2) == (0.0, 0.0)


def test_asymmetric_objective_is_symmetrized():
    A = np.array([[2.0, 0.4], [0.2, 1.0]])
    sym = QuadraticObjective((A + A.T) / 2, np.array([0.3, 0.1]))
    g = solve_gamma(QuadraticObjective(A, np.array([0.3, 0.1])))
    assert g == solve_gamma(sym)


def test_solve_gamma_agrees_with_nelder_mead():
    rng = np.random.default_rng(6)
    for _ in range(20):
        M = rng.normal(size=(2, 2))
        obj = QuadraticObjective(M @ M.T, rng.normal(size=2))

        def penalized(x):
            viol = max(-x[0], 0.0) ** 2 + max(-x[1], 0.0) ** 2 + max(x[0] + x[1] - 1.0, 0.0) ** 2
            return obj.value(x) + 1e6 * viol

        best = min(
            (optimize.minimize(penalized, x0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12}) for x0 in ([0.2, 0.2], [0.6, 0.1], [0.1, 0.6])),
            key=lambda r: r.fun,
        )
        # the penalty lets the simplex step slightly outside, so project back
        x = np.clip(best.x, 0.0, 1.0)
        x = x / max(1.0, x.sum())
        kkt = obj.value(solve_gamma(obj).as_array())
        assert kkt <= obj.value(x) + 1e-12
        assert abs(kkt - obj.value(x)) <= 1e-5


def test_intensities_reject_infeasible():
    with pytest.raises(DataError):
        ShrinkageIntensities(0.7, 0.4)
    with pytest.raises(DataError):
        ShrinkageIntensities(-0.1, 0.4)


psd_objectives = st.tuples(
    st.lists(st.floats(-2, 2), min_size=4, max_size=4),
    st.lists(st.floats(-2, 2), min_size=2, max_size=2),
)


@settings(max_examples=150, deadline=None)
@given(psd_objectives)
def test_solve_gamma_feasible_and_optimal(data):
    m, b = data
    M = np.array(m).reshape(2, 2)
    obj = QuadraticObjective(M @ M.T, np.array(b))
    g = solve_gamma_kkt(obj).intensities
    assert g.gamma1 >= 0.0 and g.gamma2 >= 0.0 and g.gamma1 + g.gamma2 <= 1.0
    assert obj.value(g.as_array()) <= grid_min(obj, *simplex_grid(1e-2)) + 1e-9


# -------------------------------------------------------- single target


def test_single_target_identity():
    sol = single_target_shrink(CovarianceEstimate(np.eye(4), 10, 0.5))
    assert sol.intensities.gamma2 == 0.0
    np.testing.assert_array_equal(sol.sigma_hat, np.eye(4))


def test_single_target_nonpositive_b():
    S = sample_covariance(np.random.default_rng(7).normal(size=(8, 3))).matrix
    sol = single_target_shrink(CovarianceEstimate(S, 8, 0.0))
    assert sol.intensities.gamma2 == 0.0
    np.testing.assert_array_equal(sol.sigma_hat, S)


def test_single_target_minimizes_scan():
    X = standardize(np.random.default_rng(8).normal(size=(12, 10)))
    S = sample_covariance(X)
    sol = single_target_shrink(S, observation_contributions(X), 12)
    assert sol.intensities.gamma1 == 0.0
    grid = np.arange(0, 10001) / 10000
    obj = sol.objective
    F = obj.A[1, 1] * grid**2 - 2 * obj.b[1] * grid
    assert abs(sol.intensities.gamma2 - grid[np.argmin(F)]) <= 1e-4
    assert obj.value(sol.intensities.as_array()) <= F.min() + 1e-12


def test_single_target_needs_variance():
    with pytest.raises(DataError):
        single_target_shrink(CovarianceEstimate(np.eye(2), 5))


# ------------------------------------------------------------- pipeline


def recombine(sol):
    S = sol.sample_cov.matrix
    g1, g2 = sol.intensities.gamma1, sol.intensities.gamma2
    T = sol.target if sol.target is not None else np.zeros_like(S)
    return (1 - g1 - g2) * S + g1 * T + g2 * np.eye(S.shape[0])


@pytest.mark.parametrize("pre_shrink", [True, False])
def test_ttls_reconstruction_and_floor(pre_shrink):
    for sol in ttls_shrink(random_dataset(), ShrinkOptions(pre_shrink=pre_shrink)):
        np.testing.assert_allclose(sol.sigma_hat, recombine(sol), rtol=0, atol=1e-12)
        np.testing.assert_array_equal(sol.sigma_hat, sol.sigma_hat.T)
        g = sol.intensities
        assert g.gamma1 >= 0 and g.gamma2 >= 0 and g.gamma1 + g.gamma2 <= 1
        if g.gamma2 > 0:
            assert np.linalg.eigvalsh(sol.sigma_hat).min() >= g.gamma2 - 1e-10


def test_ttls_overrides():
    ds = random_dataset(seed=1)
    zero = ttls_shrink(ds, ShrinkOptions(gamma_override=(0.0, 0.0)))
    ident = ttls_shrink(ds, ShrinkOptions(gamma_override=(0.0, 1.0)))
    for a, b in zip(zero, ident):
        np.testing.assert_array_equal(a.sigma_hat, a.sample_cov.matrix)
        np.testing.assert_array_equal(b.sigma_hat, np.eye(ds.p))
    with pytest.raises(DataError):
        ttls_shrink(ds, ShrinkOptions(gamma_override=(0.8, 0.8)))


def test_identity_only_matches_single_target():
    ds = random_dataset(seed=2)
    restricted = ttls_shrink(ds, ShrinkOptions(identity_only=True))
    for X, sol in zip(ds.groups, restricted):
        Z = standardize(X)
        direct = single_target_shrink(sample_covariance(Z), observation_contributions(Z), Z.shape[0])
        assert sol.intensities.gamma1 == 0.0
        assert sol.intensities.gamma2 == pytest.approx(direct.intensities.gamma2, abs=1e-12)


def test_ttls_threads_do_not_change_results():
    ds = random_dataset(G=4, seed=3)
    one = ttls_shrink(ds, ShrinkOptions(threads=1))
    four = ttls_shrink(ds, ShrinkOptions(threads=4))
    for a, b in zip(one, four):
        assert a.intensities == b.intensities
        np.testing.assert_array_equal(a.sigma_hat, b.sigma_hat)


def test_ttls_uses_shared_target_when_groups_agree():
    rng = np.random.default_rng(9)
    p = 15
    L = np.linalg.cholesky(0.6 * np.ones((p, p)) + 0.4 * np.eye(p))
    ds = GroupedDataset.from_arrays([rng.normal(size=(12, p)) @ L.T for _ in range(5)])
    sols = ttls_shrink(ds)
    assert all(s.intensities.gamma1 > 0 for s in sols)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(3, 12), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_ttls_invariants_random(G, n, p, seed):
    rng = np.random.default_rng(seed)
    ds = GroupedDataset.from_arrays([rng.normal(size=(n, p)) for _ in range(G)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sols = ttls_shrink(ds)
    for sol in sols:
        np.testing.assert_allclose(sol.sigma_hat, recombine(sol), rtol=0, atol=1e-12)
        g = sol.intensities
        assert g.gamma1 >= 0 and g.gamma2 >= 0 and g.gamma1 + g.gamma2 <= 1
        if g.gamma2 > 0:
            assert np.linalg.eigvalsh(sol.sigma_hat).min() >= g.gamma2 - 1e-10
