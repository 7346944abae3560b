import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geee import (CorrelationKind, DegreesOfFreedomError, DimensionError, InvalidInputError, WorkingCorrelationSpec,
                  build_correlation, estimate_alpha, estimate_sigma2)
from geee.correlation import CLAMP_MARGIN, clamp_alpha, raw_alpha


def test_independence_is_identity():
    assert np.array_equal(build_correlation(WorkingCorrelationSpec("ind"), 3), np.eye(3))


def test_ar1_matrix():
    R = build_correlation(WorkingCorrelationSpec("ar1", 0.5, 3), 3)
    assert np.allclose(R, [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]], atol=0)


def test_exchangeable_matrix():
    R = build_correlation(WorkingCorrelationSpec("exc", 0.3, 2), 2)
    assert np.allclose(R, [[1, .3], [.3, 1]], atol=0)


def test_ar1_uses_occasion_gaps():
    R = build_correlation(WorkingCorrelationSpec("ar1", 0.5, 5), positions=[1, 2, 5])
    assert R[0, 2] == 0.5 ** 4 and R[1, 2] == 0.5 ** 3


def test_unstructured_selects_positions():
    table = np.array([[1, .1, .2], [.1, 1, .3], [.2, .3, 1]])
    spec = WorkingCorrelationSpec("un", table, 3)
    assert np.array_equal(build_correlation(spec, positions=[1, 3]), [[1, .2], [.2, 1]])
    with pytest.raises(DimensionError):
        build_correlation(spec, positions=[1, 4])


@pytest.mark.parametrize("kind,alpha,M", [("exc", -0.5, 3), ("exc", 1.0, 3), ("ar1", 1.0, 3), ("ar1", -1.2, 2)])
def test_spec_rejects_alpha_outside_range(kind, alpha, M):
    with pytest.raises(InvalidInputError):
        WorkingCorrelationSpec(kind, alpha, M)


def test_spec_rejects_bad_unstructured_table():
    with pytest.raises(InvalidInputError):
        WorkingCorrelationSpec("un", [[1, .2], [.3, 1]], 2)
    with pytest.raises(InvalidInputError):
        WorkingCorrelationSpec("un", [[1, 1.0], [1.0, 1]], 2)


def test_kind_parsing():
    assert CorrelationKind.parse("AR1") is CorrelationKind.AR1
    assert CorrelationKind.parse("exchangeable") is CorrelationKind.EXCHANGEABLE
    with pytest.raises(InvalidInputError):
        CorrelationKind.parse("toeplitz")


@settings(max_examples=80, deadline=None)
@given(M=st.integers(1, 9), u=st.floats(1e-6, 1.0 - 1e-6),
       kind=st.sampled_from(["exc", "ar1"]))
def test_valid_alpha_gives_positive_definite_matrix(M, u, kind):
    lo = -1.0 / (M - 1) if (kind == "exc" and M > 1) else -1.0
    alpha = lo + (1.0 - lo) * u
    spec = WorkingCorrelationSpec(kind, alpha, M)
    for m in range(1, M + 1):
        R = build_correlation(spec, m)
        assert np.array_equal(R, R.T) and np.all(np.diag(R) == 1.0)
        np.linalg.cholesky(R)


# --- nuisance estimates ----------------------------------------------------

def test_sigma2_direct_formula():
    # (1/8) * 10 * (0.5 * 2)^2
    assert estimate_sigma2(0.5, [np.full(10, 2.0)], p=2) == pytest.approx(1.25, abs=1e-15)


def test_sigma2_degenerate_and_single():
    assert estimate_sigma2(0.3, [np.zeros(5)], p=1) == 0.0
    assert estimate_sigma2(0.3, [np.array([-2.0, 0.0])], p=1) == pytest.approx((0.7 * 2.0) ** 2)


def test_sigma2_median_case_is_quarter_of_residual_variance(rng):
    r = rng.standard_normal(50)
    assert estimate_sigma2(0.5, [r[:20], r[20:]], p=3) == pytest.approx(0.25 * r @ r / 47, rel=1e-14)


def test_sigma2_needs_degrees_of_freedom():
    with pytest.raises(DegreesOfFreedomError):
        estimate_sigma2(0.5, [np.ones(2)], p=2)


def test_exchangeable_alpha_direct_formula():
    # three subjects of size 2, every residual c = 2, tau = 0.5, p = 1:
    # sigma2 = 6 (c/2)^2 / (6 - 1) = 1.2 ; alpha = 3 (c/2)^2 / ((3 - 1) sigma2) = 1.25
    res = [np.full(2, 2.0)] * 3
    s2 = estimate_sigma2(0.5, res, p=1)
    assert s2 == pytest.approx(1.2, abs=1e-15)
    alpha, dof = raw_alpha("exc", 0.5, res, s2, p=1)
    assert alpha == pytest.approx(1.25, abs=1e-14)
    assert dof == {"N1-p": 2}
    assert estimate_alpha("exc", 0.5, res, s2, p=1) == pytest.approx(1 - CLAMP_MARGIN)


def test_zero_cross_products_give_zero_alpha():
    res = [np.array([1.0, 0.0, -1.0, 0.0]), np.array([0.0, 2.0, 0.0, 0.0])]
    s2 = estimate_sigma2(0.5, res, p=1)
    assert raw_alpha("ar1", 0.5, res, s2, p=1)[0] == 0.0


def test_exchangeable_zero_pair_sum():
    res = [np.array([1.0, -1.0]), np.array([1.0, 1.0]), np.array([1.0, -1.0]), np.array([1.0, 1.0])]
    s2 = estimate_sigma2(0.5, res, p=1)
    assert raw_alpha("exc", 0.5, res, s2, p=1)[0] == 0.0


def test_ar1_on_singletons_has_no_degrees_of_freedom():
    with pytest.raises(DegreesOfFreedomError):
        raw_alpha("ar1", 0.5, [np.ones(1)] * 4, 1.0, p=1)


def test_ar1_counts_only_adjacent_occasions():
    res = [np.array([1.0, 2.0, 3.0])]
    value, dof = raw_alpha("ar1", 0.5, res, 1.0, p=0, positions=[np.array([1, 2, 4])])
    assert dof == {"N2-p": 1} and value == pytest.approx(0.25 * 2.0)


def test_unstructured_direct_formula(rng):
    res = [rng.standard_normal(3) for _ in range(6)]
    tau, p = 0.7, 2
    s2 = estimate_sigma2(tau, res, p)
    e = [np.where(r > 0, tau, 1 - tau) * r for r in res]
    expected = sum(np.outer(v, v) for v in e) / ((18 - p) * s2)
    np.fill_diagonal(expected, 1.0)
    table, _ = raw_alpha("un", tau, res, s2, p)
    assert np.allclose(table, expected, rtol=1e-13, atol=1e-15)


def test_clamp_alpha_ranges():
    assert clamp_alpha("exc", -0.9, 3) == (-0.5 + CLAMP_MARGIN, True)
    assert clamp_alpha("ar1", 0.4, 3) == (0.4, False)
    table, clamped = clamp_alpha("un", np.array([[1, 1.3], [1.3, 1]]), 2)
    assert clamped and table[0, 1] == 1 - CLAMP_MARGIN


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), kind=st.sampled_from(["exc", "ar1", "un"]),
       tau=st.floats(0.05, 0.95))
def test_alpha_invariant_to_subject_order(seed, kind, tau):
    rng = np.random.default_rng(seed)
    res = [rng.standard_normal(rng.integers(1, 6)) for _ in range(12)]
    s2 = estimate_sigma2(tau, res, 1)
    perm = rng.permutation(len(res))
    a = estimate_alpha(kind, tau, res, s2, 1, max_cluster_size=5)
    b = estimate_alpha(kind, tau, [res[i] for i in perm], s2, 1, max_cluster_size=5)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", ["exc", "ar1", "un"])
def test_grouped_estimator_matches_per_subject_estimator(unbalanced, kind):
    from geee.fit import _alpha
    tau = 0.3
    r = unbalanced.y - unbalanced.X @ np.linalg.lstsq(unbalanced.X, unbalanced.y, rcond=None)[0]
    s2 = estimate_sigma2(tau, unbalanced.split(r), unbalanced.p)
    grouped, _ = _alpha(CorrelationKind.parse(kind), tau, r, s2, unbalanced)
    M = unbalanced.max_position if kind == "un" else unbalanced.max_cluster_size
    direct, _ = raw_alpha(kind, tau, unbalanced.split(r), s2, unbalanced.p, unbalanced.positions, M)
    assert np.allclose(grouped, direct, rtol=1e-12, atol=1e-14)
