import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from wabh.core import (
    PI0_FLOOR,
    HypothesisGrid,
    WeightImpact,
    WeightScheme,
    adaptive_bh,
    bh,
    bh_stepup,
    parse_pi0_mode,
    prior_pi0,
    storey_pi0,
    wabh,
    weighted_bh,
    weighted_pvalues,
)
from wabh.errors import DimensionError, DomainError, InputError

from oracles import stepup_oracle, storey_oracle

unit_floats = st.floats(0.0, 1.0, allow_nan=False)
pvals = arrays(float, st.integers(1, 40), elements=unit_floats)


# weighted p-values


def test_weighted_pvalues_examples():
    np.testing.assert_array_equal(weighted_pvalues([0.02, 0.5], [1, 1]), [0.02, 0.5])
    np.testing.assert_allclose(weighted_pvalues([0.02, 0.5], [2, 0.5]), [0.01, 1.0])
    assert weighted_pvalues([0.02], [0]) == [np.inf]


def test_weighted_pvalues_errors():
    with pytest.raises(DimensionError):
        weighted_pvalues([0.1, 0.2], [1.0])
    with pytest.raises(DomainError):
        weighted_pvalues([0.1], [-1.0])


# step-up


def test_stepup_hand_examples():
    d = bh_stepup([0.001, 0.02, 0.9], 0.05, 1.0)
    assert list(d.decisions) == [True, True, False]
    assert d.threshold == pytest.approx(2 * 0.05 / 3)
    assert bh_stepup([1, 1, 1], 0.05).n_rejected == 0
    d = bh_stepup([0.001, 0.02, 0.9], 0.05, 0.5)
    assert list(d.decisions) == [True, True, False]
    assert d.threshold == pytest.approx(0.05)


def test_stepup_empty_and_bad_level():
    with pytest.raises(DimensionError):
        bh_stepup([], 0.05)
    with pytest.raises(DomainError):
        bh_stepup([0.1], 1.5)
    with pytest.raises(DomainError):
        bh_stepup([0.1], 0.05, 0.0)


@given(pvals, st.floats(0.001, 0.5), st.floats(0.01, 1.0))
def test_stepup_matches_oracle(q, alpha, pi0):
    d = bh_stepup(q, alpha, pi0)
    expected, threshold = stepup_oracle(q, alpha, pi0)
    assert list(d.decisions) == expected
    assert d.threshold <= alpha
    if any(expected):
        assert d.threshold == pytest.approx(threshold, rel=1e-12)
    np.testing.assert_array_equal(d.decisions, d.q_values <= d.threshold)
    assert d.n_rejected == sum(expected)


@given(pvals, st.integers(0, 39), st.floats(0.0, 1.0))
def test_stepup_monotone_in_each_statistic(q, j, bump):
    j = j % q.size
    before = bh_stepup(q, 0.05).n_rejected
    raised = q.copy()
    raised[j] = min(1.0, raised[j] + bump)
    assert bh_stepup(raised, 0.05).n_rejected <= before


@given(pvals)
def test_stepup_order_independent(q):
    perm = np.random.default_rng(0).permutation(q.size)
    a = bh_stepup(q, 0.05).decisions
    b = bh_stepup(q[perm], 0.05).decisions
    np.testing.assert_array_equal(a[perm], b)


# pi0 estimators


def test_storey_examples():
    assert storey_pi0(np.ones(100), 0.5) == 1.0
    q = [0.01, 0.02, 0.03, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0]
    assert storey_pi0(q, 0.5) == 1.0
    assert storey_pi0([0.01] * 9 + [0.99], 0.5) == pytest.approx(0.4)


@given(pvals, st.floats(0.01, 0.99))
def test_storey_matches_oracle(q, kappa):
    assert storey_pi0(q, kappa) == pytest.approx(storey_oracle(q, kappa), rel=1e-12)


def test_prior_pi0_examples():
    assert prior_pi0(np.zeros(5)) == 1.0
    assert prior_pi0([0.2, 0.4]) == pytest.approx(0.7)
    assert prior_pi0(np.ones(3)) == PI0_FLOOR


def test_parse_pi0_mode():
    assert parse_pi0_mode("prior") == ("prior", None)
    assert parse_pi0_mode("storey") == ("storey", 0.5)
    assert parse_pi0_mode("storey:0.05") == ("storey", 0.05)
    assert parse_pi0_mode(0.8) == ("fixed", 0.8)
    for bad in ("storey:2", "storey:x", "nope", 0.0):
        with pytest.raises(DomainError):
            parse_pi0_mode(bad)


# wabh


def test_wabh_hand_example():
    d = wabh([0.04, 0.04, 0.9, 0.9], [2, 2, 0, 0], 0.05, pi0_mode=0.5)
    np.testing.assert_allclose(d.q_values[:2], [0.02, 0.02])
    assert np.all(np.isinf(d.q_values[2:]))
    # k = 2, so the cap is min(0.05, 2 * 0.05 / (0.5 * 4)) = 0.05
    assert d.threshold == pytest.approx(0.05)
    assert list(d.decisions) == [True, True, False, False]
    assert d.impact.frac_inconclusive == 0.5
    assert d.impact.max_weight == 2.0


@given(pvals, st.floats(0.05, 0.95))
def test_unit_weight_reductions(p, kappa):
    w = np.ones(p.size)
    np.testing.assert_array_equal(
        wabh(p, w, 0.05, f"storey:{kappa!r}").decisions, adaptive_bh(p, 0.05, kappa).decisions
    )
    np.testing.assert_array_equal(wabh(p, w, 0.05, 1.0).decisions, bh(p, 0.05).decisions)
    np.testing.assert_array_equal(weighted_bh(p, w).decisions, bh(p).decisions)


@given(
    arrays(float, 12, elements=unit_floats),
    arrays(float, 12, elements=st.floats(0.01, 10.0)),
    st.floats(0.1, 100.0),
)
def test_weight_scale_invariance(p, raw, c):
    a = wabh(p, WeightScheme.normalized(raw), 0.05, 1.0)
    b = wabh(p, WeightScheme.normalized(raw * c), 0.05, 1.0)
    np.testing.assert_array_equal(a.decisions, b.decisions)


def test_wabh_prior_mode_needs_prior():
    with pytest.raises(DomainError):
        wabh([0.1, 0.2], [1, 1], 0.05, "prior")
    with pytest.raises(DimensionError):
        wabh([0.1, 0.2], [1, 1], 0.05, "prior", prior=[0.5])
    d = wabh([0.001, 0.2], [1, 1], 0.05, "prior", prior=[0.5, 0.5])
    assert d.pi0_hat == 0.5


def test_pvalues_validated():
    with pytest.raises(DomainError):
        bh([0.1, 1.5])
    with pytest.raises(InputError):
        bh([0.1, np.nan])


# domain types


def test_weight_scheme_invariants():
    with pytest.raises(DomainError):
        WeightScheme(np.array([1.0, 2.0]))
    with pytest.raises(DomainError):
        WeightScheme(np.array([2.5, -0.5]))
    with pytest.raises(DomainError):
        WeightScheme(np.ones(3), source="made-up")
    s = WeightScheme.normalized([0.0, 1.0, 3.0])
    assert s.weights.mean() == pytest.approx(1.0, abs=1e-12)


def test_weight_impact():
    imp = WeightImpact.from_weights([0.05, 1.0, 1.95], 0.1)
    assert imp.frac_upweighted == pytest.approx(2 / 3)
    assert imp.frac_inconclusive == pytest.approx(1 / 3)
    assert imp.max_weight == 1.95


def test_hypothesis_grid():
    g = HypothesisGrid((3, 4))
    assert g.M == 12 and g.dims == 2
    assert g.coords.shape == (12, 2)
    np.testing.assert_array_equal(g.coords[5], [1, 1])
    g2 = HypothesisGrid.from_coords([[0, 0], [2, 3]])
    assert g2.shape == (3, 4)
    np.testing.assert_array_equal(g2.candidate_ids, [0, 11])
    sub = g.subset(np.arange(12) % 2 == 0)
    assert sub.candidate_ids.size == 6
    with pytest.raises(DimensionError):
        HypothesisGrid((5,))
    with pytest.raises(DimensionError):
        HypothesisGrid((2, 2), np.zeros(4, bool))
    with pytest.raises(InputError):
        HypothesisGrid.from_coords([[0, 0], [5, 5]], shape=(3, 3))
