import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskbo.errors import InvalidArgumentError
from riskbo.risk import (
    RiskSpec,
    UniformBox,
    WSet,
    empirical_cvar,
    empirical_var,
    risk_coefficients,
    risk_values,
)


def sort_var(y, p, alpha):
    """Reference VaR by explicit sorting and a Python loop."""
    order = sorted(range(len(y)), key=lambda i: (y[i], i))
    cum = 0.0
    for i in order:
        cum += p[i]
        if p[i] > 0 and cum >= alpha - 1e-12:
            return y[i]
    raise AssertionError("unreachable")


def sort_cvar(y, p, alpha):
    order = sorted(range(len(y)), key=lambda i: (y[i], i))
    cum = 0.0
    for pos, i in enumerate(order):
        cum += p[i]
        if p[i] > 0 and cum >= alpha - 1e-12:
            tail = order[pos:]
            return sum(p[j] * y[j] for j in tail) / sum(p[j] for j in tail)
    raise AssertionError("unreachable")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 30), elements=finite)
levels = st.floats(0.0, 0.99)


class TestEmpiricalExamples:
    def test_var_of_ten_values(self):
        y = np.arange(1.0, 11.0)
        assert empirical_var(y, alpha=0.7).value == 7.0

    def test_cvar_of_ten_values(self):
        # top L - ceil(L alpha) + 1 = 4 order statistics
        y = np.arange(1.0, 11.0)
        assert empirical_cvar(y, alpha=0.7).value == pytest.approx(8.5)

    def test_weighted_var(self):
        y = np.array([3.0, 1.0, 2.0])
        p = np.array([0.5, 0.2, 0.3])
        assert empirical_var(y, p, alpha=0.4).value == 2.0
        assert empirical_var(y, p, alpha=0.51).value == 3.0

    def test_cvar_at_zero_is_weighted_mean(self):
        y = np.array([3.0, 1.0, 2.0])
        p = np.array([0.5, 0.2, 0.3])
        assert empirical_cvar(y, p, alpha=0.0).value == pytest.approx(p @ y, abs=1e-15)

    def test_zero_weight_points_never_chosen(self):
        y = np.array([0.0, 5.0, 7.0])
        p = np.array([0.0, 0.5, 0.5])
        assert empirical_var(y, p, alpha=0.0).value == 5.0

    def test_ties_resolved_by_index(self):
        y = np.array([1.0, 1.0, 1.0, 2.0])
        _, order = risk_coefficients(y, np.full(4, 0.25), 0.5, "VaR")
        assert order.tolist() == [0, 1, 2, 3]


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidArgumentError):
            empirical_var(np.ones(3), np.array([0.5, 0.5, 0.5]), 0.5)

    def test_negative_weight(self):
        with pytest.raises(InvalidArgumentError):
            WSet(np.zeros((2, 1)), np.array([1.5, -0.5]))

    def test_empty_samples(self):
        with pytest.raises(InvalidArgumentError):
            empirical_cvar(np.array([]), alpha=0.5)

    @pytest.mark.parametrize("kind,alpha", [("VaR", 0.0), ("VaR", 1.0), ("CVaR", 1.0), ("CVaR", -0.1)])
    def test_level_ranges(self, kind, alpha):
        with pytest.raises(InvalidArgumentError):
            RiskSpec(kind, alpha)

    def test_kind_normalized(self):
        assert RiskSpec("cvar", 0.5).kind == "CVaR"
        with pytest.raises(InvalidArgumentError):
            RiskSpec("mean", 0.5)

    def test_box(self):
        with pytest.raises(InvalidArgumentError):
            UniformBox([0.0], [0.0])


class TestSortOracle:
    @settings(max_examples=200, deadline=None)
    @given(y=vectors, alpha=levels, seed=st.integers(0, 2**32 - 1))
    def test_matches_sort_reference(self, y, alpha, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(y.size))
        if rng.random() < 0.5:
            y = np.round(y / 1e5) * 1e5  # induce ties
        p = p / p.sum()
        assert empirical_var(y, p, alpha).value == sort_var(y, p, alpha)
        assert empirical_cvar(y, p, alpha).value == pytest.approx(sort_cvar(y, p, alpha), rel=1e-12, abs=1e-9)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(y=vectors, alpha=levels)
    def test_bounded_by_extremes(self, y, alpha):
        for fn in (empirical_var, empirical_cvar):
            v = fn(y, alpha=alpha).value
            assert y.min() <= v <= y.max()

    @settings(max_examples=100, deadline=None)
    @given(y=vectors, alpha=levels)
    def test_cvar_dominates_var(self, y, alpha):
        assert empirical_cvar(y, alpha=alpha).value >= empirical_var(y, alpha=alpha).value - 1e-9 * (1 + abs(y).max())

    @settings(max_examples=100, deadline=None)
    @given(y=vectors, a=levels, b=levels)
    def test_monotone_in_level(self, y, a, b):
        lo, hi = min(a, b), max(a, b)
        tol = 1e-9 * (1 + abs(y).max())
        assert empirical_var(y, alpha=lo).value <= empirical_var(y, alpha=hi).value
        assert empirical_cvar(y, alpha=lo).value <= empirical_cvar(y, alpha=hi).value + tol

    @settings(max_examples=100, deadline=None)
    @given(y=vectors, alpha=levels, shift=st.floats(-100, 100), scale=st.floats(0.01, 100))
    def test_translation_and_scale_equivariance(self, y, alpha, shift, scale):
        tol = 1e-7 * (1 + abs(shift) + scale * abs(y).max())
        for fn in (empirical_var, empirical_cvar):
            v = fn(y, alpha=alpha).value
            assert fn(scale * y + shift, alpha=alpha).value == pytest.approx(scale * v + shift, abs=tol)

    @settings(max_examples=100, deadline=None)
    @given(y=vectors, alpha=levels, seed=st.integers(0, 1000))
    def test_permutation_invariance(self, y, alpha, seed):
        perm = np.random.default_rng(seed).permutation(y.size)
        assert empirical_var(y[perm], alpha=alpha).value == empirical_var(y, alpha=alpha).value
        assert empirical_cvar(y[perm], alpha=alpha).value == pytest.approx(
            empirical_cvar(y, alpha=alpha).value, rel=1e-12, abs=1e-9)


class TestBatched:
    @pytest.mark.parametrize("kind", ["VaR", "CVaR"])
    def test_values_match_coefficients(self, kind, rng):
        y = rng.standard_normal((3, 5, 7))
        y[0, 0, :3] = 0.5
        p = rng.dirichlet(np.ones(7))
        coef, _ = risk_coefficients(y, p, 0.6, kind)
        np.testing.assert_allclose(risk_values(y, p, 0.6, kind), np.sum(coef * y, -1), atol=1e-14)

    def test_cvar_coefficients_are_a_distribution(self, rng):
        y = rng.standard_normal((20, 9))
        coef, _ = risk_coefficients(y, np.full(9, 1 / 9), 0.3, "CVaR")
        assert np.all(coef >= 0)
        np.testing.assert_allclose(coef.sum(-1), 1.0, atol=1e-14)

    def test_single_batch_row_matches_scalar(self, rng):
        y = rng.standard_normal((4, 6))
        vals = risk_values(y, np.full(6, 1 / 6), 0.5, "CVaR")
        for row, v in zip(y, vals):
            assert v == pytest.approx(empirical_cvar(row, alpha=0.5).value, abs=1e-14)


def test_monte_carlo_variance_shrinks_with_draws():
    from conftest import base_for, random_gp, uniform_wset
    from riskbo.risk import posterior_risk

    gp = random_gp(np.random.default_rng(3))
    ws = uniform_wset(8)
    spec = RiskSpec("CVaR", 0.5)
    sds = []
    for M in (16, 256):
        est = [posterior_risk(gp, [0.4], spec, base_for(ws, K=1, M=M, seed=s))[0] for s in range(20)]
        sds.append(np.std(est))
    assert sds[1] < sds[0]
    assert math.isfinite(sds[0])
