import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import rosen, rosen_der

from riskbo.errors import InvalidArgumentError
from riskbo.optimize import OptimizerConfig, lbfgs_box, multistart_maximize, select_restarts


def quadratic(center, scales):
    center = np.asarray(center, dtype=float)
    scales = np.asarray(scales, dtype=float)

    def fun(x):
        d = x - center
        return float(np.sum(scales * d * d)), 2 * scales * d

    return fun


class TestLBFGS:
    def test_interior_quadratic(self):
        fun = quadratic([0.3, 0.6, 0.2], [1.0, 10.0, 100.0])
        res = lbfgs_box(fun, np.full(3, 0.9), np.array([[0.0] * 3, [1.0] * 3]))
        np.testing.assert_allclose(res.x, [0.3, 0.6, 0.2], atol=1e-6)
        assert res.converged

    def test_minimum_outside_box_lands_on_boundary(self):
        fun = quadratic([1.5, -0.5], [1.0, 1.0])
        res = lbfgs_box(fun, np.array([0.5, 0.5]), np.array([[0.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-9)

    def test_rosenbrock(self):
        f = lambda x: (rosen(x), rosen_der(x))  # noqa: E731
        res = lbfgs_box(f, np.array([-1.2, 1.0]), np.array([[-2.0, -2.0], [2.0, 2.0]]), max_iter=500,
                        tolerance=1e-8)
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-4)

    def test_trace_is_monotone(self):
        f = lambda x: (rosen(x), rosen_der(x))  # noqa: E731
        res = lbfgs_box(f, np.array([0.0, 0.0]), np.array([[-2.0, -2.0], [2.0, 2.0]]), max_iter=30)
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        assert len(res.trace) == res.n_iter + 1

    def test_iteration_cap(self):
        f = lambda x: (rosen(x), rosen_der(x))  # noqa: E731
        res = lbfgs_box(f, np.array([-1.2, 1.0]), np.array([[-2.0, -2.0], [2.0, 2.0]]), max_iter=3)
        assert res.n_iter <= 3

    def test_start_outside_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lbfgs_box(quadratic([0], [1]), np.array([2.0]), np.array([[0.0], [1.0]]))

    def test_hook_replaces_first_evaluation(self):
        calls = []

        def fun(x):
            calls.append("fun")
            return quadratic([0.5], [1.0])(x)

        def hook(t, x, f, g):
            calls.append(("hook", t))
            return fun(x) if t == 0 else (f, g)

        lbfgs_box(fun, np.array([0.1]), np.array([[0.0], [1.0]]), max_iter=2, on_iterate=hook)
        assert calls[0] == ("hook", 0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_iterates_stay_feasible(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-1, 2, 3)
        seen = []
        base = quadratic(c, rng.uniform(0.1, 10, 3))

        def fun(x):
            seen.append(x.copy())
            return base(x)

        res = lbfgs_box(fun, rng.random(3), np.array([[0.0] * 3, [1.0] * 3]), max_iter=50)
        pts = np.array(seen)
        assert pts.min() >= 0 and pts.max() <= 1
        np.testing.assert_allclose(res.x, np.clip(c, 0, 1), atol=1e-5)


class TestRestarts:
    def test_equal_scores_select_uniformly(self):
        rng = np.random.default_rng(0)
        counts = np.zeros(10)
        for _ in range(4000):
            counts[select_restarts(np.ones(10), 1, 1.0, rng)] += 1
        # chi-square goodness of fit against uniform, 9 dof, 0.999 quantile ~ 27.9
        chi2 = np.sum((counts - 400) ** 2 / 400)
        assert chi2 < 27.9

    def test_higher_scores_preferred(self):
        rng = np.random.default_rng(1)
        scores = np.arange(20.0)
        picks = np.concatenate([select_restarts(scores, 3, 2.0, rng) for _ in range(500)])
        assert np.mean(picks) > 12

    def test_without_replacement_and_finite_only(self):
        scores = np.array([1.0, np.nan, 2.0, -np.inf, 3.0, 0.5])
        idx = select_restarts(scores, 3, 1.0, np.random.default_rng(2))
        assert len(set(idx.tolist())) == 3
        assert 1 not in idx and 3 not in idx

    def test_all_nonfinite(self):
        with pytest.raises(InvalidArgumentError):
            select_restarts(np.array([np.nan, np.nan]), 1)


class TestMultistart:
    def test_finds_concave_peak(self):
        peak = np.array([0.71, 0.23])

        def fun(x):
            d = x - peak
            return -float(d @ d), -2 * d

        for seed in range(20):
            res = multistart_maximize(fun, np.array([[0.0, 0.0], [1.0, 1.0]]), 3, 64,
                                      rng=np.random.default_rng(seed))
            np.testing.assert_allclose(res.x, peak, atol=1e-5)

    def test_finds_global_of_multimodal(self):
        def fun(x):
            v = np.sin(12 * x[0]) + 0.5 * x[0]
            return float(v), np.array([12 * np.cos(12 * x[0]) + 0.5])

        res = multistart_maximize(fun, np.array([[0.0], [1.0]]), 5, 100, rng=np.random.default_rng(0))
        grid = np.linspace(0, 1, 100001)
        assert res.value >= np.max(np.sin(12 * grid) + 0.5 * grid) - 1e-6

    def test_extra_starts_used(self):
        fun = lambda x: (-float(np.sum((x - 0.5) ** 2)), -2 * (x - 0.5))  # noqa: E731
        res = multistart_maximize(fun, np.array([[0.0], [1.0]]), 1, 4, rng=np.random.default_rng(0),
                                  extra_starts=np.array([[0.5]]))
        assert res.starts.shape[0] == 2

    def test_restarts_cannot_exceed_raw(self):
        with pytest.raises(InvalidArgumentError):
            multistart_maximize(lambda x: (0.0, x), np.array([[0.0], [1.0]]), 5, 4)


def test_config_defaults_scale_with_dimension():
    cfg = OptimizerConfig.defaults(2, 2)
    assert cfg.restarts == 40 and cfg.raw_samples == 2000
    assert cfg.inner_restarts == 10 and cfg.inner_raw == 100
    with pytest.raises(InvalidArgumentError):
        OptimizerConfig(q2=0)
