"""Shared helpers: small random GP models over (x, w) in the unit cube."""

import numpy as np
import pytest

from riskbo.gp import GaussianProcess, Hyperparameters, OutcomeTransform
from riskbo.qmc import make_base_samples
from riskbo.risk import RiskSpec, WSet


def random_gp(rng, dim_x=1, dim_w=1, n=6, noise=1e-2, lengthscale=None):
    """GP with fixed hyperparameters on random data (no fitting involved)."""
    D = dim_x + dim_w
    X = rng.random((n, D))
    y = np.sin(4 * X).sum(axis=1) + 0.1 * rng.standard_normal(n)
    ls = rng.uniform(0.2, 0.6, D) if lengthscale is None else np.full(D, lengthscale)
    hyper = Hyperparameters(ls, float(rng.uniform(0.5, 2.0)), noise)
    otf = OutcomeTransform.fit(y)
    return GaussianProcess(hyper, X, otf.standardize(y), outcome_transform=otf)


def uniform_wset(L, dim_w=1, seed=0):
    rng = np.random.default_rng(seed)
    return WSet.uniform(rng.random((L, dim_w)))


def base_for(wset, K=4, M=8, seed=0, common_paths=True):
    return make_base_samples(K, M, None, "full", seed, wset, common_paths=common_paths)


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cvar_spec():
    return RiskSpec("CVaR", 0.7)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
