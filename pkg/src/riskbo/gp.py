"""Exact Gaussian-process regression over the joint (x, w) unit cube.

The model works in normalized coordinates: inputs in ``[0, 1]^D`` and
standardized outcomes.  Public quantities (means, covariances, fantasy
targets, risk values) are returned in raw outcome units; gradients are taken
with respect to unit-cube coordinates.

Besides the usual posterior, the module provides the batched "joint
posterior" used by the risk and acquisition code: for decision points
``x_1..x_B`` and environmental points ``w_1..w_L`` it returns the posterior
mean and Cholesky factor of ``F(x_b, w_{1:L})`` for the current model or for
fantasy models conditioned on one hypothetical observation, together with
derivatives with respect to ``x_b`` and the fantasy candidate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import InvalidArgumentError, NumericalError

SQRT5 = math.sqrt(5.0)
BASE_JITTER = 1e-9
MAX_JITTER_ESCALATIONS = 4
# A candidate whose predictive variance is within this multiple of the
# diagonal jitter carries no information; its fantasies equal the parent.
UNINFORMATIVE_FACTOR = 100.0
FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# hyperparameters, priors, transforms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparameters:
    lengthscales: np.ndarray
    outputscale: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "outputscale", float(self.outputscale))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise InvalidArgumentError(f"lengthscales must be positive and finite, got {ls}")
        if not (self.outputscale > 0 and math.isfinite(self.outputscale)):
            raise InvalidArgumentError(f"outputscale must be positive, got {self.outputscale}")
        if not (self.noise_variance >= 0 and math.isfinite(self.noise_variance)):
            raise InvalidArgumentError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def dim(self):
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior on a positive hyperparameter."""

    shape: float
    rate: float

    def log_density(self, value):
        a, b = self.shape, self.rate
        return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(value) - b * value

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


@dataclass(frozen=True)
class GPPriors:
    lengthscale: GammaPrior = GammaPrior(3.0, 6.0)
    outputscale: GammaPrior = GammaPrior(2.0, 0.15)
    noise: GammaPrior = GammaPrior(1.1, 0.05)


# log-space box for the MAP search
LENGTHSCALE_BOUNDS = (1e-2, 1e2)
OUTPUTSCALE_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-6, 10.0)


@dataclass(frozen=True)
class InputTransform:
    """Per-dimension affine map between the raw domain and the unit cube."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidArgumentError("input bounds must satisfy lower < upper elementwise")

    @classmethod
    def unit(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self):
        return self.lower.shape[0]

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)


@dataclass(frozen=True)
class OutcomeTransform:
    """Affine standardization ``y_std = (y - mean) / std``."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, y):
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            return cls()
        sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if not sd > 0 or not math.isfinite(sd):
            sd = 1.0
        return cls(float(np.mean(y)), sd)

    def standardize(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def unstandardize(self, y):
        return self.mean + self.std * np.asarray(y, dtype=float)


# --------------------------------------------------------------------------
# kernel
# --------------------------------------------------------------------------


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("inputs must be finite")


def kernel_matern52(a, b, hyper):
    """Matern-5/2 ARD covariance between two points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    _check_finite(a, b)
    r = float(np.sqrt(np.sum(((a - b) / hyper.lengthscales) ** 2)))
    return hyper.outputscale * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * math.exp(-SQRT5 * r)


def _matern_parts(A, B, lengthscales, outputscale):
    """Kernel matrix and the radial factor ``G`` with ``dk/da_d = G (a_d - b_d) / l_d^2``."""
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    r = np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))
    e = np.exp(-SQRT5 * r)
    K = outputscale * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    G = -(5.0 / 3.0) * outputscale * (1.0 + SQRT5 * r) * e
    return K, G


def matern52_matrix(A, B, hyper):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return _matern_parts(A, B, hyper.lengthscales, hyper.outputscale)[0]


def _kernel_grad_first(A, B, lengthscales, outputscale, dims):
    """Kernel matrix and ``d k(a, b) / d a_d`` for ``d`` in ``dims``: shape (nA, nB, len(dims))."""
    K, G = _matern_parts(A, B, lengthscales, outputscale)
    dk = G[..., None] * (A[:, None, dims] - B[None, :, dims]) / lengthscales[dims] ** 2
    return K, dk


# --------------------------------------------------------------------------
# Cholesky helpers
# --------------------------------------------------------------------------


def cholesky_jitter(A, base, name="covariance"):
    """Lower Cholesky factor of ``A + jitter I`` following the jitter schedule.

    Starts at ``base``; multiplies by 10 on failure, at most four times.

    Returns
    -------
    (L, jitter) : (ndarray, float)
    """
    n = A.shape[-1]
    jitter = base
    eye = np.eye(n)
    for _ in range(MAX_JITTER_ESCALATIONS + 1):
        try:
            Lc = np.linalg.cholesky(A + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            continue
        if np.all(np.isfinite(Lc)):
            return Lc, jitter
        jitter *= 10.0
    raise NumericalError(
        f"Cholesky factorization of the {name} matrix failed after {MAX_JITTER_ESCALATIONS} jitter escalations "
        f"(final jitter {jitter / 10.0:.3g})",
        matrix_name=name,
    )


def cholesky_derivative(C, dS):
    """Forward-mode derivative of the Cholesky factor.

    ``dC = C Phi(C^-1 dS C^-T)`` where ``Phi`` keeps the lower triangle and
    halves the diagonal.

    Parameters
    ----------
    C : ndarray (..., L, L)
    dS : ndarray (..., P, L, L)
        One symmetric perturbation per direction ``P``.
    """
    Cinv = np.linalg.inv(C)
    X = Cinv[..., None, :, :] @ dS @ np.swapaxes(Cinv, -1, -2)[..., None, :, :]
    X = np.tril(X)
    idx = np.arange(C.shape[-1])
    X[..., idx, idx] *= 0.5
    return C[..., None, :, :] @ X


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


class GaussianProcess:
    """Zero-mean (standardized) GP with a Matern-5/2 ARD kernel.

    Instances are immutable after construction.

    Parameters
    ----------
    hyper : Hyperparameters
    train_inputs : array (n, D)
        Unit-cube training inputs.
    train_targets : array (n,)
        Standardized targets.
    input_transform, outcome_transform : optional
        Raw-domain maps stored with the model.
    """

    def __init__(self, hyper, train_inputs, train_targets, input_transform=None, outcome_transform=None):
        X = np.asarray(train_inputs, dtype=float).reshape(-1, hyper.dim)
        y = np.asarray(train_targets, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise InvalidArgumentError("train_inputs and train_targets disagree in length")
        _check_finite(X, y)
        self.hyper = hyper
        self.train_inputs = X
        self.train_targets = y
        self.input_transform = input_transform or InputTransform.unit(hyper.dim)
        self.outcome_transform = outcome_transform or OutcomeTransform()
        self.jitter = BASE_JITTER * hyper.outputscale
        if X.shape[0]:
            A = self._prior_cov(X, X) + hyper.noise_variance * np.eye(X.shape[0])
            self.chol_factor, self.jitter = cholesky_jitter(A, self.jitter, "training covariance A_n")
            self.alpha_vector = sla.cho_solve((self.chol_factor, True), y)
        else:
            self.chol_factor = np.zeros((0, 0))
            self.alpha_vector = np.zeros(0)
        for a in (self.train_inputs, self.train_targets, self.chol_factor, self.alpha_vector):
            a.setflags(write=False)

    # basic geometry -------------------------------------------------------

    @property
    def dim(self):
        return self.hyper.dim

    @property
    def n(self):
        return self.train_inputs.shape[0]

    @property
    def noise_effective(self):
        """Diagonal added for an observation: noise variance plus jitter (standardized)."""
        return self.hyper.noise_variance + self.jitter

    def _prior_cov(self, A, B):
        return _matern_parts(A, B, self.hyper.lengthscales, self.hyper.outputscale)[0]

    def _solve_lower(self, B):
        if self.n == 0:
            return np.zeros((0,) + B.shape[1:])
        return sla.solve_triangular(self.chol_factor, B, lower=True, check_finite=False)

    # standardized posterior ---------------------------------------------

    def _posterior_std(self, Q):
        Kqx = self._prior_cov(Q, self.train_inputs)
        mean = Kqx @ self.alpha_vector
        V = self._solve_lower(Kqx.T)
        cov = self._prior_cov(Q, Q) - V.T @ V
        return mean, cov

    def posterior(self, query):
        """Posterior mean and covariance (raw outcome units) at unit-cube points."""
        Q = np.atleast_2d(np.asarray(query, dtype=float))
        _check_finite(Q)
        mean, cov = self._posterior_std(Q)
        sd = self.outcome_transform.std
        return self.outcome_transform.unstandardize(mean), sd * sd * cov

    @property
    def raw_targets(self):
        return self.outcome_transform.unstandardize(self.train_targets)

    def __repr__(self):
        return (
            f"GaussianProcess(n={self.n}, dim={self.dim}, lengthscales={np.round(self.hyper.lengthscales, 4)}, "
            f"outputscale={self.hyper.outputscale:.4g}, noise={self.hyper.noise_variance:.3g})"
        )


def posterior(gp, query):
    """Exact posterior mean vector and covariance matrix at ``query``."""
    return gp.posterior(query)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def _pack(hyper, fit_noise):
    theta = list(np.log(hyper.lengthscales)) + [math.log(hyper.outputscale)]
    if fit_noise:
        theta.append(math.log(max(hyper.noise_variance, NOISE_BOUNDS[0])))
    return np.asarray(theta)


def _unpack(theta, dim, fixed_noise):
    ls = np.exp(theta[:dim])
    os_ = float(np.exp(theta[dim]))
    noise = float(np.exp(theta[dim + 1])) if fixed_noise is None else fixed_noise
    return ls, os_, noise


def _neg_log_posterior(theta, X, y, fixed_noise, priors):
    n, dim = X.shape
    ls, os_, noise = _unpack(theta, dim, fixed_noise)
    diff = (X[:, None, :] - X[None, :, :]) / ls
    sq = diff * diff
    r = np.sqrt(np.maximum(sq.sum(-1), 0.0))
    e = np.exp(-SQRT5 * r)
    K = os_ * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    A = K + noise * np.eye(n)
    try:
        Lc, _ = cholesky_jitter(A, BASE_JITTER * os_, "training covariance A_n")
    except NumericalError:
        return 1e25, np.zeros_like(theta)
    alpha = sla.cho_solve((Lc, True), y)
    nll = 0.5 * y @ alpha + np.log(np.diag(Lc)).sum() + 0.5 * n * math.log(2 * math.pi)
    Ainv = sla.cho_solve((Lc, True), np.eye(n))
    W = Ainv - np.outer(alpha, alpha)
    grad = np.empty_like(theta)
    H = (5.0 / 3.0) * os_ * (1.0 + SQRT5 * r) * e
    for d in range(dim):
        grad[d] = 0.5 * np.sum(W * (H * sq[..., d]))
    grad[dim] = 0.5 * np.sum(W * K)
    # log prior (priors on the parameter, chain rule through the log)
    lp = sum(priors.lengthscale.log_density(v) for v in ls) + priors.outputscale.log_density(os_)
    grad[:dim] -= (priors.lengthscale.shape - 1.0) - priors.lengthscale.rate * ls
    grad[dim] -= (priors.outputscale.shape - 1.0) - priors.outputscale.rate * os_
    if fixed_noise is None:
        grad[dim + 1] = 0.5 * np.trace(W) * noise
        lp += priors.noise.log_density(noise)
        grad[dim + 1] -= (priors.noise.shape - 1.0) - priors.noise.rate * noise
    return nll - lp, grad


def fit_map(
    inputs,
    targets,
    *,
    bounds=None,
    fixed_noise=None,
    q1=100,
    restarts=5,
    seed=0,
    priors=None,
    init=None,
):
    """Fit a GP by maximum a posteriori hyperparameter estimation.

    Parameters
    ----------
    inputs : array (n, D)
        Training inputs in the raw domain described by ``bounds`` (the unit
        cube when ``bounds`` is None).
    targets : array (n,)
        Raw outcomes; standardized internally.
    bounds : array (2, D), optional
    fixed_noise : float, optional
        Known observation noise variance in raw outcome units; not optimized.
    q1 : int
        L-BFGS iteration cap per restart.
    restarts : int
        Starting points drawn from the hyperparameter priors.
    seed : int
    priors : GPPriors, optional
    init : Hyperparameters, optional
        Extra warm start tried before the prior draws.

    Returns
    -------
    GaussianProcess
    """
    X_raw = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(targets, dtype=float).reshape(-1)
    if X_raw.shape[0] < 2:
        raise InvalidArgumentError("fit_map needs at least 2 observations")
    if X_raw.shape[0] != y_raw.shape[0]:
        raise InvalidArgumentError("inputs and targets disagree in length")
    _check_finite(X_raw, y_raw)
    dim = X_raw.shape[1]
    tf = InputTransform.unit(dim) if bounds is None else InputTransform(bounds[0], bounds[1])
    X = tf.to_unit(X_raw)
    if np.any(X < -1e-9) or np.any(X > 1 + 1e-9):
        raise InvalidArgumentError("inputs lie outside the declared bounds")
    otf = OutcomeTransform.fit(y_raw)
    y = otf.standardize(y_raw)
    priors = priors or GPPriors()
    fixed_std = None if fixed_noise is None else float(fixed_noise) / otf.std**2
    fit_noise = fixed_std is None

    lb = [math.log(LENGTHSCALE_BOUNDS[0])] * dim + [math.log(OUTPUTSCALE_BOUNDS[0])]
    ub = [math.log(LENGTHSCALE_BOUNDS[1])] * dim + [math.log(OUTPUTSCALE_BOUNDS[1])]
    if fit_noise:
        lb.append(math.log(NOISE_BOUNDS[0]))
        ub.append(math.log(NOISE_BOUNDS[1]))
    lb, ub = np.asarray(lb), np.asarray(ub)

    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        starts.append(_pack(init, fit_noise))
    for _ in range(int(restarts)):
        ls0 = priors.lengthscale.sample(rng, dim)
        os0 = priors.outputscale.sample(rng)
        noise0 = priors.noise.sample(rng) if fit_noise else 0.0
        starts.append(_pack(Hyperparameters(ls0, os0, noise0), fit_noise))
    if not starts:
        raise InvalidArgumentError("need at least one restart or an init")

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        theta0 = np.clip(theta0, lb, ub)
        res = minimize(
            _neg_log_posterior,
            theta0,
            args=(X, y, fixed_std, priors),
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lb, ub)),
            options={"maxiter": int(q1)},
        )
        val = float(res.fun)
        if np.isfinite(val) and val < best_val:
            best_theta, best_val = np.asarray(res.x), val
    if best_theta is None:
        raise NumericalError("every MAP restart failed", matrix_name="training covariance A_n")
    ls, os_, noise = _unpack(best_theta, dim, fixed_std)
    hyper = Hyperparameters(ls, os_, noise)
    return GaussianProcess(hyper, X, y, tf, otf)


# --------------------------------------------------------------------------
# fantasies
# --------------------------------------------------------------------------


class FantasyModel:
    """The GP conditioned on one hypothetical observation at ``candidate``.

    The conditioned model is obtained by extending the parent's Cholesky
    factor by one row (O(n^2)).  ``index`` is the fantasy's 1-based position
    among its siblings; it selects the matching row of a base-sample set.
    """

    def __init__(self, parent, candidate, z0, index=1):
        c = np.asarray(candidate, dtype=float).reshape(-1)
        if c.shape[0] != parent.dim:
            raise InvalidArgumentError("candidate dimension does not match the model")
        _check_finite(c)
        self.parent = parent
        self.candidate = c
        self.z0 = float(z0)
        self.index = int(index)
        kxc = parent._prior_cov(parent.train_inputs, c[None, :])[:, 0]
        lvec = parent._solve_lower(kxc)
        var = max(parent.hyper.outputscale - float(lvec @ lvec), 0.0)
        self.predictive_var = var + parent.hyper.noise_variance
        self.uninformative = self.predictive_var <= UNINFORMATIVE_FACTOR * parent.jitter
        mean_c = float(kxc @ parent.alpha_vector)
        y_std = mean_c + math.sqrt(self.predictive_var) * self.z0
        self.fantasy_target = float(parent.outcome_transform.unstandardize(y_std))
        self._y_std = y_std
        if self.uninformative:
            self.chol_factor = parent.chol_factor
            self.alpha_vector = parent.alpha_vector
            self.train_inputs = parent.train_inputs
            return
        d = math.sqrt(var + parent.noise_effective)
        n = parent.n
        Lnew = np.zeros((n + 1, n + 1))
        Lnew[:n, :n] = parent.chol_factor
        Lnew[n, :n] = lvec
        Lnew[n, n] = d
        self.chol_factor = Lnew
        self.train_inputs = np.vstack([parent.train_inputs, c[None, :]])
        y = np.append(parent.train_targets, y_std)
        self.alpha_vector = sla.cho_solve((Lnew, True), y)

    @property
    def dim(self):
        return self.parent.dim

    @property
    def hyper(self):
        return self.parent.hyper

    @property
    def outcome_transform(self):
        return self.parent.outcome_transform

    def posterior(self, query):
        """Posterior of the conditioned model (raw units)."""
        if self.uninformative:
            return self.parent.posterior(query)
        Q = np.atleast_2d(np.asarray(query, dtype=float))
        _check_finite(Q)
        Kqx = self.parent._prior_cov(Q, self.train_inputs)
        mean = Kqx @ self.alpha_vector
        V = sla.solve_triangular(self.chol_factor, Kqx.T, lower=True, check_finite=False)
        cov = self.parent._prior_cov(Q, Q) - V.T @ V
        sd = self.outcome_transform.std
        return self.outcome_transform.unstandardize(mean), sd * sd * cov


def candidate_informative(gp, candidate):
    """False when a fantasy at ``candidate`` cannot change the posterior.

    That is the case when the predictive variance ``Sigma_n(c, c) + sigma^2``
    is at jitter level, e.g. a noise-free repeat of an observed point.
    """
    c = np.asarray(candidate, dtype=float).reshape(1, -1)
    vc = gp._solve_lower(gp._prior_cov(c, gp.train_inputs)[0])
    var = max(gp.hyper.outputscale - float(vc @ vc), 0.0)
    return var + gp.hyper.noise_variance > UNINFORMATIVE_FACTOR * gp.jitter


def fantasize(gp, candidate, z0_samples):
    """One :class:`FantasyModel` per base sample in ``z0_samples``."""
    z0 = np.atleast_1d(np.asarray(z0_samples, dtype=float))
    _check_finite(z0)
    return [FantasyModel(gp, candidate, z, index=i + 1) for i, z in enumerate(z0)]


# --------------------------------------------------------------------------
# batched joint posterior with derivatives
# --------------------------------------------------------------------------


@dataclass
class QueryBlock:
    """Current-model quantities on the grid ``{(x_b, w_l)}``, in standardized units.

    Candidate-independent, so acquisition code caches one block per inner
    point set and reuses it for every candidate.
    """

    xs: np.ndarray
    wpts: np.ndarray
    points: np.ndarray
    mean: np.ndarray  # (B, L)
    V: np.ndarray  # (n, B*L): L_n^{-1} k(X, q)
    cov: np.ndarray  # (B, L, L)
    dmean_x: np.ndarray | None = None  # (B, L, dX)
    dV_x: np.ndarray | None = None  # (n, B*L, dX)
    dcov_x: np.ndarray | None = None  # (B, dX, L, L)

    @property
    def B(self):
        return self.xs.shape[0]

    @property
    def L(self):
        return self.wpts.shape[0]


def query_block(gp, xs, wpts, grad_x=False):
    """Current posterior on ``(x_b, w_l)`` pairs; see :class:`QueryBlock`."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    wpts = np.asarray(wpts, dtype=float)
    if wpts.ndim != 2:
        wpts = wpts.reshape(-1, gp.dim - xs.shape[1])
    if xs.shape[1] + wpts.shape[1] != gp.dim:
        raise InvalidArgumentError("query dimensions do not match the model")
    _check_finite(xs, wpts)
    B, dX = xs.shape
    L = wpts.shape[0]
    Q = np.concatenate([np.repeat(xs, L, axis=0), np.tile(wpts, (B, 1))], axis=1)
    ls, os_ = gp.hyper.lengthscales, gp.hyper.outputscale
    n = gp.n
    # prior block between (x, w_l) and (x, w_m) does not depend on x
    Kww = _matern_parts(wpts, wpts, ls[dX:], os_)[0] if L else np.zeros((0, 0))
    if n:
        if grad_x:
            Kqx, dK = _kernel_grad_first(Q, gp.train_inputs, ls, os_, np.arange(dX))
        else:
            Kqx = gp._prior_cov(Q, gp.train_inputs)
        mean = (Kqx @ gp.alpha_vector).reshape(B, L)
        V = gp._solve_lower(Kqx.T)
        Vb = V.reshape(n, B, L).transpose(1, 0, 2)
        cov = Kww[None] - np.einsum("bnl,bnm->blm", Vb, Vb)
    else:
        mean = np.zeros((B, L))
        V = np.zeros((0, B * L))
        cov = np.broadcast_to(Kww, (B, L, L)).copy()
    block = QueryBlock(xs, wpts, Q, mean, V, cov)
    if grad_x:
        if n:
            block.dmean_x = np.einsum("qnd,n->qd", dK, gp.alpha_vector).reshape(B, L, dX)
            dV = gp._solve_lower(dK.transpose(1, 0, 2).reshape(n, B * L * dX)).reshape(n, B * L, dX)
            block.dV_x = dV
            dVb = dV.reshape(n, B, L, dX).transpose(1, 3, 0, 2)  # (B, dX, n, L)
            t = np.einsum("bpnl,bnm->bplm", dVb, Vb)
            block.dcov_x = -(t + np.swapaxes(t, -1, -2))
        else:
            block.dmean_x = np.zeros((B, L, dX))
            block.dV_x = np.zeros((0, B * L, dX))
            block.dcov_x = np.zeros((B, dX, L, L))
    return block


@dataclass
class JointPosterior:
    """Posterior of ``F(x_b, w_{1:L})`` for K models (raw outcome units).

    Attributes
    ----------
    mean : (K, B, L)
    cov, chol : (B, L, L)
        Shared by every fantasy (the fantasy covariance does not depend on
        the fantasy draw).
    dmean_x : (K, B, L, dX) or None
    dchol_x : (B, dX, L, L) or None
    dmean_c : (K, B, L, D) or None
    dchol_c : (B, D, L, L) or None
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    dmean_x: np.ndarray | None = None
    dchol_x: np.ndarray | None = None
    dmean_c: np.ndarray | None = None
    dchol_c: np.ndarray | None = None
    dcov_x: np.ndarray | None = None
    dcov_c: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _factor(cov, jitter, name):
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[-1])), jitter
    except np.linalg.LinAlgError:
        pass
    # batched failure: escalate per block so well-conditioned blocks keep the base jitter
    out = np.empty_like(cov)
    flat_in = cov.reshape(-1, cov.shape[-2], cov.shape[-1])
    flat_out = out.reshape(flat_in.shape)
    used = jitter
    for i in range(flat_in.shape[0]):
        flat_out[i], j = cholesky_jitter(flat_in[i], jitter, name)
        used = max(used, j)
    return out, used


def joint_posterior(gp, block, candidate=None, z0=None, grad_x=False, grad_c=False, need_chol=True):
    """Joint posterior of ``F(x_b, w_{1:L})`` under the current model or fantasies.

    Parameters
    ----------
    gp : GaussianProcess
    block : QueryBlock
        Built with ``grad_x=True`` when ``grad_x`` is requested.
    candidate : array (D,), optional
        Fantasy candidate ``(x, w)``; None gives the current model (K = 1).
    z0 : array (K,), optional
        Fantasy base samples.
    grad_x, grad_c : bool
        Derivatives with respect to the decision points / the candidate.

    Returns
    -------
    JointPosterior
    """
    B, L = block.B, block.L
    dX = block.xs.shape[1]
    D = gp.dim
    mean = block.mean[None]
    cov = block.cov
    dmean_x = block.dmean_x[None] if grad_x else None
    dcov_x = block.dcov_x if grad_x else None
    dmean_c = dcov_c = None
    informative = False
    if candidate is not None:
        c = np.asarray(candidate, dtype=float).reshape(-1)
        z = np.atleast_1d(np.asarray(z0, dtype=float))
        K = z.shape[0]
        ls, os_ = gp.hyper.lengthscales, gp.hyper.outputscale
        if grad_c:
            kxc, dkxc = _kernel_grad_first(c[None, :], gp.train_inputs, ls, os_, np.arange(D))
            kxc, dkxc = kxc[0], dkxc[0]  # (n,), (n, D): derivative in c
        else:
            kxc = gp._prior_cov(c[None, :], gp.train_inputs)[0]
        vc = gp._solve_lower(kxc)
        var = max(os_ - float(vc @ vc), 0.0)
        informative = var + gp.hyper.noise_variance > UNINFORMATIVE_FACTOR * gp.jitter
        if informative:
            # exact conditioning on y = mu(c) + sqrt(var + noise) z, observed with
            # the same diagonal jitter the training data carry
            denom = var + gp.noise_effective
            pred_sd = math.sqrt(var + gp.hyper.noise_variance)
            gain = pred_sd / denom
            if grad_x:
                kqc, dkq = _kernel_grad_first(block.points, c[None, :], ls, os_, np.arange(dX))
                kqc, dkq = kqc[:, 0], dkq[:, 0, :]  # (BL,), (BL, dX): derivative in q
            else:
                kqc = gp._prior_cov(block.points, c[None, :])[:, 0]
            s = kqc - block.V.T @ vc  # (BL,)
            sb = s.reshape(B, L)
            mean = block.mean[None] + (z[:, None, None] * gain) * sb[None]
            cov = block.cov - sb[:, :, None] * sb[:, None, :] / denom
            if grad_x:
                ds = dkq - np.einsum("nqd,n->qd", block.dV_x, vc)  # (BL, dX)
                dsb = ds.reshape(B, L, dX)
                dmean_x = block.dmean_x[None] + (z[:, None, None, None] * gain) * dsb[None]
                t = np.einsum("blp,bm->bplm", dsb, sb)
                dcov_x = block.dcov_x - (t + np.swapaxes(t, -1, -2)) / denom
            if grad_c:
                dvc = gp._solve_lower(dkxc)  # (n, D)
                dvar = -2.0 * vc @ dvc  # (D,)
                # d k(q, c) / d c = -(d k(q, c) / d q)
                _, dkq_all = _kernel_grad_first(block.points, c[None, :], ls, os_, np.arange(D))
                dsc = -dkq_all[:, 0, :] - block.V.T @ dvc  # (BL, D)
                dscb = dsc.reshape(B, L, D)
                dgain = dvar * (0.5 / (pred_sd * denom) - pred_sd / denom**2)  # (D,)
                dmean_c = z[:, None, None, None] * (gain * dscb[None] + sb[None, :, :, None] * dgain)
                t = np.einsum("blp,bm->bplm", dscb, sb)
                dcov_c = -(t + np.swapaxes(t, -1, -2)) / denom + (
                    sb[:, None, :, None] * sb[:, None, None, :] * dvar[None, :, None, None] / denom**2
                )
        else:
            mean = np.broadcast_to(block.mean[None], (K, B, L))
            if grad_x:
                dmean_x = np.broadcast_to(block.dmean_x[None], (K, B, L, dX))
        if grad_c and not informative:
            dmean_c = np.zeros((K, B, L, D))
            dcov_c = np.zeros((B, D, L, L))
    chol = dchol_x = dchol_c = None
    if need_chol:
        chol, jit = _factor(cov, BASE_JITTER * gp.hyper.outputscale, "posterior covariance Sigma(x, w_1:L)")
        if grad_x:
            dchol_x = cholesky_derivative(chol, dcov_x)
        if grad_c:
            dchol_c = cholesky_derivative(chol, dcov_c)
    sd = gp.outcome_transform.std
    out = JointPosterior(
        mean=gp.outcome_transform.unstandardize(mean),
        cov=sd * sd * cov,
        chol=None if chol is None else sd * chol,
        dmean_x=None if dmean_x is None else sd * dmean_x,
        dchol_x=None if dchol_x is None else sd * dchol_x,
        dmean_c=None if dmean_c is None else sd * dmean_c,
        dchol_c=None if dchol_c is None else sd * dchol_c,
        dcov_x=None if dcov_x is None else sd * sd * dcov_x,
        dcov_c=None if dcov_c is None else sd * sd * dcov_c,
    )
    out.extras["informative"] = informative
    return out


def posterior_with_gradients(model, xs, wpts):
    """Posterior of ``F(x_b, w_{1:L})`` with analytic derivatives.

    For a :class:`GaussianProcess` the derivatives are with respect to the
    decision coordinates ``x_b``.  For a :class:`FantasyModel` they are also
    taken with respect to the fantasy candidate ``(x, w)`` (``dmean_c``,
    ``dchol_c``).
    """
    if isinstance(model, FantasyModel):
        gp = model.parent
        block = query_block(gp, xs, wpts, grad_x=True)
        return joint_posterior(gp, block, model.candidate, [model.z0], grad_x=True, grad_c=True)
    block = query_block(model, xs, wpts, grad_x=True)
    return joint_posterior(model, block, grad_x=True)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _hex(a):
    return [float(v).hex() for v in np.asarray(a, dtype=float).reshape(-1)]


def _unhex(items, shape=None):
    arr = np.array([float.fromhex(s) for s in items], dtype=float)
    return arr if shape is None else arr.reshape(shape)


def to_json(gp):
    """JSON text of a fitted model; all reals hex-encoded for exact round-trip."""
    doc = {
        "format_version": FORMAT_VERSION,
        "dim": gp.dim,
        "n": gp.n,
        "hyperparameters": {
            "lengthscales": _hex(gp.hyper.lengthscales),
            "outputscale": float(gp.hyper.outputscale).hex(),
            "noise_variance": float(gp.hyper.noise_variance).hex(),
        },
        "input_transform": {"lower": _hex(gp.input_transform.lower), "upper": _hex(gp.input_transform.upper)},
        "outcome_transform": {
            "mean": float(gp.outcome_transform.mean).hex(),
            "std": float(gp.outcome_transform.std).hex(),
        },
        "train_inputs": _hex(gp.train_inputs),
        "train_targets": _hex(gp.train_targets),
    }
    return json.dumps(doc, indent=1)


def from_json(text):
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise InvalidArgumentError(f"unsupported model format version {doc.get('format_version')!r}")
    h = doc["hyperparameters"]
    hyper = Hyperparameters(
        _unhex(h["lengthscales"]), float.fromhex(h["outputscale"]), float.fromhex(h["noise_variance"])
    )
    tf = InputTransform(_unhex(doc["input_transform"]["lower"]), _unhex(doc["input_transform"]["upper"]))
    otf = OutcomeTransform(
        float.fromhex(doc["outcome_transform"]["mean"]), float.fromhex(doc["outcome_transform"]["std"])
    )
    X = _unhex(doc["train_inputs"], (doc["n"], doc["dim"]))
    y = _unhex(doc["train_targets"])
    return GaussianProcess(hyper, X, y, tf, otf)
