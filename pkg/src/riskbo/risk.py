"""Empirical VaR / CVaR and Monte-Carlo estimates of the posterior risk objective.

Both estimators are linear in the sample vector once its ordering is fixed:
``rho(y) = sum_l c_l y_l`` with coefficients ``c`` determined by the sorted
order and the weights.  :func:`risk_coefficients` computes ``c`` for whole
batches of sample vectors; values and gradients then follow by contraction.

Conventions
-----------
* Samples are sorted ascending with a stable sort, so ties keep their
  original index order.
* VaR is the sorted sample at the first position whose cumulative weight
  reaches ``alpha`` (only positive-weight points qualify).
* CVaR is the weight-normalized mean of all sorted samples from the VaR
  position upward.  With uniform weights this is the mean of the top
  ``L - ceil(L alpha) + 1`` order statistics; at ``alpha = 0`` it is the
  weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

WEIGHT_TOL = 1e-12
CUMSUM_TOL = 1e-12


@dataclass(frozen=True)
class WSet:
    """Finite environmental set ``w_{1:L}`` with probability weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0] or w.shape[0] == 0:
            raise InvalidArgumentError("WSet needs one weight per point and at least one point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, w.shape[0]):
            raise InvalidArgumentError(f"weights must be >= 0 and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    def __len__(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class UniformBox:
    """Continuous uniform distribution on a box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidArgumentError("box bounds must satisfy lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]


RISK_KINDS = ("VaR", "CVaR")


@dataclass(frozen=True)
class RiskSpec:
    kind: str
    alpha: float
    w_distribution: object = None

    def __post_init__(self):
        kind = {"var": "VaR", "cvar": "CVaR"}.get(str(self.kind).lower())
        if kind is None:
            raise InvalidArgumentError(f"risk kind must be VaR or CVaR, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        a = float(self.alpha)
        if kind == "VaR" and not 0.0 < a < 1.0:
            raise InvalidArgumentError(f"VaR level must lie in (0, 1), got {a}")
        if kind == "CVaR" and not 0.0 <= a < 1.0:
            raise InvalidArgumentError(f"CVaR level must lie in [0, 1), got {a}")
        object.__setattr__(self, "alpha", a)


@dataclass
class RiskSampleEstimate:
    value: float
    gradient: np.ndarray | None
    ordering: np.ndarray


def _check_weights(samples, weights):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] == 0:
        raise InvalidArgumentError("need at least one sample")
    if weights is None:
        weights = np.full(samples.shape[-1], 1.0 / samples.shape[-1])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != samples.shape[-1:]:
        raise InvalidArgumentError("one weight per sample required")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL * max(1, weights.shape[0]):
        raise InvalidArgumentError("weights must be >= 0 and sum to 1")
    return samples, weights


def risk_coefficients(samples, weights, alpha, kind):
    """Coefficients ``c`` with ``rho(y) = sum_l c_l y_l`` along the last axis.

    Parameters
    ----------
    samples : ndarray (..., L)
    weights : ndarray (L,)
    alpha : float
    kind : {"VaR", "CVaR"}

    Returns
    -------
    coef : ndarray (..., L)
    order : ndarray (..., L)
        Stable ascending sort permutation.
    """
    samples, weights = _check_weights(samples, weights)
    order = np.argsort(samples, axis=-1, kind="stable")
    p_sorted = weights[order]
    cum = np.cumsum(p_sorted, axis=-1)
    ok = (cum >= alpha - CUMSUM_TOL) & (p_sorted > 0)
    # cumulative weight reaches 1 at the last positive-weight point, so some position qualifies
    k = np.argmax(ok, axis=-1)
    pos = np.arange(samples.shape[-1])
    if kind == "VaR":
        coef_sorted = (pos == k[..., None]).astype(float)
    elif kind == "CVaR":
        tail = np.where(pos >= k[..., None], p_sorted, 0.0)
        coef_sorted = tail / tail.sum(axis=-1, keepdims=True)
    else:
        raise InvalidArgumentError(f"unknown risk kind {kind!r}")
    coef = np.empty_like(coef_sorted)
    np.put_along_axis(coef, order, coef_sorted, axis=-1)
    return coef, order


def risk_values(samples, weights, alpha, kind):
    """``rho`` along the last axis without forming coefficients (no gradients)."""
    samples, weights = _check_weights(samples, weights)
    order = np.argsort(samples, axis=-1, kind="stable")
    s_sorted = np.take_along_axis(samples, order, axis=-1)
    p_sorted = weights[order]
    cum = np.cumsum(p_sorted, axis=-1)
    ok = (cum >= alpha - CUMSUM_TOL) & (p_sorted > 0)
    k = np.argmax(ok, axis=-1)[..., None]
    if kind == "VaR":
        return np.take_along_axis(s_sorted, k, axis=-1)[..., 0]
    if kind != "CVaR":
        raise InvalidArgumentError(f"unknown risk kind {kind!r}")
    tail = np.where(np.arange(samples.shape[-1]) >= k, p_sorted, 0.0)
    return np.sum(tail * s_sorted, axis=-1) / tail.sum(axis=-1)


def _estimate(samples, weights, alpha, kind):
    samples, weights = _check_weights(np.atleast_1d(samples), weights)
    if samples.ndim != 1:
        raise InvalidArgumentError("expected a single sample vector")
    coef, order = risk_coefficients(samples, weights, alpha, kind)
    if kind == "VaR":
        value = float(samples[int(np.argmax(coef))])
    else:
        value = float(np.dot(coef, samples))
        value = min(max(value, float(samples.min())), float(samples.max()))
    return RiskSampleEstimate(value=value, gradient=None, ordering=order)


def empirical_var(samples, weights=None, alpha=0.5):
    """Weighted empirical VaR: smallest sorted sample whose cumulative weight reaches ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    return _estimate(samples, weights, alpha, "VaR")


def empirical_cvar(samples, weights=None, alpha=0.5):
    """Weighted empirical CVaR: normalized tail mean from the VaR position upward."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidArgumentError(f"CVaR alpha must lie in [0, 1), got {alpha}")
    return _estimate(samples, weights, alpha, "CVaR")


def empirical_risk(samples, weights, spec):
    fn = empirical_var if spec.kind == "VaR" else empirical_cvar
    return fn(samples, weights, spec.alpha)


# --------------------------------------------------------------------------
# batched sample-path objective
# --------------------------------------------------------------------------


def risk_objective(jp, draws, weights, spec, *, mode="risk", grad_x=False, grad_c=False):
    """SAA risk objective for every model and decision point of a joint posterior.

    Parameters
    ----------
    jp : gp.JointPosterior
        Posterior of ``F(x_b, w_{1:L})`` for ``K`` models.
    draws : ndarray (K, M, L)
        Standard-normal base samples, one ``(M, L)`` block per model.
    weights : ndarray (L,)
    spec : RiskSpec
    mode : {"risk", "mean"}
        ``"mean"`` replaces the sampled risk by the weighted posterior mean
        (the expectation objective used by plain knowledge gradient).

    Returns
    -------
    values : ndarray (K, B)
        ``(1/M) sum_j r^{kj}(x_b)``.
    per_draw : ndarray (K, M, B) or None
    gx : ndarray (K, B, dX) or None
    gc : ndarray (K, B, D) or None
    """
    mean = jp.mean
    if mode == "mean":
        values = mean @ weights
        gx = np.einsum("kblp,l->kbp", jp.dmean_x, weights) if grad_x else None
        gc = np.einsum("kblp,l->kbp", jp.dmean_c, weights) if grad_c else None
        return values, None, gx, gc
    if mode != "risk":
        raise InvalidArgumentError(f"unknown objective mode {mode!r}")
    K = mean.shape[0]
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] != K:
        draws = np.broadcast_to(draws, (K,) + draws.shape[1:])
    M = draws.shape[1]
    samples = mean[:, None, :, :] + np.einsum("blm,kjm->kjbl", jp.chol, draws)
    if not (grad_x or grad_c):
        per_draw = risk_values(samples, weights, spec.alpha, spec.kind)
        return per_draw.mean(axis=1), per_draw, None, None
    coef, _ = risk_coefficients(samples, weights, spec.alpha, spec.kind)
    per_draw = np.einsum("kjbl,kjbl->kjb", coef, samples)
    values = per_draw.mean(axis=1)
    gx = gc = None
    if grad_x or grad_c:
        cbar = coef.mean(axis=1)  # (K, B, L)
        G = np.einsum("kjbl,kjm->kblm", coef, draws) / M
        if grad_x:
            gx = np.einsum("kbl,kblp->kbp", cbar, jp.dmean_x) + np.einsum("kblm,bplm->kbp", G, jp.dchol_x)
        if grad_c:
            gc = np.einsum("kbl,kblp->kbp", cbar, jp.dmean_c) + np.einsum("kblm,bplm->kbp", G, jp.dchol_c)
    return values, per_draw, gx, gc


# --------------------------------------------------------------------------
# single-point posterior risk
# --------------------------------------------------------------------------


def _model_parts(model):
    from .gp import FantasyModel

    if isinstance(model, FantasyModel):
        return model.parent, model.candidate, np.array([model.z0]), model.index
    return model, None, None, 0


def posterior_risk(model, x, spec, base, wset=None, *, mode="risk"):
    """MC estimate of ``E_n[rho[F(x, W)]]`` with fixed base samples.

    Parameters
    ----------
    model : GaussianProcess or FantasyModel
    x : array (dX,)
        Decision point in unit-cube coordinates.
    spec : RiskSpec
    base : qmc.BaseSampleSet
        Row 0 of ``base.zL`` is used for a GaussianProcess, row
        ``model.index`` for a fantasy.
    wset : WSet, optional
        Environmental points in unit-cube coordinates; defaults to
        ``base.wset``.

    Returns
    -------
    (estimate, per_draw) : (float, ndarray (M,))
    """
    from .gp import joint_posterior, query_block

    gp, cand, z0, idx = _model_parts(model)
    wset = wset or base.wset
    x = np.atleast_1d(np.asarray(x, dtype=float))
    block = query_block(gp, x[None, :], wset.points)
    jp = joint_posterior(gp, block, cand, z0)
    draws = base.zL[idx][None]
    values, per_draw, _, _ = risk_objective(jp, draws, wset.weights, spec, mode=mode)
    return float(values[0, 0]), (None if per_draw is None else per_draw[0, :, 0])


def posterior_risk_gradient(model, x, spec, base, wset=None, wrt="inner_x", *, mode="risk"):
    """Gradient of :func:`posterior_risk` with the sample orderings held fixed.

    ``wrt="inner_x"`` differentiates in the decision point ``x``;
    ``wrt="candidate_xw"`` in the fantasy candidate (FantasyModel only).
    """
    from .gp import joint_posterior, query_block

    gp, cand, z0, idx = _model_parts(model)
    if wrt not in ("inner_x", "candidate_xw"):
        raise InvalidArgumentError(f"wrt must be 'inner_x' or 'candidate_xw', got {wrt!r}")
    if wrt == "candidate_xw" and cand is None:
        raise InvalidArgumentError("candidate gradients need a FantasyModel")
    wset = wset or base.wset
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gx_flag = wrt == "inner_x"
    block = query_block(gp, x[None, :], wset.points, grad_x=gx_flag)
    jp = joint_posterior(gp, block, cand, z0, grad_x=gx_flag, grad_c=not gx_flag)
    draws = base.zL[idx][None]
    _, _, gx, gc = risk_objective(jp, draws, wset.weights, spec, mode=mode, grad_x=gx_flag, grad_c=not gx_flag)
    return (gx if gx_flag else gc)[0, 0]
