"""Knowledge-gradient acquisitions for risk objectives, plus baselines.

All candidates and decision points are in unit-cube coordinates.  The
ρKG estimate is the sample-average approximation

    (1/K) sum_i B_i(x_*^0) - (1/K) sum_i B_i(x_*^i),

where ``B_i(x) = (1/M) sum_j r^{ij}(x)`` is the risk objective under
fantasy ``i`` and ``x_*^0`` minimizes the fantasy average.  Since the
fantasies average back to the current posterior, the first term estimates
``rho_n^*`` with the same draws as the second, which keeps the estimate
nonnegative whenever the inner problems are solved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import InvalidArgumentError
from .gp import QueryBlock, candidate_informative, joint_posterior, query_block
from .optimize import OptimizerConfig, lbfgs_box, select_restarts
from .qmc import child_seed, sobol_points
from .risk import risk_objective

ACQUISITIONS = ("rho_kg", "rho_kg_apx", "kg_plain")
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class AcqValue:
    value: float
    gradient: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class AcqContext:
    """State shared by acquisition evaluations within one BO iteration.

    Parameters
    ----------
    gp : GaussianProcess
        Model over ``(x, w)`` (or over ``x`` alone for plain KG).
    spec : RiskSpec
    base : BaseSampleSet
        Base samples; ``base.wset`` holds unit-cube environmental points.
    dim_x : int
    mode : {"risk", "mean"}
    x_tilde : array (n, dim_x), optional
        Decision points used by the discrete inner problems.
    config : OptimizerConfig, optional
        Inner-solve budgets.
    seed : int
    record : bool
        Keep ``(candidate, value)`` of every counted evaluation in ``trace``.
    """

    def __init__(self, gp, spec, base, dim_x, *, mode="risk", x_tilde=None, config=None, seed=0, record=False):
        self.gp = gp
        self.spec = spec
        self.base = base
        self.dim_x = int(dim_x)
        if not 1 <= self.dim_x <= gp.dim:
            raise InvalidArgumentError("dim_x must lie between 1 and the model dimension")
        self.mode = mode
        self.config = config or OptimizerConfig()
        self.seed = int(seed)
        self.x_tilde = None if x_tilde is None else np.atleast_2d(np.asarray(x_tilde, dtype=float))
        self.inner_solutions = None
        self.inner_values = None
        self.inner_solves = 0
        self.evaluations = 0
        self.line_searches = 0
        self.last_result = None
        self.trace = [] if record else None
        self._blocks = {}

    @property
    def K(self):
        return self.base.K

    @property
    def wpts(self):
        return self.base.wset.points

    @property
    def weights(self):
        return self.base.wset.weights

    def block(self, key, xs):
        """Candidate-independent posterior block, cached per point set."""
        if key not in self._blocks:
            self._blocks[key] = query_block(self.gp, xs, self.wpts)
        return self._blocks[key]

    def draws(self, K):
        return self.base.z0[:K], self.base.zL[1 : K + 1]


def _candidate(ctx, candidate):
    c = np.asarray(candidate, dtype=float).reshape(-1)
    if c.shape[0] != ctx.gp.dim:
        raise InvalidArgumentError(f"candidate must have {ctx.gp.dim} coordinates")
    if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
        raise InvalidArgumentError("candidate must lie in the unit cube")
    return c


def _zero(ctx, K):
    return AcqValue(0.0, np.zeros(ctx.gp.dim), {"informative": False, "K": K})


def _sub_block(block, idx):
    idx = np.asarray(idx)
    B, L = block.B, block.L
    cols = (idx[:, None] * L + np.arange(L)[None, :]).reshape(-1)
    return QueryBlock(
        xs=block.xs[idx],
        wpts=block.wpts,
        points=block.points[cols],
        mean=block.mean[idx],
        V=block.V[:, cols],
        cov=block.cov[idx],
    )


# --------------------------------------------------------------------------
# continuous inner problems
# --------------------------------------------------------------------------


def _stacked_values(ctx, c, X, z0, draws, grad):
    """Objectives of the K+1 inner problems at their own points ``X``.

    Row 0 is the fantasy average at ``X[0]``; row ``i`` is fantasy ``i`` at
    ``X[i]``.
    """
    block = query_block(ctx.gp, X, ctx.wpts, grad_x=grad)
    jp = joint_posterior(ctx.gp, block, c, z0, grad_x=grad)
    vals, _, gx, _ = risk_objective(jp, draws, ctx.weights, ctx.spec, mode=ctx.mode, grad_x=grad)
    K = vals.shape[0]
    ar = np.arange(K)
    per = np.concatenate([[vals[:, 0].mean()], vals[ar, ar + 1]])
    if not grad:
        return per, None
    g = np.empty_like(X)
    g[0] = gx[:, 0].mean(axis=0)
    g[1:] = gx[ar, ar + 1]
    return per, g


def solve_inner(ctx, candidate, K=None):
    """Minimize the K+1 inner risk objectives over the decision space.

    The problems are separable, so they are solved jointly: one projected
    L-BFGS run per restart on the stacked variables, with restarts chosen
    per problem from a shared set of raw points.  The previous solutions,
    when present, are always used as an extra restart.  Results are cached
    on ``ctx``.
    """
    c = _candidate(ctx, candidate)
    K = ctx.K if K is None else int(K)
    z0, draws = ctx.draws(K)
    cfg = ctx.config
    dX = ctx.dim_x
    seed = child_seed(ctx.seed, "inner", ctx.inner_solves)
    raw = sobol_points(dX, cfg.inner_raw, seed)
    jp = joint_posterior(ctx.gp, query_block(ctx.gp, raw, ctx.wpts), c, z0)
    vals, _, _, _ = risk_objective(jp, draws, ctx.weights, ctx.spec, mode=ctx.mode)
    scores = np.vstack([vals.mean(axis=0)[None], vals])  # (K+1, R)
    n_restarts = min(cfg.inner_restarts, cfg.inner_raw)
    picks = [select_restarts(-s, n_restarts, 1.0, np.random.default_rng(seed)) for s in scores]
    starts = [np.stack([raw[p[r]] for p in picks]) for r in range(n_restarts)]
    prev = ctx.inner_solutions
    if prev is not None and prev.shape == (K + 1, dX):
        starts.append(prev.copy())
    bounds = np.vstack([np.zeros((K + 1) * dX), np.ones((K + 1) * dX)])

    def fun(flat):
        per, g = _stacked_values(ctx, c, flat.reshape(K + 1, dX), z0, draws, True)
        return per.sum(), g.reshape(-1)

    best_x = None
    best_v = None
    for s in starts:
        res = lbfgs_box(fun, s.reshape(-1), bounds, max_iter=cfg.q3, tolerance=cfg.tolerance, memory=cfg.memory)
        X = res.x.reshape(K + 1, dX)
        per, _ = _stacked_values(ctx, c, X, z0, draws, False)
        if best_x is None:
            best_x, best_v = X.copy(), per.copy()
            continue
        better = per < best_v
        best_x[better] = X[better]
        best_v[better] = per[better]
    ctx.inner_solutions = best_x
    ctx.inner_values = best_v
    ctx.inner_solves += 1
    return best_x, best_v


def rho_kg(ctx, candidate, solve_inner_problems=True, K=None):
    """SAA of ρKG at ``candidate`` with its envelope-theorem gradient.

    Parameters
    ----------
    ctx : AcqContext
    candidate : array (D,)
    solve_inner_problems : bool
        Re-solve the inner problems; otherwise reuse the cached solutions.
    K : int, optional
        Number of fantasies (defaults to all in ``ctx.base``).

    Returns
    -------
    AcqValue
        ``diagnostics["inner_values"]`` holds the K fantasy minima.
    """
    c = _candidate(ctx, candidate)
    K = ctx.K if K is None else int(K)
    if not candidate_informative(ctx.gp, c):
        return _zero(ctx, K)
    if solve_inner_problems or ctx.inner_solutions is None or ctx.inner_solutions.shape[0] != K + 1:
        solve_inner(ctx, c, K)
    z0, draws = ctx.draws(K)
    X = ctx.inner_solutions
    jp = joint_posterior(ctx.gp, query_block(ctx.gp, X, ctx.wpts), c, z0, grad_c=True)
    vals, _, _, gc = risk_objective(jp, draws, ctx.weights, ctx.spec, mode=ctx.mode, grad_c=True)
    ar = np.arange(K)
    current = vals[:, 0].mean()
    inner = vals[ar, ar + 1]
    value = current - inner.mean()
    grad = gc[:, 0].mean(axis=0) - gc[ar, ar + 1].mean(axis=0)
    return AcqValue(float(value), grad, {"informative": True, "current": float(current), "inner_values": inner, "K": K})


# --------------------------------------------------------------------------
# discrete inner problems
# --------------------------------------------------------------------------


def discrete_kg(ctx, candidate, points, K=None, key=None, gradient=True):
    """ρKG with the inner minima taken over ``points`` and the candidate's x.

    The candidate's own decision point is appended last, so ties go to the
    fixed points.  ``key`` caches the candidate-independent posterior block
    of ``points`` on ``ctx``.
    """
    c = _candidate(ctx, candidate)
    K = ctx.K if K is None else int(K)
    if not candidate_informative(ctx.gp, c):
        return _zero(ctx, K)
    z0, draws = ctx.draws(K)
    dX = ctx.dim_x
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, dX)
    n_fixed = pts.shape[0]
    xc = c[:dX][None, :]
    vals_c = None
    jp_c = joint_posterior(ctx.gp, query_block(ctx.gp, xc, ctx.wpts, grad_x=gradient), c, z0,
                           grad_x=gradient, grad_c=gradient)
    vals_c, _, gx_c, gc_c = risk_objective(jp_c, draws, ctx.weights, ctx.spec, mode=ctx.mode,
                                           grad_x=gradient, grad_c=gradient)
    if n_fixed:
        block = ctx.block(key, pts) if key is not None else query_block(ctx.gp, pts, ctx.wpts)
        jp = joint_posterior(ctx.gp, block, c, z0)
        vals_f, _, _, _ = risk_objective(jp, draws, ctx.weights, ctx.spec, mode=ctx.mode)
        vals = np.concatenate([vals_f, vals_c], axis=1)
    else:
        vals = vals_c
    avg = vals.mean(axis=0)
    i0 = int(np.argmin(avg))
    idx = np.argmin(vals, axis=1)
    inner = vals[np.arange(K), idx]
    value = float(avg[i0] - inner.mean())
    diag = {"informative": True, "current": float(avg[i0]), "inner_values": inner,
            "argmin_current": i0, "argmin": idx, "K": K}
    if not gradient:
        return AcqValue(value, np.zeros(ctx.gp.dim), diag)
    needed = sorted({i0, *idx.tolist()} - {n_fixed})
    g_all = np.zeros((K, n_fixed + 1, ctx.gp.dim))
    if needed:
        sub = _sub_block(ctx.block(key, pts) if key is not None else query_block(ctx.gp, pts, ctx.wpts), needed)
        jp_s = joint_posterior(ctx.gp, sub, c, z0, grad_c=True)
        _, _, _, gc_s = risk_objective(jp_s, draws, ctx.weights, ctx.spec, mode=ctx.mode, grad_c=True)
        g_all[:, needed] = gc_s
    # the candidate's own x moves with the candidate
    g_all[:, n_fixed] = gc_c[:, 0]
    g_all[:, n_fixed, :dX] += gx_c[:, 0]
    grad = g_all[:, i0].mean(axis=0) - g_all[np.arange(K), idx].mean(axis=0)
    return AcqValue(value, grad, diag)


def rho_kg_apx(ctx, candidate, K=None, gradient=True):
    """ρKG^apx: inner minima restricted to the evaluated decision points."""
    if ctx.x_tilde is None or not len(ctx.x_tilde):
        raise InvalidArgumentError("rho_kg_apx needs at least one evaluated decision point")
    return discrete_kg(ctx, candidate, ctx.x_tilde, K=K, key="x_tilde", gradient=gradient)


def kg_plain(ctx, candidate, solve_inner_problems=True, K=None):
    """Knowledge gradient for a model over ``x`` of direct ρ observations.

    ``ctx`` must use ``mode="mean"`` and an empty environmental set.
    """
    if ctx.mode != "mean":
        raise InvalidArgumentError("kg_plain needs a context with mode='mean'")
    return rho_kg(ctx, candidate, solve_inner_problems, K)


def evaluate_acquisition(ctx, candidate, acq, solve_inner=False):
    """Dispatch one acquisition evaluation and count it."""
    ctx.evaluations += 1
    if acq == "rho_kg":
        out = rho_kg(ctx, candidate, solve_inner)
    elif acq == "kg_plain":
        out = kg_plain(ctx, candidate, solve_inner)
    elif acq == "rho_kg_apx":
        out = rho_kg_apx(ctx, candidate)
    else:
        raise InvalidArgumentError(f"unknown acquisition {acq!r}; expected one of {ACQUISITIONS}")
    if ctx.trace is not None:
        ctx.trace.append((np.array(candidate, dtype=float), out.value))
    return out


def raw_scores(ctx, points, acq, K_raw=4):
    """Cheap scores for restart selection, using the first ``K_raw`` fantasies.

    Nested acquisitions are scored with discrete inner problems over the
    evaluated points and any cached inner solutions.
    """
    K = min(int(K_raw), ctx.K)
    fixed = []
    if ctx.x_tilde is not None and len(ctx.x_tilde):
        fixed.append(ctx.x_tilde)
    if acq != "rho_kg_apx" and ctx.inner_solutions is not None:
        fixed.append(ctx.inner_solutions)
    pts = np.vstack(fixed) if fixed else np.zeros((0, ctx.dim_x))
    key = ("raw", acq, pts.shape[0])
    if key in ctx._blocks and ctx._blocks[key].xs.shape != pts.shape:
        del ctx._blocks[key]
    out = np.empty(len(points))
    for r, p in enumerate(points):
        out[r] = discrete_kg(ctx, p, pts, K=K, key=key, gradient=False).value
    return out


# --------------------------------------------------------------------------
# baselines on a model of direct ρ observations
# --------------------------------------------------------------------------


def expected_improvement(mean, sd, best):
    """``E[max(best - Y, 0)]`` for ``Y ~ N(mean, sd^2)`` (minimization)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    gap = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, gap / np.where(sd > 0, sd, 1.0), 0.0)
        val = gap * ndtr(u) + sd * np.exp(-0.5 * u * u) / SQRT_2PI
    return np.where(sd > 0, val, np.maximum(gap, 0.0))


def _mean_var(gp, x, grad):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    block = query_block(gp, x, np.zeros((1, 0)), grad_x=grad)
    mean = float(block.mean[0, 0])
    var = max(float(block.cov[0, 0, 0]), 0.0)
    if not grad:
        return mean, var, None, None
    return mean, var, block.dmean_x[0, 0], block.dcov_x[0, :, 0, 0]


def ei(gp, x, gradient=False):
    """Expected improvement below the best observed value, in raw units."""
    mu, var, dmu, dvar = _mean_var(gp, x, gradient)
    best = float(np.min(gp.train_targets))
    sd = math.sqrt(var)
    scale = gp.outcome_transform.std
    val = float(expected_improvement(mu, sd, best)) * scale
    if not gradient:
        return val
    if sd <= 0:
        g = -dmu if best > mu else np.zeros_like(dmu)
    else:
        u = (best - mu) / sd
        g = -ndtr(u) * dmu + math.exp(-0.5 * u * u) / SQRT_2PI * dvar / (2.0 * sd)
    return val, scale * g


def ucb(gp, x, beta=0.2, minimize=False, gradient=False):
    """``mu_n(x) + sqrt(beta Sigma_n(x, x))``, or the lower bound if ``minimize``."""
    if beta < 0:
        raise InvalidArgumentError("beta must be >= 0")
    mu, var, dmu, dvar = _mean_var(gp, x, gradient)
    scale = gp.outcome_transform.std
    sign = -1.0 if minimize else 1.0
    sd = math.sqrt(beta * var)
    val = float(gp.outcome_transform.unstandardize(mu)) + sign * scale * sd
    if not gradient:
        return val
    g = dmu + (sign * beta * dvar / (2.0 * sd) if sd > 0 else 0.0)
    return val, scale * g


def random_strategy(kind, rng, bounds):
    """Uniform draw from ``bounds`` (shape (2, d)).

    ``rho_random`` is called with the joint (x, w) box, ``plain_random``
    with the decision box only.
    """
    if kind not in ("rho_random", "plain_random"):
        raise InvalidArgumentError(f"unknown random strategy {kind!r}")
    b = np.asarray(bounds, dtype=float)
    return b[0] + rng.random(b.shape[1]) * (b[1] - b[0])
