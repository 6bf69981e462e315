"""Box-constrained quasi-Newton descent, multistart maximization and the
two-time-scale (TTS) controller for nested acquisition functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError
from .qmc import sobol_points

C1 = 1e-4
C2 = 0.9
MAX_LINE_SEARCH = 20


@dataclass(frozen=True)
class OptimizerConfig:
    """Budgets for acquisition optimization.

    ``q2`` / ``q3`` cap L-BFGS iterations (line searches) of the outer and
    inner problems, ``tts_period`` is the TTS frequency ``T``.
    """

    q2: int = 100
    q3: int = 50
    tts_period: int = 10
    restarts: int = 40
    raw_samples: int = 2000
    inner_restarts: int = 10
    inner_raw: int = 100
    memory: int = 10
    tolerance: float = 1e-6
    raw_K: int = 4

    def __post_init__(self):
        for name in ("q2", "q3", "tts_period", "restarts", "raw_samples", "inner_restarts", "inner_raw", "memory"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance must be > 0")

    @classmethod
    def defaults(cls, dim_x, dim_w, **overrides):
        d = dim_x + dim_w
        cfg = cls(
            restarts=10 * d,
            raw_samples=500 * d,
            inner_restarts=5 * dim_x,
            inner_raw=50 * dim_x,
        )
        return replace(cfg, **overrides)


# --------------------------------------------------------------------------
# L-BFGS with projection onto the box
# --------------------------------------------------------------------------


@dataclass
class LBFGSResult:
    x: np.ndarray
    fun: float
    n_iter: int
    n_evals: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def _two_loop(g, S, Y):
    # restricted to the free variables a stored pair can lose its curvature
    pairs = [(s, y) for s, y in zip(S, Y) if s @ y > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y)]
    S = [s for s, _ in pairs]
    Y = [y for _, y in pairs]
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a, s, y))
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for rho, a, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs_box(fun, start, bounds, max_iter=100, tolerance=1e-6, memory=10, on_iterate=None):
    """Minimize ``fun`` over a box with projected L-BFGS.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (value, gradient)``.
    start : array (d,)
    bounds : array (2, d)
    max_iter : int
        Number of line searches.
    tolerance : float
        Stop when the projected gradient's infinity norm falls below it.
    on_iterate : callable, optional
        ``on_iterate(t, x, value, gradient) -> (value, gradient)``, called
        after every completed line search, and at the start point (``t = 0``,
        with ``value`` and ``gradient`` None) in place of ``fun``.  The
        returned pair replaces the current one; the TTS controller uses it
        to refresh inner solutions.

    Returns
    -------
    LBFGSResult
        ``x`` is the best iterate found; ``trace`` holds the best-so-far
        value after every iteration.
    """
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    x = np.asarray(start, dtype=float).copy()
    if x.shape != lo.shape:
        raise InvalidArgumentError("start and bounds disagree in dimension")
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise InvalidArgumentError("start lies outside the bounds")
    x = np.clip(x, lo, hi)
    # with a hook the hook provides the start value (it may refresh state first)
    f, g = on_iterate(0, x, None, None) if on_iterate is not None else fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    n_evals = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise InvalidArgumentError("objective is not finite at the start point")
    best_x, best_f = x.copy(), f
    trace = [best_f]
    S, Y = [], []
    converged, message = False, "iteration budget reached"
    it = 0
    while it < max_iter:
        pg = x - np.clip(x - g, lo, hi)
        if np.max(np.abs(pg)) < tolerance:
            converged, message = True, "projected gradient below tolerance"
            break
        active = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        free = ~active
        d = np.zeros_like(x)
        if S:
            d[free] = -_two_loop(g[free], [s[free] for s in S], [y[free] for y in Y])
        gd = g @ d
        if not S or not gd < 0:
            S, Y = [], []
            d = np.where(free, -g, 0.0)
            gd = g @ d
            if not gd < 0:
                converged, message = True, "no descent direction"
                break
            t = min(1.0, 1.0 / max(np.linalg.norm(d), 1e-300))
        else:
            t = 1.0
        accepted = None
        fallback = None
        for _ in range(MAX_LINE_SEARCH):
            xt = np.clip(x + t * d, lo, hi)
            step = xt - x
            if not np.any(step):
                break
            ft, gt = fun(xt)
            n_evals += 1
            ft = float(ft)
            if not math.isfinite(ft) or not np.all(np.isfinite(gt)):
                t *= 0.5
                continue
            gt = np.asarray(gt, dtype=float)
            if ft > f + C1 * (g @ step):
                if fallback is not None:
                    break
                # safeguarded quadratic backtrack
                denom = 2.0 * (ft - f - t * gd)
                t_new = -gd * t * t / denom if denom > 0 else 0.5 * t
                t = min(max(t_new, 0.1 * t), 0.5 * t)
                continue
            truncated = np.any(xt != x + t * d)
            gtd = gt @ d
            if truncated or abs(gtd) <= C2 * abs(gd) or gtd > 0:
                accepted = (xt, ft, gt)
                break
            # sufficient decrease but still steep: expand once more
            fallback = (xt, ft, gt)
            t *= 2.0
        if accepted is None:
            accepted = fallback
        if accepted is None:
            message = "line search failed"
            break
        xt, ft, gt = accepted
        s, y = xt - x, gt - g
        if s @ y > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, f, g = xt, ft, gt
        it += 1
        if on_iterate is not None:
            f, g = on_iterate(it, x, f, g)
        if f < best_f:
            best_x, best_f = x.copy(), f
        trace.append(best_f)
    return LBFGSResult(best_x, best_f, it, n_evals, converged, message, trace)


# --------------------------------------------------------------------------
# multistart
# --------------------------------------------------------------------------


def select_restarts(scores, n, eta=1.0, rng=None):
    """Pick ``n`` raw-sample indices without replacement, ``P ~ exp(eta * z)``.

    ``z`` are the finite scores standardized to zero mean and unit variance.
    Non-finite scores are never selected.
    """
    scores = np.asarray(scores, dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise InvalidArgumentError("all raw-sample scores are non-finite")
    idx = np.flatnonzero(finite)
    if n >= idx.size:
        return idx
    s = scores[idx]
    sd = s.std()
    z = (s - s.mean()) / sd if sd > 0 else np.zeros_like(s)
    w = np.exp(eta * (z - z.max()))
    rng = rng if rng is not None else np.random.default_rng()
    chosen = rng.choice(idx.size, size=int(n), replace=False, p=w / w.sum())
    return idx[chosen]


@dataclass
class MultistartResult:
    x: np.ndarray
    value: float
    starts: np.ndarray
    values: np.ndarray
    points: np.ndarray


def _box(bounds):
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[0] != 2:
        raise InvalidArgumentError("bounds must have shape (2, d)")
    return b


def raw_points(bounds, n, rng):
    b = _box(bounds)
    u = sobol_points(b.shape[1], n, int(rng.integers(0, 2**63 - 1)))
    return b[0] + u * (b[1] - b[0])


def multistart_maximize(
    fun,
    bounds,
    restarts,
    raw_samples,
    eta=1.0,
    rng=None,
    *,
    raw_score=None,
    local=None,
    extra_starts=None,
    max_iter=100,
    tolerance=1e-6,
    memory=10,
):
    """Maximize ``fun`` from restart points chosen among scored raw samples.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (value, gradient)`` to maximize.
    restarts, raw_samples : int
    eta : float
        Softmax temperature applied to standardized raw scores.
    rng : numpy Generator
    raw_score : callable, optional
        Cheap batched scorer ``raw_score(points) -> scores``; defaults to
        evaluating ``fun`` at each raw point.
    local : callable, optional
        ``local(start) -> (x, value)`` replacing the default L-BFGS ascent.
    extra_starts : array (k, d), optional
        Always used as restarts, after the selected raw samples.

    Returns
    -------
    MultistartResult
        Ties between restarts go to the lowest restart index.
    """
    b = _box(bounds)
    if restarts > raw_samples:
        raise InvalidArgumentError("restarts cannot exceed raw_samples")
    rng = rng if rng is not None else np.random.default_rng()
    pts = raw_points(b, raw_samples, rng)
    if raw_score is not None:
        scores = np.asarray(raw_score(pts), dtype=float)
    else:
        scores = np.array([float(fun(p)[0]) for p in pts])
    chosen = select_restarts(scores, restarts, eta, rng)
    starts = pts[chosen]
    if extra_starts is not None and len(extra_starts):
        starts = np.vstack([starts, np.asarray(extra_starts, dtype=float)])

    if local is None:

        def neg(z):
            v, gr = fun(z)
            return -v, -np.asarray(gr)

        def local(start):
            res = lbfgs_box(neg, start, b, max_iter=max_iter, tolerance=tolerance, memory=memory)
            return res.x, -res.fun

    xs, vals = [], []
    for s in starts:
        xr, vr = local(s)
        xs.append(np.clip(np.asarray(xr, dtype=float), b[0], b[1]))
        vals.append(float(vr))
    vals = np.asarray(vals)
    finite = np.where(np.isfinite(vals), vals, -np.inf)
    best = int(np.argmax(finite))
    return MultistartResult(xs[best], float(vals[best]), starts, vals, np.asarray(xs))


# --------------------------------------------------------------------------
# two-time-scale optimization
# --------------------------------------------------------------------------


def _acq_bounds(ctx):
    D = ctx.gp.dim
    return np.vstack([np.zeros(D), np.ones(D)])


def _tts_local(ctx, config, acq, period):
    from .acquisition import evaluate_acquisition

    b = _acq_bounds(ctx)

    def fun(c):
        v = evaluate_acquisition(ctx, c, acq, solve_inner=False)
        return -v.value, -v.gradient

    def on_iterate(t, c, f, g):
        if period is None or t % period == 0:
            v = evaluate_acquisition(ctx, c, acq, solve_inner=True)
            return -v.value, -v.gradient
        return f, g

    def local(start):
        res = lbfgs_box(fun, start, b, max_iter=config.q2, tolerance=config.tolerance,
                        memory=config.memory, on_iterate=on_iterate)
        ctx.line_searches += res.n_iter
        return res.x, -res.fun

    return local


def tts_optimize(ctx, config, rng, acq="rho_kg"):
    """Pick the next candidate ``(x, w)`` by TTS-optimizing a nested acquisition.

    Inner problems are re-solved at the start of every restart and after
    every ``config.tts_period``-th completed line search; all other
    acquisition evaluations reuse the cached inner solutions in ``ctx``.

    Returns
    -------
    ndarray (D,)
        Candidate in unit-cube coordinates.
    """
    from .acquisition import raw_scores

    local = _tts_local(ctx, config, acq, config.tts_period)
    res = multistart_maximize(
        None,
        _acq_bounds(ctx),
        config.restarts,
        config.raw_samples,
        rng=rng,
        raw_score=lambda pts: raw_scores(ctx, pts, acq, config.raw_K),
        local=local,
    )
    ctx.last_result = res
    return res.x


def nested_optimize(ctx, config, rng, acq="rho_kg"):
    """Reference nested optimization: inner problems re-solved at every iterate."""
    from .acquisition import raw_scores

    local = _tts_local(ctx, config, acq, None)
    res = multistart_maximize(
        None,
        _acq_bounds(ctx),
        config.restarts,
        config.raw_samples,
        rng=rng,
        raw_score=lambda pts: raw_scores(ctx, pts, acq, config.raw_K),
        local=local,
    )
    ctx.last_result = res
    return res.x
