"""Experiment runner: initialization, the BO loop, recommendations and
result files.

Two modeling styles are supported.  Our methods (``rho_kg``,
``rho_kg_apx``, ``rho_random``) model ``F(x, w)`` and spend one evaluation
per iteration.  Baselines (``ei``, ``ucb``, ``kg_plain``, ``random``) model
``rho[F(x, W)]`` over ``x`` and spend ``|W_eval|`` evaluations per
iteration to observe it.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone

import numpy as np

from . import acquisition as acq
from .errors import BudgetExhaustedError, ConfigError, ResultParseError, RiskBOError
from .gp import fit_map, joint_posterior, query_block
from .optimize import OptimizerConfig, multistart_maximize, tts_optimize
from .problems import brute_force_risk, get_problem
from .qmc import child_seed, draw_wset, make_base_samples
from .risk import RiskSpec, WSet, empirical_risk, risk_objective

log = logging.getLogger(__name__)

OURS = ("rho_kg", "rho_kg_apx", "rho_random")
BASELINES = ("ei", "ucb", "kg_plain", "random")
ALGORITHMS = OURS + BASELINES
UCB_BETA = 0.2


@dataclass
class ExperimentConfig:
    """Everything that determines one run.

    ``None`` optimizer fields fall back to the dimension-scaled defaults.
    """

    problem: str = "toy"
    algorithm: str = "rho_kg_apx"
    budget: int = 100
    seed: int = 0
    alpha: float | None = None
    risk: str | None = None
    noise_std: float | None = None
    K: int = 10
    M: int = 10
    L: int | None = None
    T: int = 10
    restarts: int | None = None
    raw_samples: int | None = None
    inner_restarts: int | None = None
    inner_raw: int | None = None
    q2: int = 100
    q3: int = 50
    gp_restarts: int = 5
    gp_q1: int = 100
    rec_M: int = 64
    rec_restarts: int = 4
    rec_raw: int = 256
    known_noise: bool = True
    output: str | None = None
    run_id: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if int(self.budget) < 1:
            raise ConfigError("budget must be >= 1")
        for name in ("K", "M", "T", "q2", "q3", "gp_restarts", "gp_q1", "rec_M", "rec_restarts", "rec_raw"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def ours(self):
        return self.algorithm in OURS

    def optimizer(self, dim_x, dim_w):
        over = {k: getattr(self, k) for k in ("restarts", "raw_samples", "inner_restarts", "inner_raw")
                if getattr(self, k) is not None}
        over.update(q2=self.q2, q3=self.q3, tts_period=self.T)
        cfg = OptimizerConfig.defaults(dim_x, dim_w, **over)
        if cfg.restarts > cfg.raw_samples:
            cfg = replace(cfg, raw_samples=cfg.restarts)
        return cfg

    def label(self):
        return self.run_id or f"{self.problem}-{self.algorithm}-{self.seed}"


TOML_KEYS = {
    "problem.name": "problem", "problem.alpha": "alpha", "problem.risk": "risk",
    "problem.noise_std": "noise_std", "algorithm": "algorithm", "budget": "budget", "seed": "seed",
    "acq.K": "K", "acq.M": "M", "acq.L": "L", "opt.T": "T", "opt.restarts": "restarts",
    "opt.raw_samples": "raw_samples", "opt.inner_restarts": "inner_restarts",
    "opt.inner_raw": "inner_raw", "opt.q2": "q2", "opt.q3": "q3", "gp.restarts": "gp_restarts",
    "gp.q1": "gp_q1", "gp.known_noise": "known_noise", "rec.M": "rec_M",
    "rec.restarts": "rec_restarts", "rec.raw_samples": "rec_raw", "output": "output", "run_id": "run_id",
}


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def load_config(path=None, **overrides):
    """Read a TOML config and apply non-None keyword overrides."""
    try:
        import tomllib as tomli
    except ImportError:  # Python < 3.11
        import tomli

    values = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for key, v in _flatten(data):
            if key not in TOML_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[TOML_KEYS[key]] = v
    values.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in fields(ExperimentConfig)}
    bad = set(values) - names
    if bad:
        raise ConfigError(f"unknown config fields {sorted(bad)}")
    return ExperimentConfig(**values)


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------


@dataclass
class Observation:
    iteration: int
    x: np.ndarray
    w: np.ndarray | None
    y: float
    eval_cost: int


@dataclass
class Recommendation:
    iteration: int
    evals_used: int
    x: np.ndarray
    estimate: float
    true_risk: float | None
    gap: float | None
    wall_time: float


@dataclass
class ExperimentState:
    config: ExperimentConfig
    problem: object
    history: list = field(default_factory=list)
    recommendations: list = field(default_factory=list)
    gp: object = None
    iteration: int = 0
    fallbacks: list = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)
    last_rec_unit: np.ndarray | None = None

    @property
    def evals_used(self):
        return sum(o.eval_cost for o in self.history)

    @property
    def remaining(self):
        return self.config.budget - self.evals_used

    @property
    def iteration_cost(self):
        if self.config.ours:
            return 1
        return _eval_size(self.problem)


def _eval_size(problem):
    return len(problem.w_distribution) if problem.L_eval is None else int(problem.L_eval)


def _problem(config):
    return get_problem(config.problem, alpha=config.alpha, risk=config.risk, noise_std=config.noise_std)


def _observe(state, x, w, stream):
    """One noisy evaluation ``F(x, w)`` (raw coordinates)."""
    prob = state.problem
    sim = prob.extras.get("simulator")
    seed = child_seed(state.config.seed, "noise", *stream)
    if sim is not None:
        return sim.query(x, w, seed)
    y = float(prob.evaluate(x[None], w[None])[0])
    if prob.noise_std > 0:
        y += prob.noise_std * float(np.random.default_rng(seed).standard_normal())
    return y


def _eval_wset(state, iteration, point):
    prob = state.problem
    d = prob.w_distribution
    if prob.L_eval is None and isinstance(d, WSet):
        return d
    return draw_wset(d, _eval_size(prob), "subsample", child_seed(state.config.seed, "weval", iteration, point))


def _observe_risk(state, x, iteration, point):
    ws = _eval_wset(state, iteration, point)
    ys = np.array([_observe(state, x, w, (iteration, point, j)) for j, w in enumerate(ws.points)])
    return empirical_risk(ys, ws.weights, state.problem.risk).value, len(ws)


def _random_w(prob, rng):
    d = prob.w_distribution
    if isinstance(d, WSet):
        return d.points[int(rng.integers(len(d)))]
    return d.lower + rng.random(d.dim) * (d.upper - d.lower)


def _random_x(prob, rng):
    lo, hi = prob.x_bounds
    return lo + rng.random(prob.dim_x) * (hi - lo)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def _fit(state):
    cfg = state.config
    prob = state.problem
    if cfg.ours:
        X = np.array([np.concatenate([o.x, o.w]) for o in state.history])
        X = prob.to_unit(X)
        noise = prob.noise_std**2 if cfg.known_noise and "simulator" not in prob.extras else None
    else:
        X = prob.x_to_unit(np.array([o.x for o in state.history]))
        noise = None
    y = np.array([o.y for o in state.history])
    init = state.gp.hyper if state.gp is not None else None
    # warm start plus half the prior draws once a previous fit exists
    restarts = cfg.gp_restarts if init is None else cfg.gp_restarts // 2
    state.gp = fit_map(X, y, fixed_noise=noise, q1=cfg.gp_q1, restarts=restarts,
                       seed=child_seed(cfg.seed, "fit", state.iteration), init=init)
    return state.gp


def initialize(config):
    """Initial design, first model fit and the iteration-0 recommendation."""
    prob = _problem(config)
    state = ExperimentState(config, prob)
    n0 = 2 * prob.dim_x + 2
    cost = n0 * _eval_size(prob)
    if cost > config.budget:
        raise ConfigError(f"budget {config.budget} is smaller than the initialization cost {cost}")
    if config.ours:
        rng = np.random.default_rng(child_seed(config.seed, "init", "xw"))
        for p in range(cost):
            x, w = _random_x(prob, rng), _random_w(prob, rng)
            state.history.append(Observation(0, x, w, _observe(state, x, w, (0, p)), 1))
    else:
        rng = np.random.default_rng(child_seed(config.seed, "init", "x"))
        for p in range(n0):
            x = _random_x(prob, rng)
            y, c = _observe_risk(state, x, 0, p)
            state.history.append(Observation(0, x, None, y, c))
    _fit(state)
    recommend(state)
    return state


# --------------------------------------------------------------------------
# one iteration
# --------------------------------------------------------------------------


def _acq_base(state, K, M, seed):
    prob = state.problem
    cfg = state.config
    dist = prob.w_unit_distribution()
    L = cfg.L if cfg.L is not None else prob.L_acq
    if isinstance(dist, WSet) and L is None:
        return make_base_samples(K, M, None, "full", seed, dist, common_paths=True)
    return make_base_samples(K, M, L, "subsample", seed, dist, common_paths=True)


def _x_tilde(state):
    prob = state.problem
    return np.unique(prob.x_to_unit(np.array([o.x for o in state.history])), axis=0)


def _next_ours(state):
    cfg = state.config
    prob = state.problem
    it = state.iteration
    if cfg.algorithm == "rho_random":
        rng = np.random.default_rng(child_seed(cfg.seed, "random", it))
        return _random_x(prob, rng), _random_w(prob, rng)
    base = _acq_base(state, cfg.K, cfg.M, child_seed(cfg.seed, "base", it))
    ocfg = cfg.optimizer(prob.dim_x, prob.dim_w)
    ctx = acq.AcqContext(state.gp, prob.risk, base, prob.dim_x, x_tilde=_x_tilde(state), config=ocfg,
                         seed=child_seed(cfg.seed, "inner", it))
    c = tts_optimize(ctx, ocfg, np.random.default_rng(child_seed(cfg.seed, "acq", it)), acq=cfg.algorithm)
    z = prob.from_unit(c)
    return z[: prob.dim_x], z[prob.dim_x :]


def _next_baseline(state):
    cfg = state.config
    prob = state.problem
    it = state.iteration
    gp = state.gp
    rng = np.random.default_rng(child_seed(cfg.seed, "acq", it))
    if cfg.algorithm == "random":
        return _random_x(prob, np.random.default_rng(child_seed(cfg.seed, "random", it)))
    ocfg = cfg.optimizer(prob.dim_x, 0)
    bounds = np.vstack([np.zeros(prob.dim_x), np.ones(prob.dim_x)])
    if cfg.algorithm == "kg_plain":
        empty = WSet(np.zeros((1, 0)), np.ones(1))
        base = make_base_samples(cfg.K, 1, None, "full", child_seed(cfg.seed, "base", it), empty, common_paths=True)
        ctx = acq.AcqContext(gp, RiskSpec("CVaR", 0.0), base, prob.dim_x, mode="mean",
                             x_tilde=gp.train_inputs, config=ocfg, seed=child_seed(cfg.seed, "inner", it))
        u = tts_optimize(ctx, ocfg, rng, acq="kg_plain")
    else:
        if cfg.algorithm == "ei":
            fun = lambda u: acq.ei(gp, u, gradient=True)  # noqa: E731
        else:
            def fun(u):
                v, g = acq.ucb(gp, u, UCB_BETA, minimize=True, gradient=True)
                return -v, -g
        res = multistart_maximize(fun, bounds, ocfg.restarts, ocfg.raw_samples, rng=rng,
                                  raw_score=lambda pts: np.array([fun(p)[0] for p in pts]),
                                  max_iter=ocfg.q2, tolerance=ocfg.tolerance)
        u = res.x
    return prob.x_from_unit(u)


def step(state):
    """Run one BO iteration; refuses when the budget cannot pay for it."""
    if state.remaining < state.iteration_cost:
        raise BudgetExhaustedError(state.remaining, state.iteration_cost)
    cfg = state.config
    prob = state.problem
    state.iteration += 1
    it = state.iteration
    try:
        if cfg.ours:
            x, w = _next_ours(state)
        else:
            x = _next_baseline(state)
    except (RiskBOError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("iteration %d: acquisition optimization failed (%s); using a random point", it, exc)
        state.fallbacks.append((it, str(exc)))
        rng = np.random.default_rng(child_seed(cfg.seed, "fallback", it))
        x = _random_x(prob, rng)
        w = _random_w(prob, rng) if cfg.ours else None
    x = np.clip(x, prob.x_bounds[0], prob.x_bounds[1])
    if cfg.ours:
        w = np.clip(w, prob.w_bounds[0], prob.w_bounds[1])
        state.history.append(Observation(it, x, w, _observe(state, x, w, (it, 0)), 1))
    else:
        y, c = _observe_risk(state, x, it, 0)
        state.history.append(Observation(it, x, None, y, c))
    _fit(state)
    recommend(state)
    return state


# --------------------------------------------------------------------------
# recommendation
# --------------------------------------------------------------------------


def _rec_base(state):
    cfg = state.config
    return _acq_base(state, 1, cfg.rec_M, child_seed(cfg.seed, "rec"))


def _risk_batch(gp, xs, spec, base):
    jp = joint_posterior(gp, query_block(gp, xs, base.wset.points), need_chol=True)
    vals, _, _, _ = risk_objective(jp, base.zL[0][None], base.wset.weights, spec)
    return vals[0]


def _mean_batch(gp, xs):
    block = query_block(gp, xs, np.zeros((1, 0)))
    return gp.outcome_transform.unstandardize(block.mean[:, 0])


def recommend(state):
    """Minimize the posterior risk (or the posterior mean of ρ for baselines)."""
    cfg = state.config
    prob = state.problem
    gp = state.gp
    dX = prob.dim_x
    bounds = np.vstack([np.zeros(dX), np.ones(dX)])
    rng = np.random.default_rng(child_seed(cfg.seed, "recommend", state.iteration))
    extra = state.last_rec_unit[None] if state.last_rec_unit is not None else None
    if cfg.ours:
        base = _rec_base(state)

        def fun(u):
            block = query_block(gp, u[None], base.wset.points, grad_x=True)
            jp = joint_posterior(gp, block, grad_x=True)
            v, _, g, _ = risk_objective(jp, base.zL[0][None], base.wset.weights, prob.risk, grad_x=True)
            return -v[0, 0], -g[0, 0]

        score = lambda pts: -_risk_batch(gp, pts, prob.risk, base)  # noqa: E731
    else:

        def fun(u):
            block = query_block(gp, u[None], np.zeros((1, 0)), grad_x=True)
            sd = gp.outcome_transform.std
            return -float(gp.outcome_transform.unstandardize(block.mean[0, 0])), -sd * block.dmean_x[0, 0]

        score = lambda pts: -_mean_batch(gp, pts)  # noqa: E731
    res = multistart_maximize(fun, bounds, min(cfg.rec_restarts, cfg.rec_raw), cfg.rec_raw, rng=rng,
                              raw_score=score, extra_starts=extra, max_iter=cfg.q2)
    u = res.x
    state.last_rec_unit = u
    x = prob.x_from_unit(u)
    est = -res.value
    true = gap = None
    if "simulator" not in prob.extras:
        true = brute_force_risk(prob, x)
        if prob.true_optimum is not None:
            gap = true - prob.true_optimum
    rec = Recommendation(state.iteration, state.evals_used, x, est, true, gap,
                         time.perf_counter() - state.started)
    state.recommendations.append(rec)
    return x


# --------------------------------------------------------------------------
# run and result files
# --------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return repr(v) if not math.isfinite(v) else f"{v:.17g}"


def result_header(dim_x):
    return (["run_id", "seed", "algorithm", "iteration", "evals_used"]
            + [f"x_rec_{i + 1}" for i in range(dim_x)]
            + ["posterior_risk_estimate", "true_risk", "gap", "wall_time_s"])


def _timestamp_line(kind):
    return f"# riskbo {kind}; created {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def write_results(state, path):
    cfg = state.config
    buf = io.StringIO()
    buf.write(_timestamp_line("result file"))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result_header(state.problem.dim_x))
    for r in state.recommendations:
        w.writerow([cfg.label(), cfg.seed, cfg.algorithm, r.iteration, r.evals_used]
                   + [_fmt(v) for v in r.x]
                   + [_fmt(r.estimate), _fmt(r.true_risk), _fmt(r.gap), f"{r.wall_time:.3f}"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def history_header(dim_x, dim_w):
    return (["iteration"] + [f"x_{i + 1}" for i in range(dim_x)]
            + [f"w_{i + 1}" for i in range(dim_w)] + ["y", "eval_cost"])


def write_history(state, path):
    prob = state.problem
    buf = io.StringIO()
    buf.write(_timestamp_line("history"))
    w = csv.writer(buf, lineterminator="\n")
    dW = prob.dim_w if state.config.ours else 0
    w.writerow(history_header(prob.dim_x, dW))
    for o in state.history:
        ws = [] if o.w is None else [_fmt(v) for v in o.w]
        w.writerow([o.iteration] + [_fmt(v) for v in o.x] + ws + [_fmt(o.y), o.eval_cost])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _rows(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ResultParseError(path, 0, str(exc)) from exc
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not numbered:
        raise ResultParseError(path, 0, "no header row")
    reader = csv.reader([ln for _, ln in numbered])
    rows = list(reader)
    return [n for n, _ in numbered], rows


def read_history(path, config):
    """Rebuild an :class:`ExperimentState` (without recommendations) from a history CSV."""
    prob = _problem(config)
    state = ExperimentState(config, prob)
    nums, rows = _rows(path)
    header = rows[0]
    dW = prob.dim_w if config.ours else 0
    expected = history_header(prob.dim_x, dW)
    if header != expected:
        raise ResultParseError(path, nums[0], f"expected columns {expected}, got {header}")
    for n, row in zip(nums[1:], rows[1:]):
        if len(row) != len(header):
            raise ResultParseError(path, n, f"expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise ResultParseError(path, n, str(exc)) from exc
        x = np.array(vals[1 : 1 + prob.dim_x])
        w = np.array(vals[1 + prob.dim_x : 1 + prob.dim_x + dW]) if dW else None
        state.history.append(Observation(int(vals[0]), x, w, vals[-2], int(vals[-1])))
    if len(state.history) < 2:
        raise ResultParseError(path, nums[-1], "need at least two observations")
    state.iteration = max(o.iteration for o in state.history)
    _fit(state)
    return state


def suggest(state):
    """Next candidate for a state: ``(x, w)`` for our methods, ``x`` otherwise."""
    state.iteration += 1
    try:
        return _next_ours(state) if state.config.ours else (_next_baseline(state), None)
    finally:
        state.iteration -= 1


def run(config, progress=None):
    """Initialize and iterate until the budget is spent; write result files."""
    state = initialize(config)
    while state.remaining >= state.iteration_cost:
        step(state)
        if progress is not None:
            progress(state)
    if config.output:
        write_results(state, config.output)
        write_history(state, config.output + ".history.csv")
    return state


def read_results(path):
    """Parse a result CSV into a list of dicts (floats, None for empty cells)."""
    nums, rows = _rows(path)
    header = rows[0]
    if header[:5] != ["run_id", "seed", "algorithm", "iteration", "evals_used"] or header[-4:] != [
        "posterior_risk_estimate", "true_risk", "gap", "wall_time_s"]:
        raise ResultParseError(path, nums[0], "not a result file header")
    out = []
    for n, row in zip(nums[1:], rows[1:]):
        if len(row) != len(header):
            raise ResultParseError(path, n, f"expected {len(header)} fields, got {len(row)}")
        rec = {}
        try:
            for k, v in zip(header, row):
                if k in ("run_id", "algorithm"):
                    rec[k] = v
                elif k in ("seed", "iteration", "evals_used"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v) if v != "" else None
        except ValueError as exc:
            raise ResultParseError(path, n, str(exc)) from exc
        out.append(rec)
    return out


def _series(rows, smooth):
    ev = np.array([r["evals_used"] for r in rows])
    gap = np.array([np.nan if r["gap"] is None else r["gap"] for r in rows])
    if smooth and len(gap) >= 3:
        kernel = np.ones(3) / 3
        inner = np.convolve(gap, kernel, mode="valid")
        gap = np.concatenate([gap[:1], inner, gap[-1:]])
    return ev, gap


def report(paths, smooth=False):
    """Mean and standard error of the optimality gap per algorithm and
    evaluation count, aggregated over result files.

    Returns a list of dict rows; ``log_gap`` columns use ``log10`` of the gap
    (gaps are clipped at 1e-12).
    """
    groups = {}
    for p in paths:
        rows = read_results(p)
        runs = {}
        for r in rows:
            runs.setdefault((r["algorithm"], r["run_id"]), []).append(r)
        for (alg, _), rs in runs.items():
            ev, gap = _series(rs, smooth)
            for e, g in zip(ev, gap):
                groups.setdefault((alg, int(e)), []).append(g)
    out = []
    for (alg, e) in sorted(groups):
        g = np.array(groups[(alg, e)], dtype=float)
        n = g.size
        row = {"algorithm": alg, "evals_used": e, "n_runs": n}
        if np.all(np.isfinite(g)):
            lg = np.log10(np.maximum(g, 1e-12))
            row["mean_gap"] = float(g.mean())
            row["se_gap"] = float(g.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            row["mean_log_gap"] = float(lg.mean())
            row["se_log_gap"] = float(lg.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        else:
            row.update(mean_gap=None, se_gap=None, mean_log_gap=None, se_log_gap=None)
        out.append(row)
    return out


REPORT_COLUMNS = ["algorithm", "evals_used", "n_runs", "mean_gap", "se_gap", "mean_log_gap", "se_log_gap"]


def write_rows(rows, columns, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], float) or r[c] is None else r[c] for c in columns])
    text = buf.getvalue()
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def plot_data(paths):
    """Smoothed log-gap curves (mean and ±1 standard error) per algorithm."""
    out = []
    for r in report(paths, smooth=True):
        m, s = r["mean_log_gap"], r["se_log_gap"]
        out.append({"algorithm": r["algorithm"], "evals_used": r["evals_used"], "mean_log_gap": m,
                    "lower": None if m is None else m - s, "upper": None if m is None else m + s})
    return out


PLOT_COLUMNS = ["algorithm", "evals_used", "mean_log_gap", "lower", "upper"]


def oracle_grid(problem, per_dim=51):
    """Brute-force risk on a regular grid over the decision box."""
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in problem.x_bounds.T]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, problem.dim_x)
    vals = brute_force_risk(problem, grid)
    return [dict({f"x_{i + 1}": g[i] for i in range(problem.dim_x)}, risk=v) for g, v in zip(grid, vals)]
