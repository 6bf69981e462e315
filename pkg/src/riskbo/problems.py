"""Benchmark problems, environmental distributions, a brute-force risk
oracle and the external-simulator adapter."""

from __future__ import annotations

import json
import math
import os
import selectors
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgumentError, ProtocolError, SimulatorError
from .qmc import sobol_points
from .risk import RiskSpec, UniformBox, WSet, risk_coefficients

L_BIG = 10_000
SIM_TIMEOUT = 600.0


@dataclass
class ProblemSpec:
    """A risk-minimization problem ``min_x rho[F(x, W)]``.

    Attributes
    ----------
    function : callable
        ``function(x, w)`` on raw-domain arrays of shape (n, dim_x) and
        (n, dim_w), returning (n,) noise-free values.
    w_distribution : WSet or UniformBox
        In raw coordinates.
    L_acq, L_eval : int or None
        Environmental-set sizes for our acquisitions and for baseline ρ
        evaluations; None uses the full finite set.
    """

    name: str
    x_bounds: np.ndarray
    w_bounds: np.ndarray
    w_distribution: object
    noise_std: float
    risk: RiskSpec
    function: object
    true_optimum: float | None = None
    L_acq: int | None = None
    L_eval: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_bounds = np.asarray(self.x_bounds, dtype=float).reshape(2, -1)
        self.w_bounds = np.asarray(self.w_bounds, dtype=float).reshape(2, -1)
        for b in (self.x_bounds, self.w_bounds):
            if np.any(b[1] <= b[0]):
                raise InvalidArgumentError("bounds must satisfy lower < upper")
        if not self.noise_std >= 0:
            raise InvalidArgumentError("noise_std must be >= 0")
        finite = isinstance(self.w_distribution, WSet)
        if not finite and (self.L_acq is None or self.L_eval is None):
            raise InvalidArgumentError("a continuous W needs explicit L_acq and L_eval")

    @property
    def dim_x(self):
        return self.x_bounds.shape[1]

    @property
    def dim_w(self):
        return self.w_bounds.shape[1]

    @property
    def bounds(self):
        return np.hstack([self.x_bounds, self.w_bounds])

    @property
    def finite_w(self):
        return isinstance(self.w_distribution, WSet)

    def evaluate(self, x, w):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return np.asarray(self.function(x, w), dtype=float).reshape(-1)

    def to_unit(self, z):
        b = self.bounds
        return (np.asarray(z, dtype=float) - b[0]) / (b[1] - b[0])

    def from_unit(self, u):
        b = self.bounds
        return b[0] + np.asarray(u, dtype=float) * (b[1] - b[0])

    def x_to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.x_bounds[0]) / (self.x_bounds[1] - self.x_bounds[0])

    def x_from_unit(self, u):
        return self.x_bounds[0] + np.asarray(u, dtype=float) * (self.x_bounds[1] - self.x_bounds[0])

    def w_unit_distribution(self):
        """The environmental distribution in unit-cube coordinates."""
        lo, hi = self.w_bounds
        d = self.w_distribution
        if isinstance(d, WSet):
            return WSet((d.points - lo) / (hi - lo), d.weights)
        return UniformBox((d.lower - lo) / (hi - lo), (d.upper - lo) / (hi - lo))


def _check_box(z, lo, hi, name):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError(f"{name}: non-finite input")
    tol = 1e-12 * max(1.0, float(np.max(np.abs([lo, hi]))))
    if np.any(z < lo - tol) or np.any(z > hi + tol):
        raise InvalidArgumentError(f"{name}: input outside [{lo}, {hi}]")
    return z


# --------------------------------------------------------------------------
# Branin-Williams
# --------------------------------------------------------------------------


def branin(u, v):
    """Branin function ``y_b(u, v)``."""
    return (v - 5.1 / (4 * math.pi**2) * u**2 + 5 / math.pi * u - 6) ** 2 + 10 * (1 - 1 / (8 * math.pi)) * np.cos(u) + 10


def branin_williams(z):
    """``y_b(15 z1 - 5, 15 z2) * y_b(15 z3 - 5, 15 z4)`` on ``[0, 1]^4``.

    ``z`` has shape (4,) or (n, 4); decision coordinates are ``(z1, z4)``,
    environmental ``(z2, z3)``.
    """
    z = _check_box(z, 0.0, 1.0, "branin_williams")
    z2 = np.atleast_2d(z)
    if z2.shape[1] != 4:
        raise InvalidArgumentError("branin_williams takes 4 coordinates")
    out = branin(15 * z2[:, 0] - 5, 15 * z2[:, 1]) * branin(15 * z2[:, 2] - 5, 15 * z2[:, 3])
    return out if z.ndim == 2 else float(out[0])


def _bw_function(x, w):
    return branin_williams(np.column_stack([x[:, 0], w[:, 0], w[:, 1], x[:, 1]]))


BW_X2 = (0.25, 0.5, 0.75)
BW_X3 = (0.2, 0.4, 0.6, 0.8)
BW_MASS = (
    (0.0375, 0.0875, 0.0875, 0.0375),
    (0.0750, 0.1750, 0.1750, 0.0750),
    (0.0375, 0.0875, 0.0875, 0.0375),
)


def bw_distribution():
    """The 12-point distribution of ``(x2, x3)`` for Branin-Williams."""
    pts = [(a, b) for a in BW_X2 for b in BW_X3]
    mass = [m for row in BW_MASS for m in row]
    return WSet(np.array(pts), np.array(mass))


# --------------------------------------------------------------------------
# f6
# --------------------------------------------------------------------------


def f6(xc, xe):
    """Polynomial test function with decisions ``xc`` in ``[-5, 5]^4`` and
    environmental variables ``xe`` in ``[-2, 2]^3``."""
    xc = _check_box(xc, -5.0, 5.0, "f6 xc")
    xe = _check_box(xe, -2.0, 2.0, "f6 xe")
    scalar = xc.ndim == 1 and xe.ndim == 1
    c = np.atleast_2d(xc)
    e = np.atleast_2d(xe)
    if c.shape[1] != 4 or e.shape[1] != 3:
        raise InvalidArgumentError("f6 takes xc with 4 and xe with 3 coordinates")
    c1, c2, c3, c4 = c.T
    e1, e2, e3 = e.T
    out = (
        e1 * (c1**2 - c2 + c3 - c4 + 2)
        + e2 * (-c1 + 2 * c2**2 - c3**2 + 2 * c4 + 1)
        + e3 * (2 * c1 - c2 + 2 * c3 - c4**2 + 5)
        + 5 * c1**2
        + 4 * c2**2
        + 3 * c3**2
        + 2 * c4**2
        - (e1**2 + e2**2)
    )
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# toy problem
# --------------------------------------------------------------------------


def toy_function(x, w):
    """Smooth 2-d test function on ``[0, 1]^2`` whose risk-optimal decision
    differs from its mean-optimal one."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    return 0.5 * np.sin(3 * math.pi * x) + 2.0 * (x - 0.6) ** 2 + 1.5 * w * x - w


def toy_distribution():
    return WSet.uniform(np.arange(10.0)[:, None] / 9.0)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------


def _load_optima():
    try:
        text = resources.files("riskbo").joinpath("data/true_optima.json").read_text()
    except FileNotFoundError:
        return {}
    return {k: v["value"] for k, v in json.loads(text)["optima"].items()}


def get_problem(name, alpha=None, risk=None, noise_std=None):
    """Build a registered problem; ``alpha``/``risk``/``noise_std`` override defaults."""
    optima = _load_optima()
    if name == "branin_williams":
        kind = risk or "VaR"
        a = 0.7 if alpha is None else alpha
        spec = RiskSpec(kind, a)
        return ProblemSpec(
            name, [[0, 0], [1, 1]], [[0, 0], [1, 1]], bw_distribution(),
            10.0 if noise_std is None else noise_std, spec,
            _bw_function, optima.get(f"branin_williams/{spec.kind}/{a!r}"),
        )
    if name == "f6":
        kind = risk or "CVaR"
        a = 0.75 if alpha is None else alpha
        spec = RiskSpec(kind, a)
        return ProblemSpec(
            name, [[-5] * 4, [5] * 4], [[-2] * 3, [2] * 3], UniformBox([-2] * 3, [2] * 3),
            1.0 if noise_std is None else noise_std, spec,
            lambda x, w: f6(x, w), optima.get(f"f6/{spec.kind}/{a!r}"), L_acq=40, L_eval=8,
        )
    if name == "toy":
        kind = risk or "CVaR"
        a = 0.7 if alpha is None else alpha
        spec = RiskSpec(kind, a)
        return ProblemSpec(
            name, [[0], [1]], [[0], [1]], toy_distribution(),
            0.1 if noise_std is None else noise_std, spec,
            lambda x, w: toy_function(x[:, 0], w[:, 0]), optima.get(f"toy/{spec.kind}/{a!r}"),
        )
    raise InvalidArgumentError(f"unknown problem {name!r}; expected branin_williams, f6 or toy")


PROBLEMS = ("branin_williams", "f6", "toy")


# --------------------------------------------------------------------------
# brute-force oracle
# --------------------------------------------------------------------------


def oracle_wset(problem, n=L_BIG, seed=0):
    """Full finite W, or an ``n``-point quasi-MC grid of a continuous W."""
    d = problem.w_distribution
    if isinstance(d, WSet):
        return d
    u = sobol_points(d.dim, n, seed)
    return WSet.uniform(d.lower + u * (d.upper - d.lower))


def brute_force_risk(problem, x, wset=None):
    """Noise-free ``rho[F(x, W)]`` at raw decision point(s) ``x``.

    Returns a float for a single point, an array for shape (n, dim_x).
    """
    wset = wset or oracle_wset(problem)
    x = np.asarray(x, dtype=float)
    xs = np.atleast_2d(x)
    L = len(wset)
    out = np.empty(xs.shape[0])
    chunk = max(1, 2_000_000 // L)
    for s in range(0, xs.shape[0], chunk):
        blk = xs[s : s + chunk]
        vals = problem.evaluate(np.repeat(blk, L, axis=0), np.tile(wset.points, (blk.shape[0], 1)))
        vals = vals.reshape(blk.shape[0], L)
        coef, _ = risk_coefficients(vals, wset.weights, problem.risk.alpha, problem.risk.kind)
        out[s : s + chunk] = np.sum(coef * vals, axis=-1)
    return float(out[0]) if x.ndim == 1 else out


def _grid(problem, per_dim):
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in problem.x_bounds.T]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, problem.dim_x)


def true_optimum(problem, per_dim, wset=None, refine=5):
    """Global minimum of the true risk by grid search plus local refinement.

    The ``refine`` best grid points are polished by Nelder-Mead inside the
    box.  Returns ``(x, value)``.
    """
    wset = wset or oracle_wset(problem)
    grid = _grid(problem, per_dim)
    vals = brute_force_risk(problem, grid, wset)
    lo, hi = problem.x_bounds

    def obj(z):
        return brute_force_risk(problem, np.clip(z, lo, hi), wset)

    best_x = grid[int(np.argmin(vals))]
    best_v = float(np.min(vals))
    for i in np.argsort(vals, kind="stable")[:refine]:
        res = minimize(obj, grid[i], method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 4000})
        v = obj(res.x)
        if v < best_v:
            best_x, best_v = np.clip(res.x, lo, hi), v
    return best_x, best_v


# --------------------------------------------------------------------------
# external simulators
# --------------------------------------------------------------------------


class ExternalSimulator:
    """Client for a simulator process speaking the JSON-lines stdio protocol.

    Each request ``{"id", "x", "w", "seed"}`` is written as one line; the
    process must answer with one line ``{"id", "y"}`` per request, in order.

    Parameters
    ----------
    command : str or list of str
    timeout : float
        Seconds to wait for each response.
    """

    def __init__(self, command, timeout=SIM_TIMEOUT, env=None, cwd=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                env=env, cwd=cwd, bufsize=0,
            )
        except OSError as exc:
            raise SimulatorError(f"cannot start simulator {self.command!r}: {exc}", "") from exc
        self._buffer = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)

    def _stderr(self):
        try:
            return self._proc.stderr.read().decode("utf-8", "replace") if self._proc.poll() is not None else ""
        except Exception:
            return ""

    def _readline(self):
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buffer:
            left = deadline - time.monotonic()
            if left <= 0:
                self.close()
                raise SimulatorError(f"simulator timed out after {self.timeout} s", "")
            if not self._sel.select(left):
                continue
            chunk = os.read(self._proc.stdout.fileno(), 65536)
            if not chunk:
                code = self._proc.wait()
                raise SimulatorError(f"simulator exited with status {code} before answering", self._stderr())
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def query(self, x, w, seed):
        """One noisy observation ``F(x, w)`` (raw coordinates)."""
        if self._proc.poll() is not None:
            raise SimulatorError(f"simulator exited with status {self._proc.returncode}", self._stderr())
        rid = self._next_id
        self._next_id += 1
        req = {"id": rid, "x": [float(v) for v in np.ravel(x)], "w": [float(v) for v in np.ravel(w)], "seed": int(seed)}
        try:
            self._proc.stdin.write((json.dumps(req) + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SimulatorError(f"cannot write to simulator: {exc}", self._stderr()) from exc
        line = self._readline()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line {line!r}", "") from exc
        if not isinstance(resp, dict) or resp.get("id") != rid or "y" not in resp:
            raise ProtocolError(f"unexpected response {line!r} to request id {rid}", "")
        y = resp["y"]
        if isinstance(y, bool) or not isinstance(y, (int, float)) or not math.isfinite(y):
            raise ProtocolError(f"response value {y!r} is not a finite number", "")
        return float(y)

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._sel.close()
        for s in (self._proc.stdout, self._proc.stderr):
            if s and not s.closed:
                s.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_problem(command, x_bounds, w_distribution, risk, w_bounds=None, timeout=SIM_TIMEOUT,
                     L_acq=None, L_eval=None, name="external"):
    """A :class:`ProblemSpec` whose observations come from a simulator process.

    The simulator supplies its own noise, so ``noise_std`` is 0 and
    ``extras["simulator"]`` carries the process handle.
    """
    sim = ExternalSimulator(command, timeout)
    if w_bounds is None:
        if isinstance(w_distribution, UniformBox):
            w_bounds = [w_distribution.lower, w_distribution.upper]
        else:
            w_bounds = [w_distribution.points.min(axis=0), w_distribution.points.max(axis=0)]

    def unavailable(x, w):
        raise SimulatorError("external problems have no noise-free function; use the simulator", "")

    prob = ProblemSpec(name, x_bounds, w_bounds, w_distribution, 0.0, risk, unavailable,
                       L_acq=L_acq, L_eval=L_eval)
    prob.extras["simulator"] = sim
    return prob


__all__ = [
    "ProblemSpec", "branin", "branin_williams", "bw_distribution", "f6", "toy_function",
    "toy_distribution", "get_problem", "brute_force_risk", "true_optimum", "oracle_wset",
    "ExternalSimulator", "external_problem",
]


OPTIMA_CASES = (
    ("branin_williams", "VaR", 0.7, (101, 201)),
    ("branin_williams", "CVaR", 0.7, (101, 201)),
    ("f6", "CVaR", 0.75, (7, 9)),
    ("toy", "CVaR", 0.7, (101, 1001)),
)


def compute_true_optima(cases=OPTIMA_CASES):
    """Recompute the stored optima, each at two grid resolutions."""
    out = {}
    for name, kind, alpha, (coarse, fine) in cases:
        prob = get_problem(name, alpha=alpha, risk=kind)
        x1, v1 = true_optimum(prob, coarse)
        x2, v2 = true_optimum(prob, fine)
        out[f"{name}/{kind}/{alpha!r}"] = {
            "value": min(v1, v2),
            "x": (x1 if v1 < v2 else x2).tolist(),
            "coarse_grid": coarse, "coarse_value": v1,
            "fine_grid": fine, "fine_value": v2,
        }
    return {"format_version": 1, "w_oracle_points": L_BIG, "optima": out}
