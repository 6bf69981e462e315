"""Quasi-Monte Carlo base samples.

All randomness that defines one sample-average approximation lives in a
:class:`BaseSampleSet`.  Everything here is a pure function of its integer
seed, so two calls with the same arguments return bit-identical arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc as _scipy_qmc

from .errors import InvalidArgumentError
from .risk import UniformBox, WSet

MAX_SOBOL_DIM = 1111
CLAMP = 1e-12


def child_seed(seed, *stream):
    """Derive an independent 64-bit seed for ``(seed, *stream)``.

    Uses numpy's ``SeedSequence`` spawn-key hashing, so children are
    reproducible and statistically independent of the parent and of each
    other.  ``stream`` entries may be ints or short strings.
    """
    key = []
    for s in stream:
        if isinstance(s, str):
            key.append(int.from_bytes(s.encode("utf-8")[:8].ljust(8, b"\0"), "little"))
        else:
            key.append(int(s))
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sobol_points(dim, n, seed):
    """Scrambled Sobol points in ``[0, 1)^dim``.

    Parameters
    ----------
    dim : int
        Dimension, at most 1111.
    n : int
        Number of points.  The sequence is generated at the next power of two
        and truncated, which keeps the first ``n`` points deterministic.
    seed : int
        Scrambling seed (linear matrix scramble plus digital shift).

    Returns
    -------
    ndarray of shape (n, dim)
    """
    dim = int(dim)
    n = int(n)
    if dim < 1 or dim > MAX_SOBOL_DIM:
        raise InvalidArgumentError(f"sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {dim}")
    if n < 1:
        raise InvalidArgumentError(f"need at least one point, got n={n}")
    engine = _scipy_qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(int(seed) & (2**64 - 1)))
    m = max(0, int(np.ceil(np.log2(n))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = engine.random_base2(m)[:n]
    # scipy can return exact 1.0 only through float rounding; fold it back
    return np.where(pts >= 1.0, np.nextafter(1.0, 0.0), pts)


def normal_transform(u):
    """Elementwise inverse standard-normal CDF after clamping into ``(0, 1)``."""
    u = np.clip(np.asarray(u, dtype=float), CLAMP, 1.0 - CLAMP)
    return ndtri(u)


@dataclass(frozen=True)
class BaseSampleSet:
    """Fixed standard-normal draws pinning one SAA instance.

    Attributes
    ----------
    z0 : ndarray (K,)
        Scalar draws generating the fantasy observations.
    zL : ndarray (K + 1, M, L)
        Sample-path draws; row 0 belongs to the current model, row ``i`` to
        fantasy ``i``.
    wset : WSet
        The environmental points ``w_{1:L}`` and their weights.
    seed : int
    """

    z0: np.ndarray
    zL: np.ndarray
    wset: WSet
    seed: int

    @property
    def K(self):
        return self.z0.shape[0]

    @property
    def M(self):
        return self.zL.shape[1]

    @property
    def L(self):
        return self.zL.shape[2]

    def head(self, k):
        """The first ``k`` fantasies (used for cheap raw-sample scoring)."""
        k = min(int(k), self.K)
        return BaseSampleSet(self.z0[:k], self.zL[: k + 1], self.wset, self.seed)


def draw_wset(distribution, L, wsource, seed):
    """Environmental set for one iteration.

    ``wsource="full"`` returns a finite distribution verbatim.  ``"subsample"``
    draws ``L`` points: i.i.d. uniform from a continuous box (weights 1/L), or
    ``L`` distinct support points of a finite set chosen with probability
    proportional to their mass (weights renormalized).
    """
    L = int(L)
    if L < 1:
        raise InvalidArgumentError("L must be >= 1")
    rng = np.random.default_rng(child_seed(seed, "wset"))
    if isinstance(distribution, WSet):
        if wsource == "full":
            return distribution
        if wsource != "subsample":
            raise InvalidArgumentError(f"unknown wsource {wsource!r}")
        if L > len(distribution):
            raise InvalidArgumentError(f"L={L} exceeds the {len(distribution)} points of a finite W")
        idx = np.sort(rng.choice(len(distribution), size=L, replace=False, p=distribution.weights))
        w = distribution.weights[idx]
        return WSet(distribution.points[idx], w / w.sum())
    if isinstance(distribution, UniformBox):
        if wsource == "full":
            raise InvalidArgumentError("a continuous W has no finite 'full' set; use wsource='subsample'")
        pts = distribution.lower + rng.random((L, distribution.dim)) * (distribution.upper - distribution.lower)
        return WSet(pts, np.full(L, 1.0 / L))
    raise InvalidArgumentError(f"unsupported W distribution {type(distribution).__name__}")


def make_base_samples(K, M, L, wsource, seed, distribution=None, common_paths=False):
    """Build a :class:`BaseSampleSet`.

    Parameters
    ----------
    K, M, L : int
        Fantasies, sample paths per model and environmental points.  For a
        finite ``distribution`` with ``wsource="full"`` the set size wins and
        ``L`` may be ``None``.
    wsource : {"full", "subsample"}
    seed : int
    distribution : WSet or UniformBox
        Environmental distribution, already in model (unit-cube) coordinates.
    common_paths : bool
        Give every fantasy (rows ``1..K`` of ``zL``) the same sample-path
        draws.  Fantasies then differ only through their means, so a
        candidate that carries no information has exactly zero knowledge
        gradient.
    """
    if distribution is None:
        raise InvalidArgumentError("an environmental distribution is required")
    if isinstance(distribution, WSet) and wsource == "full":
        if L is not None and int(L) != len(distribution):
            raise InvalidArgumentError(f"L={L} does not match the {len(distribution)}-point W used in full")
        L = len(distribution)
    K, M, L = int(K), int(M), int(L)
    if min(K, M, L) < 1:
        raise InvalidArgumentError("K, M and L must all be >= 1")
    wset = draw_wset(distribution, L, wsource, seed)
    z0 = normal_transform(sobol_points(1, K, child_seed(seed, "z0"))[:, 0])
    zL = np.empty((K + 1, M, L))
    for i in range(K + 1):
        if common_paths and i > 1:
            zL[i] = zL[1]
        else:
            zL[i] = normal_transform(sobol_points(L, M, child_seed(seed, "zL", i)))
    return BaseSampleSet(z0=z0, zL=zL, wset=wset, seed=int(seed))
