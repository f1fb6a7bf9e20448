"""Empirical measures, Wasserstein distances and the empirical-measure rate function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

EXACT_MAX_SIZE = 512
SLICED_PROJECTIONS = 64


class DimensionError(ValueError):
    pass


class SizeError(ValueError):
    pass


class UnsupportedParametersError(ValueError):
    """Parameter combination sits on a boundary the rate function does not cover."""


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform atoms ``(1/N) sum_i delta_{points[i]}``; points has shape (N, dim)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"need at least one point of shape (N, dim), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def dirac(cls, state) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(state, dtype=float))[None, :])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class RateParams:
    q: float
    p: float
    d: int

    def __post_init__(self):
        if self.q < 1:
            raise UnsupportedParametersError(f"q must be >= 1, got {self.q}")
        if not self.p > self.q:
            raise UnsupportedParametersError(f"p must exceed q strictly (p={self.p}, q={self.q})")
        if self.d < 1 or int(self.d) != self.d:
            raise UnsupportedParametersError(f"d must be a positive integer, got {self.d}")


def moment(mu: EmpiricalMeasure, q: float) -> float:
    """(1/N) sum |x_i|^q, i.e. W_q^q(mu, delta_0)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.mean(norms**q))


def _sorted_1d(mu: EmpiricalMeasure) -> np.ndarray:
    if mu.dim != 1:
        raise DimensionError(f"1-D transport needs dim=1, got dim={mu.dim}")
    return np.sort(mu.points[:, 0], kind="stable")


def wasserstein_1d(q: float, a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W_q on the line via the monotone (quantile) coupling."""
    xa, xb = _sorted_1d(a), _sorted_1d(b)
    na, nb = xa.size, xb.size
    if na == nb:
        cost = np.mean(np.abs(xa - xb) ** q)
    else:
        # quantile functions are step functions with jumps at i/na and j/nb
        g = math.gcd(na, nb)
        lcm = na // g * nb
        cuts = np.union1d(np.arange(na + 1) * (lcm // na), np.arange(nb + 1) * (lcm // nb))
        mids = cuts[:-1] + cuts[1:]  # twice the midpoint in lcm units
        widths = np.diff(cuts) / lcm
        ia = mids * na // (2 * lcm)
        ib = mids * nb // (2 * lcm)
        cost = np.sum(widths * np.abs(xa[ia] - xb[ib]) ** q)
    return float(cost ** (1.0 / q))


def _replicate_to(mu: EmpiricalMeasure, size: int) -> np.ndarray:
    return np.repeat(mu.points, size // mu.n, axis=0)


def wasserstein_exact_small(q: float, a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W_q by optimal assignment on the |a_i - b_j|^q cost matrix.

    Unequal sizes are handled by splitting atoms to the common size lcm(Na, Nb),
    which must not exceed the exact-solver limit.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    size = a.n if a.n == b.n else a.n * b.n // math.gcd(a.n, b.n)
    if size > EXACT_MAX_SIZE:
        raise SizeError(
            f"exact assignment limited to {EXACT_MAX_SIZE} atoms (got {size}); "
            "use wasserstein_1d for dim=1 or wasserstein_sliced otherwise"
        )
    pa = a.points if a.n == size else _replicate_to(a, size)
    pb = b.points if b.n == size else _replicate_to(b, size)
    diff = pa[:, None, :] - pb[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=-1)) ** q
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / q))


def _projection_directions(dim: int, n_projections: int, seed: int) -> np.ndarray:
    from .noise import StreamKind, keyed_normal

    idx = np.arange(n_projections)[:, None]
    comps = np.arange(dim)[None, :]
    z = keyed_normal(seed, StreamKind.INITIAL, idx, 0, 2**32 - 1, comps)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def wasserstein_sliced(
    q: float, a: EmpiricalMeasure, b: EmpiricalMeasure, n_projections: int = SLICED_PROJECTIONS, seed: int = 0
) -> float:
    """Sliced W_q: q-th root of the mean of 1-D W_q^q over fixed random directions.

    An approximation (a lower bound in expectation), not the true W_q.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dirs = _projection_directions(a.dim, n_projections, seed)
    total = 0.0
    for u in dirs:
        pa = EmpiricalMeasure(a.points @ u)
        pb = EmpiricalMeasure(b.points @ u)
        total += wasserstein_1d(q, pa, pb) ** q
    return float((total / n_projections) ** (1.0 / q))


def wasserstein(q: float, a: EmpiricalMeasure, b: EmpiricalMeasure) -> tuple[float, str]:
    """W_q with automatic method choice; returns (value, method label)."""
    if a.dim == 1:
        return wasserstein_1d(q, a, b), "exact-1d-sort"
    size = a.n if a.n == b.n else a.n * b.n // math.gcd(a.n, b.n)
    if size <= EXACT_MAX_SIZE:
        return wasserstein_exact_small(q, a, b), "exact-assignment"
    return wasserstein_sliced(q, a, b), f"approximate-sliced-{SLICED_PROJECTIONS}"


def _close(x: float, y: float) -> bool:
    return math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-12)


def rate_branch(rp: RateParams) -> int:
    """Which of the three regimes (1, 2, 3) applies; raises on excluded boundaries."""
    q, p, d = rp.q, rp.p, rp.d
    half = d / 2.0
    if _close(q, half):
        if _close(p, 2 * q):
            raise UnsupportedParametersError(f"q = d/2 = {q} with p = 2q is excluded")
        return 2
    if q > half:
        if _close(p, 2 * q):
            raise UnsupportedParametersError(f"p = 2q = {p} is excluded when q > d/2")
        return 1
    if _close(p, d / (d - q)):
        raise UnsupportedParametersError(f"p = d/(d-q) = {p} is excluded when q < d/2")
    return 3


def epsilon_rate(rp: RateParams, n: int) -> float:
    """Rate of E W_q^q(empirical_N, law) for i.i.d. samples with a finite p-th moment."""
    if n < 1:
        raise ValueError(f"N must be a positive integer, got {n}")
    q, p, d = rp.q, rp.p, rp.d
    tail = n ** (-(p - q) / p)
    branch = rate_branch(rp)
    if branch == 1:
        return n**-0.5 + tail
    if branch == 2:
        return n**-0.5 * math.log(1 + n) + tail
    return n ** (-q / d) + tail
