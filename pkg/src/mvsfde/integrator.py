"""Explicit Euler-Maruyama for the N-particle functional system with common noise.

All particles of one step see the empirical measure frozen at the start of the
step, so the update is a synchronous map and may be evaluated in any order or
in any partition of the particles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .measures import EmpiricalMeasure
from .model import ModelSpec, SegmentBuffer, grid_steps
from .noise import KeyedNoise, ZeroNoise

BLOWUP_THRESHOLD = 1e12


class BlowUpError(RuntimeError):
    """A particle left the finite range; carries the offending particle and time."""

    def __init__(self, particle: int, time: float, record: "TrajectoryRecord | None" = None):
        super().__init__(f"integration blow-up: particle {particle} at t={time:.17g}")
        self.particle = particle
        self.time = time
        self.record = record


# Initial segment samplers: (stream_ids, thetas, dim, noise, replication) -> (N, m+1, dim)
InitialSampler = Callable[[np.ndarray, np.ndarray, int, object, int], np.ndarray]


def constant_initial(value) -> InitialSampler:
    def sample(stream_ids, thetas, dim, noise, replication):
        state = np.broadcast_to(np.asarray(value, dtype=float), (dim,))
        return np.broadcast_to(state, (len(stream_ids), thetas.size, dim)).copy()

    return sample


def gaussian_constant_initial(mean: float, std: float) -> InitialSampler:
    """Each particle gets an independent constant segment ``mean + std * Z_k``."""

    def sample(stream_ids, thetas, dim, noise, replication):
        z = noise.initial(stream_ids, replication, 1, dim)
        return np.broadcast_to(mean + std * z, (len(stream_ids), thetas.size, dim)).copy()

    return sample


@dataclass
class ParticleSystem:
    model: ModelSpec
    segments: SegmentBuffer
    step_size: float
    master_seed: int
    replication_index: int = 0
    step_index: int = 0
    stream_ids: np.ndarray | None = None
    noise: object = None

    def __post_init__(self):
        n = self.segments.values.shape[0]
        if self.segments.values.ndim != 3 or self.segments.dim != self.model.dim:
            raise ValueError(f"segments must have shape (N, m+1, {self.model.dim})")
        if self.segments.delay != self.model.delay or self.segments.step != self.step_size:
            raise ValueError("segments must share the model delay and the integration step")
        if self.stream_ids is None:
            self.stream_ids = np.arange(n)
        self.stream_ids = np.asarray(self.stream_ids, dtype=np.int64)
        if self.stream_ids.shape != (n,) or np.unique(self.stream_ids).size != n:
            raise ValueError("stream_ids must be N distinct indices")
        if self.noise is None:
            self.noise = KeyedNoise(self.master_seed)

    @classmethod
    def create(
        cls,
        model: ModelSpec,
        n_particles: int,
        step_size: float,
        master_seed: int,
        initial: InitialSampler | float = 1.0,
        replication_index: int = 0,
        noise=None,
    ) -> "ParticleSystem":
        if n_particles < 1:
            raise ValueError("n_particles must be positive")
        m = grid_steps(model.delay, step_size, "delay")
        thetas = -model.delay + step_size * np.arange(m + 1)
        noise = noise if noise is not None else KeyedNoise(master_seed)
        sampler = initial if callable(initial) else constant_initial(initial)
        ids = np.arange(n_particles)
        values = sampler(ids, thetas, model.dim, noise, replication_index)
        return cls(
            model=model,
            segments=SegmentBuffer(values, step_size, model.delay),
            step_size=step_size,
            master_seed=master_seed,
            replication_index=replication_index,
            noise=noise,
        )

    @property
    def n_particles(self) -> int:
        return self.segments.values.shape[0]

    @property
    def time(self) -> float:
        return self.step_index * self.step_size

    @property
    def states(self) -> np.ndarray:
        return self.segments.current

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states)

    def increments(self, step_index: int | None = None):
        """(idiosyncratic (N, d), common (d,)) increments driving step ``step_index``."""
        n = self.step_index if step_index is None else step_index
        d = self.model.dim
        dw = self.noise.idiosyncratic(self.stream_ids, self.replication_index, n, d, self.step_size)
        dw0 = self.noise.common(self.replication_index, n, d, self.step_size)
        return dw, dw0


def step(sys: ParticleSystem, blocks: Sequence[np.ndarray] | None = None) -> ParticleSystem:
    """Advance every particle by one Euler-Maruyama step.

    ``blocks`` partitions the particle indices; each block is evaluated
    separately against the same frozen measure (used to check that the
    update does not depend on evaluation order).
    """
    mu = sys.measure()
    dw, dw0 = sys.increments()
    dt = sys.step_size
    x = sys.states
    new = np.empty_like(x)
    if blocks is None:
        blocks = (slice(None),)
    for idx in blocks:
        segs = sys.segments[idx]
        f, g, g0 = sys.model.coefficients(segs, mu)
        new[idx] = (
            x[idx]
            + f * dt
            + np.einsum("...ij,...j->...i", g, dw[idx])
            + np.einsum("...ij,j->...i", g0, dw0)
        )
    bad = ~np.isfinite(new) | (np.abs(new) > BLOWUP_THRESHOLD)
    if bad.any():
        k = int(np.argwhere(bad.any(axis=-1))[0, 0])
        raise BlowUpError(k, (sys.step_index + 1) * dt)
    return replace(sys, segments=sys.segments.pushed(new), step_index=sys.step_index + 1)


@dataclass
class TrajectoryRecord:
    """Recorded times, moment tracks and (optionally) particle paths."""

    times: np.ndarray
    moments: dict[float, np.ndarray]
    paths: np.ndarray | None = None  # (particles, times, dim)
    path_particles: np.ndarray | None = None
    final: ParticleSystem | None = field(default=None, repr=False)


def _moment_values(states: np.ndarray, qs) -> list[float]:
    norms = np.linalg.norm(states, axis=-1)
    return [float(np.mean(norms**q)) for q in qs]


def run(
    sys: ParticleSystem,
    horizon: float,
    record_stride: int = 1,
    moments: Sequence[float] = (2.0,),
    record_paths: int | Sequence[int] | None = None,
    callback: Callable[[ParticleSystem], None] | None = None,
) -> TrajectoryRecord:
    """Integrate over ``horizon`` and record every ``record_stride`` steps.

    ``record_paths`` is a particle count (first k particles) or explicit
    indices; ``callback(sys)`` is invoked at each recorded time.  On blow-up
    the :class:`BlowUpError` carries the partial record.
    """
    n_steps = grid_steps(horizon, sys.step_size, "horizon")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    if record_paths is None:
        path_idx = None
    elif np.isscalar(record_paths):
        path_idx = np.arange(min(int(record_paths), sys.n_particles))
    else:
        path_idx = np.asarray(record_paths, dtype=int)

    qs = [float(q) for q in moments]
    start = sys.step_index
    times, tracks, paths = [], [], []

    def record(s: ParticleSystem):
        times.append(s.time)
        tracks.append(_moment_values(s.states, qs))
        if path_idx is not None:
            paths.append(s.states[path_idx].copy())
        if callback is not None:
            callback(s)

    def build(final):
        arr = np.asarray(tracks, dtype=float).reshape(len(times), len(qs))
        return TrajectoryRecord(
            times=np.asarray(times, dtype=float),
            moments={q: arr[:, i] for i, q in enumerate(qs)},
            paths=None if path_idx is None else np.stack(paths, axis=1),
            path_particles=path_idx,
            final=final,
        )

    record(sys)
    for i in range(1, n_steps + 1):
        try:
            sys = step(sys)
        except BlowUpError as exc:
            exc.record = build(sys)
            raise
        if i % record_stride == 0:
            record(sys)
    assert sys.step_index - start == n_steps
    return build(sys)


def nested_coupling_check(seed: int, n: int, m: int, steps: int, replication: int = 0, dim: int = 1) -> bool:
    """True iff an n-particle and an m-particle run share all noise for particles k < n."""
    if n > m:
        raise ValueError("need n <= m")
    from .model import ModelSpec

    def zero(segs, mu):
        return np.zeros(segs.values.shape[:-2] + (dim,))

    def zero_mat(segs, mu):
        return np.zeros(segs.values.shape[:-2] + (dim, dim))

    model = ModelSpec(dim=dim, delay=0.0, drift=zero, diffusion=zero_mat, common_diffusion=zero_mat)
    small = ParticleSystem.create(model, n, 1.0, seed, initial=0.0, replication_index=replication)
    large = ParticleSystem.create(model, m, 1.0, seed, initial=0.0, replication_index=replication)
    for s in range(steps):
        dw_n, dw0_n = small.increments(s)
        dw_m, dw0_m = large.increments(s)
        if not (np.array_equal(dw_n, dw_m[:n]) and np.array_equal(dw0_n, dw0_m)):
            return False
    return True


__all__ = [
    "BlowUpError",
    "ParticleSystem",
    "TrajectoryRecord",
    "ZeroNoise",
    "constant_initial",
    "gaussian_constant_initial",
    "nested_coupling_check",
    "run",
    "step",
]
