"""Keyed Gaussian increments for the common and idiosyncratic Brownian drivers.

Every draw is a pure function of ``(master_seed, kind, particle, replication,
step, component)``: the tuple is fed as a counter through Philox4x32-10 and the
output words are turned into a standard normal with Box-Muller.  Because no
draw depends on call order, an N-particle system and an M-particle system
built from the same seed see identical noise for the particles they share,
and the number of worker threads cannot change any result.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

_TWO_M53 = 2.0**-53


class StreamKind(enum.IntEnum):
    COMMON = 0
    IDIOSYNCRATIC = 1
    # auxiliary streams, kept apart so they never collide with driver noise
    INITIAL = 2
    RESAMPLE = 3


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    kind: StreamKind
    particle_index: int = 0
    replication_index: int = 0
    step_index: int = 0
    component_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.kind == StreamKind.COMMON and self.particle_index != 0:
            raise ValueError("common-noise keys carry particle_index 0")
        for name in ("particle_index", "replication_index", "step_index", "component_index"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function, vectorised over the trailing axis.

    ``counter`` is a sequence of four uint32 arrays (broadcastable to a common
    shape) and ``key`` a pair of uint32 scalars.  Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint32) for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint32(key[0])
    k1 = np.uint32(key[1])
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = np.uint32(k0 + _W0)
                k1 = np.uint32(k1 + _W1)
            p0 = _M0 * c0.astype(np.uint64)
            p1 = _M1 * c2.astype(np.uint64)
            hi0 = (p0 >> _SHIFT32).astype(np.uint32)
            lo0 = (p0 & _MASK32).astype(np.uint32)
            hi1 = (p1 >> _SHIFT32).astype(np.uint32)
            lo1 = (p1 & _MASK32).astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _seed_words(master_seed: int) -> tuple[int, int]:
    if not 0 <= master_seed < 2**64:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    return master_seed & 0xFFFFFFFF, master_seed >> 32


def _check_u32(name, values):
    arr = np.asarray(values)
    if arr.size and (arr.min() < 0 or arr.max() >= 2**32):
        raise ValueError(f"{name} out of the 32-bit counter range")
    return arr.astype(np.uint32)


def keyed_normal(master_seed, kind, particle, replication, step, component):
    """Standard normals for broadcastable index arrays; one draw per key."""
    kind = int(kind)
    component = np.asarray(component)
    if component.size and component.max() >= 2**30:
        raise ValueError("component index out of range")
    c3 = (np.uint32(kind) << np.uint32(30)) | component.astype(np.uint32)
    words = philox4x32(
        (
            _check_u32("step_index", step),
            _check_u32("particle_index", particle),
            _check_u32("replication_index", replication),
            c3,
        ),
        _seed_words(master_seed),
    )
    a, b, c, d = (w.astype(np.float64) for w in words)
    # u1 in (0, 1] keeps the log finite; u2 in [0, 1)
    u1 = (np.floor(a / 32.0) * 67108864.0 + np.floor(b / 64.0) + 1.0) * _TWO_M53
    u2 = (np.floor(c / 32.0) * 67108864.0 + np.floor(d / 64.0)) * _TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def keyed_uniform(master_seed, kind, particle, replication, step, component):
    """Uniforms on [0, 1) from the same counter layout as :func:`keyed_normal`."""
    kind = int(kind)
    c3 = (np.uint32(kind) << np.uint32(30)) | np.asarray(component).astype(np.uint32)
    words = philox4x32(
        (
            _check_u32("step_index", step),
            _check_u32("particle_index", particle),
            _check_u32("replication_index", replication),
            c3,
        ),
        _seed_words(master_seed),
    )
    a, b = (w.astype(np.float64) for w in words[:2])
    return (np.floor(a / 32.0) * 67108864.0 + np.floor(b / 64.0)) * _TWO_M53


def brownian_increment(key: StreamKey, dt: float, dim: int = 1) -> np.ndarray:
    """``sqrt(dt) * Z`` for components ``key.component_index .. + dim - 1``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    comps = key.component_index + np.arange(dim)
    z = keyed_normal(
        key.master_seed, key.kind, key.particle_index, key.replication_index, key.step_index, comps
    )
    return math.sqrt(dt) * z


class KeyedNoise:
    """Increment provider used by the integrator.

    Particle ``k`` of replication ``r`` at step ``n`` always receives the same
    idiosyncratic increment, whatever the size of the system it lives in.
    """

    def __init__(self, master_seed: int):
        _seed_words(master_seed)
        self.master_seed = int(master_seed)

    def idiosyncratic(self, stream_ids, replication, step_index, dim, dt):
        ids = np.asarray(stream_ids)[:, None]
        z = keyed_normal(
            self.master_seed, StreamKind.IDIOSYNCRATIC, ids, replication, step_index, np.arange(dim)[None, :]
        )
        return math.sqrt(dt) * z

    def common(self, replication, step_index, dim, dt):
        z = keyed_normal(self.master_seed, StreamKind.COMMON, 0, replication, step_index, np.arange(dim))
        return math.sqrt(dt) * z

    def initial(self, stream_ids, replication, n_nodes, dim):
        """Standard normals of shape (len(stream_ids), n_nodes, dim) for initial segments."""
        ids = np.asarray(stream_ids)[:, None, None]
        nodes = np.arange(n_nodes)[None, :, None]
        comps = np.arange(dim)[None, None, :]
        return keyed_normal(self.master_seed, StreamKind.INITIAL, ids, replication, nodes, comps)


class ZeroNoise:
    """All increments zero; turns the particle system into its drift-only skeleton."""

    master_seed = 0

    def idiosyncratic(self, stream_ids, replication, step_index, dim, dt):
        return np.zeros((len(stream_ids), dim))

    def common(self, replication, step_index, dim, dt):
        return np.zeros(dim)

    def initial(self, stream_ids, replication, n_nodes, dim):
        return np.zeros((len(stream_ids), n_nodes, dim))


def nested_coupling_check(seed: int, n: int, m: int, steps: int, replication: int = 0, dim: int = 1) -> bool:
    """True iff particles k < n of an n-run and an m-run get identical increments.

    Compares, step by step, the idiosyncratic increments of the shared
    particles and the common increments, as drawn by the integrator.
    """
    from .integrator import nested_coupling_check as _check

    return _check(seed, n, m, steps, replication=replication, dim=dim)
