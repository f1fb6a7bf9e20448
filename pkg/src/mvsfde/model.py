"""Delayed-path storage, model coefficients and the built-in scalar example.

A :class:`SegmentBuffer` holds the path window ``{X(t+theta): -tau <= theta <= 0}``
sampled on the uniform grid of the integrator.  Values carry optional leading
batch axes, so one buffer of shape ``(N, m+1, d)`` stores the segments of a
whole particle system and every coefficient is evaluated for all particles in
one vectorised call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .measures import EmpiricalMeasure

_GRID_RTOL = 1e-9


class ModelError(ValueError):
    """Model definition or evaluation is inconsistent with its declared shape."""


class ConfigurationError(ValueError):
    """Grid alignment rule violated (a span is not a multiple of the step)."""


class SegmentRangeError(ValueError):
    """Lookup outside [-tau, 0]."""


def grid_steps(length: float, step: float, what: str = "length") -> int:
    """Number of steps ``length / step``; raises unless it is an integer."""
    if step <= 0:
        raise ConfigurationError(f"step must be positive, got {step}")
    if length < 0:
        raise ConfigurationError(f"{what} must be non-negative, got {length}")
    m = round(length / step)
    if abs(m * step - length) > _GRID_RTOL * max(1.0, abs(length)):
        raise ConfigurationError(f"dt must divide {what} ({what}={length!r}, dt={step!r})")
    return int(m)


@dataclass
class SegmentBuffer:
    """Path window on the grid ``theta_i = -tau + i*step``, oldest first.

    ``values[..., -1, :]`` is the current state phi(0).
    """

    values: np.ndarray
    step: float
    delay: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        m = grid_steps(self.delay, self.step, "delay")
        if self.values.ndim < 2 or self.values.shape[-2] != m + 1:
            raise ModelError(
                f"segment needs {m + 1} grid nodes of shape (..., {m + 1}, dim), got {self.values.shape}"
            )

    @classmethod
    def constant(cls, state, delay: float, step: float, batch: tuple[int, ...] = ()) -> "SegmentBuffer":
        state = np.atleast_1d(np.asarray(state, dtype=float))
        m = grid_steps(delay, step, "delay")
        values = np.broadcast_to(state, batch + (m + 1, state.shape[-1])).copy()
        return cls(values, step, delay)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[-2] - 1

    @property
    def current(self) -> np.ndarray:
        return self.values[..., -1, :]

    def thetas(self) -> np.ndarray:
        return -self.delay + self.step * np.arange(self.n_steps + 1)

    def __getitem__(self, idx) -> "SegmentBuffer":
        """Select along the batch axes, e.g. ``buf[k]`` for particle k."""
        return SegmentBuffer(self.values[idx], self.step, self.delay)

    def pushed(self, state) -> "SegmentBuffer":
        """New buffer with ``state`` appended and the oldest node dropped."""
        state = np.asarray(state, dtype=float)
        out = np.empty_like(self.values)
        out[..., :-1, :] = self.values[..., 1:, :]
        out[..., -1, :] = state
        return SegmentBuffer(out, self.step, self.delay)


def segment_at(buf: SegmentBuffer, theta: float) -> np.ndarray:
    """phi(theta): grid value on nodes, linear interpolation in between."""
    if not -buf.delay - 1e-12 <= theta <= 1e-12:
        raise SegmentRangeError(f"theta={theta} outside [-{buf.delay}, 0]")
    if buf.n_steps == 0:
        return buf.values[..., 0, :].copy()
    pos = (theta + buf.delay) / buf.step
    pos = min(max(pos, 0.0), float(buf.n_steps))
    i = int(np.floor(pos))
    node = round(pos)
    if abs(pos - node) <= 1e-12 * max(1.0, pos):
        return buf.values[..., node, :].copy()
    w = pos - i
    return (1.0 - w) * buf.values[..., i, :] + w * buf.values[..., i + 1, :]


def trapezoid_weights(n_intervals: int, step: float) -> np.ndarray:
    w = np.full(n_intervals + 1, step)
    w[0] = w[-1] = 0.5 * step
    return w


def distributed_delay_integral(buf: SegmentBuffer, span: float) -> np.ndarray:
    """Trapezoid approximation of the integral of phi over [-span, 0]."""
    s = grid_steps(span, buf.step, "delay_span")
    if s == 0:
        raise ConfigurationError("delay_span must be positive")
    if s > buf.n_steps:
        raise ConfigurationError(f"delay_span={span} exceeds the stored delay {buf.delay}")
    w = trapezoid_weights(s, buf.step)
    window = buf.values[..., buf.n_steps - s :, :]
    return (window * w[:, None]).sum(axis=-2)


Drift = Callable[[SegmentBuffer, EmpiricalMeasure], np.ndarray]
Diffusion = Callable[[SegmentBuffer, EmpiricalMeasure], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the functional mean-field SDE.

    ``drift(segments, mu)`` returns shape ``(..., dim)``; ``diffusion`` and
    ``common_diffusion`` return ``(..., dim, dim)``, where ``...`` are the
    batch axes of ``segments``.  They must be pure functions.
    """

    dim: int
    delay: float
    drift: Drift
    diffusion: Diffusion
    common_diffusion: Diffusion
    growth_exponent: float = 2.0
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError("dim must be a positive integer")
        if self.delay < 0:
            raise ModelError("delay must be non-negative")
        if self.growth_exponent < 2:
            raise ModelError("growth_exponent must be >= 2")

    def coefficients(self, segments: SegmentBuffer, mu: EmpiricalMeasure):
        """(f, g, g0) evaluated and shape-checked for a batch of segments."""
        batch = segments.values.shape[:-2]
        f = np.asarray(self.drift(segments, mu), dtype=float)
        g = np.asarray(self.diffusion(segments, mu), dtype=float)
        g0 = np.asarray(self.common_diffusion(segments, mu), dtype=float)
        d = self.dim
        if f.shape != batch + (d,):
            raise ModelError(f"{self.name}: drift returned shape {f.shape}, expected {batch + (d,)}")
        for label, arr in (("diffusion", g), ("common_diffusion", g0)):
            if arr.shape != batch + (d, d):
                raise ModelError(f"{self.name}: {label} returned shape {arr.shape}, expected {batch + (d, d)}")
        return f, g, g0


def vanishes_at_origin(model: ModelSpec, step: float, atol: float = 0.0) -> bool:
    """Spot check of f(0, delta_0) = g(0, delta_0) = g0(0, delta_0) = 0."""
    seg = SegmentBuffer.constant(np.zeros(model.dim), model.delay, step, batch=(1,))
    dirac = EmpiricalMeasure(np.zeros((1, model.dim)))
    return all(np.all(np.abs(c) <= atol) for c in model.coefficients(seg, dirac))


@dataclass(frozen=True)
class ExampleModelParams:
    linear_coeff: float = -2.0
    cubic_coeff: float = -3.0
    delay_weight: float = 0.25
    mean_weight: float = 0.5
    noise_weight: float = 0.5
    delay_span: float = 0.25

    def __post_init__(self):
        if not self.delay_span > 0:
            raise ModelError("delay_span must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExampleModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown example parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


def _require_scalar(buf: SegmentBuffer):
    if buf.dim != 1:
        raise ModelError(f"the example model is scalar, got dim={buf.dim}")


def example_drift(params: ExampleModelParams, buf: SegmentBuffer, mu: EmpiricalMeasure):
    """Scalar drift a*y + b*y^3 + c*int_{-span}^0 y(t+s)ds + e*mean(mu).

    Returns an array with the batch shape of ``buf`` (a float for a single segment).
    """
    _require_scalar(buf)
    y = buf.current[..., 0]
    integral = distributed_delay_integral(buf, params.delay_span)[..., 0]
    mean = mu.mean()[0]
    return (
        params.linear_coeff * y
        + params.cubic_coeff * y**3
        + params.delay_weight * integral
        + params.mean_weight * mean
    )


def example_diffusion(params: ExampleModelParams, buf: SegmentBuffer, mu: EmpiricalMeasure):
    _require_scalar(buf)
    return params.noise_weight * (buf.current[..., 0] + mu.mean()[0])


def example_model(params: ExampleModelParams | None = None) -> ModelSpec:
    params = params or ExampleModelParams()

    def drift(segs, mu):
        return np.asarray(example_drift(params, segs, mu))[..., None]

    def diffusion(segs, mu):
        return np.asarray(example_diffusion(params, segs, mu))[..., None, None]

    return ModelSpec(
        dim=1,
        delay=params.delay_span,
        drift=drift,
        diffusion=diffusion,
        common_diffusion=diffusion,
        growth_exponent=6.0,
        name="example",
        params=dict(vars(params)),
    )


_REGISTRY: dict[str, Callable[..., ModelSpec]] = {}


def register_model(name: str, factory: Callable[..., ModelSpec]) -> None:
    """Make a custom model available to configs as ``{"kind": "custom", "name": name}``.

    ``factory(**params)`` must return a :class:`ModelSpec`.
    """
    if name == "example":
        raise ModelError("'example' is reserved for the built-in family")
    _REGISTRY[name] = factory


def registered_models() -> list[str]:
    return sorted(_REGISTRY)


def build_model(kind: str, name: str | None = None, params: dict | None = None) -> ModelSpec:
    params = params or {}
    if kind == "example":
        return example_model(ExampleModelParams.from_dict(params))
    if kind == "custom":
        if name not in _REGISTRY:
            raise ModelError(f"no custom model registered under {name!r}; known: {registered_models()}")
        return _REGISTRY[name](**params)
    raise ModelError(f"unknown model kind {kind!r}")
