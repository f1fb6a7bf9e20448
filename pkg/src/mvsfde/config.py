"""Run configuration: a single JSON object validated before any compute."""

from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .model import ModelError, ModelSpec, build_model, grid_steps

MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """A config document failed validation; the message names each offending key."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ModelBlock(_Block):
    kind: Literal["example", "custom"] = "example"
    name: Optional[str] = None
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _name_matches_kind(self):
        if self.kind == "custom" and not self.name:
            raise ValueError("custom models need a registered name")
        if self.kind == "example" and self.name not in (None, "example"):
            raise ValueError("name is only used with kind='custom'")
        return self

    def build(self) -> ModelSpec:
        return build_model(self.kind, self.name, dict(self.params))


class InitialBlock(_Block):
    kind: Literal["constant", "gaussian"] = "constant"
    value: float = 1.0
    mean: float = 0.0
    std: float = Field(1.0, ge=0)

    def sampler(self):
        from .integrator import constant_initial, gaussian_constant_initial

        if self.kind == "constant":
            return constant_initial(self.value)
        return gaussian_constant_initial(self.mean, self.std)


class NumericsBlock(_Block):
    dt: float = Field(0.005, gt=0)
    horizon: float = Field(5.0, gt=0)
    n: int = Field(1000, ge=1)
    replications: int = Field(1, ge=1)
    record_stride: int = Field(1, ge=1)
    moments: list[float] = Field(default_factory=lambda: [2.0])

    @field_validator("moments")
    @classmethod
    def _positive_orders(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("moments must be a non-empty list of positive orders")
        return v


class OutputsBlock(_Block):
    dir: str = "out"
    emit_csv: bool = True
    emit_json: bool = True
    emit_svg: bool = True
    paths: int = Field(0, ge=0, description="number of particle paths written to the simulate CSV")


class RateParamsBlock(_Block):
    q: float = 2.0
    p: float = 8.0
    d: int = 1


class ChaosBlock(_Block):
    sizes: list[int] = Field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512])
    reference_size: int = 2048
    q: float = Field(2.0, ge=1)
    rate_params: RateParamsBlock = Field(default_factory=RateParamsBlock)
    slope_band: tuple[float, float] = (-0.8, -0.3)
    w_method: Literal["auto", "exact"] = "auto"

    @model_validator(mode="after")
    def _sizes(self):
        if not self.sizes or min(self.sizes) < 2:
            raise ValueError("sizes: all sizes must be >= 2")
        if self.sizes != sorted(set(self.sizes)):
            raise ValueError("sizes: must be strictly ascending")
        if self.reference_size < 4 * max(self.sizes):
            raise ValueError(
                f"reference_size: must be >= 4*max(sizes) = {4 * max(self.sizes)}, got {self.reference_size}"
            )
        if self.slope_band[0] >= self.slope_band[1]:
            raise ValueError("slope_band: lower edge must be below upper edge")
        return self


class CertificateBlock(_Block):
    """Either a fixed (lambda, alpha) or an affine lambda(alpha) = intercept + slope*alpha to optimise."""

    lam: Optional[float] = Field(None, alias="lambda")
    alpha: Optional[float] = None
    affine_lambda: Optional[tuple[float, float]] = None
    tau: Optional[float] = Field(None, ge=0)
    c: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    @model_validator(mode="after")
    def _one_form(self):
        fixed = self.lam is not None or self.alpha is not None
        if fixed and self.affine_lambda is not None:
            raise ValueError("give either lambda+alpha or affine_lambda, not both")
        if not fixed and self.affine_lambda is None:
            raise ValueError("give lambda+alpha or affine_lambda")
        if fixed and (self.lam is None or self.alpha is None):
            raise ValueError("lambda and alpha must be given together")
        if self.alpha is not None and not self.alpha > 1:
            raise ValueError("alpha: must exceed 1")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda: must be positive")
        if min(self.c) <= 0:
            raise ValueError("c: constants must be positive")
        return self

    def resolve(self, default_tau: float) -> tuple[float, float, float]:
        """(lambda, alpha, tau), optimising alpha when lambda is affine."""
        from .experiments.lyapunov import affine_lambda, optimize_certificate

        tau = default_tau if self.tau is None else self.tau
        if self.affine_lambda is None:
            return self.lam, self.alpha, tau
        lam_of = affine_lambda(*self.affine_lambda)
        alpha, _ = optimize_certificate(lam_of, tau)
        return lam_of(alpha), alpha, tau


class StabilityBlock(_Block):
    sizes: Optional[list[int]] = None  # defaults to [numerics.n]
    q: float = Field(2.0, ge=1)
    fit_window: float = Field(0.6, gt=0, le=1)
    certificate: Optional[CertificateBlock] = None
    tolerance: float = Field(0.05, ge=0)
    slack: float = Field(0.1, ge=0)


class LyapunovBlock(_Block):
    function: Literal["quadratic"] = "quadratic"
    certificate: CertificateBlock
    q: float = Field(2.0, ge=1)
    check_times: int = Field(20, ge=1)
    mean_square_bound: bool = False
    pair_samples: int = Field(256, ge=1)


class RunConfig(_Block):
    experiment: Literal["simulate", "chaos", "stability", "lv-check"]
    seed: int = Field(ge=0, le=MAX_SEED)
    model: ModelBlock = Field(default_factory=ModelBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    numerics: NumericsBlock = Field(default_factory=NumericsBlock)
    outputs: OutputsBlock = Field(default_factory=OutputsBlock)
    chaos: Optional[ChaosBlock] = None
    stability: Optional[StabilityBlock] = None
    lyapunov: Optional[LyapunovBlock] = None

    @field_validator("seed", mode="before")
    @classmethod
    def _integral_seed(cls, v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValueError("seed must be an integer")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        try:
            model = self.model.build()
        except (ModelError, TypeError) as exc:
            raise ValueError(f"model: {exc}") from None
        dt = self.numerics.dt
        grid_steps(self.numerics.horizon, dt, "horizon")
        if "delay_span" in model.params:
            grid_steps(model.params["delay_span"], dt, "delay_span")
        grid_steps(model.delay, dt, "delay")
        if self.experiment == "chaos" and self.chaos is None:
            raise ValueError("chaos: block required for experiment 'chaos'")
        if self.experiment == "lv-check":
            if self.lyapunov is None:
                raise ValueError("lyapunov: block required for experiment 'lv-check'")
            steps = grid_steps(self.numerics.horizon, dt, "horizon")
            if self.lyapunov.check_times > steps:
                raise ValueError(f"lyapunov.check_times: at most {steps} grid steps available")
        if self.outputs.paths > self.numerics.n:
            raise ValueError("outputs.paths: cannot exceed numerics.n")
        return self

    def build_model(self) -> ModelSpec:
        return self.model.build()


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, ") :]
        lines.append(f"{loc}: {msg}")
    return "; ".join(lines)


def parse_config(document: str | bytes | dict) -> RunConfig:
    """Validate a JSON document (text or already-decoded dict) into a RunConfig."""
    if isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    else:
        data = document
    if not isinstance(data, dict):
        raise ConfigError("config must be a single JSON object")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def serialize(cfg: RunConfig) -> str:
    """Canonical JSON (sorted keys, aliases) that parse_config reads back to an equal config."""
    return json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()
