"""Conditional propagation of chaos against a coupled proxy-limit system.

The limit copies cannot be simulated, so each N-particle system is compared
with a larger M-particle reference that shares the common-noise path and
whose first N particles reuse the idiosyncratic streams of the N-system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from ..integrator import ParticleSystem, constant_initial, step
from ..measures import EmpiricalMeasure, RateParams, epsilon_rate, wasserstein, wasserstein_exact_small
from ..model import ModelSpec, grid_steps
from ._parallel import parallel_map

DEFAULT_SLOPE_BAND = (-0.8, -0.3)
REFERENCE_FACTOR = 4


@dataclass
class ChaosConfig:
    model: ModelSpec
    sizes: tuple[int, ...]
    reference_size: int
    horizon: float
    step: float
    replications: int
    q: float
    rate_params: RateParams
    seed: int
    initial: object = 1.0
    slope_band: tuple[float, float] = DEFAULT_SLOPE_BAND
    w_method: str = "auto"  # or "exact" to force the assignment solver
    allow_degenerate: bool = False  # tests only: reference_size may equal max(sizes)

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        if not self.sizes:
            raise ValueError("sizes must be non-empty")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ValueError("sizes must be strictly ascending")
        if self.w_method not in ("auto", "exact"):
            raise ValueError("w_method must be 'auto' or 'exact'")
        top = max(self.sizes)
        if self.allow_degenerate:
            if self.reference_size < top:
                raise ValueError("reference_size must be >= max(sizes)")
        else:
            if min(self.sizes) < 2:
                raise ValueError("all sizes must be >= 2")
            if self.reference_size < REFERENCE_FACTOR * top:
                raise ValueError(
                    f"reference_size must be >= {REFERENCE_FACTOR}*max(sizes) = {REFERENCE_FACTOR * top}, "
                    f"got {self.reference_size}"
                )
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        grid_steps(self.horizon, self.step, "horizon")


@dataclass
class ChaosReport:
    sizes: list[int]
    reference_size: int
    q: float
    err_sup: list[float]
    err_w: list[float]
    err_sup_by_replication: list[list[float]]
    err_w_by_replication: list[list[float]]
    slope_sup: float | None
    slope_w: float | None
    epsilon: list[float]
    epsilon_slope: float
    spearman_w: float | None
    slope_band: tuple[float, float]
    slope_in_band: bool
    verdict: str
    w_method: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dict(vars(self))
        out["slope_band"] = list(self.slope_band)
        return out


def _trajectory(cfg: ChaosConfig, n: int, replication: int) -> np.ndarray:
    """States on every grid time, shape (n, steps+1, dim)."""
    initial = cfg.initial if callable(cfg.initial) else constant_initial(cfg.initial)
    sys = ParticleSystem.create(cfg.model, n, cfg.step, cfg.seed, initial=initial, replication_index=replication)
    n_steps = grid_steps(cfg.horizon, cfg.step, "horizon")
    out = np.empty((n, n_steps + 1, cfg.model.dim))
    out[:, 0] = sys.states
    for i in range(1, n_steps + 1):
        sys = step(sys)
        out[:, i] = sys.states
    return out


def _w_qq(cfg: ChaosConfig, a: np.ndarray, b: np.ndarray) -> tuple[float, str]:
    ma, mb = EmpiricalMeasure(a), EmpiricalMeasure(b)
    if cfg.w_method == "exact":
        return wasserstein_exact_small(cfg.q, ma, mb) ** cfg.q, "exact-assignment"
    w, method = wasserstein(cfg.q, ma, mb)
    return w**cfg.q, method


def _replication(cfg: ChaosConfig, r: int):
    ref = _trajectory(cfg, cfg.reference_size, r)
    sup_errs, w_errs, methods = [], [], set()
    for n in cfg.sizes:
        x = ref if n == cfg.reference_size else _trajectory(cfg, n, r)
        dist = np.linalg.norm(x - ref[:n], axis=-1) ** cfg.q  # (n, times)
        sup_errs.append(float(np.mean(np.max(dist, axis=1))))
        worst = 0.0
        for i in range(x.shape[1]):
            val, method = _w_qq(cfg, x[:, i], ref[:, i])
            methods.add(method)
            worst = max(worst, val)
        w_errs.append(worst)
    return sup_errs, w_errs, methods


def loglog_slope(sizes, errors) -> float | None:
    """Least-squares slope of log(error) against log(N); None if any error is zero."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2 or np.any(e <= 0) or not np.all(np.isfinite(e)):
        return None
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(e), 1)[0])


def chaos_experiment(cfg: ChaosConfig, threads: int | None = None) -> ChaosReport:
    results = parallel_map(lambda r: _replication(cfg, r), range(cfg.replications), threads)
    sup = np.array([res[0] for res in results])
    w = np.array([res[1] for res in results])
    methods = sorted(set().union(*(res[2] for res in results)))
    err_sup = sup.mean(axis=0)
    err_w = w.mean(axis=0)
    slope_sup = loglog_slope(cfg.sizes, err_sup)
    slope_w = loglog_slope(cfg.sizes, err_w)
    eps = [epsilon_rate(cfg.rate_params, n) for n in cfg.sizes]
    eps_slope = loglog_slope(cfg.sizes, eps) if len(cfg.sizes) > 1 else None
    rho = None
    if len(cfg.sizes) > 2 and np.ptp(err_w) > 0:
        rho = float(spearmanr(cfg.sizes, err_w).statistic)
    lo, hi = cfg.slope_band
    in_band = slope_sup is not None and lo <= slope_sup <= hi
    if slope_sup is None:
        verdict = "degenerate"
    elif in_band:
        verdict = "rate-in-band"
    elif slope_sup < lo:
        verdict = "rate-faster-than-band"
    else:
        verdict = "rate-slower-than-band"
    return ChaosReport(
        sizes=list(cfg.sizes),
        reference_size=cfg.reference_size,
        q=cfg.q,
        err_sup=err_sup.tolist(),
        err_w=err_w.tolist(),
        err_sup_by_replication=sup.tolist(),
        err_w_by_replication=w.tolist(),
        slope_sup=slope_sup,
        slope_w=slope_w,
        epsilon=eps,
        epsilon_slope=eps_slope,
        spearman_w=rho,
        slope_band=tuple(cfg.slope_band),
        slope_in_band=in_band,
        verdict=verdict,
        w_method=",".join(methods),
        metadata={
            "limit": "proxy-limit",
            "reference_heuristic": f"reference_size >= {REFERENCE_FACTOR} * max(sizes)",
            "sup_over_time": "max over grid times",
            "horizon": cfg.horizon,
            "step": cfg.step,
            "replications": cfg.replications,
            "seed": cfg.seed,
            "rate_params": {"q": cfg.rate_params.q, "p": cfg.rate_params.p, "d": cfg.rate_params.d},
        },
    )
