from .chaos import ChaosConfig, ChaosReport, chaos_experiment, loglog_slope
from .lvcheck import LVCheckConfig, LVCheckReport, lv_check_experiment
from .lyapunov import (
    LyapunovSpec,
    LyapunovSpecError,
    NoCertificateError,
    RazumikhinReport,
    affine_lambda,
    certified_rate,
    example_mean_square_bound,
    lv_estimate,
    lv_terms,
    optimize_certificate,
    quadratic_lyapunov,
    razumikhin_check,
    sandwich_holds,
)
from .stability import Certificate, StabilityConfig, StabilityReport, fit_decay_rate, stability_experiment

__all__ = [
    "Certificate",
    "ChaosConfig",
    "ChaosReport",
    "LVCheckConfig",
    "LVCheckReport",
    "LyapunovSpec",
    "LyapunovSpecError",
    "NoCertificateError",
    "RazumikhinReport",
    "StabilityConfig",
    "StabilityReport",
    "affine_lambda",
    "certified_rate",
    "chaos_experiment",
    "example_mean_square_bound",
    "fit_decay_rate",
    "loglog_slope",
    "lv_check_experiment",
    "lv_estimate",
    "lv_terms",
    "optimize_certificate",
    "quadratic_lyapunov",
    "razumikhin_check",
    "sandwich_holds",
    "stability_experiment",
]
