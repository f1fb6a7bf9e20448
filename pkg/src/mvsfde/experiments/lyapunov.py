"""Lyapunov functionals on state x measure, the LV generator and Razumikhin checks.

Callback conventions (all broadcast over leading axes):

    value(x, mu, t)            -> (...)
    d_t(x, mu, t)              -> (...)
    d_x(x, mu, t)              -> (..., d)
    d_xx(x, mu, t)             -> (..., d, d)
    d_mu(x, mu, t, y)          -> (..., d)
    d_x_d_mu(x, mu, t, y)      -> (..., d, d)
    d_y_d_mu(x, mu, t, y)      -> (..., d, d)
    d_mu2(x, mu, t, y, z)      -> (..., d, d)

``x``, ``y``, ``z`` have shape ``(..., d)`` and ``mu`` is an
:class:`~mvsfde.measures.EmpiricalMeasure`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..integrator import ParticleSystem
from ..measures import EmpiricalMeasure, moment
from ..model import ModelSpec, distributed_delay_integral, trapezoid_weights
from ..noise import StreamKind, keyed_uniform

# exact U-statistic for the two-copy term up to this many particles
EXACT_PAIR_LIMIT = 40
STAT_SIGMAS = 3.0


class LyapunovSpecError(ValueError):
    """A derivative callback required by one of the generator terms is missing."""


class NoCertificateError(ValueError):
    pass


_TERM_NEEDS = {
    "d_t": "time derivative term d_t V(phi(0), mu, t)",
    "d_x": "state drift term d_x V . f(phi, mu)",
    "d_xx": "second-order state terms 1/2 tr(d_xx V g g') and 1/2 tr(d_xx V g0 g0')",
    "d_mu": "measure drift term E_1[(d_mu V)(phi_1(0)) . f(phi_1, mu_1)]",
    "d_x_d_mu": "mixed common-noise term E_1[tr(d_x d_mu V (phi_1(0)) g0(phi, mu) g0(phi_1, mu_1)')]",
    "d_y_d_mu": "measure second-order terms E_1[1/2 tr(d_y d_mu V (phi_1(0)) (g g' + g0 g0')(phi_1, mu_1))]",
    "d_mu2": "two-copy term 1/2 E_1 E_2[tr(d_mu^2 V (phi_1(0), phi_2(0)) g0(phi_1, mu_1) g0(phi_2, mu_2)')]",
}


@dataclass(frozen=True)
class LyapunovSpec:
    value: Callable
    d_t: Callable | None = None
    d_x: Callable | None = None
    d_xx: Callable | None = None
    d_mu: Callable | None = None
    d_x_d_mu: Callable | None = None
    d_y_d_mu: Callable | None = None
    d_mu2: Callable | None = None
    name: str = "custom"

    def require(self):
        for attr, term in _TERM_NEEDS.items():
            if getattr(self, attr) is None:
                raise LyapunovSpecError(f"{self.name}: missing callback '{attr}', needed by the {term}")


def quadratic_lyapunov() -> LyapunovSpec:
    """V(x, mu, t) = |x|^2 + int |z|^2 mu(dz)."""

    def value(x, mu, t):
        return np.sum(np.asarray(x) ** 2, axis=-1) + moment(mu, 2)

    def zero_scalar(x, mu, t):
        return np.zeros(np.shape(x)[:-1])

    def d_x(x, mu, t):
        return 2.0 * np.asarray(x, dtype=float)

    def d_xx(x, mu, t):
        return 2.0 * np.eye(np.shape(x)[-1])

    def d_mu(x, mu, t, y):
        return np.broadcast_to(2.0 * np.asarray(y, dtype=float), np.broadcast_shapes(np.shape(x), np.shape(y)))

    def zero_mat(x, mu, t, y, z=None):
        d = np.shape(x)[-1]
        return np.zeros((d, d))

    def d_y_d_mu(x, mu, t, y):
        return 2.0 * np.eye(np.shape(y)[-1])

    return LyapunovSpec(
        value=value,
        d_t=zero_scalar,
        d_x=d_x,
        d_xx=d_xx,
        d_mu=d_mu,
        d_x_d_mu=zero_mat,
        d_y_d_mu=d_y_d_mu,
        d_mu2=zero_mat,
        name="quadratic",
    )


def _tr_prod(a, b, c):
    """tr(a b c') over trailing (d, d) axes."""
    return np.einsum("...ij,...jk,...ik->...", a, b, c)


def _pair_block(k_block: np.ndarray, n: int) -> np.ndarray:
    """Mask of admissible first copies j for each k in the block (j != k when n >= 2)."""
    mask = np.ones((k_block.size, n), dtype=bool)
    if n >= 2:
        mask[np.arange(k_block.size), k_block] = False
    return mask


def _sampled_pairs(sys: ParticleSystem, k: np.ndarray, n_samples: int):
    """Deterministic pairs (j, j') with j != k and j' not in {k, j}; shapes (len(k), n_samples)."""
    n = sys.n_particles
    comp = np.arange(n_samples)[None, :]
    seed, rep, st = sys.noise.master_seed, sys.replication_index, sys.step_index
    u1 = keyed_uniform(seed, StreamKind.RESAMPLE, k[:, None], rep, st, 2 * comp)
    u2 = keyed_uniform(seed, StreamKind.RESAMPLE, k[:, None], rep, st, 2 * comp + 1)
    kk = k[:, None]
    j = (kk + 1 + np.floor(u1 * (n - 1)).astype(np.int64)) % n
    r = np.floor(u2 * (n - 2)).astype(np.int64)
    lo, hi = np.minimum(kk, j), np.maximum(kk, j)
    r = r + (r >= lo)
    r = r + (r >= hi)
    return j, r


def lv_terms(
    model: ModelSpec,
    lyap: LyapunovSpec,
    sys: ParticleSystem,
    t: float | None = None,
    pair_samples: int = 256,
    block: int = 256,
) -> np.ndarray:
    """LV(phi_k, mu_hat, t) for every particle k of the system.

    The independent copies are the other particles of the same system: the
    first copy ranges over j != k and the second over j' not in {k, j}.  For
    systems with fewer than three particles the copies fall back to all
    particles.  Above ``EXACT_PAIR_LIMIT`` particles the two-copy term is
    averaged over ``pair_samples`` keyed random pairs per particle.
    """
    lyap.require()
    t = sys.time if t is None else t
    mu = sys.measure()
    x = sys.states
    n, d = x.shape
    f, g, g0 = model.coefficients(sys.segments, mu)

    dxx = np.broadcast_to(lyap.d_xx(x, mu, t), (n, d, d))
    local = (
        np.broadcast_to(lyap.d_t(x, mu, t), (n,))
        + np.einsum("ki,ki->k", np.broadcast_to(lyap.d_x(x, mu, t), (n, d)), f)
        + 0.5 * _tr_prod(dxx, g, g)
        + 0.5 * _tr_prod(dxx, g0, g0)
    )

    gg = np.einsum("jab,jcb->jac", g, g) + np.einsum("jab,jcb->jac", g0, g0)
    copy1 = np.empty(n)
    for start in range(0, n, block):
        kb = np.arange(start, min(start + block, n))
        xk = x[kb][:, None, :]
        yj = x[None, :, :]
        shape = (kb.size, n)
        dmu = np.broadcast_to(lyap.d_mu(xk, mu, t, yj), shape + (d,))
        dxdmu = np.broadcast_to(lyap.d_x_d_mu(xk, mu, t, yj), shape + (d, d))
        dydmu = np.broadcast_to(lyap.d_y_d_mu(xk, mu, t, yj), shape + (d, d))
        pair = (
            np.einsum("kji,ji->kj", dmu, f)
            + _tr_prod(dxdmu, g0[kb][:, None], g0[None, :])
            + 0.5 * np.einsum("kjab,jba->kj", dydmu, gg)
        )
        mask = _pair_block(kb, n)
        copy1[kb] = np.where(mask, pair, 0.0).sum(axis=1) / mask.sum(axis=1)

    copy2 = np.empty(n)
    if n <= EXACT_PAIR_LIMIT:
        for k in range(n):
            xk = x[k][None, None, :]
            d2 = np.broadcast_to(lyap.d_mu2(xk, mu, t, x[:, None, :], x[None, :, :]), (n, n, d, d))
            vals = _tr_prod(d2, g0[:, None], g0[None, :])
            mask = np.ones((n, n), dtype=bool)
            if n >= 3:
                mask[k, :] = mask[:, k] = False
                np.fill_diagonal(mask, False)
            copy2[k] = 0.5 * vals[mask].mean()
    else:
        for start in range(0, n, block):
            kb = np.arange(start, min(start + block, n))
            j, jp = _sampled_pairs(sys, kb, pair_samples)
            d2 = np.broadcast_to(
                lyap.d_mu2(x[kb][:, None, :], mu, t, x[j], x[jp]), (kb.size, pair_samples, d, d)
            )
            copy2[kb] = 0.5 * _tr_prod(d2, g0[j], g0[jp]).mean(axis=1)

    return local + copy1 + copy2


def lv_estimate(
    model: ModelSpec, lyap: LyapunovSpec, sys: ParticleSystem, t: float | None = None, pair_samples: int = 256
) -> tuple[float, float]:
    """Monte Carlo estimate of E LV over the particles, with its standard error."""
    vals = lv_terms(model, lyap, sys, t=t, pair_samples=pair_samples)
    n = vals.size
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(vals)), se


def example_mean_square_bound(sys: ParticleSystem, span: float = 0.25) -> float:
    """-(3/2) m2(0) + (1/8) int_{-span}^0 m2(theta) dtheta for the default scalar example.

    ``m2(theta)`` is the particle average of |X(t+theta)|^2; the integral uses
    the same trapezoid rule as the model's distributed delay.
    """
    sq = np.sum(sys.segments.values**2, axis=-1)  # (N, m+1)
    m2 = sq.mean(axis=0)
    from ..model import SegmentBuffer

    integral = distributed_delay_integral(SegmentBuffer(m2[:, None], sys.step_size, sys.segments.delay), span)[0]
    return float(-1.5 * m2[-1] + 0.125 * integral)


def lyapunov_profile(lyap: LyapunovSpec, sys: ParticleSystem) -> np.ndarray:
    """V_hat(theta) = (1/N) sum_k V(X^k(t+theta), mu_hat_{t+theta}, t+theta) on the segment grid."""
    vals = sys.segments.values
    thetas = sys.segments.thetas()
    out = np.empty(thetas.size)
    for i, th in enumerate(thetas):
        col = vals[:, i, :]
        out[i] = float(np.mean(lyap.value(col, EmpiricalMeasure(col), sys.time + th)))
    return out


def sandwich_holds(lyap: LyapunovSpec, states: np.ndarray, q: float, c, t: float = 0.0, rtol: float = 1e-12) -> bool:
    """c1|x|^q + c2 W_q^q(mu, d0) <= V(x, mu, t) <= c3|x|^q + c4 W_q^q(mu, d0) at every point."""
    c1, c2, c3, c4 = c
    mu = EmpiricalMeasure(states)
    wq = moment(mu, q)
    xq = np.linalg.norm(states, axis=-1) ** q
    v = np.asarray(lyap.value(states, mu, t), dtype=float)
    lo = c1 * xq + c2 * wq
    hi = c3 * xq + c4 * wq
    slack = rtol * np.maximum(1.0, np.abs(v))
    return bool(np.all(lo <= v + slack) and np.all(v <= hi + slack))


@dataclass
class RazumikhinReport:
    times: list[float]
    active: list[bool]
    estimates: list[float]
    std_errors: list[float]
    thresholds: list[float]
    margins: list[float | None]
    alpha: float
    lam: float
    sandwich_ok: bool
    pass_fraction: float
    worst_margin: float | None
    n_active: int
    statuses: list[str] = field(default_factory=list)
    v_now: list[float] = field(default_factory=list)
    v_window_max: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(vars(self))


def razumikhin_check(
    model: ModelSpec,
    lyap: LyapunovSpec,
    snapshots: Sequence[ParticleSystem],
    alpha: float,
    lam: float,
    q: float,
    c: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    pair_samples: int = 256,
) -> RazumikhinReport:
    """Check E LV <= -lam E V(phi(0)) wherever the empirical Razumikhin condition is active.

    The condition at time t is ``max_theta V_hat(theta) < alpha * V_hat(0)``;
    where it fails the time is recorded as condition-inactive.
    """
    times, active, ests, ses, thresholds, margins, statuses = [], [], [], [], [], [], []
    v_now, v_window_max = [], []
    sandwich_ok = True
    for snap in snapshots:
        profile = lyapunov_profile(lyap, snap)
        v0 = profile[-1]
        is_active = bool(np.max(profile) < alpha * v0)
        est, se = lv_estimate(model, lyap, snap, pair_samples=pair_samples)
        threshold = -lam * v0 + STAT_SIGMAS * se
        sandwich_ok &= sandwich_holds(lyap, snap.states, q, c, snap.time)
        times.append(snap.time)
        v_now.append(float(v0))
        v_window_max.append(float(np.max(profile)))
        active.append(is_active)
        ests.append(est)
        ses.append(se)
        thresholds.append(threshold)
        if is_active:
            margins.append(threshold - est)
            statuses.append("pass" if est <= threshold else "fail")
        else:
            margins.append(None)
            statuses.append("condition-inactive")
    checked = [m for m in margins if m is not None]
    n_active = len(checked)
    pass_fraction = 1.0 if n_active == 0 else sum(m >= 0 for m in checked) / n_active
    return RazumikhinReport(
        times=times,
        active=active,
        estimates=ests,
        std_errors=ses,
        thresholds=thresholds,
        margins=margins,
        alpha=alpha,
        lam=lam,
        sandwich_ok=sandwich_ok,
        pass_fraction=pass_fraction,
        worst_margin=min(checked) if checked else None,
        n_active=n_active,
        statuses=statuses,
        v_now=v_now,
        v_window_max=v_window_max,
    )


def certified_rate(lam: float, alpha: float, tau: float) -> float:
    """kappa = min(lam, log(alpha)/tau); a zero delay imposes no second constraint."""
    if tau == 0:
        return lam
    return min(lam, math.log(alpha) / tau)


def optimize_certificate(
    lambda_of_alpha: Callable[[float], float], tau: float, alpha_max: float = 1e12, tol: float = 1e-15
) -> tuple[float, float]:
    """Maximise min(lambda(alpha), log(alpha)/tau) over alpha > 1.

    ``lambda_of_alpha`` must be continuous and non-increasing with a positive
    value just above 1; the optimum is the crossing with log(alpha)/tau,
    found by bisection.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    lo = 1.0 + 1e-12
    if not lambda_of_alpha(lo) > 0:
        raise NoCertificateError("lambda(alpha) <= 0 just above alpha = 1: no certificate exists")

    def gap(a):
        return lambda_of_alpha(a) - math.log(a) / tau

    hi = 2.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > alpha_max:
            raise NoCertificateError("no crossing of lambda(alpha) and log(alpha)/tau below alpha_max")
    # lambda may hit zero before the crossing; the crossing still maximises the min
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    alpha = lo if abs(gap(lo)) <= abs(gap(hi)) else hi
    kappa = min(lambda_of_alpha(alpha), math.log(alpha) / tau)
    if not kappa > 0:
        raise NoCertificateError("lambda(alpha) <= 0 at the optimum")
    return alpha, kappa


def affine_lambda(intercept: float, slope: float) -> Callable[[float], float]:
    """lambda(alpha) = intercept + slope * alpha."""
    return lambda a: intercept + slope * a
