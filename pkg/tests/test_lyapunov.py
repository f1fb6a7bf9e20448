import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mvsfde.experiments import (
    LyapunovSpecError,
    NoCertificateError,
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
from mvsfde.integrator import ParticleSystem, constant_initial, run
from mvsfde.model import ModelSpec, SegmentBuffer, example_model
from oracles import certificate_crossing


def const_model(rate=-1.0, sigma=0.0, sigma0=0.0, dim=1):
    def drift(segs, mu):
        return rate * segs.current

    def mat(s):
        return lambda segs, mu: s * np.broadcast_to(np.eye(dim), segs.values.shape[:-2] + (dim, dim))

    return ModelSpec(dim=dim, delay=0.0, drift=drift, diffusion=mat(sigma), common_diffusion=mat(sigma0))


def system(model, states, step=0.01):
    states = np.asarray(states, dtype=float)
    m = round(model.delay / step)
    vals = np.repeat(states[:, None, :], m + 1, axis=1)
    return ParticleSystem(model, SegmentBuffer(vals, step, model.delay), step, master_seed=1)


def test_origin_gives_zero():
    model = example_model()
    sys = ParticleSystem.create(model, 50, 0.005, 0, initial=0.0)
    assert lv_estimate(model, quadratic_lyapunov(), sys) == (0.0, 0.0)


@pytest.mark.parametrize("n", [1, 2, 5, 60])
def test_deterministic_hand_value(n):
    # [DERIVED] 2*1*(-1) from the state term plus 2*1*(-1) from the measure term
    model = const_model(rate=-1.0)
    sys = system(model, np.ones((n, 1)))
    est, se = lv_estimate(model, quadratic_lyapunov(), sys)
    assert est == pytest.approx(-4.0, abs=1e-10)
    assert se == 0.0


@pytest.mark.parametrize("sigma,sigma0", [(0.5, 0.0), (0.0, 0.7), (0.3, 1.1)])
def test_diffusion_terms_hand_value(sigma, sigma0):
    # [DERIVED] f=0: state second-order terms give sigma^2 + sigma0^2,
    # the measure second-order term gives the same again
    model = const_model(rate=0.0, sigma=sigma, sigma0=sigma0)
    sys = system(model, np.full((7, 1), 1.3))
    est, _ = lv_estimate(model, quadratic_lyapunov(), sys)
    assert est == pytest.approx(2 * sigma**2 + 2 * sigma0**2, abs=1e-12)


def test_two_copy_term_exact_and_sampled_agree_in_mean():
    # d_mu2 = I makes the two-copy term 0.5 * mean over (j, j') of g0_j g0_j'
    lyap = quadratic_lyapunov()

    def d_mu2(x, mu, t, y, z):
        return np.eye(np.shape(x)[-1])

    lyap = replace(lyap, d_mu2=d_mu2)

    def drift(segs, mu):
        return np.zeros_like(segs.current)

    def g0(segs, mu):
        return segs.current[..., None]

    def zero(segs, mu):
        return np.zeros(segs.values.shape[:-2] + (1, 1))

    model = ModelSpec(dim=1, delay=0.0, drift=drift, diffusion=zero, common_diffusion=g0)
    rng = np.random.default_rng(3)
    base = lv_terms(model, quadratic_lyapunov(), system(model, rng.normal(size=(30, 1))))
    x = rng.normal(size=(30, 1))
    with_term = lv_terms(model, lyap, system(model, x)) - lv_terms(model, quadratic_lyapunov(), system(model, x))
    xs = x[:, 0]
    for k in range(30):
        others = [(j, jp) for j in range(30) for jp in range(30) if j != k and jp not in (k, j)]
        expected = 0.5 * np.mean([xs[j] * xs[jp] for j, jp in others])
        assert with_term[k] == pytest.approx(expected, abs=1e-12)
    assert base.shape == (30,)


def test_missing_callback_names_term():
    lyap = replace(quadratic_lyapunov(), d_y_d_mu=None)
    model = const_model()
    with pytest.raises(LyapunovSpecError, match="d_y_d_mu"):
        lv_estimate(model, lyap, system(model, np.ones((3, 1))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)))
def test_quadratic_sandwich(states):
    assert sandwich_holds(quadratic_lyapunov(), states, 2.0, (1, 1, 1, 1))


def test_sandwich_detects_violation():
    assert not sandwich_holds(quadratic_lyapunov(), np.ones((3, 1)), 2.0, (2, 1, 2, 1))


def test_constant_lambda_certificate():
    # [TRIVIAL] alpha* = exp(lambda0 * tau), kappa* = lambda0
    alpha, kappa = optimize_certificate(lambda a: 0.6, 0.25)
    assert alpha == pytest.approx(math.exp(0.15), rel=1e-12)
    assert kappa == pytest.approx(0.6, rel=1e-12)


def test_affine_certificate_against_root_finder():
    # [DERIVED] Brent root of 3/4 - alpha/64 = 4 log(alpha)
    alpha, kappa = optimize_certificate(affine_lambda(0.75, -1 / 64), 0.25)
    ref_alpha, ref_kappa = certificate_crossing(0.75, -1 / 64, 0.25)
    assert alpha == pytest.approx(ref_alpha, abs=1e-12)
    assert kappa == pytest.approx(ref_kappa, abs=1e-12)
    assert abs((0.75 - alpha / 64) - math.log(alpha) / 0.25) <= 1e-8
    assert kappa == pytest.approx(0.73, abs=0.005)


def test_infeasible_certificate():
    with pytest.raises(NoCertificateError):
        optimize_certificate(lambda a: -1.0, 0.25)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(-2.0, -1e-3), st.floats(0.05, 2.0))
def test_crossing_is_tight(lam_at_one, slope, tau):
    # precondition: lambda(1) > 0
    intercept = lam_at_one - slope
    alpha, kappa = optimize_certificate(affine_lambda(intercept, slope), tau)
    assert abs((intercept + slope * alpha) - math.log(alpha) / tau) <= 1e-8
    assert kappa == pytest.approx(min(intercept + slope * alpha, math.log(alpha) / tau))


def test_rate_vanishes_as_alpha_approaches_one():
    rates = [certified_rate(0.75, 1 + 10.0**-k, 0.25) for k in range(1, 8)]
    assert all(b < a for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 1e-6


def trajectory(n, horizon, check_times, seed=11):
    model = example_model()
    sys = ParticleSystem.create(model, n, 0.005, seed, initial=constant_initial(1.0))
    snaps = []
    stride = round(horizon / 0.005) // check_times
    run(sys, stride * check_times * 0.005, stride, moments=(), callback=snaps.append)
    return model, snaps[1:]


def test_razumikhin_zero_trajectory():
    model = example_model()
    sys = ParticleSystem.create(model, 20, 0.005, 0, initial=0.0)
    snaps = []
    run(sys, 0.05, 1, moments=(), callback=snaps.append)
    rep = razumikhin_check(model, quadratic_lyapunov(), snaps, 1.19, 0.73, 2.0)
    assert all(s == "condition-inactive" for s in rep.statuses)
    assert rep.pass_fraction == 1.0


def test_razumikhin_certified_lambda_passes_and_absurd_lambda_fails():
    model, snaps = trajectory(1000, 0.1, 20)
    lyap = quadratic_lyapunov()
    good = razumikhin_check(model, lyap, snaps, 1.19, 0.75 - 1.19 / 64, 2.0)
    bad = razumikhin_check(model, lyap, snaps, 1.19, 1e3, 2.0)
    assert good.n_active > 0
    assert good.pass_fraction == 1.0 and good.sandwich_ok
    assert bad.pass_fraction <= 0.1


def test_example_bound_along_trajectory():
    # [PAPER] E LV <= -(3/2) m2(0) + (1/8) int m2 along the example
    model, snaps = trajectory(300, 2.0, 10)
    for snap in snaps:
        est, se = lv_estimate(model, quadratic_lyapunov(), snap)
        assert est <= example_mean_square_bound(snap, 0.25) + 3 * se
