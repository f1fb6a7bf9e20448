import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsfde.measures import EmpiricalMeasure
from mvsfde.model import (
    ConfigurationError,
    ExampleModelParams,
    ModelError,
    SegmentBuffer,
    SegmentRangeError,
    build_model,
    distributed_delay_integral,
    example_diffusion,
    example_drift,
    example_model,
    register_model,
    segment_at,
    vanishes_at_origin,
)


def buf_from(values, delay):
    v = np.asarray(values, dtype=float).reshape(len(values), 1)
    return SegmentBuffer(v, delay / (len(values) - 1), delay)


def test_segment_constant():
    buf = SegmentBuffer.constant(np.array([2.5]), 0.25, 0.005)
    assert segment_at(buf, -0.125)[0] == 2.5


def test_segment_midpoint_interpolation():
    assert segment_at(buf_from([0, 1], 1.0), -0.5)[0] == 0.5


def test_segment_interpolates_between_nodes():
    # [DERIVED] nodes -tau/2 -> 2 and 0 -> 4, theta=-tau/4 lies halfway
    assert segment_at(buf_from([1, 2, 4], 1.0), -0.25)[0] == pytest.approx(3.0, abs=1e-15)


@pytest.mark.parametrize("theta", [-1.0001, 0.001])
def test_segment_out_of_range(theta):
    with pytest.raises(SegmentRangeError):
        segment_at(buf_from([1, 2, 4], 1.0), theta)


@settings(max_examples=60, deadline=None)
@given(
    values=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
    frac=st.floats(0, 1),
)
def test_segment_piecewise_linear(values, frac):
    tau = 0.5
    buf = buf_from(values, tau)
    m = len(values) - 1
    theta = -tau + frac * tau
    pos = frac * m
    i = min(int(np.floor(pos)), m - 1)
    w = pos - i
    expected = (1 - w) * values[i] + w * values[i + 1]
    assert segment_at(buf, theta)[0] == pytest.approx(expected, rel=1e-9, abs=1e-9)
    # exact on nodes
    for k in range(m + 1):
        assert segment_at(buf, -tau + k * buf.step)[0] == values[k]


def test_step_must_divide_delay():
    with pytest.raises(ConfigurationError, match="dt must divide"):
        SegmentBuffer.constant(np.array([1.0]), 0.25, 0.003)


def test_push_drops_oldest():
    buf = buf_from([1, 2, 4], 1.0)
    new = buf.pushed(np.array([[8.0]])[0])
    assert new.values[:, 0].tolist() == [2, 4, 8]
    assert buf.values[:, 0].tolist() == [1, 2, 4]


def test_delay_integral_constant():
    buf = SegmentBuffer.constant(np.array([1.0]), 0.25, 0.005)
    assert distributed_delay_integral(buf, 0.25)[0] == pytest.approx(0.25, abs=1e-15)


def test_delay_integral_zero_path():
    buf = SegmentBuffer.constant(np.array([0.0]), 0.5, 0.05)
    assert distributed_delay_integral(buf, 0.25)[0] == 0.0


def test_delay_integral_linear():
    # [DERIVED] linear 0 -> 1 over span 0.5 integrates to span/2
    buf = buf_from(np.linspace(0, 1, 11), 0.5)
    assert distributed_delay_integral(buf, 0.5)[0] == pytest.approx(0.25, abs=1e-15)


def test_delay_integral_rejects_off_grid_span():
    buf = SegmentBuffer.constant(np.array([1.0]), 0.5, 0.05)
    with pytest.raises(ConfigurationError):
        distributed_delay_integral(buf, 0.123)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), m=st.integers(1, 40), k=st.integers(1, 40))
def test_delay_integral_exact_for_affine(a, b, m, k):
    step = 0.01
    k = min(k, m)
    thetas = -m * step + step * np.arange(m + 1)
    buf = SegmentBuffer((a + b * thetas)[:, None], step, m * step)
    span = k * step
    exact = a * span - b * span**2 / 2
    assert distributed_delay_integral(buf, span)[0] == pytest.approx(exact, rel=1e-9, abs=1e-9)


def scalar_seg(value, params=ExampleModelParams(), step=0.005):
    return SegmentBuffer.constant(np.array([value]), params.delay_span, step)


def test_example_drift_at_origin():
    assert example_drift(ExampleModelParams(), scalar_seg(0.0), EmpiricalMeasure.dirac([0.0])) == 0.0


def test_example_drift_ones():
    # [DERIVED] -2 - 3 + (1/4)(1/4) + (1/2)(1)
    assert example_drift(ExampleModelParams(), scalar_seg(1.0), EmpiricalMeasure.dirac([1.0])) == pytest.approx(
        -4.4375, abs=1e-14
    )


def test_example_drift_ones_zero_mean():
    assert example_drift(ExampleModelParams(), scalar_seg(1.0), EmpiricalMeasure.dirac([0.0])) == pytest.approx(
        -4.9375, abs=1e-14
    )


def test_example_drift_requires_scalar():
    buf = SegmentBuffer.constant(np.array([1.0, 1.0]), 0.25, 0.005)
    with pytest.raises(ModelError):
        example_drift(ExampleModelParams(), buf, EmpiricalMeasure.dirac([1.0, 1.0]))


def test_example_diffusion_value():
    # (1/2)(y + mean) with y=1, mean=3
    assert example_diffusion(ExampleModelParams(), scalar_seg(1.0), EmpiricalMeasure.dirac([3.0])) == 2.0


def test_example_model_shape():
    model = example_model()
    assert model.dim == 1 and model.delay == 0.25
    assert vanishes_at_origin(model, 0.005)


def test_example_params_reject_unknown_keys():
    with pytest.raises(ModelError):
        ExampleModelParams.from_dict({"linear": 1.0})
    with pytest.raises(ModelError):
        ExampleModelParams(delay_span=0.0)


def test_functionals_are_pure():
    model = example_model()
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(6, 51, 1))
    segs = SegmentBuffer(vals, 0.005, 0.25)
    mu = EmpiricalMeasure(vals[:, -1])
    first = model.coefficients(segs, mu)
    second = model.coefficients(segs, mu)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)
    assert first[0].shape == (6, 1) and first[1].shape == (6, 1, 1)


def test_batched_drift_matches_single():
    model = example_model()
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(4, 51, 1))
    segs = SegmentBuffer(vals, 0.005, 0.25)
    mu = EmpiricalMeasure(vals[:, -1])
    f, _, _ = model.coefficients(segs, mu)
    for k in range(4):
        assert f[k, 0] == pytest.approx(example_drift(ExampleModelParams(), segs[k], mu), abs=1e-15)


def test_custom_model_registry():
    register_model("test-linear", lambda rate=1.0: example_model(ExampleModelParams(linear_coeff=-rate, cubic_coeff=0.0)))
    model = build_model("custom", "test-linear", {"rate": 3.0})
    assert model.params["linear_coeff"] == -3.0
    with pytest.raises(ModelError):
        build_model("custom", "nope")
    with pytest.raises(ModelError):
        register_model("example", example_model)
