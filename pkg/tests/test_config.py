import json

import pytest
from hypothesis import given, settings, strategies as st

from mvsfde.config import ConfigError, RunConfig, config_hash, parse_config, serialize


def minimal(**extra):
    doc = {"experiment": "simulate", "seed": 1}
    doc.update(extra)
    return doc


def test_minimal_config_fills_defaults():
    cfg = parse_config(json.dumps(minimal()))
    assert cfg.numerics.dt == 0.005 and cfg.numerics.horizon == 5.0 and cfg.numerics.n == 1000
    assert cfg.model.kind == "example"
    assert cfg.outputs.emit_csv and cfg.outputs.emit_json
    assert cfg.initial.kind == "constant" and cfg.initial.value == 1.0


def test_dt_must_divide_delay_span():
    with pytest.raises(ConfigError, match="dt must divide delay_span"):
        parse_config(minimal(numerics={"dt": 0.003, "horizon": 0.3}))


def test_dt_must_divide_horizon():
    with pytest.raises(ConfigError, match="dt must divide horizon"):
        parse_config(minimal(numerics={"dt": 0.005, "horizon": 0.0123}))


def test_dt_must_divide_custom_delay_span():
    with pytest.raises(ConfigError, match="delay_span"):
        parse_config(minimal(model={"kind": "example", "params": {"delay_span": 0.2525}}))


def test_chaos_reference_rule():
    doc = {"experiment": "chaos", "seed": 1, "chaos": {"sizes": [8, 16], "reference_size": 60}}
    with pytest.raises(ConfigError, match="reference_size"):
        parse_config(doc)


def test_chaos_block_required():
    with pytest.raises(ConfigError, match="chaos"):
        parse_config({"experiment": "chaos", "seed": 1})


def test_lyapunov_block_required():
    with pytest.raises(ConfigError, match="lyapunov"):
        parse_config({"experiment": "lv-check", "seed": 1})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(minimal(bogus=1))
    with pytest.raises(ConfigError, match="numerics.step"):
        parse_config(minimal(numerics={"step": 0.01}))


def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"experiment": "simulate"})
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"experiment": "simulate", "seed": 1.5})
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"experiment": "simulate", "seed": 2**64})


def test_unknown_example_parameter():
    with pytest.raises(ConfigError, match="unknown example parameters"):
        parse_config(minimal(model={"params": {"gamma": 1.0}}))


def test_certificate_forms():
    base = {"experiment": "stability", "seed": 1}
    ok = parse_config({**base, "stability": {"certificate": {"affine_lambda": [0.75, -0.015625]}}})
    lam, alpha, tau = ok.stability.certificate.resolve(0.25)
    assert tau == 0.25 and lam == pytest.approx(0.7312408355343843, abs=1e-9)
    with pytest.raises(ConfigError, match="alpha"):
        parse_config({**base, "stability": {"certificate": {"lambda": 0.7, "alpha": 0.9}}})
    with pytest.raises(ConfigError):
        parse_config({**base, "stability": {"certificate": {"lambda": 0.7}}})


def test_not_a_json_object():
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")
    with pytest.raises(ConfigError):
        parse_config("{not json")


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    n=st.integers(1, 5000),
    steps=st.integers(1, 400),
    reps=st.integers(1, 64),
    moments=st.lists(st.floats(0.5, 8.0, allow_nan=False), min_size=1, max_size=4),
    emit_svg=st.booleans(),
)
def test_round_trip(seed, n, steps, reps, moments, emit_svg):
    cfg = parse_config(
        {
            "experiment": "stability",
            "seed": seed,
            "numerics": {"n": n, "dt": 0.005, "horizon": steps * 0.005, "replications": reps, "moments": moments},
            "outputs": {"emit_svg": emit_svg},
            "stability": {"certificate": {"lambda": 0.7, "alpha": 1.2}},
        }
    )
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_round_trip_every_block():
    cfg = parse_config(
        {
            "experiment": "lv-check",
            "seed": 3,
            "initial": {"kind": "gaussian", "mean": 0.5, "std": 0.2},
            "chaos": {"sizes": [4, 8], "reference_size": 32},
            "stability": {"sizes": [10, 20]},
            "lyapunov": {"certificate": {"lambda": 0.7, "alpha": 1.19, "c": [1, 1, 1, 1]}, "check_times": 5},
        }
    )
    assert isinstance(cfg, RunConfig)
    assert parse_config(serialize(cfg)) == cfg
