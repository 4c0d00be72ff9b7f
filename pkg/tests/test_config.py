"""Configuration loading, validation, and override handling."""

import pathlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chbcontrol.config import (
    DEFAULTS,
    apply_overrides,
    default_config_text,
    load_config,
)
from chbcontrol.errors import ConfigurationError

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]


def test_load_defaults_returns_copy():
    cfg = load_config(None)
    assert cfg == DEFAULTS
    cfg["problem"]["n"] = 999
    assert DEFAULTS["problem"]["n"] == 64


def test_default_text_round_trip(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text(default_config_text())
    assert load_config(path) == DEFAULTS


def test_shipped_default_config_matches_defaults():
    # the checked-in file must stay in sync with the defaults table
    shipped = REPO_ROOT / "default_config.ini"
    assert shipped.exists()
    assert load_config(shipped) == DEFAULTS


def test_missing_file_raises():
    with pytest.raises(ConfigurationError, match="not found"):
        load_config("/nonexistent/cfg.ini")


def test_unknown_keys_collected_and_sorted(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text(
        "[problem]\nbogus = 1\n\n[zsection]\nx = 2\n\n[time]\nzz = 3\n"
    )
    with pytest.raises(ConfigurationError) as exc:
        load_config(path)
    msg = str(exc.value)
    assert "unknown configuration keys" in msg
    listed = msg.split(": ", 1)[1].split(", ")
    assert listed == sorted(listed)
    assert "[problem] bogus" in listed
    assert "[zsection] x" in listed
    assert "[time] zz" in listed


def test_value_coercion(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text(
        "[problem]\nn = 128\ngamma = 2.5\nforcing = zero\n\n[time]\nhorizon = 0.25\n"
    )
    cfg = load_config(path)
    assert cfg["problem"]["n"] == 128 and isinstance(cfg["problem"]["n"], int)
    assert cfg["problem"]["gamma"] == 2.5
    assert cfg["problem"]["forcing"] == "zero"
    assert cfg["time"]["horizon"] == 0.25
    # untouched keys keep their defaults
    assert cfg["hum"]["epsilon"] == DEFAULTS["hum"]["epsilon"]


def test_coercion_failure_names_the_key(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[problem]\nn = eighty\n")
    with pytest.raises(ConfigurationError, match=r"\[problem\] n"):
        load_config(path)


def test_apply_overrides_valid():
    cfg = load_config(None)
    out = apply_overrides(cfg, ["time.horizon=0.25", "problem.n=128"])
    assert out is cfg
    assert cfg["time"]["horizon"] == 0.25
    assert cfg["problem"]["n"] == 128
    assert apply_overrides(cfg, None) is cfg


@pytest.mark.parametrize("bad", ["timehorizon=0.25", "time.horizon", "=0.5"])
def test_apply_overrides_malformed(bad):
    with pytest.raises(ConfigurationError, match="not of the form"):
        apply_overrides(load_config(None), [bad])


def test_apply_overrides_unknown_key():
    with pytest.raises(ConfigurationError, match="unknown configuration keys"):
        apply_overrides(load_config(None), ["time.bogus=1"])


@settings(max_examples=40, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_override_float_repr_round_trip(value):
    cfg = apply_overrides(load_config(None), [f"time.dt={value!r}"])
    assert cfg["time"]["dt"] == value
