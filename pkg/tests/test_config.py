import math

import pytest
from hypothesis import given, strategies as st

from pfspad.config import (REFERENCE_CMOS, PROTOTYPE_SPAD, ConfigError, ConventionalConfig,
                           Exposure, QisConfig, SpadConfig, config_to_text,
                           conventional_config_from_dict, exposure_seconds, load_config_file,
                           parse_config_text, qis_bin_count, qis_config_from_dict,
                           spad_config_from_dict, validate_spad_config)


def test_prototype_spad_config_is_valid():
    cfg = SpadConfig(quantum_efficiency=0.4, dead_time=149.7e-9, dark_rate=100.0,
                     afterpulse_prob=0.01, jitter_sigma=0.0)
    exp = Exposure(5e-3)
    assert validate_spad_config(cfg, exp) == (cfg, exp)


def test_zero_quantum_efficiency_rejected():
    with pytest.raises(ConfigError, match="quantum_efficiency out of range"):
        SpadConfig(quantum_efficiency=0.0, dead_time=149.7e-9)


def test_exposure_shorter_than_dead_time():
    cfg = SpadConfig(quantum_efficiency=0.4, dead_time=1.497e-7)
    with pytest.raises(ConfigError, match="exposure shorter than dead time"):
        validate_spad_config(cfg, Exposure(1e-7))


@pytest.mark.parametrize("kwargs, field", [
    (dict(dead_time=0.0), "dead_time"),
    (dict(dark_rate=-1.0), "dark_rate"),
    (dict(afterpulse_prob=1.0), "afterpulse_prob"),
    (dict(jitter_sigma=-1e-9), "jitter_sigma"),
    (dict(jitter_sigma=149.7e-9), "jitter_sigma"),
    (dict(dead_time=math.nan), "dead_time"),
    (dict(dark_rate=math.inf), "dark_rate"),
])
def test_spad_field_violations_named(kwargs, field):
    base = dict(quantum_efficiency=0.4, dead_time=149.7e-9)
    base.update(kwargs)
    with pytest.raises(ConfigError, match=field):
        SpadConfig(**base)


def test_reference_sensor_validation():
    with pytest.raises(ConfigError, match="full_well"):
        ConventionalConfig(quantum_efficiency=0.9, full_well=0)
    with pytest.raises(ConfigError, match="read_noise"):
        ConventionalConfig(quantum_efficiency=0.9, full_well=10, read_noise=-1)
    with pytest.raises(ConfigError, match="bin_width"):
        QisConfig(quantum_efficiency=0.5, bin_width=0.0)
    with pytest.raises(ConfigError):
        Exposure(-1.0)


def test_qis_bin_count_divisibility():
    cfg = QisConfig(quantum_efficiency=0.8, bin_width=1e-6)
    assert qis_bin_count(cfg, 5e-3) == 5000
    with pytest.raises(ConfigError, match="integer multiple"):
        qis_bin_count(cfg, 5.5e-6)


@given(q=st.floats(0.01, 1.0), td=st.floats(1e-9, 1e-6), T=st.floats(2e-6, 1.0))
def test_validation_is_pure(q, td, T):
    cfg = SpadConfig(quantum_efficiency=q, dead_time=td)
    first = validate_spad_config(cfg, T)
    assert validate_spad_config(cfg, T) == first
    assert exposure_seconds(T) == T


CONFIG_TEXT = """
# prototype SPAD pixel
q = 0.4
tau_d_s = 149.7e-9   # dead time
dark_rate_hz = 100
p_ap = 0.01
exposure_s = 5e-3
"""


def test_parse_config_text():
    values = parse_config_text(CONFIG_TEXT)
    assert values == {"q": 0.4, "tau_d_s": 149.7e-9, "dark_rate_hz": 100.0, "p_ap": 0.01,
                      "exposure_s": 5e-3}
    assert spad_config_from_dict(values) == PROTOTYPE_SPAD


@pytest.mark.parametrize("text, message", [
    ("q=0.4\nfoo=1\n", "unknown key"),
    ("q=0.4\nq=0.5\n", "duplicate key"),
    ("q 0.4\n", "expected key=value"),
    ("q=abc\n", "bad value"),
    ("fwc=1.5\n", "bad value"),
])
def test_parse_config_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config_text(text)


def test_missing_key_reported():
    with pytest.raises(ConfigError, match="fwc"):
        conventional_config_from_dict({"q": 0.9})


@pytest.mark.parametrize("cfg", [
    PROTOTYPE_SPAD, REFERENCE_CMOS, QisConfig(quantum_efficiency=0.8, bin_width=1e-6,
                                              read_noise=0.13)])
def test_config_text_round_trip(tmp_path, cfg):
    path = tmp_path / "sensor.cfg"
    path.write_text(config_to_text(cfg, exposure=5e-3))
    values = load_config_file(path)
    assert values["exposure_s"] == 5e-3
    builder = {SpadConfig: spad_config_from_dict, ConventionalConfig: conventional_config_from_dict,
               QisConfig: qis_config_from_dict}[type(cfg)]
    assert builder(values) == cfg
