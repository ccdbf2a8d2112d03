"""RunConfig defaults, validation, and config-file parsing."""

import pytest

from oopt.config import RunConfig, VALID_KEYS, parse_config
from oopt.errors import ConfigError


def test_documented_defaults():
    cfg = RunConfig()
    assert cfg.K == 50
    assert cfg.eta0 == 0.01
    assert cfg.thresholds() == (0.8, 0.5, 120.0)
    assert cfg.gamma0 == 0.1
    assert (cfg.decay, cfg.decay_period) == (0.7, 10)
    assert cfg.T == 100
    assert cfg.voxel == "auto"
    assert cfg.pseudo_gate == 0.5
    assert cfg.offset_init == "repulsion"


def test_schedule_endpoints():
    # gamma decays from 0.1 to about 0.004 over the standard T=100 run.
    cfg = RunConfig()
    final = cfg.gamma0 * cfg.decay ** (99 // cfg.decay_period)
    assert 0.003 < final < 0.005


@pytest.mark.parametrize("kw", [
    {"K": 2}, {"eta0": 0.0}, {"p1": 0.0}, {"p1": 1.5}, {"p2": -0.1},
    {"angle": 200.0}, {"gamma0": -1.0}, {"decay": 1.5}, {"decay": 0.0},
    {"decay_period": 0}, {"T": -1}, {"voxel": -0.5}, {"chunk": 0},
    {"pseudo_gate": 1.0}, {"offset_init": "random"}, {"samples": 0},
    {"fscore_tau": 0.0}, {"sharp_angle": 91.0}, {"ef1_tau": -1.0},
])
def test_validation_rejects(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_parse_file_with_comments_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# reconstruction settings\n"
        "K = 16\n"
        "T = 25        # fewer iterations\n"
        "voxel = auto\n"
        "\n"
        "gamma0 = 0.05\n")
    cfg = parse_config(path)
    assert (cfg.K, cfg.T, cfg.voxel, cfg.gamma0) == (16, 25, "auto", 0.05)
    # CLI-style overrides beat file values.
    cfg2 = parse_config(path, overrides={"T": 7, "voxel": "0.02"})
    assert (cfg2.T, cfg2.voxel) == (7, 0.02)
    # None overrides are "flag not given" and ignored.
    cfg3 = parse_config(path, overrides={"T": None})
    assert cfg3.T == 25


def test_parse_errors_name_the_problem(tmp_path):
    bad_key = tmp_path / "a.cfg"
    bad_key.write_text("clouds = 3\n")
    with pytest.raises(ConfigError) as err:
        parse_config(bad_key)
    msg = str(err.value)
    assert "clouds" in msg and "a.cfg:1" in msg
    # The full valid-key list is part of the diagnostic.
    for key in VALID_KEYS:
        assert key in msg

    bad_line = tmp_path / "b.cfg"
    bad_line.write_text("K 16\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(bad_line)

    bad_int = tmp_path / "c.cfg"
    bad_int.write_text("K = 3.5\n")
    with pytest.raises(ConfigError, match="integer"):
        parse_config(bad_int)

    bad_voxel = tmp_path / "d.cfg"
    bad_voxel.write_text("voxel = tiny\n")
    with pytest.raises(ConfigError, match="auto"):
        parse_config(bad_voxel)


def test_parse_no_file_defaults():
    assert parse_config() == RunConfig()


def test_override_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(overrides={"velocity": 1})
