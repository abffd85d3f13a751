import numpy as np
import pytest

from robust_oed.config import (ConfigError, ExperimentConfig, build_problem, load_config,
                               load_fixture, parse_config_text, reference_config,
                               reference_config_path, to_ini, write_fixture)
from robust_oed.objective import PenaltyKind

from conftest import random_problem

MINIMAL = "[model]\nsensors = 3 4; 10 12\n"


def test_minimal_config_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.model.sensors == [(3, 4), (10, 12)]
    assert cfg.model.grid_n == 24 and cfg.model.n_obs_times == 5
    assert (cfg.noise.lambda_lo, cfg.noise.lambda_hi) == (0.02, 0.04)
    assert cfg.penalty.kind is PenaltyKind.NONE
    assert cfg.prior.delta == 0.5 and cfg.prior.scale == 1.0


@pytest.mark.parametrize("n", [2, 5, 10])
def test_echo_round_trip(n):
    cfg = reference_config(n)
    assert parse_config_text(to_ini(cfg)) == cfg
    assert len(cfg.model.sensors) == n


def test_reference_penalties():
    assert reference_config(5).penalty.kind is PenaltyKind.L0_SQUARED
    assert reference_config(5).penalty.alpha == 10
    b = reference_config(10).penalty
    assert (b.kind, b.alpha, b.budget) == (PenaltyKind.BUDGET, 50, 3)
    assert reference_config(2).penalty.alpha == 0
    assert reference_config(5, seed=7).solver.seed == 7


def test_unknown_key_reports_line():
    text = MINIMAL + "\n[solver]\nseed = 1\nlearning_rate = 3\n"
    with pytest.raises(ConfigError) as err:
        parse_config_text(text, "exp.ini")
    assert err.value.line == 6
    assert str(err.value).startswith("exp.ini:6:")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text(MINIMAL + "[extras]\nx = 1\n")


def test_inverted_noise_box_rejected():
    with pytest.raises(ConfigError, match="lambda_lo < lambda_hi") as err:
        parse_config_text(MINIMAL + "[noise]\nlambda_lo = 0.04\nlambda_hi = 0.02\n")
    assert err.value.line == 4


def test_bad_values_rejected():
    for extra in ("[solver]\nn_ens = many\n", "[penalty]\nkind = l1\n",
                  "[solver]\ngamma1 = -1\n", "[prior]\ndelta = x\n"):
        with pytest.raises(ConfigError):
            parse_config_text(MINIMAL + extra)
    with pytest.raises(ConfigError, match="needs"):
        parse_config_text("[model]\ngrid_n = 10\n")


def test_random_layout():
    cfg = parse_config_text("[model]\ngrid_n = 12\nn_sensors = 7\nlayout_seed = 3\n")
    assert len(cfg.model.sensors) == 7
    assert all(0 < x < 11 and 0 < y < 11 for x, y in cfg.model.sensors)
    assert parse_config_text(to_ini(cfg)) == cfg


def test_fixture_round_trip(tmp_path):
    p = random_problem(n_sensors=3, n_obs_times=2, n_params=5, seed=4)
    path = tmp_path / "model.txt"
    write_fixture(path, p.model, p.prior, p.noise)
    F, prior, noise = load_fixture(path)
    np.testing.assert_array_equal(F.matrix, p.model.matrix)
    np.testing.assert_array_equal(prior.precision, p.prior.precision)
    assert (noise.lambda_lo, noise.lambda_hi) == (0.02, 0.04)
    (tmp_path / "exp.ini").write_text("[model]\nfixture = model.txt\n")
    cfg = load_config(tmp_path / "exp.ini")
    prob = build_problem(cfg)
    np.testing.assert_array_equal(prob.model.matrix, p.model.matrix)
    assert parse_config_text(to_ini(cfg)) == cfg


def test_fixture_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("n_sensors 2\nn_obs_times 1\nforward 2 2\n1 0 0 1\n")
    with pytest.raises(ValueError, match="missing"):
        load_fixture(path)
    (tmp_path / "exp.ini").write_text("[model]\nfixture = missing.txt\n")
    with pytest.raises(ConfigError, match="fixture"):
        load_config(tmp_path / "exp.ini")


def test_reference_configs_are_packaged():
    for n in (2, 5, 10):
        assert reference_config_path(n).is_file()
    assert isinstance(reference_config(2), ExperimentConfig)
