import os
from pathlib import Path

import pytest

from tests.conftest import SMALL_CONFIG, SMALL_CONFIG_FILE
from utils.design import BetaSchedule
from utils.mpc_exceptions import ConfigError
from utils.run_config import RunConfig, apply_overrides, read_run_config
from utils.solver import Backend

EXAMPLE_CONFIG = Path(__file__).resolve().parent.parent / "example-config.cfg"


def write(tmp_path, text: str) -> str:
    path = tmp_path / "config.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_example_config_matches_defaults():
    assert read_run_config(str(EXAMPLE_CONFIG)) == RunConfig()


def test_small_config_file(config_file):
    cfg = read_run_config(str(config_file))

    assert cfg == SMALL_CONFIG
    assert cfg.tuning.blocks == (2, 2, 6)
    assert cfg.scenario.sweep_amplitudes == (0.0, 0.05, 0.1)
    assert cfg.tuning.kf_rho is None


def test_optional_and_enum_values(tmp_path):
    text = SMALL_CONFIG_FILE.replace(
        "blocks = 2,2,6",
        "blocks = 2,2,6\nkf-rho = 0.5\nbeta-schedule = constant\nscaling = no",
    ).replace("iterations = 20", "iterations = 20\nbackend = fwl")
    cfg = read_run_config(write(tmp_path, text))

    assert cfg.tuning.kf_rho == 0.5
    assert cfg.tuning.beta_schedule == BetaSchedule.CONSTANT
    assert cfg.tuning.use_scaling is False
    assert cfg.solver.backend == Backend.FWL


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_run_config(str(tmp_path / "nope.cfg"))


def test_missing_section(tmp_path):
    text = SMALL_CONFIG_FILE.replace("[OUTPUT]\nout-dir = out\n", "")
    with pytest.raises(ConfigError, match="OUTPUT"):
        read_run_config(write(tmp_path, text))


def test_unknown_key(tmp_path):
    text = SMALL_CONFIG_FILE.replace("inputs = 9", "inputs = 9\ncolour = blue")
    with pytest.raises(ConfigError, match="colour"):
        read_run_config(write(tmp_path, text))


@pytest.mark.parametrize(
    "old,new",
    [
        ("inputs = 9", "inputs = nine"),
        ("iterations = 20", "iterations = 20\nbackend = quad"),
        ("pade-order = 1", "pade-order = 1\nv-min = 200"),
        ("blocks = 2,2,6", "blocks = 2,2,7"),
        ("iterations = 20", "iterations = 60"),
    ],
)
def test_bad_values(tmp_path, old, new):
    with pytest.raises(ConfigError):
        read_run_config(write(tmp_path, SMALL_CONFIG_FILE.replace(old, new)))


def test_unparsable_file(tmp_path):
    with pytest.raises(ConfigError):
        read_run_config(write(tmp_path, "inputs = 9\n[MODEL]\n"))


def test_overrides():
    cfg = apply_overrides(SMALL_CONFIG, backend="fwl", i_max=30, seed=11, out_dir="elsewhere")

    assert cfg.solver.backend == Backend.FWL
    assert cfg.solver.i_max == 30
    assert cfg.model.seed == 11
    assert cfg.output.out_dir == "elsewhere"
    assert apply_overrides(SMALL_CONFIG) == SMALL_CONFIG

    with pytest.raises(ConfigError):
        apply_overrides(SMALL_CONFIG, i_max=51)


def test_design_path():
    assert RunConfig().design_path == os.path.join("out", "design.json")

    cfg = apply_overrides(RunConfig(), out_dir="runs")
    assert cfg.design_path == os.path.join("runs", "design.json")


def test_surrogate_follows_model_section():
    model = SMALL_CONFIG.model
    assert model.surrogate().n_stable == 2
    assert model.surrogate(plant=True).n_stable == 4
    assert model.surrogate().n_inputs == 9
