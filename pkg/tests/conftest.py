import numpy as np
import pytest

from utils.design import MpcTuning, build_design
from utils.pipeline import design_pair, plant_from_config
from utils.run_config import (
    ModelConfig,
    RunConfig,
    ScenarioConfig,
    SolverConfig,
    TuningConfig,
)
from utils.ssmodel import PsSpec, StateSpaceModel

# Nine coils, first-order delay and a short horizon: d = 27, fast enough for every test
SMALL_CONFIG = RunConfig(
    model=ModelConfig(n_inputs=9, n_stable_design=2, n_stable_plant=4),
    ps=PsSpec(pade_order=1),
    tuning=TuningConfig(horizon=10, blocks=(2, 2, 6)),
    solver=SolverConfig(i_max=20, beta_length=50),
    scenario=ScenarioConfig(
        amplitude=0.1,
        sim_time=0.15,
        sweep_amplitudes=(0.0, 0.05, 0.1),
        state_samples=20,
        bench_repeats=2,
        quantization_samples=10_000,
    ),
)

SMALL_CONFIG_FILE = """
[MODEL]
inputs = 9
design-stable-modes = 2
plant-stable-modes = 4

[POWER-SUPPLY]
pade-order = 1

[TUNING]
horizon = 10
blocks = 2,2,6

[SOLVER]
iterations = 20

[SCENARIO]
amplitude = 0.1
sim-time = 0.15
sweep-amplitudes = 0,0.05,0.1
state-samples = 20
bench-repeats = 2
quantization-samples = 10000

[OUTPUT]
out-dir = out
"""


@pytest.fixture(scope="session")
def small_config() -> RunConfig:
    return SMALL_CONFIG


@pytest.fixture(scope="session")
def small_plant(small_config):
    return plant_from_config(small_config)


@pytest.fixture(scope="session")
def small_designs(small_config, small_plant):
    """(unscaled, scaled) designs for the small configuration."""
    return design_pair(small_config, small_plant)


@pytest.fixture(scope="session")
def small_design(small_designs):
    return small_designs[1]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.cfg"
    path.write_text(SMALL_CONFIG_FILE, encoding="utf-8")
    return path


def toy_model() -> StateSpaceModel:
    """Two-state discrete system with one unstable pole and one input."""
    return StateSpaceModel(
        A=np.array([[1.1, 0.1], [0.0, 0.8]]),
        B=np.array([[0.0], [1.0]]),
        C=np.array([[1.0, 0.0]]),
        Ts=0.01,
    )


def toy_tuning(N: int = 6, blocks=(1, 2, 3), u_max: float = 1.0) -> MpcTuning:
    return MpcTuning(
        Q_C=np.eye(2),
        R_C=0.1 * np.eye(1),
        N=N,
        blocks=blocks,
        u_min=-u_max * np.ones(1),
        u_max=u_max * np.ones(1),
        Q_K=np.eye(2),
        R_K=0.1 * np.eye(1),
    )


@pytest.fixture
def toy_design():
    return build_design(toy_model(), toy_tuning(), i_max=20, beta_length=50)
