import configparser
import logging
import os
from dataclasses import dataclass, field, replace

from utils.design import BetaSchedule
from utils.mpc_exceptions import ConfigError
from utils.simloop import PowerModel
from utils.solver import Backend
from utils.ssmodel import PsSpec, SurrogateSpec

SECTIONS = ("MODEL", "POWER-SUPPLY", "TUNING", "SOLVER", "SCENARIO", "OUTPUT")


@dataclass(frozen=True)
class ModelConfig:
    sample_time: float = 0.75e-3
    gamma: float = 19.0
    omega: float = 0.26
    n_inputs: int = 27
    n_outputs: int = 6
    n_stable_design: int = 6
    n_stable_plant: int = 12
    stable_tau_min: float = 2.0e-3
    stable_tau_max: float = 50.0e-3
    input_gain: float = 0.05
    seed: int = 7

    def surrogate(self, plant: bool = False) -> SurrogateSpec:
        return SurrogateSpec(
            gamma=self.gamma,
            omega=self.omega,
            n_stable=self.n_stable_plant if plant else self.n_stable_design,
            stable_tau_range=(self.stable_tau_min, self.stable_tau_max),
            n_inputs=self.n_inputs,
            n_outputs=self.n_outputs,
            seed=self.seed,
            input_gain=self.input_gain,
        )


@dataclass(frozen=True)
class TuningConfig:
    horizon: int = 80
    blocks: tuple[int, ...] = (2, 2, 76)
    u_max: float = 34.0
    r_c: float = 1e-4
    q_reg: float = 1e-6
    kf_rho: float | None = None
    use_scaling: bool = True
    precondition: bool = True
    beta_schedule: BetaSchedule = BetaSchedule.RECURSION
    alpha0: float | None = None


@dataclass(frozen=True)
class SolverConfig:
    backend: Backend = Backend.FULL
    i_max: int = 20
    beta_length: int = 50
    oracle_tolerance: float = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    amplitude: float = 0.3
    phase: float = 0.0
    sim_time: float = 0.75
    noise_seed: int = 0
    meas_noise_std: float = 0.0
    current_limit: float = 1.5e4
    power_model: PowerModel = PowerModel.NONE
    sweep_amplitudes: tuple[float, ...] = (0.0, 0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4, 3.0, 4.0, 6.0)
    state_samples: int = 200
    bench_repeats: int = 10
    quantization_samples: int = 1_000_000


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "out"
    design_file: str = "design.json"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ps: PsSpec = field(default_factory=PsSpec)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def design_path(self) -> str:
        if os.path.isabs(self.output.design_file):
            return self.output.design_file
        return os.path.join(self.output.out_dir, self.output.design_file)


# ------ Value parsers ------


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _optional_float(value: str) -> float | None:
    return None if value.strip().lower() in ("", "auto", "none") else float(value)


def _int_tuple(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _float_tuple(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(",") if v.strip())


def _section(parser, name: str, defaults, keys: dict) -> object:
    """Build one dataclass from a section; ``keys`` maps config key -> (field, parser)."""
    if not parser.has_section(name):
        logging.critical(f"[CONFIG] Config file malformed: missing [{name}] section!")
        raise ConfigError(f"missing [{name}] section")

    values = {}
    for key, raw in parser.items(name):
        if key not in keys:
            raise ConfigError(f"[{name}] unknown key '{key}'")

        attr, convert = keys[key]
        try:
            values[attr] = convert(raw)
        except (ValueError, TypeError) as e:
            logging.critical(f"[CONFIG] Bad value in config file: [{name}] {key} = {raw}")
            raise ConfigError(f"[{name}] {key}: {e}") from e

    try:
        return replace(defaults, **values)
    except Exception as e:
        raise ConfigError(f"[{name}] {e}") from e


# ------ Config File Reader ------


def read_run_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        logging.critical(f"[CONFIG] Config file {path} not found!")
        raise ConfigError(f"config file {path} not found")

    parser = configparser.RawConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        logging.critical(
            "[CONFIG] Config file malformed: the file could not be parsed."
        )
        raise ConfigError(f"{path}: {e}") from e

    model = _section(
        parser,
        "MODEL",
        ModelConfig(),
        {
            "sample-time": ("sample_time", float),
            "growth-rate": ("gamma", float),
            "rotation-frequency": ("omega", float),
            "inputs": ("n_inputs", int),
            "outputs": ("n_outputs", int),
            "design-stable-modes": ("n_stable_design", int),
            "plant-stable-modes": ("n_stable_plant", int),
            "stable-tau-min": ("stable_tau_min", float),
            "stable-tau-max": ("stable_tau_max", float),
            "input-gain": ("input_gain", float),
            "seed": ("seed", int),
        },
    )

    ps = _section(
        parser,
        "POWER-SUPPLY",
        PsSpec(),
        {
            "v-min": ("v_min", float),
            "v-max": ("v_max", float),
            "lag-tau": ("lag_tau", float),
            "delay": ("delay", float),
            "pade-order": ("pade_order", int),
        },
    )

    tuning = _section(
        parser,
        "TUNING",
        TuningConfig(),
        {
            "horizon": ("horizon", int),
            "blocks": ("blocks", _int_tuple),
            "u-max": ("u_max", float),
            "input-weight": ("r_c", float),
            "state-regularization": ("q_reg", float),
            "kf-rho": ("kf_rho", _optional_float),
            "scaling": ("use_scaling", _bool),
            "precondition": ("precondition", _bool),
            "beta-schedule": ("beta_schedule", BetaSchedule),
            "alpha0": ("alpha0", _optional_float),
        },
    )

    solver = _section(
        parser,
        "SOLVER",
        SolverConfig(),
        {
            "backend": ("backend", Backend),
            "iterations": ("i_max", int),
            "beta-length": ("beta_length", int),
            "oracle-tolerance": ("oracle_tolerance", float),
        },
    )

    scenario = _section(
        parser,
        "SCENARIO",
        ScenarioConfig(),
        {
            "amplitude": ("amplitude", float),
            "phase": ("phase", float),
            "sim-time": ("sim_time", float),
            "noise-seed": ("noise_seed", int),
            "meas-noise-std": ("meas_noise_std", float),
            "current-limit": ("current_limit", float),
            "power-model": ("power_model", PowerModel),
            "sweep-amplitudes": ("sweep_amplitudes", _float_tuple),
            "state-samples": ("state_samples", int),
            "bench-repeats": ("bench_repeats", int),
            "quantization-samples": ("quantization_samples", int),
        },
    )

    output = _section(
        parser,
        "OUTPUT",
        OutputConfig(),
        {
            "out-dir": ("out_dir", str),
            "design-file": ("design_file", str),
        },
    )

    if sum(tuning.blocks) != tuning.horizon:
        raise ConfigError(
            f"[TUNING] blocks {tuning.blocks} must sum to horizon {tuning.horizon}"
        )
    if solver.i_max > solver.beta_length:
        raise ConfigError("[SOLVER] iterations must not exceed beta-length")

    logging.info(f"[CONFIG] Read {path}")
    return RunConfig(model, ps, tuning, solver, scenario, output)


def apply_overrides(
    cfg: RunConfig,
    backend: str | None = None,
    i_max: int | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> RunConfig:
    """Command-line flags take precedence over the file."""
    if backend is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, backend=Backend(backend)))
    if i_max is not None:
        if not 1 <= i_max <= cfg.solver.beta_length:
            raise ConfigError(f"--imax must lie in [1, {cfg.solver.beta_length}]")
        cfg = replace(cfg, solver=replace(cfg.solver, i_max=i_max))
    if seed is not None:
        cfg = replace(cfg, model=replace(cfg.model, seed=seed))
    if out_dir is not None:
        cfg = replace(cfg, output=replace(cfg.output, out_dir=out_dir))
    return cfg
