import logging
from dataclasses import replace

import numpy as np

from utils.artifacts import source_commit
from utils.design import MpcDesign, build_design, default_tuning, make_scaling
from utils.run_config import RunConfig
from utils.simloop import (
    Plant,
    ScenarioSpec,
    build_plant,
    collect_states,
    design_model,
    estimate_signal_ranges,
    run_closed_loop,
)


def plant_from_config(cfg: RunConfig, for_design: bool = False) -> Plant:
    """The simulated plant, or its lower-order twin the controller is designed on."""
    return build_plant(cfg.ps, cfg.model.surrogate(plant=not for_design), cfg.model.sample_time)


def provenance(cfg: RunConfig) -> dict:
    info = {
        "seed": cfg.model.seed,
        "sample_time": cfg.model.sample_time,
        "gamma": cfg.model.gamma,
        "omega": cfg.model.omega,
        "n_stable_design": cfg.model.n_stable_design,
        "n_stable_plant": cfg.model.n_stable_plant,
        "horizon": cfg.tuning.horizon,
        "blocks": list(cfg.tuning.blocks),
        "u_max": cfg.tuning.u_max,
        "input_weight": cfg.tuning.r_c,
        "state_regularization": cfg.tuning.q_reg,
        "scaling": cfg.tuning.use_scaling,
        "precondition": cfg.tuning.precondition,
        "beta_schedule": str(cfg.tuning.beta_schedule),
    }

    commit = source_commit()
    if commit is not None:
        info["commit"] = commit
    return info


def design_pair(cfg: RunConfig, plant: Plant | None = None) -> tuple[MpcDesign, MpcDesign]:
    """Unscaled design and the deployed one.

    The filter and cost are tuned on the unscaled design model, the scaling
    is calibrated by running the unscaled design against ``plant``, then the
    design is rebuilt in scaled coordinates. With scaling off both entries
    are the same design.
    """
    model = design_model(plant_from_config(cfg, for_design=True))
    plant = plant or plant_from_config(cfg)
    t = cfg.tuning

    tuning = default_tuning(
        model,
        u_max=t.u_max,
        N=t.horizon,
        blocks=t.blocks,
        r_c=t.r_c,
        q_reg=t.q_reg,
        kf_rho=t.kf_rho,
    )

    options = dict(
        i_max=cfg.solver.i_max,
        beta_length=cfg.solver.beta_length,
        use_preconditioner=t.precondition,
        beta_schedule=t.beta_schedule,
        alpha0=t.alpha0,
    )
    info = provenance(cfg)
    info["kf_rho"] = float(tuning.R_K[0, 0])

    unscaled = build_design(model, tuning, provenance=info, **options)
    if not t.use_scaling:
        return unscaled, unscaled

    logging.info("[DESIGN] Calibrating scaling with the unscaled design...")
    x_range, y_range = estimate_signal_ranges(
        plant, unscaled, cfg.scenario.amplitude, T_sim=cfg.scenario.sim_time
    )

    scaling = make_scaling(model, t.u_max, x_range, y_range)
    return unscaled, build_design(model, tuning, scaling, provenance=info, **options)


def design_from_config(cfg: RunConfig, plant: Plant | None = None) -> MpcDesign:
    return design_pair(cfg, plant)[1]


def nominal_state(cfg: RunConfig, design: MpcDesign) -> np.ndarray:
    """The configured perturbation of the design model, in the design's scaled coordinates."""
    twin = plant_from_config(cfg, for_design=True)
    x = twin.perturbation(cfg.scenario.amplitude, cfg.scenario.phase)
    return x / design.scaling.k_x


def scenario_from_config(cfg: RunConfig, plant: Plant, design: MpcDesign | None, **changes) -> ScenarioSpec:
    sc = cfg.scenario
    spec = ScenarioSpec(
        plant=plant,
        design=design,
        backend=cfg.solver.backend,
        i_max=cfg.solver.i_max,
        amplitude=sc.amplitude,
        phase=sc.phase,
        T_sim=sc.sim_time,
        noise_seed=sc.noise_seed,
        meas_noise_std=sc.meas_noise_std,
        current_limit=sc.current_limit,
        power_model=sc.power_model,
        oracle_tolerance=cfg.solver.oracle_tolerance,
    )
    return replace(spec, **changes) if changes else spec


def reference_states(cfg: RunConfig, plant: Plant, design: MpcDesign, count: int) -> np.ndarray:
    """Seeded closed-loop state estimates for benchmarking and solver checks."""
    traces = [
        run_closed_loop(scenario_from_config(cfg, plant, design, phase=phase))
        for phase in (0.0, 90.0, 180.0, 270.0)
    ]
    return collect_states(traces, count, seed=cfg.model.seed)
