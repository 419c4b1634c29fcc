import asyncio
import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from utils import simloop
from utils.mpc_exceptions import SimulationError
from utils.pipeline import scenario_from_config
from utils.simloop import (
    Controller,
    PowerModel,
    SweepResult,
    amplitude_sweep,
    benchmark,
    collect_states,
    design_model,
    estimate_signal_ranges,
    is_stabilized,
    kf_step,
    lq_gain,
    run_closed_loop,
)
from utils.solver import Backend


@pytest.fixture(scope="module")
def mpc_trace(small_config, small_plant, small_design):
    return run_closed_loop(scenario_from_config(small_config, small_plant, small_design))


def test_is_stabilized():
    t = np.linspace(0.0, 1.0, 200)
    assert is_stabilized(np.exp(-20.0 * t))
    assert not is_stabilized(np.exp(5.0 * t))
    assert not is_stabilized(np.ones(50))
    assert is_stabilized(np.zeros(10))


def test_perturbation_sets_reduced_output_amplitude(small_plant):
    x0 = small_plant.perturbation(0.3, 40.0)
    y = small_plant.reducer.T_out @ small_plant.model.C @ x0

    assert np.linalg.norm(x0) == pytest.approx(0.3)
    assert np.linalg.norm(y) == pytest.approx(0.3, rel=1e-9)


def test_open_loop_grows_at_the_mode_rate(small_config, small_plant):
    s = scenario_from_config(small_config, small_plant, None, controller=Controller.OFF)
    trace = run_closed_loop(s)

    expected = 0.1 * np.exp(small_config.model.gamma * trace.t)
    np.testing.assert_allclose(trace.y_norm, expected, rtol=1e-9)
    np.testing.assert_array_equal(trace.u, 0.0)
    assert not trace.stabilized()


def test_mpc_stabilizes_small_perturbation(mpc_trace, small_config):
    assert mpc_trace.stabilized()
    assert mpc_trace.y.shape == (mpc_trace.t.shape[0], 2)
    assert mpc_trace.t.shape[0] == round(small_config.scenario.sim_time / small_config.model.sample_time)
    assert np.all(np.abs(mpc_trace.u) <= small_config.tuning.u_max * (1 + 1e-12))
    assert np.all(np.isfinite(mpc_trace.cost))


def test_zero_amplitude_stays_at_rest(small_config, small_plant, small_design):
    trace = run_closed_loop(
        scenario_from_config(small_config, small_plant, small_design, amplitude=0.0)
    )

    np.testing.assert_array_equal(trace.y, 0.0)
    np.testing.assert_array_equal(trace.u, 0.0)
    np.testing.assert_array_equal(trace.cost, 0.0)
    assert trace.stabilized()


def test_saturated_lq_runs(small_config, small_plant, small_design):
    trace = run_closed_loop(
        scenario_from_config(small_config, small_plant, small_design, controller=Controller.LQ)
    )
    assert np.all(np.isnan(trace.cost))
    assert np.all(np.abs(trace.u) <= small_config.tuning.u_max * (1 + 1e-12))


def test_trace_columns_and_metrics(small_config, small_plant, small_design):
    s = scenario_from_config(
        small_config,
        small_plant,
        small_design,
        power_model=PowerModel.VI,
        track_accuracy=True,
        T_sim=0.02,
    )
    trace = run_closed_loop(s)
    names, table = trace.columns()

    m = small_plant.model.n_inputs
    assert names[:3] == ["t", "y_A", "y_B"]
    assert f"u{m}" in names
    assert f"i_elm{m}" in names
    assert names[-3:] == ["cost", "mse", "power"]
    assert table.shape == (trace.t.shape[0], len(names))

    metrics = trace.metrics()
    assert metrics["steps"] == trace.t.shape[0]
    assert metrics["max_mse"] is not None
    assert metrics["fwl_saturations"] == 0


def test_measurement_noise_is_seeded(small_config, small_plant, small_design):
    def noisy(seed):
        return run_closed_loop(
            scenario_from_config(
                small_config,
                small_plant,
                small_design,
                meas_noise_std=1e-3,
                noise_seed=seed,
                T_sim=0.03,
            )
        )

    first, again, other = noisy(11), noisy(11), noisy(12)

    np.testing.assert_array_equal(first.y_m, again.y_m)
    np.testing.assert_array_equal(first.u, again.u)
    assert not np.array_equal(first.y_m, other.y_m)
    assert not np.array_equal(first.u, other.u)


def test_scenario_takes_oracle_tolerance_from_config(small_config, small_plant, small_design):
    cfg = replace(small_config, solver=replace(small_config.solver, oracle_tolerance=1e-6))
    s = scenario_from_config(cfg, small_plant, small_design)
    assert s.oracle_tolerance == 1e-6


def test_scenario_errors(small_config, small_plant, small_design):
    with pytest.raises(SimulationError):
        run_closed_loop(scenario_from_config(small_config, small_plant, None))

    narrow = scenario_from_config(small_config, small_plant, small_design, sat_limits=(-1.0, 1.0))
    with pytest.raises(SimulationError):
        run_closed_loop(narrow)


def test_kf_step_keeps_a_consistent_estimate(toy_design):
    A, B, C = toy_design.model_s.A, toy_design.model_s.B, toy_design.model_s.C
    x = np.array([0.2, -0.4])
    u = np.array([0.3])

    x_next = kf_step(toy_design, x, u, C @ (A @ x + B @ u))
    np.testing.assert_allclose(x_next, A @ x + B @ u)


def test_lq_gain_stabilizes(toy_design):
    A, B = toy_design.model_s.A, toy_design.model_s.B
    K = lq_gain(toy_design)
    assert np.abs(np.linalg.eigvals(A - B @ K)).max() < 1.0


def test_design_model_reduces_outputs(small_plant):
    m = design_model(small_plant)
    assert m.n_outputs == 2
    assert not m.has_feedthrough
    np.testing.assert_array_equal(m.A, small_plant.model.A)


def test_collect_states_is_seeded(mpc_trace):
    a = collect_states([mpc_trace], 5, seed=1)
    b = collect_states([mpc_trace], 5, seed=1)

    assert a.shape == (5, mpc_trace.x_hat.shape[1])
    np.testing.assert_array_equal(a, b)
    assert collect_states([mpc_trace], 10_000).shape[0] == mpc_trace.t.shape[0]


def test_signal_ranges_are_positive(small_plant, small_designs):
    unscaled, _ = small_designs
    x_range, y_range = estimate_signal_ranges(
        small_plant, unscaled, 0.1, phases=(0.0, 90.0), T_sim=0.05
    )

    assert x_range.shape == (unscaled.model_s.n_states,)
    assert y_range.shape == (2,)
    assert np.all(x_range > 0)
    assert np.all(y_range > 0)


def test_sweep_result_margin():
    assert SweepResult([1.0], [True], [True], 2.0, 1.0).margin_ratio == 2.0
    assert SweepResult([1.0], [True], [False], 1.0, 0.0).margin_ratio == math.inf
    assert math.isnan(SweepResult([1.0], [False], [False], 0.0, 0.0).margin_ratio)


def test_amplitude_sweep(small_config, small_plant, small_design):
    s = scenario_from_config(small_config, small_plant, small_design, T_sim=0.05)
    result = asyncio.run(amplitude_sweep(s, [0.05, 0.0]))

    assert result.amplitudes == [0.05, 0.0]
    assert len(result.mpc_stable) == len(result.lq_stable) == 2
    assert result.mpc_stable[1] and result.lq_stable[1]
    assert result.max_mpc in (0.0, 0.05)


def test_benchmark_against_full(small_design, mpc_trace):
    states = collect_states([mpc_trace], 3, seed=0)

    full = benchmark(small_design, states, "full", repeats=1, warmup=0)
    assert full.backend == Backend.FULL
    assert full.samples == 3
    assert full.max_mse == 0.0
    assert full.max_cost_gap == 0.0
    assert full.max_ms >= full.avg_ms > 0

    reduced = benchmark(small_design, states, Backend.REDUCED, repeats=1, warmup=0)
    assert reduced.max_mse < 1e-4

    with pytest.raises(SimulationError):
        benchmark(small_design, [], "full")


def test_benchmark_reads_the_nanosecond_clock(monkeypatch, small_design, mpc_trace):
    ticks = itertools.count(step=250_000)
    monkeypatch.setattr(simloop.time, "perf_counter_ns", lambda: next(ticks))

    stats = benchmark(small_design, collect_states([mpc_trace], 2, seed=0), "full", repeats=2)

    assert stats.timings_ms == [0.25] * 4
    assert stats.avg_ms == stats.max_ms == 0.25
    assert stats.std_ms == 0.0


def test_fwl_closed_loop_matches_full(small_config, small_plant, small_design, mpc_trace):
    s = scenario_from_config(small_config, small_plant, small_design, backend=Backend.FWL)
    trace = run_closed_loop(s)

    assert trace.saturations == 0
    assert trace.stabilized()
    np.testing.assert_allclose(trace.u, mpc_trace.u, atol=1e-3 * small_config.tuning.u_max)


def test_replace_keeps_scenario_frozen(small_config, small_plant, small_design):
    s = scenario_from_config(small_config, small_plant, small_design)
    t = replace(s, amplitude=0.2)
    assert s.amplitude == small_config.scenario.amplitude
    assert t.initial_state() == pytest.approx(2.0 * s.initial_state())
