"""Full-size checks on the default 27-coil design. Deselect with ``-m "not slow"``."""

import asyncio

import numpy as np
import pytest

from utils import verify
from utils.pipeline import design_pair, plant_from_config, reference_states, scenario_from_config
from utils.run_config import RunConfig
from utils.solver import Backend, fgm_solve, mse, oracle_solve

pytestmark = pytest.mark.slow

CONFIG = RunConfig()


@pytest.fixture(scope="module")
def plant():
    return plant_from_config(CONFIG)


@pytest.fixture(scope="module")
def designs(plant):
    return design_pair(CONFIG, plant)


@pytest.fixture(scope="module")
def design(designs):
    return designs[1]


@pytest.fixture(scope="module")
def states(plant, design):
    return reference_states(CONFIG, plant, design, CONFIG.scenario.state_samples)


@pytest.fixture(scope="module")
def nominal(plant, design):
    return scenario_from_config(CONFIG, plant, design, backend=Backend.FULL)


def assert_passed(check: verify.Check):
    assert check.passed, check.detail


def test_design_size(design, states):
    assert design.d == 81
    assert design.model_s.n_inputs == 27
    assert len(states) == CONFIG.scenario.state_samples


def test_solver_accuracy(design, states):
    assert_passed(verify.oracle_accuracy(design, states))


def test_more_iterations_never_hurt(design, states):
    qp = design.qp
    for x in states[:50]:
        u_star = oracle_solve(qp, x)
        at_20 = mse(fgm_solve(design, x, 20).u_opt, u_star, qp.u_min_t, qp.u_max_t)
        at_50 = mse(fgm_solve(design, x, 50).u_opt, u_star, qp.u_min_t, qp.u_max_t)
        assert at_50 <= at_20 + 1e-12


def test_bound_domination(design, states):
    twin = verify.unpreconditioned_twin(design)
    assert_passed(verify.bound_domination(design, twin, states[:12]))


def test_fwl_degradation(design, states):
    assert_passed(verify.fwl_degradation(design, states))


def test_fwl_determinism(design, states):
    assert_passed(verify.fwl_determinism(design, states[:12]))


def test_scaling_equivalence(plant, designs, nominal):
    unscaled, scaled = designs
    assert_passed(verify.scaling_equivalence(plant, unscaled, scaled, nominal))


def test_riccati(design):
    assert_passed(verify.riccati(design))


def test_condensing():
    assert_passed(verify.condensing_oracle(seed=CONFIG.model.seed))


def test_preconditioner():
    assert_passed(verify.preconditioner_properties(seed=CONFIG.model.seed))


def test_quantization(design):
    fwl = design.fwl
    formats = {"iterate": fwl.base, "hessian": fwl.hessian, "hv": fwl.hv}
    assert_passed(verify.quantization_bounds(formats, samples=100_000, seed=CONFIG.model.seed))


def test_closed_loop(nominal):
    assert_passed(verify.closed_loop(nominal, CONFIG.model.gamma, CONFIG.tuning.u_max))


def test_domain_of_attraction(nominal):
    check = asyncio.run(verify.domain_of_attraction(nominal, CONFIG.scenario.sweep_amplitudes))
    assert_passed(check)


def test_preconditioning_lowers_condition_number(design):
    assert design.pre.cond_after < design.pre.cond_before
    assert np.isclose(np.linalg.eigvals(design.pre.H_cp).real.max(), 1.0)


def test_throughput(design, states):
    assert_passed(verify.throughput(design, states[:20], CONFIG.model.sample_time, repeats=3))
