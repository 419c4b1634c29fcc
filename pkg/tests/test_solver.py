import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from utils.design import CondensedQp, MpcTuning, build_design
from utils.mpc_exceptions import OracleError, SolverError
from utils.pipeline import nominal_state
from utils.solver import (
    Backend,
    FwlSolverConfig,
    _fwl_operands,
    certified_iterations,
    convergence_bounds,
    cost_of,
    fgm_solve,
    kkt_residual,
    mse,
    oracle_solve,
)
from utils.ssmodel import StateSpaceModel


def scalar_design(N: int = 3, u_max: float = 10.0, i_max: int = 20):
    """Stable scalar plant with unit weights; the condensed Hessian is well conditioned."""
    model = StateSpaceModel(A=[[0.5]], B=[[1.0]], C=[[1.0]], Ts=0.1)
    tuning = MpcTuning(
        Q_C=np.eye(1),
        R_C=np.eye(1),
        N=N,
        blocks=(1,) * N,
        u_min=[-u_max],
        u_max=[u_max],
        Q_K=np.eye(1),
        R_K=np.eye(1),
    )
    return build_design(model, tuning, i_max=i_max, beta_length=50)


def box_qp(H, F, lo, hi) -> CondensedQp:
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    return CondensedQp(
        H_c=H,
        F=np.asarray(F, dtype=float),
        Y=np.zeros((F.shape[1], F.shape[1])),
        u_min_t=np.full(d, lo, dtype=float),
        u_max_t=np.full(d, hi, dtype=float),
    )


def test_one_variable_lands_on_unconstrained_minimum():
    design = scalar_design(N=1)
    assert design.d == 1
    np.testing.assert_allclose(design.pre.H_cp, [[1.0]])

    x = np.array([-1.0 / design.F_p[0, 0]])
    report = fgm_solve(design, x, i_max=1)
    assert report.u_opt[0] == pytest.approx(1.0, rel=1e-12)


def test_one_variable_active_bound():
    design = scalar_design(N=1, u_max=2.0)
    x = np.array([-5.0 / design.F_p[0, 0]])

    report = fgm_solve(design, x, i_max=3)
    assert report.u_opt[0] == 2.0


def test_zero_state_gives_zero_input():
    design = scalar_design()
    report = fgm_solve(design, np.zeros(1), i_max=10)

    np.testing.assert_array_equal(report.u_opt, np.zeros(design.d))
    assert report.restarts == []


def test_full_backend_matches_oracle():
    design = scalar_design()
    x = np.array([0.8])

    report = fgm_solve(design, x, i_max=50)
    u_star = oracle_solve(design.qp, x)

    assert mse(report.u_opt, u_star, design.qp.u_min_t, design.qp.u_max_t) < 1e-10
    assert report.cost_history[-1] - cost_of(design.qp, x, u_star) < 1e-12


def test_full_backend_matches_oracle_with_active_bounds():
    design = scalar_design(u_max=0.5)
    x = np.array([4.0])

    report = fgm_solve(design, x, i_max=50)
    u_star = oracle_solve(design.qp, x)

    assert np.any(np.isclose(np.abs(u_star), 0.5))
    np.testing.assert_allclose(report.u_opt, u_star, atol=1e-8)


def test_report_shapes(toy_design):
    x = np.array([0.5, -0.2])
    report = fgm_solve(toy_design, x, i_max=12, record_iterates=True)

    assert report.iterations == 12
    assert len(report.cost_history) == 12
    assert len(report.iterates) == 12
    np.testing.assert_array_equal(report.iterates[-1], report.u_opt)
    np.testing.assert_array_equal(report.u_first, report.u_opt[:1])
    assert report.cost_history[0] == pytest.approx(cost_of(toy_design.qp, x, report.iterates[0]))


def test_iterates_stay_feasible(toy_design):
    x = np.array([40.0, -10.0])
    report = fgm_solve(toy_design, x, i_max=30, record_iterates=True)

    for u in report.iterates:
        assert np.all(u >= toy_design.qp.u_min_t)
        assert np.all(u <= toy_design.qp.u_max_t)


def test_restart_repeats_previous_iterate(toy_design):
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.uniform(-20.0, 20.0, 2)
        report = fgm_solve(toy_design, x, i_max=30, record_iterates=True)
        for i in report.restarts:
            if i > 1:
                np.testing.assert_array_equal(report.iterates[i - 1], report.iterates[i - 2])
                assert report.cost_history[i - 1] == report.cost_history[i - 2]


def test_reduced_backend_tracks_full():
    design = scalar_design()
    x = np.array([0.7])

    full = fgm_solve(design, x, i_max=20)
    reduced = fgm_solve(design, x, i_max=20, backend="reduced")

    assert reduced.backend == Backend.REDUCED
    assert mse(reduced.u_opt, full.u_opt, design.qp.u_min_t, design.qp.u_max_t) < 1e-6


def test_fwl_backend_tracks_full():
    design = scalar_design()
    x = np.array([0.7])

    full = fgm_solve(design, x, i_max=20)
    fwl = fgm_solve(design, x, i_max=20, backend=Backend.FWL)

    assert fwl.backend == Backend.FWL
    assert fwl.saturations == 0
    assert mse(fwl.u_opt, full.u_opt, design.qp.u_min_t, design.qp.u_max_t) < 1e-5
    assert len(fwl.raw_u) == design.d


def test_fwl_backend_is_deterministic(toy_design):
    x = np.array([0.3, -0.6])
    first = fgm_solve(toy_design, x, backend="fwl")
    second = fgm_solve(toy_design, x, backend="fwl")

    assert first.raw_u == second.raw_u
    assert first.restarts == second.restarts
    assert first.cost_history == second.cost_history


def test_fwl_solves_from_worker_threads_share_one_design():
    design = scalar_design(N=4)
    x = np.array([0.4])

    with ThreadPoolExecutor(max_workers=8) as pool:
        operands = list(pool.map(lambda _: _fwl_operands(design), range(16)))
        reports = list(pool.map(lambda _: fgm_solve(design, x, backend="fwl"), range(16)))

    assert all(ops is operands[0] for ops in operands)
    assert all(r.raw_u == reports[0].raw_u for r in reports)


def test_fwl_agrees_on_small_design(small_config, small_design):
    x = nominal_state(small_config, small_design)
    x = x / max(1.0, np.abs(x).max())
    full = fgm_solve(small_design, x)
    fwl = fgm_solve(small_design, x, backend="fwl")

    qp = small_design.qp
    assert fwl.saturations == 0
    assert mse(fwl.u_opt, full.u_opt, qp.u_min_t, qp.u_max_t) < 1e-4
    assert abs(fwl.cost_history[-1] - full.cost_history[-1]) < 1e-5


def test_fwl_formats_default_widths(toy_design):
    fwl = toy_design.fwl
    assert fwl.base.frac_bits == 25
    assert fwl.restart.width >= 64
    assert fwl.hessian.width == 27
    assert FwlSolverConfig.from_dict(fwl.to_dict()) == fwl


def test_solver_input_errors(toy_design):
    with pytest.raises(SolverError):
        fgm_solve(toy_design, np.zeros(3))
    with pytest.raises(SolverError):
        fgm_solve(toy_design, np.array([math.nan, 0.0]))
    with pytest.raises(SolverError):
        fgm_solve(toy_design, np.zeros(2), i_max=51)
    with pytest.raises(SolverError):
        fgm_solve(toy_design, np.zeros(2), backend="quad")


def test_oracle_unconstrained():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((6, 6))
    H = G @ G.T + 6 * np.eye(6)
    qp = box_qp(H, np.eye(6), -1e3, 1e3)
    x = rng.standard_normal(6)

    np.testing.assert_allclose(oracle_solve(qp, x), -np.linalg.solve(H, x), atol=1e-10)


def test_oracle_separable_clipping():
    qp = box_qp(np.eye(2), np.eye(2), -1.0, 1.0)
    np.testing.assert_array_equal(oracle_solve(qp, np.array([-3.0, 3.0])), [1.0, -1.0])


def test_oracle_meets_kkt_tolerance():
    rng = np.random.default_rng(9)
    for _ in range(10):
        G = rng.standard_normal((8, 8))
        H = G @ G.T + 0.1 * np.eye(8)
        qp = box_qp(H, np.eye(8), -1.0, 1.0)
        x = 5.0 * rng.standard_normal(8)

        u = oracle_solve(qp, x)
        assert kkt_residual(H, x, u, qp.u_min_t, qp.u_max_t) <= 1e-12


def test_oracle_stops_at_the_requested_tolerance():
    # coordinate descent contracts by 0.99^2 per sweep on this pair
    H = np.array([[1.0, 0.99], [0.99, 1.0]])
    qp = box_qp(H, np.eye(2), -100.0, 100.0)
    x = np.array([-1.0, 0.0])

    loose = oracle_solve(qp, x, tol=0.9)
    tight = oracle_solve(qp, x)

    assert 0.5 < kkt_residual(H, x, loose, qp.u_min_t, qp.u_max_t) <= 0.9
    np.testing.assert_allclose(tight, np.linalg.solve(H, -x), atol=1e-9)
    assert np.abs(loose - tight).max() > 10.0


def test_oracle_errors():
    with pytest.raises(OracleError):
        oracle_solve(box_qp(np.zeros((1, 1)), np.eye(1), -1.0, 1.0), np.ones(1))

    H = np.array([[1.0, 0.999], [0.999, 1.0]])
    with pytest.raises(OracleError):
        oracle_solve(box_qp(H, np.eye(2), -10.0, 10.0), np.array([1.0, 0.0]), max_sweeps=1)


def test_kkt_residual_is_relative():
    H = np.eye(2)
    f = np.array([-100.0, 0.0])
    assert kkt_residual(H, f, np.zeros(2), -1e3, 1e3) == 1.0
    assert kkt_residual(H, f, np.array([100.0, 0.0]), -1e3, 1e3) == 0.0


def test_mse():
    lo, hi = -np.ones(81), np.ones(81)
    u = np.zeros(81)

    assert mse(u, u, lo, hi) == 0.0
    assert mse(hi, lo, lo, hi) == 1.0

    off = u.copy()
    off[0] = 2.0
    assert mse(off, u, lo, hi) == pytest.approx(1.0 / 9.0)


def test_mse_errors():
    with pytest.raises(SolverError):
        mse(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(SolverError):
        mse(np.zeros(2), np.zeros(3), -np.ones(2), np.ones(2))


def test_convergence_bounds():
    linear, sublinear = convergence_bounds(1.0, 1.0, 2.0, 5)
    np.testing.assert_array_equal(linear, [2.0, 0, 0, 0, 0, 0])
    assert sublinear.shape == (6,)

    linear, sublinear = convergence_bounds(0.04, 1.0, 1.0, 4, radius=3.0)
    np.testing.assert_allclose(linear, 0.8 ** np.arange(5))
    np.testing.assert_allclose(sublinear, 36.0 / (np.arange(5) + 2.0) ** 2)

    with pytest.raises(SolverError):
        convergence_bounds(0.0, 1.0, 1.0, 5)


def test_certified_iterations():
    assert certified_iterations(0.04, 1.0, 1.0, 1e-4) == 42
    assert certified_iterations(0.04, 1.0, 1e-5, 1e-4) == 0
    assert certified_iterations(1.0, 1.0, 1.0, 1e-4) == 1


def test_cost_of_zero_input(toy_design):
    x = np.array([0.2, 0.1])
    assert cost_of(toy_design.qp, x, np.zeros(3)) == toy_design.qp.c_c(x)
