"""Self-checks run by ``verify``; each returns one named pass/fail row."""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from utils.design import (
    CondensedQp,
    MpcDesign,
    MpcTuning,
    build_design,
    condense,
    dare_residual,
    precondition,
    rollout_cost,
    solve_dare,
)
from utils.fxp import FixedFormat, FixedMatrix, FixedVector, tree_matvec
from utils.simloop import (
    Controller,
    Plant,
    ScenarioSpec,
    amplitude_sweep,
    benchmark,
    run_closed_loop,
)
from utils.solver import (
    ORACLE_TOLERANCE,
    Backend,
    certified_iterations,
    convergence_bounds,
    cost_of,
    fgm_solve,
    mse,
    oracle_solve,
)
from utils.ssmodel import StateSpaceModel

MSE_LIMIT = 1e-4
COST_GAP_LIMIT = 3e-4
FWL_COST_LIMIT = 1e-5
SCALING_TOLERANCE = 1e-8
CONDENSE_TOLERANCE = 1e-10
DARE_LIMIT = 1e-10
GROWTH_TOLERANCE = 0.05
GAP_TARGET = 1e-4


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def log(self) -> "Check":
        level = logging.INFO if self.passed else logging.ERROR
        logging.log(level, f"[VERIFY] {'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}")
        return self


def oracle_accuracy(design: MpcDesign, states, tol: float = ORACLE_TOLERANCE) -> Check:
    worst_mse, worst_gap = 0.0, 0.0
    for x in states:
        u = fgm_solve(design, x).u_opt
        u_star = oracle_solve(design.qp, x, tol)
        worst_mse = max(worst_mse, mse(u, u_star, design.qp.u_min_t, design.qp.u_max_t))
        worst_gap = max(worst_gap, cost_of(design.qp, x, u) - cost_of(design.qp, x, u_star))

    return Check(
        "solver-accuracy",
        worst_mse < MSE_LIMIT and worst_gap < COST_GAP_LIMIT,
        f"{len(states)} states, max MSE {worst_mse:.3e}, max cost gap {worst_gap:.3e}",
    )


def gap_curves(design: MpcDesign, x, tol: float = ORACLE_TOLERANCE) -> tuple[np.ndarray, np.ndarray]:
    """Observed ``J(u^i) - J*`` for ``i = 0 .. len(beta)`` and the matching linear bound."""
    i_max = len(design.beta)
    report = fgm_solve(design, x, i_max)
    j_star = cost_of(design.qp, x, oracle_solve(design.qp, x, tol))

    costs = np.array([cost_of(design.qp, x, np.zeros(design.d)), *report.cost_history])
    gaps = costs - j_star
    linear, _ = convergence_bounds(design.pre.mu, design.pre.lip, max(gaps[0], 0.0), i_max)
    return gaps, linear


def bound_domination(
    design: MpcDesign, unpreconditioned: MpcDesign, states, tol: float = ORACLE_TOLERANCE
) -> Check:
    violations, worst_gap0 = 0, 0.0
    for x in states:
        gaps, linear = gap_curves(design, x, tol)
        slack = 1e-10 * max(1.0, abs(gaps[0]))
        violations += int(np.sum(gaps > linear + slack))
        worst_gap0 = max(worst_gap0, gaps[0])

    gap0 = max(worst_gap0, 2 * GAP_TARGET)
    with_pre = certified_iterations(design.pre.mu, design.pre.lip, gap0, GAP_TARGET)
    without = certified_iterations(
        unpreconditioned.pre.mu, unpreconditioned.pre.lip, gap0, GAP_TARGET
    )

    return Check(
        "bound-domination",
        violations == 0 and without > with_pre,
        f"{violations} bound violations over {len(states)} states; "
        f"certified iterations {with_pre} preconditioned vs {without} without",
    )


def fwl_degradation(design: MpcDesign, states) -> Check:
    worst_mse, worst_gap, saturations = 0.0, 0.0, 0
    for x in states:
        full = fgm_solve(design, x, backend=Backend.FULL)
        fwl = fgm_solve(design, x, backend=Backend.FWL)
        worst_mse = max(
            worst_mse, mse(fwl.u_opt, full.u_opt, design.qp.u_min_t, design.qp.u_max_t)
        )
        worst_gap = max(worst_gap, abs(fwl.cost_history[-1] - full.cost_history[-1]))
        saturations += fwl.saturations

    return Check(
        "fwl-degradation",
        worst_mse <= MSE_LIMIT and worst_gap <= FWL_COST_LIMIT and saturations == 0,
        f"max MSE {worst_mse:.3e}, max |dJ| {worst_gap:.3e}, {saturations} saturations",
    )


def scaling_equivalence(plant: Plant, unscaled: MpcDesign, scaled: MpcDesign, scenario: ScenarioSpec) -> Check:
    if unscaled is scaled:
        return Check("scaling-equivalence", True, "scaling disabled")

    a = run_closed_loop(replace(scenario, plant=plant, design=unscaled, backend=Backend.FULL))
    b = run_closed_loop(replace(scenario, plant=plant, design=scaled, backend=Backend.FULL))
    diff = float(np.abs(a.u - b.u).max() / max(1.0, np.abs(a.u).max()))

    return Check(
        "scaling-equivalence",
        diff <= SCALING_TOLERANCE,
        f"relative input difference {diff:.3e} over {a.u.shape[0]} steps",
    )


def random_instance(rng: np.random.Generator):
    """Small random MPC problem with a random blocking pattern."""
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, 4))
    N = int(rng.integers(1, 7))

    A = rng.standard_normal((n, n))
    A *= 1.2 / max(1e-9, float(np.abs(np.linalg.eigvals(A)).max()))
    B = rng.standard_normal((n, m))
    G = rng.standard_normal((n, n))

    cuts = []
    if N > 1:
        cuts = sorted(rng.choice(np.arange(1, N), size=int(rng.integers(0, N)), replace=False))
    edges = [0, *[int(c) for c in cuts], N]
    blocks = tuple(b - a for a, b in zip(edges, edges[1:]))

    model = StateSpaceModel(A=A, B=B, C=np.eye(n), Ts=1.0)
    tuning = MpcTuning(
        Q_C=G @ G.T + 1e-3 * np.eye(n),
        R_C=(0.1 + rng.random()) * np.eye(m),
        N=N,
        blocks=blocks,
        u_min=-np.ones(m),
        u_max=np.ones(m),
        Q_K=np.eye(n),
        R_K=np.eye(n),
    )
    return model, tuning


def condensing_oracle(count: int = 100, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        model, tuning = random_instance(rng)
        P = solve_dare(model.A, model.B, tuning.Q_C, tuning.R_C)
        qp = condense(model, tuning, P)

        x = rng.standard_normal(model.n_states)
        u = rng.uniform(-1.0, 1.0, qp.d)
        reference = rollout_cost(model, tuning, P, x, u)
        worst = max(worst, abs(cost_of(qp, x, u) - reference) / max(1.0, abs(reference)))

    return Check(
        "condensing",
        worst <= CONDENSE_TOLERANCE,
        f"{count} random instances, max relative cost error {worst:.3e}",
    )


def riccati(design: MpcDesign) -> Check:
    m = design.model_s
    residual = dare_residual(m.A, m.B, design.tuning_s.Q_C, design.tuning_s.R_C, design.P)

    p = solve_dare(np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    scalar_error = abs(float(p[0, 0]) - (2.0 + math.sqrt(5.0)))

    return Check(
        "riccati",
        residual <= DARE_LIMIT and scalar_error <= 1e-12,
        f"design residual {residual:.3e}, scalar closed-form error {scalar_error:.3e}",
    )


def preconditioner_properties(count: int = 50, size: int = 12, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst_lmax, failures = 0.0, 0
    for _ in range(count):
        G = rng.standard_normal((size, size))
        spread = np.diag(10.0 ** rng.uniform(-2, 2, size))
        H = spread @ (G @ G.T + 0.1 * np.eye(size)) @ spread
        qp = CondensedQp(
            H_c=0.5 * (H + H.T),
            F=np.zeros((size, 1)),
            Y=np.zeros((1, 1)),
            u_min_t=-np.ones(size),
            u_max_t=np.ones(size),
        )

        pre = precondition(qp)
        root = np.sqrt(pre.L_inv)
        lmax = float(np.linalg.eigvalsh(root[:, None] * qp.H_c * root[None, :]).max())
        worst_lmax = max(worst_lmax, abs(lmax - 1.0))
        failures += int(pre.cond_after > pre.cond_before * (1 + 1e-9))

    return Check(
        "preconditioner",
        worst_lmax <= 1e-9 and failures == 0,
        f"{count} Hessians, max |lambda_max - 1| {worst_lmax:.3e}, {failures} condition increases",
    )


def fwl_determinism(design: MpcDesign, states) -> Check:
    cfg = design.fwl
    H = FixedMatrix.from_real(design.pre.H_cp, cfg.hessian)
    ramp = np.clip(np.linspace(-1.0, 1.0, design.d), cfg.base.min_value, cfg.base.max_value)
    v = FixedVector.from_real(ramp, cfg.base)

    first = tree_matvec(H, v, cfg.hv_schedule).raw_list()
    second = tree_matvec(H, v, cfg.hv_schedule).raw_list()
    same = first == second

    for x in states:
        a = fgm_solve(design, x, backend=Backend.FWL)
        b = fgm_solve(design, x, backend=Backend.FWL)
        same &= a.raw_u == b.raw_u and a.cost_history == b.cost_history

    return Check("fwl-determinism", same, f"matvec and {len(states)} solves repeated")


def quantization_bounds(formats: dict[str, FixedFormat], samples: int = 1_000_000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    details, ok = [], True
    for name, fmt in formats.items():
        if fmt.width > 62:
            continue
        span = fmt.max_value - fmt.min_value
        x = rng.uniform(fmt.min_value - 0.25 * span, fmt.max_value + 0.25 * span, samples)

        q = FixedVector.from_real(x, fmt).values()

        inside = (x >= fmt.min_value) & (x <= fmt.max_value)
        err = float(np.abs(q[inside] - x[inside]).max()) if inside.any() else 0.0
        clamped = bool(
            np.all(q[x > fmt.max_value] == fmt.max_value)
            and np.all(q[x < fmt.min_value] == fmt.min_value)
        )

        ok &= err <= 0.5 * fmt.ulp * (1 + 1e-9) and clamped
        details.append(f"{name} {fmt}: err/ulp {err / fmt.ulp:.3f}")

    return Check("quantization", ok, f"{samples} samples per format; " + ", ".join(details))


def closed_loop(scenario: ScenarioSpec, gamma: float, u_limit: float, growth_time: float = 0.1) -> Check:
    trace = run_closed_loop(scenario)
    peak_u = float(np.abs(trace.u).max())

    open_loop = run_closed_loop(
        ScenarioSpec(
            plant=scenario.plant,
            controller=Controller.OFF,
            amplitude=max(scenario.amplitude, 1e-3),
            phase=scenario.phase,
            T_sim=growth_time,
        )
    )
    y = open_loop.y_norm
    t_span = open_loop.t[-1] - open_loop.t[0]
    rate = math.log(y[-1] / y[0]) / t_span if y[0] > 0 and t_span > 0 else math.nan
    growth_ok = abs(rate - gamma) <= GROWTH_TOLERANCE * gamma

    return Check(
        "closed-loop",
        trace.stabilized() and peak_u <= u_limit * (1 + 1e-9) and growth_ok,
        f"stabilized={trace.stabilized()}, max |u| {peak_u:.3f} V, "
        f"open-loop growth {rate:.3f}/s vs {gamma:g}/s",
    )


async def domain_of_attraction(scenario: ScenarioSpec, amplitudes) -> Check:
    result = await amplitude_sweep(scenario, amplitudes)
    return Check(
        "domain-of-attraction",
        result.max_mpc >= result.max_lq,
        f"max stabilized amplitude: MPC {result.max_mpc:g}, LQ {result.max_lq:g}",
    )


def throughput(design: MpcDesign, states, sample_time: float, repeats: int = 10) -> Check:
    full = benchmark(design, states, Backend.FULL, repeats=repeats)
    fwl = benchmark(design, states[: max(1, len(states) // 10)], Backend.FWL, repeats=1, warmup=1)

    budget_ms = sample_time * 1e3
    return Check(
        "throughput",
        full.avg_ms < budget_ms,
        f"full avg {full.avg_ms:.4f} ms (budget {budget_ms:g} ms), fwl avg {fwl.avg_ms:.3f} ms",
    )


def unpreconditioned_twin(design: MpcDesign) -> MpcDesign:
    """The same problem in the same coordinates with only the scalar normalization."""
    return build_design(
        design.model_s,
        design.tuning_s,
        i_max=design.i_max,
        beta_length=len(design.beta),
        use_preconditioner=False,
        beta_schedule=design.beta_schedule,
    )
