import asyncio
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np

from utils.design import MpcDesign
from utils.mpc_exceptions import MpcError, SimulationError
from utils.solver import ORACLE_TOLERANCE, Backend, fgm_solve, mse, oracle_solve
from utils.ssmodel import (
    OutputReducer,
    PsSpec,
    StateSpaceModel,
    SurrogateSpec,
    build_ps_model,
    build_surrogate,
    reduce_outputs,
    series_connect,
    zoh_discretize,
)

# Stabilized: max |y| over the last tenth of the run below 1% of the peak
DECAY_TAIL_FRACTION = 0.1
DECAY_RATIO = 0.01

RANGE_MARGIN = 1.5


class Controller(StrEnum):
    MPC = "mpc"
    LQ = "lq"
    OFF = "off"


class PowerModel(StrEnum):
    NONE = "none"
    VI = "vi"


@dataclass(frozen=True, eq=False)
class Plant:
    """Discrete power supplies feeding the surrogate, with raw sensor outputs."""

    model: StateSpaceModel
    u_elm_map: np.ndarray
    reducer: OutputReducer
    ps: PsSpec
    n_ps_states: int

    @property
    def Ts(self) -> float:
        return self.model.Ts

    def unstable_plane(self) -> np.ndarray:
        """Orthonormal basis (n x 2) of the most unstable eigenvector's real and imaginary parts."""
        eigvals, eigvecs = np.linalg.eig(self.model.A)
        w = eigvecs[:, np.argmax(np.abs(eigvals))]
        basis, _ = np.linalg.qr(np.column_stack([w.real, w.imag]))
        return basis

    def perturbation(self, amplitude: float, phase_deg: float = 0.0) -> np.ndarray:
        basis = self.unstable_plane()
        phi = math.radians(phase_deg)
        return amplitude * (math.cos(phi) * basis[:, 0] + math.sin(phi) * basis[:, 1])


def build_plant(ps: PsSpec, surrogate: SurrogateSpec, Ts: float) -> Plant:
    supplies = build_ps_model(ps, surrogate.n_inputs)
    wall = build_surrogate(surrogate)
    model = zoh_discretize(series_connect(supplies, wall), Ts)

    u_elm_map = np.hstack(
        [supplies.C, np.zeros((supplies.n_outputs, wall.n_states))]
    )

    logging.info(
        f"[MODEL] Plant built: {supplies.n_states} supply + {wall.n_states} wall states, Ts={Ts:g}s"
    )
    return Plant(
        model=model,
        u_elm_map=u_elm_map,
        reducer=OutputReducer(surrogate.angles()),
        ps=ps,
        n_ps_states=supplies.n_states,
    )


def design_model(plant: Plant) -> StateSpaceModel:
    """The plant with its sensors replaced by the reduced ``(y_A, y_B)`` output."""
    m = plant.model
    return replace(
        m,
        C=plant.reducer.T_out @ m.C,
        D=np.zeros((2, m.n_inputs)),
    )


# ------ Scenario and trace ------


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    plant: Plant
    design: MpcDesign | None = None
    controller: Controller = Controller.MPC
    backend: Backend = Backend.FULL
    i_max: int | None = None
    amplitude: float = 0.3
    phase: float = 0.0
    x0: np.ndarray | None = None
    T_sim: float = 0.75
    noise_seed: int = 0
    meas_noise_std: float = 0.0
    sat_limits: tuple[float, float] | None = None
    current_limit: float = 1.5e4
    power_model: PowerModel = PowerModel.NONE
    track_accuracy: bool = False
    oracle_tolerance: float = ORACLE_TOLERANCE

    @property
    def steps(self) -> int:
        return int(round(self.T_sim / self.plant.Ts))

    def limits(self) -> tuple[float, float]:
        if self.sat_limits is not None:
            return self.sat_limits
        return (self.plant.ps.v_min, self.plant.ps.v_max)

    def initial_state(self) -> np.ndarray:
        if self.x0 is not None:
            return np.asarray(self.x0, dtype=float).copy()
        return self.plant.perturbation(self.amplitude, self.phase)


@dataclass
class SimulationTrace:
    t: np.ndarray
    y: np.ndarray
    y_m: np.ndarray
    u: np.ndarray
    u_elm: np.ndarray
    i_elm: np.ndarray | None
    x_hat: np.ndarray
    cost: np.ndarray
    mse: np.ndarray | None = None
    power: np.ndarray | None = None
    saturations: int = 0
    current_limit: float = 1.5e4

    @property
    def y_norm(self) -> np.ndarray:
        return np.linalg.norm(self.y, axis=1)

    def stabilized(self) -> bool:
        return is_stabilized(self.y_norm)

    def metrics(self) -> dict:
        max_i = float(np.abs(self.i_elm).max()) if self.i_elm is not None else None
        return {
            "steps": int(self.t.shape[0]),
            "stabilized": self.stabilized(),
            "peak_y": float(self.y_norm.max()),
            "final_y": float(self.y_norm[-1]),
            "max_abs_u": float(np.abs(self.u).max()),
            "max_abs_u_elm": float(np.abs(self.u_elm).max()),
            "max_abs_i_elm": max_i,
            "current_limit_exceeded": bool(max_i is not None and max_i > self.current_limit),
            "max_cost": float(np.nanmax(self.cost)) if np.isfinite(self.cost).any() else None,
            "max_mse": float(np.max(self.mse)) if self.mse is not None else None,
            "fwl_saturations": self.saturations,
        }

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Flat column names and the matching per-step table."""
        names = ["t", "y_A", "y_B"]
        blocks = [self.t[:, None], self.y]

        def add(prefix, arr):
            names.extend(f"{prefix}{j + 1}" for j in range(arr.shape[1]))
            blocks.append(arr)

        add("y_m", self.y_m)
        add("u", self.u)
        add("u_elm", self.u_elm)
        if self.i_elm is not None:
            add("i_elm", self.i_elm)

        names.append("cost")
        blocks.append(self.cost[:, None])
        if self.mse is not None:
            names.append("mse")
            blocks.append(self.mse[:, None])
        if self.power is not None:
            names.append("power")
            blocks.append(self.power[:, None])

        return names, np.hstack(blocks)


def is_stabilized(y_norm: np.ndarray) -> bool:
    peak = float(np.max(y_norm)) if y_norm.size else 0.0
    if peak == 0.0:
        return True

    tail = max(1, int(math.ceil(DECAY_TAIL_FRACTION * y_norm.shape[0])))
    return float(np.max(y_norm[-tail:])) < DECAY_RATIO * peak


# ------ Controller pieces ------


def kf_step(design: MpcDesign, x_hat_prev, u_prev, y) -> np.ndarray:
    """One steady-state filter update in scaled coordinates.

    ``u_prev`` is the previous scaled input, ``y`` the scaled measurement.
    """
    A, B, C = design.model_s.A, design.model_s.B, design.model_s.C
    x_pred = A @ x_hat_prev + B @ u_prev
    return x_pred + design.M_K @ (y - C @ x_pred)


def lq_gain(design: MpcDesign) -> np.ndarray:
    """``K = (R + B'PB)^-1 B'PA`` from the design's terminal cost, scaled coordinates."""
    A, B = design.model_s.A, design.model_s.B
    P, R = design.P, design.tuning_s.R_C
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def run_closed_loop(s: ScenarioSpec) -> SimulationTrace:
    plant = s.plant
    A, B, C = plant.model.A, plant.model.B, plant.model.C
    C_aux = plant.model.C_aux
    v_min, v_max = s.limits()

    design = s.design
    controller = s.controller if design is not None else Controller.OFF
    if s.controller != Controller.OFF and design is None:
        raise SimulationError(0, "controller enabled without a design")

    if design is not None:
        if not math.isclose(design.model_s.Ts, plant.Ts, rel_tol=1e-12):
            raise SimulationError(0, "plant and controller sampling times differ")
        if design.n_inputs != plant.model.n_inputs:
            raise SimulationError(0, "plant and controller input counts differ")

        u_hi = design.tuning_s.u_max * design.scaling.k_u
        u_lo = design.tuning_s.u_min * design.scaling.k_u
        if np.any(u_hi > v_max) or np.any(u_lo < v_min):
            raise SimulationError(0, "saturation limits are narrower than the design bounds")

    steps = s.steps
    m, p = plant.model.n_inputs, plant.model.n_outputs
    rng = np.random.default_rng(s.noise_seed)

    K_lq = lq_gain(design) if controller == Controller.LQ else None

    x = s.initial_state()
    n_hat = design.model_s.n_states if design is not None else 0
    x_hat = np.zeros(n_hat)
    u_s_prev = np.zeros(m)

    rec_y = np.zeros((steps, 2))
    rec_ym = np.zeros((steps, p))
    rec_u = np.zeros((steps, m))
    rec_elm = np.zeros((steps, m))
    rec_i = np.zeros((steps, C_aux.shape[0])) if C_aux is not None else None
    rec_xhat = np.zeros((steps, n_hat))
    rec_cost = np.full(steps, np.nan)
    rec_mse = np.zeros(steps) if s.track_accuracy and controller == Controller.MPC else None
    saturations = 0

    logging.debug(
        f"[SIM] Running {steps} steps: controller={controller}, backend={s.backend}, amplitude={s.amplitude}"
    )

    for k in range(steps):
        y_m = C @ x
        if s.meas_noise_std:
            y_m = y_m + s.meas_noise_std * rng.standard_normal(p)
        y = reduce_outputs(plant.reducer, y_m)

        u = np.zeros(m)
        if controller != Controller.OFF:
            x_hat = kf_step(design, x_hat, u_s_prev, design.scaling.k_y * y)

            try:
                if controller == Controller.MPC:
                    report = fgm_solve(design, x_hat, s.i_max, s.backend)
                    u_s = report.u_first
                    rec_cost[k] = report.cost_history[-1]
                    saturations += report.saturations

                    if rec_mse is not None:
                        u_star = oracle_solve(design.qp, x_hat, s.oracle_tolerance)
                        rec_mse[k] = mse(
                            report.u_opt, u_star, design.qp.u_min_t, design.qp.u_max_t
                        )
                else:
                    u_s = np.clip(
                        -K_lq @ x_hat, design.tuning_s.u_min, design.tuning_s.u_max
                    )
            except MpcError as e:
                raise SimulationError(k, str(e)) from e

            u = design.scaling.k_u * u_s
            u_s_prev = u_s

        if not np.all(np.isfinite(x)):
            raise SimulationError(k, "plant state diverged")

        rec_y[k] = y
        rec_ym[k] = y_m
        rec_u[k] = u
        rec_elm[k] = plant.u_elm_map @ x
        if rec_i is not None:
            rec_i[k] = C_aux @ x
        rec_xhat[k] = x_hat

        x = A @ x + B @ np.clip(u, v_min, v_max)

    power = None
    if s.power_model == PowerModel.VI and rec_i is not None:
        power = np.abs(rec_elm * rec_i).sum(axis=1)

    return SimulationTrace(
        t=np.arange(steps) * plant.Ts,
        y=rec_y,
        y_m=rec_ym,
        u=rec_u,
        u_elm=rec_elm,
        i_elm=rec_i,
        x_hat=rec_xhat,
        cost=rec_cost,
        mse=rec_mse,
        power=power,
        saturations=saturations,
        current_limit=s.current_limit,
    )


# ------ Sweeps ------


@dataclass
class SweepResult:
    amplitudes: list[float]
    mpc_stable: list[bool]
    lq_stable: list[bool]
    max_mpc: float
    max_lq: float

    @property
    def margin_ratio(self) -> float:
        if self.max_lq > 0:
            return self.max_mpc / self.max_lq
        return math.inf if self.max_mpc > 0 else math.nan


def _max_stabilized(amplitudes: list[float], flags: list[bool]) -> float:
    # Largest amplitude below which every tested amplitude was stabilized
    best = 0.0
    for amp, ok in sorted(zip(amplitudes, flags)):
        if not ok:
            break
        best = amp
    return best


async def amplitude_sweep(
    s: ScenarioSpec, amplitudes, max_concurrency: int = 4
) -> SweepResult:
    """Stabilization map of MPC and the saturated-LQ baseline over perturbation amplitudes."""
    amplitudes = [float(a) for a in amplitudes]
    semaphore = asyncio.Semaphore(max_concurrency)

    async def run(amplitude: float, controller: Controller) -> bool:
        scenario = replace(s, amplitude=amplitude, controller=controller, x0=None)
        async with semaphore:
            trace = await asyncio.to_thread(run_closed_loop, scenario)

        logging.info(
            f"[SWEEP] amplitude {amplitude:g} {controller}: "
            f"{'stabilized' if trace.stabilized() else 'not stabilized'}"
        )
        return trace.stabilized()

    mpc = await asyncio.gather(*(run(a, Controller.MPC) for a in amplitudes))
    lq = await asyncio.gather(*(run(a, Controller.LQ) for a in amplitudes))

    return SweepResult(
        amplitudes=amplitudes,
        mpc_stable=list(mpc),
        lq_stable=list(lq),
        max_mpc=_max_stabilized(amplitudes, list(mpc)),
        max_lq=_max_stabilized(amplitudes, list(lq)),
    )


# ------ Benchmark ------


@dataclass
class BenchStats:
    backend: Backend
    samples: int
    max_ms: float
    avg_ms: float
    std_ms: float
    max_mse: float
    max_cost_gap: float
    saturations: int = 0
    timings_ms: list[float] = field(default_factory=list)

    @property
    def cv(self) -> float:
        return self.std_ms / self.avg_ms if self.avg_ms > 0 else math.nan


def benchmark(
    design: MpcDesign,
    states,
    backend: Backend | str,
    repeats: int = 10,
    warmup: int = 3,
    i_max: int | None = None,
) -> BenchStats:
    """Latency of ``fgm_solve`` over a batch of scaled states.

    Accuracy columns compare against the full-precision backend at the same
    iteration count.
    """
    backend = Backend(backend)
    states = [np.asarray(x, dtype=float) for x in states]
    if not states:
        raise SimulationError(0, "benchmark needs at least one state")

    for _ in range(warmup):
        fgm_solve(design, states[0], i_max, backend)

    timings = []
    max_mse, max_gap, saturations = 0.0, 0.0, 0

    for x in states:
        for _ in range(repeats):
            start = time.perf_counter_ns()
            report = fgm_solve(design, x, i_max, backend)
            timings.append((time.perf_counter_ns() - start) / 1e6)

        reference = fgm_solve(design, x, i_max, Backend.FULL)
        max_mse = max(
            max_mse,
            mse(report.u_opt, reference.u_opt, design.qp.u_min_t, design.qp.u_max_t),
        )
        max_gap = max(max_gap, abs(report.cost_history[-1] - reference.cost_history[-1]))
        saturations += report.saturations

    arr = np.array(timings)
    stats = BenchStats(
        backend=backend,
        samples=arr.size,
        max_ms=float(arr.max()),
        avg_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        max_mse=max_mse,
        max_cost_gap=max_gap,
        saturations=saturations,
        timings_ms=timings,
    )

    logging.info(
        f"[BENCH] {backend}: avg {stats.avg_ms:.4f} ms, max {stats.max_ms:.4f} ms "
        f"over {stats.samples} solves (cv {stats.cv:.2f})"
    )
    return stats


# ------ Scaling calibration ------


def collect_states(traces: list[SimulationTrace], count: int, seed: int = 0) -> np.ndarray:
    """Seeded sample of ``count`` state estimates drawn from closed-loop traces."""
    pool = np.vstack([tr.x_hat for tr in traces])
    rng = np.random.default_rng(seed)
    index = rng.choice(pool.shape[0], size=min(count, pool.shape[0]), replace=False)
    return pool[np.sort(index)]


def estimate_signal_ranges(
    plant: Plant,
    design: MpcDesign,
    amplitude: float,
    phases=(0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0),
    T_sim: float = 0.75,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element state and output ranges seen by an unscaled design over the scenario set.

    Returns ``1.5 x`` the observed maxima, floored at ``1e-3`` of the largest
    entry so no scaling factor collapses to zero.
    """
    x_max = np.zeros(design.model_s.n_states)
    y_max = np.zeros(2)

    for phase in phases:
        trace = run_closed_loop(
            ScenarioSpec(plant=plant, design=design, amplitude=amplitude, phase=phase, T_sim=T_sim)
        )
        x_max = np.maximum(x_max, np.abs(trace.x_hat).max(axis=0))
        y_max = np.maximum(y_max, np.abs(trace.y).max(axis=0))

    def floor(r):
        top = r.max()
        if top <= 0:
            return np.ones_like(r)
        return RANGE_MARGIN * np.maximum(r, 1e-3 * top)

    logging.info(
        f"[SIM] Signal ranges from {len(phases)} scenarios: |x| <= {x_max.max():.3e}, |y| <= {y_max.max():.3e}"
    )
    return floor(x_max), floor(y_max)
