"""Primal fast gradient method for the condensed box-constrained QP.

Three arithmetic backends share one iteration: ``full`` (float64),
``reduced`` (float32) and ``fwl`` (bit-exact fixed point). The iterates
live in the design's scaled coordinates and are not preconditioned; the
gradient step multiplies by ``H_cp = L^-1 H_c``.
"""

import logging
import math
import threading
import weakref
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from utils.fxp import (
    FixedFormat,
    FixedMatrix,
    FixedVector,
    SaturationLog,
    StageSchedule,
    default_schedule,
    dot_exact,
    exact_sub,
    int_bits_for,
    quantize,
    requantize,
    same_resolution,
    tree_matvec,
    vec_add,
    vec_clip,
    vec_scale,
    vec_sub,
)
from utils.mpc_exceptions import OracleError, SolverError

if TYPE_CHECKING:
    from utils.design import CondensedQp, MpcDesign

ORACLE_TOLERANCE = 1e-12
ORACLE_MAX_SWEEPS = 200_000
ORACLE_POLISH_EVERY = 25


class Backend(StrEnum):
    FULL = "full"
    REDUCED = "reduced"
    FWL = "fwl"


# ------ FWL formats ------


@dataclass(frozen=True)
class FwlSolverConfig:
    """Fixed-point formats of every stored quantity in the FWL iteration."""

    base: FixedFormat = FixedFormat(27, 2)
    hessian: FixedFormat = FixedFormat(27, -1)
    state: FixedFormat = FixedFormat(27, 2)
    state_map: FixedFormat = FixedFormat(27, 2)
    beta: FixedFormat = FixedFormat(27, 1)
    f_p: FixedFormat = FixedFormat(27, 2)
    hv: FixedFormat = FixedFormat(27, 2)
    gradient: FixedFormat = FixedFormat(27, 2)
    chi: FixedFormat = FixedFormat(27, 2)
    momentum: FixedFormat = FixedFormat(27, 2)
    restart: FixedFormat = FixedFormat(64, 14)
    hv_schedule: StageSchedule | None = None
    fp_schedule: StageSchedule | None = None
    product_width_cap: int = 35

    _FORMATS = (
        "base",
        "hessian",
        "state",
        "state_map",
        "beta",
        "f_p",
        "hv",
        "gradient",
        "chi",
        "momentum",
        "restart",
    )

    def to_dict(self) -> dict:
        data = {name: getattr(self, name).to_dict() for name in self._FORMATS}
        data["hv_schedule"] = self.hv_schedule.to_dict() if self.hv_schedule else None
        data["fp_schedule"] = self.fp_schedule.to_dict() if self.fp_schedule else None
        data["product_width_cap"] = self.product_width_cap
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FwlSolverConfig":
        kwargs = {name: FixedFormat.from_dict(data[name]) for name in cls._FORMATS}
        for name in ("hv_schedule", "fp_schedule"):
            if data.get(name) is not None:
                kwargs[name] = StageSchedule.from_dict(data[name])
        kwargs["product_width_cap"] = int(data.get("product_width_cap", 35))
        return cls(**kwargs)


def size_fwl_config(
    H_cp: np.ndarray,
    F_p: np.ndarray,
    u_min_t: np.ndarray,
    u_max_t: np.ndarray,
    betas: np.ndarray,
    base: FixedFormat = FixedFormat(27, 2),
    hessian: FixedFormat = FixedFormat(27, -1),
    product_width_cap: int = 35,
    restart_width: int = 64,
    state_bound: float = 1.0,
) -> FwlSolverConfig:
    """Size every format from value-range bounds so the nominal iteration cannot overflow.

    Iterate-like formats keep ``base``'s resolution and only gain integer
    bits; matrix formats keep their width.
    """
    d, n = F_p.shape
    b = float(max(np.abs(u_min_t).max(), np.abs(u_max_t).max()))
    beta_max = float(max(0.0, np.max(betas)))

    v_bound = b * (1.0 + 2.0 * beta_max)
    iterate = same_resolution(base, v_bound)

    h_fmt = hessian.with_bits(
        hessian.width, max(hessian.int_bits, int_bits_for(np.abs(H_cp).max(), hessian.width))
    )
    f_fmt = base.with_bits(base.width, int_bits_for(np.abs(F_p).max(), base.width))
    state = base.with_bits(base.width, max(base.int_bits, int_bits_for(state_bound, base.width)))

    fp_bound = float(np.abs(F_p).sum(axis=1).max()) * state_bound
    hv_bound = float(np.abs(H_cp).sum(axis=1).max()) * v_bound

    f_p = same_resolution(iterate, fp_bound)
    hv = same_resolution(iterate, hv_bound)
    gradient = same_resolution(iterate, hv_bound + fp_bound)
    chi = same_resolution(iterate, v_bound + hv_bound + fp_bound)
    momentum = same_resolution(iterate, 2.0 * b * beta_max)

    # (v - u)'(u - u_prev): exact products, exact sum over d terms
    frac = 2 * iterate.frac_bits
    dot_bound = d * (v_bound + b) * 2.0 * b
    int_bits = 1
    while math.ldexp(1.0, int_bits - 1) <= dot_bound:
        int_bits += 1
    width = max(restart_width, frac + int_bits)
    if width > restart_width:
        logging.warning(f"[FXP] Restart accumulator widened to {width} bits")
    restart = FixedFormat(width, width - frac)

    return FwlSolverConfig(
        base=iterate,
        hessian=h_fmt,
        state=state,
        state_map=f_fmt,
        beta=FixedFormat(base.width, 1),
        f_p=f_p,
        hv=hv,
        gradient=gradient,
        chi=chi,
        momentum=momentum,
        restart=restart,
        hv_schedule=default_schedule(h_fmt, iterate, d, product_width_cap, result=hv),
        fp_schedule=default_schedule(f_fmt, state, n, product_width_cap, result=f_p),
        product_width_cap=product_width_cap,
    )


# ------ Reports ------


@dataclass
class SolveReport:
    u_opt: np.ndarray
    u_first: np.ndarray
    iterations: int
    cost_history: list[float]
    restarts: list[int]
    backend: Backend
    saturations: int = 0
    saturation_sites: dict[str, int] = field(default_factory=dict)
    iterates: list[np.ndarray] | None = None
    raw_u: list[int] | None = None


# ------ Metrics ------


def cost_of(qp: "CondensedQp", x: np.ndarray, u: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    return float(0.5 * u @ qp.H_c @ u + qp.f_c(x) @ u + qp.c_c(x))


def mse(u, u_star, u_min_t, u_max_t) -> float:
    u, u_star = np.asarray(u, dtype=float), np.asarray(u_star, dtype=float)
    width = np.asarray(u_max_t, dtype=float) - np.asarray(u_min_t, dtype=float)

    if u.shape != u_star.shape or u.shape != width.shape:
        raise SolverError(f"shape mismatch: {u.shape}, {u_star.shape}, {width.shape}")
    if np.any(width <= 0):
        raise SolverError("bound interval of zero width")

    return float(np.sqrt(np.mean(((u - u_star) / width) ** 2)))


def convergence_bounds(
    mu: float, lip: float, J0_gap: float, i_max: int, radius: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Linear and sublinear upper bounds on ``J(u^i) - J*`` for ``i = 0 .. i_max``.

    ``radius`` bounds the initial distance to the optimum; without it the
    strong-convexity bound ``R^2 = 2 J0_gap / mu`` is used.
    """
    if not (0 < mu <= lip * (1 + 1e-9)):
        raise SolverError(f"invalid spectrum bounds mu={mu}, lip={lip}")

    i = np.arange(i_max + 1, dtype=float)
    q = min(1.0, mu / lip)

    linear = (1.0 - math.sqrt(q)) ** i * J0_gap
    r2 = 2.0 * J0_gap / mu if radius is None else radius**2
    sublinear = 4.0 * lip * r2 / (i + 2.0) ** 2

    return linear, sublinear


def certified_iterations(mu: float, lip: float, J0_gap: float, target: float) -> int:
    """Iterations after which the linear bound drops below ``target``."""
    q = min(1.0, mu / lip)
    if J0_gap <= target:
        return 0
    if q >= 1.0:
        return 1
    return math.ceil(math.log(target / J0_gap) / math.log(1.0 - math.sqrt(q)))


# ------ Box-QP oracle ------


def kkt_residual(H, f, u, lo, hi) -> float:
    """Natural residual ``|u - clip(u - (Hu + f))|_inf``, relative to ``max(1, |f|_inf)``."""
    g = H @ u + f
    step = u - np.clip(u - g, lo, hi)
    return float(np.abs(step).max() / max(1.0, np.abs(f).max()))


def _polish(H, f, u, lo, hi) -> np.ndarray | None:
    # Newton step on the free set guessed from the current point
    g = H @ u + f
    at_lo = (u <= lo) & (g >= 0)
    at_hi = (u >= hi) & (g <= 0)
    free = ~(at_lo | at_hi)
    if not free.any():
        return None

    trial = np.where(at_lo, lo, np.where(at_hi, hi, u))
    rhs = -(f[free] + H[np.ix_(free, ~free)] @ trial[~free])
    try:
        trial[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
    except np.linalg.LinAlgError:
        return None

    if np.any(trial < lo) or np.any(trial > hi):
        return None
    return trial


def oracle_solve(
    qp: "CondensedQp",
    x: np.ndarray,
    tol: float = ORACLE_TOLERANCE,
    max_sweeps: int = ORACLE_MAX_SWEEPS,
) -> np.ndarray:
    """Reference minimizer by cyclic coordinate descent with exact line minimization.

    Every few sweeps a Newton step on the current free set is tried and
    kept if it is feasible and meets the KKT tolerance.
    """
    H = np.asarray(qp.H_c, dtype=float)
    f = qp.f_c(np.asarray(x, dtype=float))
    lo, hi = qp.u_min_t, qp.u_max_t
    diag = np.diag(H)

    if np.any(diag <= 0):
        raise OracleError("Hessian diagonal must be positive", math.inf)

    u = np.zeros_like(f)
    g = f.copy()
    residual = math.inf

    for sweep in range(1, max_sweeps + 1):
        for k in range(u.shape[0]):
            new = min(hi[k], max(lo[k], u[k] - g[k] / diag[k]))
            delta = new - u[k]
            if delta != 0.0:
                u[k] = new
                g += H[:, k] * delta

        residual = kkt_residual(H, f, u, lo, hi)
        if residual <= tol:
            break

        if sweep % ORACLE_POLISH_EVERY == 0:
            trial = _polish(H, f, u, lo, hi)
            if trial is not None:
                trial_residual = kkt_residual(H, f, trial, lo, hi)
                if trial_residual <= tol:
                    u, residual = trial, trial_residual
                    break
                if trial_residual < residual:
                    u, g = trial, H @ trial + f
    else:
        raise OracleError(f"no convergence in {max_sweeps} sweeps", residual)

    logging.debug(f"[ORACLE] Converged after {sweep} sweeps (residual {residual:.2e})")
    return u


# ------ Fast gradient method ------


def _check_inputs(design: "MpcDesign", x: np.ndarray, i_max: int) -> None:
    if x.shape != (design.model_s.n_states,):
        raise SolverError(
            f"state has shape {x.shape}, design expects ({design.model_s.n_states},)"
        )
    if not np.all(np.isfinite(x)):
        raise SolverError("state estimate is not finite")
    if not 1 <= i_max <= len(design.beta):
        raise SolverError(f"i_max ({i_max}) must lie in [1, {len(design.beta)}]")


def _fgm_float(design, x, i_max, dtype, record) -> SolveReport:
    H = design.pre.H_cp.astype(dtype)
    f = (design.F_p.astype(dtype) @ x.astype(dtype)).astype(dtype)
    lo = design.qp.u_min_t.astype(dtype)
    hi = design.qp.u_max_t.astype(dtype)
    beta = design.beta.astype(dtype)

    u_prev = np.zeros(design.d, dtype=dtype)
    v = u_prev.copy()

    costs, restarts = [], []
    iterates = [] if record else None

    for i in range(1, i_max + 1):
        chi = v - (H @ v + f)
        u = np.clip(chi, lo, hi)

        if (v - u) @ (u - u_prev) > 0:
            u = u_prev.copy()
            v_next = u_prev.copy()
            restarts.append(i)
        else:
            v_next = u + beta[i - 1] * (u - u_prev)

        costs.append(cost_of(design.qp, x, u.astype(float)))
        if record:
            iterates.append(u.astype(float))

        u_prev, v = u, v_next

    u_opt = u_prev.astype(float)
    return SolveReport(
        u_opt=u_opt,
        u_first=design.first_move(u_opt).copy(),
        iterations=i_max,
        cost_history=costs,
        restarts=restarts,
        backend=Backend.FULL if dtype == np.float64 else Backend.REDUCED,
        iterates=iterates,
    )


@dataclass(frozen=True, eq=False)
class _FwlOperands:
    H: FixedMatrix
    F: FixedMatrix
    lo_chi: FixedVector
    hi_chi: FixedVector
    beta: list
    saturations: dict[str, int]


_fwl_cache: "weakref.WeakKeyDictionary[MpcDesign, _FwlOperands]" = (
    weakref.WeakKeyDictionary()
)
_fwl_cache_lock = threading.Lock()


def _fwl_operands(design: "MpcDesign") -> _FwlOperands:
    # sweep workers share one design
    with _fwl_cache_lock:
        cached = _fwl_cache.get(design)
        if cached is None:
            cached = _fwl_cache[design] = _build_fwl_operands(design)
        return cached


def _build_fwl_operands(design: "MpcDesign") -> _FwlOperands:
    cfg = design.fwl
    log = SaturationLog()
    operands = _FwlOperands(
        H=FixedMatrix.from_real(design.pre.H_cp, cfg.hessian, log, "hessian"),
        F=FixedMatrix.from_real(design.F_p, cfg.state_map, log, "state-map"),
        lo_chi=FixedVector.from_real(design.qp.u_min_t, cfg.chi, log, "bounds"),
        hi_chi=FixedVector.from_real(design.qp.u_max_t, cfg.chi, log, "bounds"),
        beta=[quantize(float(b), cfg.beta) for b in design.beta],
        saturations=dict(log.by_site),
    )

    if log.events:
        logging.warning(f"[FXP] {log.events} design constants saturated on quantization")

    return operands


def _fgm_fwl(design, x, i_max, record) -> SolveReport:
    cfg = design.fwl
    ops = _fwl_operands(design)

    log = SaturationLog()
    for site, count in ops.saturations.items():
        log.record(site, count)

    x_q = FixedVector.from_real(x, cfg.state, log, "state")
    f = tree_matvec(ops.F, x_q, cfg.fp_schedule, log, "f_p")

    zero = FixedVector(np.zeros(design.d, dtype=np.int64), cfg.base)
    u_prev, v = zero, zero

    costs, restarts = [], []
    iterates = [] if record else None

    for i in range(1, i_max + 1):
        hv = tree_matvec(ops.H, v, cfg.hv_schedule, log, "H*v")
        grad = vec_add(hv, f, cfg.gradient, log, "gradient")
        chi = vec_sub(v, grad, cfg.chi, log, "chi")

        # Bounds share chi's resolution, so clipping then narrowing is exact
        u = requantize(vec_clip(chi, ops.lo_chi, ops.hi_chi), cfg.base, log, "projection")

        step = exact_sub(u, u_prev)
        test = dot_exact(exact_sub(v, u), step, cfg.restart, log, "restart")

        if test.raw > 0:
            u = u_prev
            v_next = u_prev
            restarts.append(i)
        else:
            momentum = vec_scale(ops.beta[i - 1], step, cfg.momentum, log, "momentum")
            v_next = vec_add(u, momentum, cfg.base, log, "acceleration")

        u_real = u.values()
        costs.append(cost_of(design.qp, x, u_real))
        if record:
            iterates.append(u_real)

        u_prev, v = u, v_next

    if log.events:
        logging.warning(f"[FXP] {log.events} saturation event(s): {log.by_site}")

    u_opt = u_prev.values()
    return SolveReport(
        u_opt=u_opt,
        u_first=design.first_move(u_opt).copy(),
        iterations=i_max,
        cost_history=costs,
        restarts=restarts,
        backend=Backend.FWL,
        saturations=log.events,
        saturation_sites=dict(log.by_site),
        iterates=iterates,
        raw_u=u_prev.raw_list(),
    )


def fgm_solve(
    design: "MpcDesign",
    x: np.ndarray,
    i_max: int | None = None,
    backend: Backend | str = Backend.FULL,
    record_iterates: bool = False,
) -> SolveReport:
    """Run exactly ``i_max`` iterations from the cold start ``u^0 = 0``.

    ``x`` is the state estimate in the design's scaled coordinates.
    """
    try:
        backend = Backend(backend)
    except ValueError as e:
        raise SolverError(f"unknown backend {backend!r}") from e

    x = np.asarray(x, dtype=float).ravel()
    i_max = design.i_max if i_max is None else int(i_max)
    _check_inputs(design, x, i_max)

    if backend == Backend.FWL:
        report = _fgm_fwl(design, x, i_max, record_iterates)
    else:
        dtype = np.float64 if backend == Backend.FULL else np.float32
        report = _fgm_float(design, x, i_max, dtype, record_iterates)

    logging.debug(
        f"[FGM] {backend} solve: J={report.cost_history[-1]:.6e}, restarts={report.restarts}"
    )
    return report
