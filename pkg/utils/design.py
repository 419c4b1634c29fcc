"""Offline controller synthesis.

Terminal cost and Kalman gain from the discrete Riccati equation, vector
scaling, move blocking, condensing to a box-constrained QP, diagonal
preconditioning and the momentum table. ``build_design`` chains them into
an immutable ``MpcDesign``.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import eigsh

from utils.mpc_exceptions import DesignError, RiccatiError
from utils.solver import FwlSolverConfig, size_fwl_config
from utils.ssmodel import StateSpaceModel

DARE_TOLERANCE = 1e-14
DARE_MAX_ITERATIONS = 100_000
DARE_RESIDUAL_LIMIT = 1e-10

# Full symmetric eigendecomposition up to this size, Lanczos beyond
DENSE_EIG_LIMIT = 512

RUIZ_TOLERANCE = 1e-3
RUIZ_MAX_SWEEPS = 50

# Observer spectral radius targeted by the default Kalman tuning
KF_RADIUS_TARGET = 0.9


class BetaSchedule(StrEnum):
    CONSTANT = "constant"
    RECURSION = "recursion"


def _freeze(*arrays) -> None:
    for arr in arrays:
        if isinstance(arr, np.ndarray):
            arr.setflags(write=False)


# ------ Types ------


@dataclass(frozen=True, eq=False)
class MpcTuning:
    Q_C: np.ndarray
    R_C: np.ndarray
    N: int
    blocks: tuple[int, ...]
    u_min: np.ndarray
    u_max: np.ndarray
    Q_K: np.ndarray
    R_K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "u_min", np.atleast_1d(np.asarray(self.u_min, float)))
        object.__setattr__(self, "u_max", np.atleast_1d(np.asarray(self.u_max, float)))

        if sum(self.blocks) != self.N or any(b < 1 for b in self.blocks):
            raise DesignError(
                "tuning", f"blocks {self.blocks} must be positive and sum to N={self.N}"
            )
        if np.any(self.u_min >= self.u_max):
            raise DesignError("tuning", "u_min must be strictly below u_max")

        _check_psd("tuning", "Q_C", self.Q_C)
        _check_psd("tuning", "Q_K", self.Q_K)
        _check_pd("tuning", "R_C", self.R_C)
        _check_pd("tuning", "R_K", self.R_K)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True, eq=False)
class ScalingSet:
    """Diagonals of ``K_u``, ``K_x`` and ``K_y``; scaled signals are ``K^-1 u``, ``K^-1 x`` and ``K_y y``."""

    k_u: np.ndarray
    k_x: np.ndarray
    k_y: np.ndarray

    def __post_init__(self):
        for name in ("k_u", "k_x", "k_y"):
            diag = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
                raise DesignError("scaling", f"{name} must be positive and finite")
            object.__setattr__(self, name, diag)

    @property
    def K_u(self) -> np.ndarray:
        return np.diag(self.k_u)

    @property
    def K_x(self) -> np.ndarray:
        return np.diag(self.k_x)

    @property
    def K_y(self) -> np.ndarray:
        return np.diag(self.k_y)

    @classmethod
    def identity(cls, n: int, m: int, p: int) -> "ScalingSet":
        return cls(np.ones(m), np.ones(n), np.ones(p))


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """``J(u) = 0.5 u'H_c u + (F x)'u + 0.5 x'Y x`` over the tiled box bounds."""

    H_c: np.ndarray
    F: np.ndarray
    Y: np.ndarray
    u_min_t: np.ndarray
    u_max_t: np.ndarray

    @property
    def d(self) -> int:
        return self.H_c.shape[0]

    def f_c(self, x: np.ndarray) -> np.ndarray:
        return self.F @ x

    def c_c(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.Y @ x)


@dataclass(frozen=True, eq=False)
class Preconditioner:
    L: np.ndarray
    H_cp: np.ndarray
    mu: float
    lip: float = 1.0
    cond_before: float = math.nan
    cond_after: float = math.nan
    enabled: bool = True

    @property
    def L_inv(self) -> np.ndarray:
        return 1.0 / self.L

    @property
    def q(self) -> float:
        return self.mu / self.lip


@dataclass(frozen=True, eq=False)
class MpcDesign:
    model_s: StateSpaceModel
    tuning_s: MpcTuning
    qp: CondensedQp
    pre: Preconditioner
    F_p: np.ndarray
    beta: np.ndarray
    M_K: np.ndarray
    scaling: ScalingSet
    P: np.ndarray
    i_max: int
    fwl: FwlSolverConfig
    beta_schedule: BetaSchedule = BetaSchedule.RECURSION
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        _freeze(self.F_p, self.beta, self.M_K, self.P, self.pre.L, self.pre.H_cp)
        _freeze(self.qp.H_c, self.qp.F, self.qp.Y, self.qp.u_min_t, self.qp.u_max_t)

    @property
    def d(self) -> int:
        return self.qp.d

    @property
    def n_inputs(self) -> int:
        return self.model_s.n_inputs

    def first_move(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[: self.n_inputs]


# ------ Checks ------


def _check_psd(stage: str, name: str, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DesignError(stage, f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise DesignError(stage, f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-9 * max(1.0, np.abs(M).max()):
        raise DesignError(stage, f"{name} must be positive semidefinite")


def _check_pd(stage: str, name: str, M) -> None:
    _check_psd(stage, name, M)
    if np.linalg.eigvalsh(np.asarray(M, dtype=float)).min() <= 0:
        raise DesignError(stage, f"{name} must be positive definite")


def spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max())


# ------ Riccati equations ------


def dare_residual(A, B, Q, R, P) -> float:
    BtP = B.T @ P
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    return float(np.linalg.norm(P - rhs) / max(1.0, np.linalg.norm(P)))


def solve_dare(A, B, Q, R) -> np.ndarray:
    """Stabilizing solution of ``P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q``.

    Structure-preserving doubling; raises ``RiccatiError`` with the final
    residual if the iteration does not settle or the residual is too large.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]

    A_k = A.copy()
    G_k = B @ np.linalg.solve(R, B.T)
    H_k = Q.copy()
    eye = np.eye(n)

    best_change = math.inf
    stalled = 0
    iterations = 0

    for iterations in range(1, DARE_MAX_ITERATIONS + 1):
        W = eye + G_k @ H_k
        W_A = np.linalg.solve(W, A_k)
        W_G = np.linalg.solve(W, G_k)

        H_next = H_k + A_k.T @ H_k @ W_A
        G_next = G_k + A_k @ W_G @ A_k.T
        A_next = A_k @ W_A

        if not np.all(np.isfinite(H_next)):
            raise RiccatiError("doubling iteration diverged", math.inf, iterations)

        change = np.linalg.norm(H_next - H_k) / max(1e-300, np.linalg.norm(H_next))
        A_k, G_k, H_k = A_next, 0.5 * (G_next + G_next.T), 0.5 * (H_next + H_next.T)

        if change <= DARE_TOLERANCE:
            break

        # Stagnation at machine precision counts as converged
        if change < best_change:
            best_change = change
            stalled = 0
        else:
            stalled += 1
            if stalled >= 5 and best_change < 1e-10:
                break
    else:
        residual = dare_residual(A, B, Q, R, H_k)
        raise RiccatiError("iteration cap reached", residual, iterations)

    residual = dare_residual(A, B, Q, R, H_k)
    if residual > DARE_RESIDUAL_LIMIT:
        raise RiccatiError("solution rejected", residual, iterations)

    logging.debug(
        f"[DESIGN] DARE solved in {iterations} doubling steps (residual {residual:.2e})"
    )
    return H_k


def kalman_gain(A, C, Q_K, R_K) -> np.ndarray:
    """Filter-form steady-state gain ``M_K = S C'(C S C' + R_K)^-1``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    R_K = np.atleast_2d(np.asarray(R_K, dtype=float))

    S = solve_dare(A.T, C.T, Q_K, R_K)
    M_K = S @ C.T @ np.linalg.inv(C @ S @ C.T + R_K)

    radius = spectral_radius((np.eye(A.shape[0]) - M_K @ C) @ A)
    if radius >= 1.0:
        raise DesignError("kalman", f"observer is unstable (spectral radius {radius:.6f})")

    return M_K


def select_kf_noise(
    A, C, target: float = KF_RADIUS_TARGET, grid=None
) -> tuple[float, float]:
    """Largest ``rho`` in ``R_K = rho I`` (with ``Q_K = I``) meeting the observer radius target.

    Returns ``(rho, radius)``. If no candidate meets the target the fastest
    observer found is returned and a warning is logged.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n, p = A.shape[0], C.shape[0]
    grid = np.logspace(4, -8, 25) if grid is None else np.sort(grid)[::-1]

    best = (math.nan, math.inf)
    for rho in grid:
        try:
            M_K = kalman_gain(A, C, np.eye(n), rho * np.eye(p))
        except (RiccatiError, DesignError):
            continue

        radius = spectral_radius((np.eye(n) - M_K @ C) @ A)
        if radius <= target:
            logging.debug(f"[DESIGN] KF noise rho={rho:.3e} gives radius {radius:.4f}")
            return float(rho), radius
        if radius < best[1]:
            best = (float(rho), radius)

    if not math.isfinite(best[1]):
        raise DesignError("kalman", "no stable observer found on the tuning grid")

    logging.warning(
        f"[DESIGN] Observer radius target {target} not reached; "
        f"using rho={best[0]:.3e} (radius {best[1]:.4f})"
    )
    return best


# ------ Scaling ------


def make_scaling(
    model: StateSpaceModel, u_max, state_ranges, y_ranges
) -> ScalingSet:
    n, m, p = model.n_states, model.n_inputs, model.n_outputs

    k_u = np.broadcast_to(np.asarray(u_max, dtype=float), (m,)).copy()
    k_x = np.broadcast_to(np.asarray(state_ranges, dtype=float), (n,)).copy()
    y_r = np.broadcast_to(np.asarray(y_ranges, dtype=float), (p,)).copy()

    for name, values in (("u_max", k_u), ("state range", k_x), ("output range", y_r)):
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise DesignError("scaling", f"every {name} must be positive and finite")

    return ScalingSet(k_u, k_x, 1.0 / y_r)


def scale_model(model: StateSpaceModel, s: ScalingSet) -> StateSpaceModel:
    inv_x = 1.0 / s.k_x
    return replace(
        model,
        A=inv_x[:, None] * model.A * s.k_x[None, :],
        B=inv_x[:, None] * model.B * s.k_u[None, :],
        C=s.k_y[:, None] * model.C * s.k_x[None, :],
        D=s.k_y[:, None] * model.D * s.k_u[None, :],
        C_aux=None if model.C_aux is None else model.C_aux * s.k_x[None, :],
    )


def scale_tuning(t: MpcTuning, s: ScalingSet) -> MpcTuning:
    """Cost and noise matrices per the scaled coordinates; bounds become ``K_u^-1 u``."""
    inv_x = 1.0 / s.k_x
    return MpcTuning(
        Q_C=s.k_x[:, None] * t.Q_C * s.k_x[None, :],
        R_C=s.k_u[:, None] * t.R_C * s.k_u[None, :],
        N=t.N,
        blocks=t.blocks,
        u_min=t.u_min / s.k_u,
        u_max=t.u_max / s.k_u,
        Q_K=inv_x[:, None] * t.Q_K * inv_x[None, :],
        R_K=s.k_y[:, None] * t.R_K * s.k_y[None, :],
    )


# ------ Condensing ------


def blocking_matrix(blocks, m: int) -> np.ndarray:
    blocks = [int(b) for b in blocks]
    if not blocks or any(b < 1 for b in blocks):
        raise DesignError("blocking", f"invalid block lengths {blocks}")

    N, n_u = sum(blocks), len(blocks)
    T = np.zeros((N * m, n_u * m))

    step = 0
    for j, length in enumerate(blocks):
        for _ in range(length):
            T[step * m : (step + 1) * m, j * m : (j + 1) * m] = np.eye(m)
            step += 1

    return T


def condense(
    model_s: StateSpaceModel, tuning_s: MpcTuning, P: np.ndarray, blocks=None
) -> CondensedQp:
    """Eliminate the predicted states from the finite-horizon cost.

    Prediction ``x_i = A^i x + S_i u`` with ``S_i = A S_{i-1} + B T_{i-1}``,
    where ``T_i`` selects step ``i``'s input from the blocked moves.
    """
    if not model_s.is_discrete:
        raise DesignError("condense", "model must be discrete")

    A, B = model_s.A, model_s.B
    n, m = model_s.n_states, model_s.n_inputs
    blocks = tuning_s.blocks if blocks is None else tuple(blocks)
    N = sum(blocks)

    Q, R = tuning_s.Q_C, tuning_s.R_C
    if Q.shape != (n, n) or R.shape != (m, m) or P.shape != (n, n):
        raise DesignError("condense", "cost matrices do not match the model dimensions")
    _check_psd("condense", "P", 0.5 * (P + P.T))

    T = blocking_matrix(blocks, m)
    d = T.shape[1]

    H = np.zeros((d, d))
    F = np.zeros((d, n))
    Y = Q.copy()

    S = np.zeros((n, d))
    A_pow = np.eye(n)

    for i in range(N):
        T_i = T[i * m : (i + 1) * m, :]
        H += T_i.T @ R @ T_i

        S = A @ S + B @ T_i
        A_pow = A @ A_pow

        W = P if i == N - 1 else Q
        H += S.T @ W @ S
        F += S.T @ W @ A_pow
        Y += A_pow.T @ W @ A_pow

    H = 0.5 * (H + H.T)
    Y = 0.5 * (Y + Y.T)

    n_blocks = len(blocks)
    u_min = np.broadcast_to(tuning_s.u_min, (m,))
    u_max = np.broadcast_to(tuning_s.u_max, (m,))

    return CondensedQp(
        H_c=H,
        F=F,
        Y=Y,
        u_min_t=np.tile(u_min, n_blocks),
        u_max_t=np.tile(u_max, n_blocks),
    )


def rollout_cost(model_s: StateSpaceModel, tuning_s: MpcTuning, P, x, u_blocked) -> float:
    """Finite-horizon cost by explicit simulation of the prediction model."""
    m = model_s.n_inputs
    T = blocking_matrix(tuning_s.blocks, m)
    u_steps = (T @ np.asarray(u_blocked, dtype=float)).reshape(tuning_s.N, m)

    cost = 0.0
    x_k = np.asarray(x, dtype=float)
    for u_k in u_steps:
        cost += x_k @ tuning_s.Q_C @ x_k + u_k @ tuning_s.R_C @ u_k
        x_k = model_s.A @ x_k + model_s.B @ u_k

    cost += x_k @ P @ x_k
    return 0.5 * float(cost)


# ------ Preconditioning ------


def _extreme_eigs(M: np.ndarray) -> tuple[float, float]:
    if M.shape[0] <= DENSE_EIG_LIMIT:
        eigs = linalg.eigvalsh(M)
        return float(eigs[0]), float(eigs[-1])

    # fixed start vector keeps designs reproducible
    v0 = np.ones(M.shape[0])
    lo = eigsh(M, k=1, which="SA", tol=1e-10, v0=v0, return_eigenvectors=False)[0]
    hi = eigsh(M, k=1, which="LA", tol=1e-10, v0=v0, return_eigenvectors=False)[0]
    return float(lo), float(hi)


def _ruiz(H: np.ndarray) -> np.ndarray:
    """Symmetric infinity-norm equilibration, started from the Jacobi scaling."""
    e = 1.0 / np.sqrt(np.diag(H))
    M = e[:, None] * H * e[None, :]

    for _ in range(RUIZ_MAX_SWEEPS):
        row_norm = np.abs(M).max(axis=1)
        if np.abs(1.0 - row_norm).max() <= RUIZ_TOLERANCE:
            break

        step = 1.0 / np.sqrt(row_norm)
        M = step[:, None] * M * step[None, :]
        e = e * step

    return e


def precondition(qp: CondensedQp, enabled: bool = True) -> Preconditioner:
    """Diagonal ``L`` with ``lambda_max(L^-1 H_c) = 1``.

    The default equilibrates ``H_c`` and falls back to the identity if that
    does not lower the condition number. ``enabled=False`` keeps only the
    scalar normalization.
    """
    H = np.asarray(qp.H_c, dtype=float)
    d = H.shape[0]

    if np.any(np.diag(H) <= 0):
        raise DesignError("precondition", "Hessian must be positive definite")

    lo, hi = _extreme_eigs(H)
    if lo <= 0:
        raise DesignError("precondition", f"Hessian must be positive definite (min eig {lo:.3e})")
    cond_before = hi / lo

    e = np.ones(d)
    if enabled:
        candidate = _ruiz(H)
        c_lo, c_hi = _extreme_eigs(candidate[:, None] * H * candidate[None, :])
        if c_hi / c_lo <= cond_before:
            e = candidate
        else:
            logging.debug("[DESIGN] Equilibration did not help; using identity scaling")

    H_e = e[:, None] * H * e[None, :]
    e_lo, e_hi = _extreme_eigs(H_e)

    # L^-1 = E^2 / lambda_max
    L_inv = e**2 / e_hi
    H_sym = H_e / e_hi

    return Preconditioner(
        L=1.0 / L_inv,
        H_cp=L_inv[:, None] * H,
        mu=e_lo / e_hi,
        lip=float(_extreme_eigs(H_sym)[1]),
        cond_before=cond_before,
        cond_after=e_hi / e_lo,
        enabled=enabled,
    )


# ------ Momentum table ------


def beta_sequence(
    mu: float,
    lip: float,
    i_max: int,
    schedule: BetaSchedule = BetaSchedule.RECURSION,
    alpha0: float | None = None,
) -> np.ndarray:
    """Momentum coefficients ``beta^1 .. beta^i_max``.

    ``RECURSION`` runs ``a_{i+1}^2 = (1 - a_{i+1}) a_i^2 + q a_{i+1}`` with
    ``beta_i = a_i (1 - a_i) / (a_i^2 + a_{i+1})``; ``alpha0`` defaults to
    ``sqrt(q)``, which makes it equal to the constant schedule.
    """
    if not (mu > 0 and lip > 0):
        raise DesignError("beta", f"mu and lip must be positive (mu={mu}, lip={lip})")
    if mu > lip * (1 + 1e-9):
        raise DesignError("beta", f"mu ({mu}) exceeds lip ({lip})")

    q = min(1.0, mu / lip)
    schedule = BetaSchedule(schedule)

    if schedule == BetaSchedule.CONSTANT:
        sq = math.sqrt(q)
        return np.full(i_max, (1.0 - sq) / (1.0 + sq))

    alpha = math.sqrt(q) if alpha0 is None else float(alpha0)
    if not 0 < alpha <= 1:
        raise DesignError("beta", f"alpha0 must lie in (0, 1], got {alpha}")

    betas = np.empty(i_max)
    for i in range(i_max):
        b = alpha**2 - q
        alpha_next = 0.5 * (-b + math.sqrt(b * b + 4.0 * alpha**2))
        betas[i] = alpha * (1.0 - alpha) / (alpha**2 + alpha_next)
        alpha = alpha_next

    return betas


# ------ Defaults and composition ------


def default_tuning(
    model: StateSpaceModel,
    u_max: float = 34.0,
    N: int = 80,
    blocks=(2, 2, 76),
    r_c: float = 1e-4,
    q_reg: float = 1e-6,
    kf_rho: float | None = None,
) -> MpcTuning:
    """Output weighting ``Q_C = C'C + q_reg I``, ``R_C = r_c I``, ``Q_K = I``, ``R_K = rho I``."""
    n, m, p = model.n_states, model.n_inputs, model.n_outputs

    if kf_rho is None:
        kf_rho, _ = select_kf_noise(model.A, model.C)

    return MpcTuning(
        Q_C=model.C.T @ model.C + q_reg * np.eye(n),
        R_C=r_c * np.eye(m),
        N=N,
        blocks=tuple(blocks),
        u_min=-u_max * np.ones(m),
        u_max=u_max * np.ones(m),
        Q_K=np.eye(n),
        R_K=kf_rho * np.eye(p),
    )


def closed_loop_poles(design: MpcDesign) -> tuple[np.ndarray, np.ndarray]:
    """Poles of the unconstrained controller and of the observer (separation principle)."""
    m = design.n_inputs
    gain = -np.linalg.solve(design.qp.H_c, design.qp.F)[:m, :]
    A, B, C = design.model_s.A, design.model_s.B, design.model_s.C

    controller = np.linalg.eigvals(A + B @ gain)
    observer = np.linalg.eigvals((np.eye(A.shape[0]) - design.M_K @ C) @ A)
    return controller, observer


def build_design(
    model: StateSpaceModel,
    tuning: MpcTuning,
    scaling: ScalingSet | None = None,
    i_max: int = 20,
    beta_length: int = 50,
    use_preconditioner: bool = True,
    beta_schedule: BetaSchedule = BetaSchedule.RECURSION,
    alpha0: float | None = None,
    provenance: dict | None = None,
) -> MpcDesign:
    def stage(label, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DesignError:
            raise
        except Exception as e:
            raise DesignError(label, str(e)) from e

    if not model.is_discrete:
        raise DesignError("model", "design model must be discrete")
    if model.has_feedthrough:
        raise DesignError("model", "design model must not have direct feedthrough")
    if not 1 <= i_max <= beta_length:
        raise DesignError("beta", f"i_max ({i_max}) must lie in [1, {beta_length}]")

    if scaling is None:
        scaling = ScalingSet.identity(model.n_states, model.n_inputs, model.n_outputs)

    logging.info(
        f"[DESIGN] Building design: n={model.n_states}, m={model.n_inputs}, "
        f"p={model.n_outputs}, N={tuning.N}, blocks={tuning.blocks}"
    )

    model_s = stage("scaling", scale_model, model, scaling)
    tuning_s = stage("scaling", scale_tuning, tuning, scaling)

    P = stage("terminal-cost", solve_dare, model_s.A, model_s.B, tuning_s.Q_C, tuning_s.R_C)
    M_K = stage("kalman", kalman_gain, model_s.A, model_s.C, tuning_s.Q_K, tuning_s.R_K)

    qp = stage("condense", condense, model_s, tuning_s, P)
    pre = stage("precondition", precondition, qp, use_preconditioner)

    logging.info(
        f"[DESIGN] d={qp.d}, mu={pre.mu:.4e}, condition {pre.cond_before:.3e} -> {pre.cond_after:.3e}"
    )

    table = stage("beta", beta_sequence, pre.mu, pre.lip, beta_length, beta_schedule, alpha0)
    F_p = pre.L_inv[:, None] * qp.F

    fwl = stage("fwl", size_fwl_config, pre.H_cp, F_p, qp.u_min_t, qp.u_max_t, table[:i_max])

    return MpcDesign(
        model_s=model_s,
        tuning_s=tuning_s,
        qp=qp,
        pre=pre,
        F_p=F_p,
        beta=table,
        M_K=M_K,
        scaling=scaling,
        P=P,
        i_max=i_max,
        fwl=fwl,
        beta_schedule=BetaSchedule(beta_schedule),
        provenance=dict(provenance or {}),
    )
