import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import block_diag, expm

from utils.mpc_exceptions import ModelError

# Sensor toroidal angles of the reduced n=1 measurement, degrees
DEFAULT_SENSOR_ANGLES = (39.0, 101.0, 159.0, 221.0, 279.0, 341.0)

# Actuators sit every 40 degrees, three rows of nine
ACTUATOR_SPACING = 40.0

# Retry rule for degenerate surrogate draws
SURROGATE_RETRIES = 10
SURROGATE_SEED_STRIDE = 1000


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """LTI system ``x' = Ax + Bu``, ``y = Cx + Du``.

    ``Ts`` is ``None`` for continuous time and the sampling period in
    seconds for discrete time. ``C_aux`` holds the auxiliary outputs
    (coil currents) and never has a feedthrough term.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    C_aux: np.ndarray | None = None
    Ts: float | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])

        if A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}")

        D = np.zeros((C.shape[0], B.shape[1]))
        if self.D is not None:
            D = np.asarray(self.D, dtype=float).reshape(C.shape[0], B.shape[1])

        C_aux = None
        if self.C_aux is not None:
            C_aux = np.asarray(self.C_aux, dtype=float).reshape(-1, A.shape[0])

        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D), ("C_aux", C_aux)):
            if mat is not None and not np.all(np.isfinite(mat)):
                raise ModelError(f"{name} has non-finite entries")

        if self.Ts is not None and not (math.isfinite(self.Ts) and self.Ts > 0):
            raise ModelError(f"sampling time must be positive, got {self.Ts}")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "C_aux", C_aux)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.Ts is not None

    @property
    def has_feedthrough(self) -> bool:
        return bool(np.any(self.D))

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def transfer_at(self, s: complex) -> np.ndarray:
        """Point evaluation of ``C (sI - A)^-1 B + D``."""
        n = self.n_states
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D


@dataclass(frozen=True)
class PsSpec:
    """Power-supply model: first-order lag in series with a Padé delay."""

    v_min: float = -144.0
    v_max: float = 144.0
    lag_tau: float = 7.5e-3
    delay: float = 2.5e-3
    pade_order: int = 3

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ModelError(f"v_min ({self.v_min}) must be below v_max ({self.v_max})")
        if self.lag_tau <= 0:
            raise ModelError(f"lag time constant must be positive, got {self.lag_tau}")
        if self.delay < 0:
            raise ModelError(f"delay must be non-negative, got {self.delay}")


@dataclass(frozen=True)
class SurrogateSpec:
    """Synthetic unstable wall-mode plant with one rotating unstable pair."""

    gamma: float = 19.0
    omega: float = 0.26
    n_stable: int = 6
    stable_tau_range: tuple[float, float] = (2.0e-3, 50.0e-3)
    n_inputs: int = 27
    n_outputs: int = 6
    seed: int = 7
    input_gain: float = 0.05
    stable_coupling: float = 0.5
    sensor_angles: tuple[float, ...] | None = None
    aux_gain: float = 2.0e3

    def __post_init__(self):
        if self.gamma <= 0:
            raise ModelError(f"growth rate must be positive, got {self.gamma}")
        if self.n_stable < 0:
            raise ModelError(f"n_stable must be >= 0, got {self.n_stable}")
        if self.n_inputs < 1 or self.n_outputs < 1:
            raise ModelError("surrogate needs at least one input and one output")

        lo, hi = self.stable_tau_range
        if not 0 < lo <= hi:
            raise ModelError(f"bad stable time-constant range {self.stable_tau_range}")

        if self.sensor_angles is not None and len(self.sensor_angles) != self.n_outputs:
            raise ModelError(
                f"{len(self.sensor_angles)} sensor angles for {self.n_outputs} outputs"
            )

    def angles(self) -> tuple[float, ...]:
        if self.sensor_angles is not None:
            return tuple(self.sensor_angles)
        if self.n_outputs == len(DEFAULT_SENSOR_ANGLES):
            return DEFAULT_SENSOR_ANGLES
        return tuple(360.0 * j / self.n_outputs for j in range(self.n_outputs))

    def actuator_angles(self) -> tuple[float, ...]:
        return tuple((ACTUATOR_SPACING * i) % 360.0 for i in range(self.n_inputs))


def mode_matrix(angles) -> np.ndarray:
    """Rows ``[cos phi, sin phi]``: sensor readings of an n=1 mode ``(y_A, y_B)``."""
    phi = np.deg2rad(np.asarray(angles, dtype=float))
    return np.column_stack([np.cos(phi), np.sin(phi)])


@dataclass(frozen=True, eq=False)
class OutputReducer:
    angles: tuple[float, ...]
    T_out: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.angles) < 2:
            raise ModelError("at least two sensor angles are needed")

        M = mode_matrix(self.angles)
        if np.linalg.matrix_rank(M) < 2:
            raise ModelError(f"sensor angles {self.angles} cannot separate cos/sin")

        object.__setattr__(self, "T_out", np.linalg.pinv(M))


def reduce_outputs(r: OutputReducer, y_m: np.ndarray) -> np.ndarray:
    y_m = np.asarray(y_m, dtype=float)
    if y_m.shape[0] != len(r.angles):
        raise ModelError(f"expected {len(r.angles)} sensor values, got {y_m.shape[0]}")
    return r.T_out @ y_m


def zoh_discretize(m: StateSpaceModel, Ts: float) -> StateSpaceModel:
    if m.is_discrete:
        raise ModelError("model is already discrete")
    if not (math.isfinite(Ts) and Ts > 0):
        raise ModelError(f"sampling time must be positive, got {Ts}")

    n, k = m.n_states, m.n_inputs

    # exp([[A, B], [0, 0]] Ts) = [[Ad, Bd], [0, I]]
    M = np.zeros((n + k, n + k))
    M[:n, :n] = m.A
    M[:n, n:] = m.B
    phi = expm(M * Ts)

    logging.debug(f"[MODEL] Discretized {n}-state model at Ts={Ts:g}s")
    return replace(m, A=phi[:n, :n], B=phi[:n, n:], Ts=Ts)


def _pade_coefficients(order: int) -> np.ndarray:
    # Denominator of the [n/n] approximant of exp(-p), ascending powers
    n = order
    return np.array(
        [
            math.factorial(2 * n - k)
            * math.factorial(n)
            / (math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k))
            for k in range(n + 1)
        ]
    )


def pade_delay(delay: float, order: int = 3) -> StateSpaceModel:
    """Controllable-canonical realization of the [order/order] Padé delay.

    The realization is built for a unit delay and time-scaled, which keeps
    the matrix entries of order one regardless of ``delay``.
    """
    if not 1 <= order <= 6:
        raise ModelError(f"unsupported Padé order {order}")
    if not delay > 0:
        raise ModelError(f"delay must be positive, got {delay}")

    c = _pade_coefficients(order)
    den = c[:-1] / c[-1]
    num = np.array([(-1) ** k * c[k] for k in range(order + 1)]) / c[-1]

    feedthrough = num[-1]
    residual = num[:-1] - feedthrough * den

    A = np.zeros((order, order))
    A[:-1, 1:] = np.eye(order - 1)
    A[-1, :] = -den
    B = np.zeros((order, 1))
    B[-1, 0] = 1.0

    return StateSpaceModel(
        A=A / delay,
        B=B / delay,
        C=residual.reshape(1, order),
        D=np.array([[feedthrough]]),
    )


def series_connect(m1: StateSpaceModel, m2: StateSpaceModel) -> StateSpaceModel:
    """``m1`` feeding ``m2``; the state is ordered ``[x1; x2]``."""
    if m1.n_outputs != m2.n_inputs:
        raise ModelError(
            f"cannot connect {m1.n_outputs} outputs into {m2.n_inputs} inputs"
        )
    if m1.Ts != m2.Ts:
        raise ModelError(f"time domains differ (Ts={m1.Ts} vs Ts={m2.Ts})")

    n1, n2 = m1.n_states, m2.n_states

    A = np.block([[m1.A, np.zeros((n1, n2))], [m2.B @ m1.C, m2.A]])
    B = np.vstack([m1.B, m2.B @ m1.D])
    C = np.hstack([m2.D @ m1.C, m2.C])
    D = m2.D @ m1.D

    aux = []
    if m1.C_aux is not None:
        aux.append(np.hstack([m1.C_aux, np.zeros((m1.C_aux.shape[0], n2))]))
    if m2.C_aux is not None:
        aux.append(np.hstack([np.zeros((m2.C_aux.shape[0], n1)), m2.C_aux]))

    return StateSpaceModel(
        A=A, B=B, C=C, D=D, C_aux=np.vstack(aux) if aux else None, Ts=m1.Ts
    )


def build_ps_model(spec: PsSpec, n_channels: int = 1) -> StateSpaceModel:
    """Per-channel lag followed by the Padé delay, replicated block-diagonally.

    Saturation is left to the simulator.
    """
    lag = StateSpaceModel(
        A=[[-1.0 / spec.lag_tau]], B=[[1.0 / spec.lag_tau]], C=[[1.0]]
    )
    channel = lag
    if spec.delay > 0:
        channel = series_connect(lag, pade_delay(spec.delay, spec.pade_order))

    if n_channels == 1:
        return channel

    return StateSpaceModel(
        A=block_diag(*[channel.A] * n_channels),
        B=block_diag(*[channel.B] * n_channels),
        C=block_diag(*[channel.C] * n_channels),
        D=block_diag(*[channel.D] * n_channels),
    )


def _min_singular(mat: np.ndarray) -> float:
    return float(np.linalg.svd(mat, compute_uv=False).min())


def _draw_surrogate(spec: SurrogateSpec, seed: int) -> StateSpaceModel:
    mode_stream, stable_stream = np.random.SeedSequence(seed).spawn(2)
    mode_rng = np.random.default_rng(mode_stream)
    stable_rng = np.random.default_rng(stable_stream)

    m, p = spec.n_inputs, spec.n_outputs

    # Unstable pair: geometric couplings with seeded per-coil gain spread
    theta = np.deg2rad(spec.actuator_angles())
    coil_gain = spec.input_gain * (1.0 + 0.1 * mode_rng.standard_normal(m))
    coil_phase = theta + np.deg2rad(2.0) * mode_rng.standard_normal(m)
    B_u = np.vstack([coil_gain * np.cos(coil_phase), coil_gain * np.sin(coil_phase)])
    C_u = mode_matrix(spec.angles())

    A_u = np.array([[spec.gamma, spec.omega], [-spec.omega, spec.gamma]])

    # Stable wall modes
    k = spec.n_stable
    lo, hi = spec.stable_tau_range
    tau = np.geomspace(lo, hi, k) if k > 1 else np.array([lo] * k)
    A_s = np.diag(-1.0 / tau)
    B_s = spec.input_gain * spec.stable_coupling * stable_rng.standard_normal((k, m))
    C_s = spec.stable_coupling * stable_rng.standard_normal((p, k))

    A = block_diag(A_u, A_s) if k else A_u
    B = np.vstack([B_u, B_s])
    C = np.hstack([C_u, C_s])
    C_aux = spec.aux_gain * B.T / np.abs(B).max()

    return StateSpaceModel(A=A, B=B, C=C, C_aux=C_aux)


def build_surrogate(spec: SurrogateSpec) -> StateSpaceModel:
    """Modal-form stand-in for the unstable wall-mode plant.

    States ``0, 1`` carry the unstable pair ``gamma +- j omega``; the rest
    are stable real modes. The unstable-pair couplings come from their own
    seed stream, so two specs differing only in ``n_stable`` share them.
    Degenerate draws are retried with ``seed + 1000 * attempt``.
    """
    for attempt in range(SURROGATE_RETRIES):
        seed = spec.seed + SURROGATE_SEED_STRIDE * attempt
        model = _draw_surrogate(spec, seed)

        A_u = model.A[:2, :2]
        B_u = model.B[:2, :]
        C_u = model.C[:, :2]

        ctrb = np.hstack([B_u, A_u @ B_u])
        obsv = np.vstack([C_u, C_u @ A_u])
        scale_c = np.abs(ctrb).max()
        scale_o = np.abs(obsv).max()

        if (
            _min_singular(ctrb) > 1e-6 * scale_c
            and _min_singular(obsv) > 1e-6 * scale_o
        ):
            logging.debug(
                f"[MODEL] Surrogate drawn with seed {seed} "
                f"({model.n_states} states, {spec.n_inputs} inputs, {spec.n_outputs} outputs)"
            )
            return model

        logging.warning(
            f"[MODEL] Surrogate draw with seed {seed} is degenerate. Retrying..."
        )

    raise ModelError(
        f"no usable surrogate after {SURROGATE_RETRIES} draws from seed {spec.seed}"
    )
