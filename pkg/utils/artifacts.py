"""Versioned JSON documents exchanged between the command stages."""

import logging
import os
from pathlib import Path
from typing import Literal, TypeVar

import numpy as np
import pygit2
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from utils.design import (
    BetaSchedule,
    CondensedQp,
    MpcDesign,
    MpcTuning,
    Preconditioner,
    ScalingSet,
)
from utils.fxp import FixedFormat
from utils.mpc_exceptions import ArtifactError, MpcError
from utils.solver import FwlSolverConfig, SolveReport
from utils.ssmodel import StateSpaceModel

SCHEMA_VERSION = 1

Vector = list[float]
Matrix = list[list[float]]

Doc = TypeVar("Doc", bound=BaseModel)


def _rows(arr) -> Matrix:
    return np.asarray(arr, dtype=float).tolist()


def _shape(mat: Matrix) -> tuple[int, int]:
    rows = len(mat)
    cols = len(mat[0]) if rows else 0
    if any(len(r) != cols for r in mat):
        raise ValueError("ragged matrix")
    return rows, cols


class Document(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION


# ------ Models ------


class FormatDocument(BaseModel):
    width: int
    int_bits: int
    rounding: str = "round-half-up"
    overflow: str = "saturate"

    def to_format(self) -> FixedFormat:
        return FixedFormat.from_dict(self.model_dump())


class ModelDocument(Document):
    time_domain: Literal["continuous", "discrete"]
    Ts: float | None = None
    A: Matrix
    B: Matrix
    C: Matrix
    D: Matrix | None = None
    C_aux: Matrix | None = None

    @model_validator(mode="after")
    def check_dimensions(self):
        n, n2 = _shape(self.A)
        if n != n2:
            raise ValueError(f"A must be square, got {n}x{n2}")

        b_rows, m = _shape(self.B)
        p, c_cols = _shape(self.C)
        if b_rows != n or c_cols != n:
            raise ValueError(f"B is {b_rows}x{m} and C is {p}x{c_cols} for n={n}")
        if self.D is not None and _shape(self.D) != (p, m):
            raise ValueError(f"D must be {p}x{m}")
        if self.C_aux is not None and _shape(self.C_aux)[1] != n:
            raise ValueError(f"C_aux must have {n} columns")

        if (self.time_domain == "discrete") != (self.Ts is not None):
            raise ValueError("Ts is required exactly when time_domain is discrete")
        return self

    @classmethod
    def from_model(cls, m: StateSpaceModel) -> "ModelDocument":
        return cls(
            time_domain="discrete" if m.is_discrete else "continuous",
            Ts=m.Ts,
            A=_rows(m.A),
            B=_rows(m.B),
            C=_rows(m.C),
            D=_rows(m.D) if m.has_feedthrough else None,
            C_aux=_rows(m.C_aux) if m.C_aux is not None else None,
        )

    def to_model(self) -> StateSpaceModel:
        return StateSpaceModel(
            A=np.array(self.A),
            B=np.array(self.B),
            C=np.array(self.C),
            D=np.array(self.D) if self.D is not None else None,
            C_aux=np.array(self.C_aux) if self.C_aux is not None else None,
            Ts=self.Ts,
        )


# ------ Designs ------


class TuningDocument(BaseModel):
    Q_C: Matrix
    R_C: Matrix
    N: int
    blocks: list[int]
    u_min: Vector
    u_max: Vector
    Q_K: Matrix
    R_K: Matrix


class QpDocument(BaseModel):
    H_c: Matrix
    F: Matrix
    Y: Matrix
    u_min_t: Vector
    u_max_t: Vector


class PreconditionerDocument(BaseModel):
    L: Vector
    H_cp: Matrix
    mu: float
    lip: float
    cond_before: float
    cond_after: float
    enabled: bool


class ScalingDocument(BaseModel):
    k_u: Vector
    k_x: Vector
    k_y: Vector


class DesignDocument(Document):
    model_s: ModelDocument
    tuning_s: TuningDocument
    scaling: ScalingDocument
    P: Matrix
    M_K: Matrix
    qp: QpDocument
    preconditioner: PreconditionerDocument
    F_p: Matrix
    beta: Vector
    beta_schedule: str
    i_max: int
    fwl: dict
    provenance: dict

    @model_validator(mode="after")
    def check_dimensions(self):
        n = len(self.model_s.A)
        d = len(self.qp.H_c)
        if _shape(self.qp.F) != (d, n) or _shape(self.F_p) != (d, n):
            raise ValueError(f"state maps must be {d}x{n}")
        if _shape(self.preconditioner.H_cp) != (d, d) or len(self.preconditioner.L) != d:
            raise ValueError(f"preconditioner must be sized for d={d}")
        if _shape(self.P) != (n, n):
            raise ValueError(f"P must be {n}x{n}")
        if not 1 <= self.i_max <= len(self.beta):
            raise ValueError("i_max exceeds the beta table")
        return self

    @classmethod
    def from_design(cls, design: MpcDesign) -> "DesignDocument":
        t, qp, pre = design.tuning_s, design.qp, design.pre
        return cls(
            model_s=ModelDocument.from_model(design.model_s),
            tuning_s=TuningDocument(
                Q_C=_rows(t.Q_C),
                R_C=_rows(t.R_C),
                N=t.N,
                blocks=list(t.blocks),
                u_min=t.u_min.tolist(),
                u_max=t.u_max.tolist(),
                Q_K=_rows(t.Q_K),
                R_K=_rows(t.R_K),
            ),
            scaling=ScalingDocument(
                k_u=design.scaling.k_u.tolist(),
                k_x=design.scaling.k_x.tolist(),
                k_y=design.scaling.k_y.tolist(),
            ),
            P=_rows(design.P),
            M_K=_rows(design.M_K),
            qp=QpDocument(
                H_c=_rows(qp.H_c),
                F=_rows(qp.F),
                Y=_rows(qp.Y),
                u_min_t=qp.u_min_t.tolist(),
                u_max_t=qp.u_max_t.tolist(),
            ),
            preconditioner=PreconditionerDocument(
                L=pre.L.tolist(),
                H_cp=_rows(pre.H_cp),
                mu=pre.mu,
                lip=pre.lip,
                cond_before=pre.cond_before,
                cond_after=pre.cond_after,
                enabled=pre.enabled,
            ),
            F_p=_rows(design.F_p),
            beta=design.beta.tolist(),
            beta_schedule=str(design.beta_schedule),
            i_max=design.i_max,
            fwl=design.fwl.to_dict(),
            provenance=design.provenance,
        )

    def to_design(self) -> MpcDesign:
        t, qp, pre = self.tuning_s, self.qp, self.preconditioner
        return MpcDesign(
            model_s=self.model_s.to_model(),
            tuning_s=MpcTuning(
                Q_C=np.array(t.Q_C),
                R_C=np.array(t.R_C),
                N=t.N,
                blocks=tuple(t.blocks),
                u_min=np.array(t.u_min),
                u_max=np.array(t.u_max),
                Q_K=np.array(t.Q_K),
                R_K=np.array(t.R_K),
            ),
            qp=CondensedQp(
                H_c=np.array(qp.H_c),
                F=np.array(qp.F),
                Y=np.array(qp.Y),
                u_min_t=np.array(qp.u_min_t),
                u_max_t=np.array(qp.u_max_t),
            ),
            pre=Preconditioner(
                L=np.array(pre.L),
                H_cp=np.array(pre.H_cp),
                mu=pre.mu,
                lip=pre.lip,
                cond_before=pre.cond_before,
                cond_after=pre.cond_after,
                enabled=pre.enabled,
            ),
            F_p=np.array(self.F_p),
            beta=np.array(self.beta),
            M_K=np.array(self.M_K),
            scaling=ScalingSet(
                np.array(self.scaling.k_u),
                np.array(self.scaling.k_x),
                np.array(self.scaling.k_y),
            ),
            P=np.array(self.P),
            i_max=self.i_max,
            fwl=FwlSolverConfig.from_dict(self.fwl),
            beta_schedule=BetaSchedule(self.beta_schedule),
            provenance=self.provenance,
        )


# ------ Run outputs ------


class SolveDocument(Document):
    backend: str
    iterations: int
    u_opt: Vector
    u_first: Vector
    cost_history: Vector
    restarts: list[int]
    saturations: int
    saturation_sites: dict[str, int]
    raw_u: list[int] | None = None
    raw_format: FormatDocument | None = None

    @model_validator(mode="after")
    def check_history(self):
        if len(self.cost_history) != self.iterations:
            raise ValueError("cost history length must equal the iteration count")
        return self

    @classmethod
    def from_report(
        cls, report: SolveReport, raw_format: FixedFormat | None = None
    ) -> "SolveDocument":
        return cls(
            backend=str(report.backend),
            iterations=report.iterations,
            u_opt=np.asarray(report.u_opt, dtype=float).tolist(),
            u_first=np.asarray(report.u_first, dtype=float).tolist(),
            cost_history=[float(c) for c in report.cost_history],
            restarts=list(report.restarts),
            saturations=report.saturations,
            saturation_sites=dict(report.saturation_sites),
            raw_u=report.raw_u,
            raw_format=(
                FormatDocument(**raw_format.to_dict())
                if raw_format is not None and report.raw_u is not None
                else None
            ),
        )


class StateDocument(Document):
    x: Vector
    scaled: bool = True


class TraceSummaryDocument(Document):
    scenario: dict
    metrics: dict


class SweepRow(BaseModel):
    amplitude: float
    mpc_stabilized: bool
    lq_stabilized: bool


class SweepDocument(Document):
    backend: str
    rows: list[SweepRow]
    max_mpc: float
    max_lq: float
    margin_ratio: float | None


class BenchRow(BaseModel):
    backend: str
    samples: int
    max_ms: float
    avg_ms: float
    std_ms: float
    cv: float
    max_mse: float
    max_cost_gap: float
    saturations: int


class BenchDocument(Document):
    i_max: int
    rows: list[BenchRow]
    host: dict


class CheckRow(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyDocument(Document):
    passed: bool
    checks: list[CheckRow]


# ------ File helpers ------


def write_document(doc: BaseModel, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logging.info(f"[ARTIFACT] Wrote {path}")
    return path


def read_document(path: str | os.PathLike, cls: type[Doc]) -> Doc:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"cannot read {path}: {e}") from e

    try:
        return cls.model_validate_json(text)
    except ValidationError as e:
        details = "; ".join(
            f"{'/'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise ArtifactError(f"{path}: {details}") from e


def load_design(path: str | os.PathLike) -> MpcDesign:
    doc = read_document(path, DesignDocument)
    try:
        return doc.to_design()
    except MpcError as e:
        raise ArtifactError(f"{path}: inconsistent design: {e}") from e


def save_design(design: MpcDesign, path: str | os.PathLike) -> Path:
    return write_document(DesignDocument.from_design(design), path)


def source_commit(path: str = ".") -> str | None:
    """HEAD commit id of the surrounding git checkout, if there is one."""
    try:
        repo_path = pygit2.discover_repository(path)
        if repo_path is None:
            return None
        return str(pygit2.Repository(repo_path).head.target)
    except (pygit2.GitError, KeyError, ValueError):
        return None
