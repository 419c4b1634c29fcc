import json

import numpy as np
import pytest

from utils.artifacts import (
    DesignDocument,
    SolveDocument,
    StateDocument,
    load_design,
    read_document,
    save_design,
    source_commit,
    write_document,
)
from utils.mpc_exceptions import ArtifactError
from utils.solver import fgm_solve


def test_saved_design_solves_identically(tmp_path, toy_design):
    path = save_design(toy_design, tmp_path / "design.json")
    loaded = load_design(path)

    x = np.array([0.4, -0.3])
    for backend in ("full", "fwl"):
        a = fgm_solve(toy_design, x, backend=backend)
        b = fgm_solve(loaded, x, backend=backend)
        np.testing.assert_array_equal(a.u_opt, b.u_opt)

    assert loaded.fwl == toy_design.fwl
    assert loaded.beta_schedule == toy_design.beta_schedule


def test_design_document_is_versioned(tmp_path, toy_design):
    path = save_design(toy_design, tmp_path / "design.json")
    data = json.loads(path.read_text(encoding="utf-8"))

    assert data["schema_version"] == 1
    assert data["model_s"]["time_domain"] == "discrete"

    data["schema_version"] = 2
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(ArtifactError, match="schema_version"):
        load_design(path)


def test_design_document_checks_dimensions(tmp_path, toy_design):
    data = DesignDocument.from_design(toy_design).model_dump()
    data["F_p"] = data["F_p"][:-1]

    path = tmp_path / "design.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(ArtifactError):
        load_design(path)


def test_unknown_fields_are_rejected(tmp_path):
    path = tmp_path / "state.json"
    path.write_text(json.dumps({"x": [1.0], "colour": "blue"}), encoding="utf-8")
    with pytest.raises(ArtifactError, match="colour"):
        read_document(path, StateDocument)


def test_unreadable_files(tmp_path):
    with pytest.raises(ArtifactError):
        read_document(tmp_path / "missing.json", StateDocument)

    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_document(path, StateDocument)


def test_solve_document_from_fwl_report(tmp_path, toy_design):
    report = fgm_solve(toy_design, np.array([0.1, 0.2]), backend="fwl")
    doc = SolveDocument.from_report(report, toy_design.fwl.base)

    assert doc.raw_format.width == toy_design.fwl.base.width
    assert doc.raw_u == report.raw_u

    path = write_document(doc, tmp_path / "nested" / "solve.json")
    assert read_document(path, SolveDocument).cost_history == doc.cost_history


def test_solve_document_checks_history_length():
    with pytest.raises(ValueError):
        SolveDocument(
            backend="full",
            iterations=3,
            u_opt=[0.0],
            u_first=[0.0],
            cost_history=[1.0],
            restarts=[],
            saturations=0,
            saturation_sites={},
        )


def test_source_commit_outside_a_repository(tmp_path):
    assert source_commit(str(tmp_path)) is None
