"""Dataset container and CSV ingestion."""

import numpy as np
import pytest

from mrtwcls import PanelDataset, ingest_csv, write_csv
from mrtwcls.errors import (
    InvariantViolation,
    MissingColumn,
    ParseError,
    RaggedPanel,
)


def tiny_panel():
    return PanelDataset(
        ids=["a", "b"],
        avail=np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]),
        trt=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]),
        y=np.array([[0.1, -0.2, 0.3], [0.4, 0.5, -0.6]]),
        covariates={"x": np.arange(6, dtype=float).reshape(2, 3)},
    )


def test_basic_properties():
    data = tiny_panel()
    assert data.n == 2
    assert data.T == 3
    assert data.ids == ("a", "b")
    assert data.schema == ("x",)
    assert data.avail.shape == (2, 3)
    assert np.array_equal(data.covariate("x"), [[0, 1, 2], [3, 4, 5]])


def test_individual_view():
    data = tiny_panel()
    person = data["b"]
    assert person.id == "b"
    assert np.array_equal(person.trt, [0.0, 1.0, 1.0])
    assert np.array_equal(person.covariates["x"], [3.0, 4.0, 5.0])
    with pytest.raises(KeyError):
        data["missing"]


def test_arrays_are_read_only():
    data = tiny_panel()
    with pytest.raises(ValueError):
        data.y[0, 0] = 99.0


def test_unknown_covariate_rejected():
    with pytest.raises(MissingColumn):
        tiny_panel().covariate("nope")


def test_treatment_must_be_binary():
    with pytest.raises(InvariantViolation):
        PanelDataset(
            ids=[1], avail=np.ones((1, 2)),
            trt=np.array([[0.5, 0.0]]), y=np.zeros((1, 2)), covariates={},
        )


def test_treatment_requires_availability():
    with pytest.raises(InvariantViolation):
        PanelDataset(
            ids=[1], avail=np.array([[0.0, 1.0]]),
            trt=np.array([[1.0, 0.0]]), y=np.zeros((1, 2)), covariates={},
        )


def test_non_finite_values_rejected():
    with pytest.raises(InvariantViolation):
        PanelDataset(
            ids=[1], avail=np.ones((1, 2)), trt=np.zeros((1, 2)),
            y=np.array([[0.0, np.nan]]), covariates={},
        )


def test_duplicate_ids_rejected():
    with pytest.raises(InvariantViolation):
        PanelDataset(
            ids=[1, 1], avail=np.ones((2, 2)), trt=np.zeros((2, 2)),
            y=np.zeros((2, 2)), covariates={},
        )


def test_csv_round_trip(tmp_path):
    data = tiny_panel()
    path = tmp_path / "panel.csv"
    write_csv(data, path)
    back = ingest_csv(path)
    assert back.n == data.n and back.T == data.T
    assert np.array_equal(back.avail, data.avail)
    assert np.array_equal(back.trt, data.trt)
    assert np.array_equal(back.y, data.y)
    assert np.array_equal(back.covariate("x"), data.covariate("x"))


def test_ingest_preserves_first_appearance_order(tmp_path):
    path = tmp_path / "panel.csv"
    rows = ["id,t,avail,trt,y"]
    for pid in ("z", "a"):
        for t in (1, 2):
            rows.append(f"{pid},{t},1,0,0.0")
    path.write_text("\n".join(rows) + "\n")
    data = ingest_csv(path)
    assert data.ids == ("z", "a")


def test_ingest_sorts_occasions_within_individual(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(
        "id,t,avail,trt,y\n"
        "1,2,1,1,5.0\n"
        "1,1,1,0,3.0\n"
    )
    data = ingest_csv(path)
    assert np.array_equal(data.y, [[3.0, 5.0]])
    assert np.array_equal(data.trt, [[0.0, 1.0]])


def test_ingest_missing_required_column(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("id,t,avail,trt\n1,1,1,0\n")
    with pytest.raises(MissingColumn) as err:
        ingest_csv(path)
    assert "y" in str(err.value)


def test_ingest_ragged_lengths(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(
        "id,t,avail,trt,y\n"
        "1,1,1,0,0\n1,2,1,0,0\n"
        "2,1,1,0,0\n"
    )
    with pytest.raises(RaggedPanel):
        ingest_csv(path)


def test_ingest_gap_in_occasions(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(
        "id,t,avail,trt,y\n"
        "1,1,1,0,0\n1,3,1,0,0\n"
        "2,1,1,0,0\n2,2,1,0,0\n"
    )
    with pytest.raises(RaggedPanel):
        ingest_csv(path)


def test_ingest_non_numeric_cell(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("id,t,avail,trt,y\n1,1,1,0,oops\n")
    with pytest.raises(ParseError):
        ingest_csv(path)


def test_ingest_empty_cell(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("id,t,avail,trt,y,x\n1,1,1,0,0.5,\n")
    with pytest.raises(InvariantViolation):
        ingest_csv(path)


def test_ingest_schema_selects_covariates(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(
        "id,t,avail,trt,y,x,junk\n"
        "1,1,1,0,0.5,2.0,hello\n"
    )
    data = ingest_csv(path, schema={"covariates": ["x"]})
    assert data.schema == ("x",)
    with pytest.raises(MissingColumn):
        ingest_csv(path, schema={"covariates": ["absent"]})
