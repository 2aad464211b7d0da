from __future__ import annotations

import json
import math

import numpy as np
import pytest

from arnoldlab.export import (
    TRAJECTORY_HEADER,
    grid_payload,
    histogram_text,
    read_histogram,
    to_jsonable,
    write_histogram,
    write_json,
    write_samples_csv,
    write_trajectory_csv,
)
from arnoldlab.hamiltonian import integrate
from arnoldlab.models import Frame, Histogram
from arnoldlab.trig import arnold

from conftest import mk_phase


def test_grid_payload_is_row_major() -> None:
    payload = grid_payload(np.arange(6.0).reshape(2, 3), eta=[0.0, 1.0], xi=[0.0, 1.0, 2.0])

    assert payload["shape"] == [2, 3]
    assert payload["values"] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert payload["axes"]["xi"] == [0.0, 1.0, 2.0]


def test_jsonable_values() -> None:
    data = to_jsonable(
        {
            "frame": Frame.SECTION,
            "z": 1 + 2j,
            "bad": math.inf,
            "n": np.int64(3),
            "ok": np.bool_(True),
            "rows": np.array([[1.0, math.nan]]),
        }
    )

    assert data["frame"] == "section"
    assert data["z"] == {"real": 1.0, "imag": 2.0}
    assert data["bad"] == "inf"
    assert data["n"] == 3 and isinstance(data["n"], int)
    assert data["ok"] is True
    assert data["rows"] == [[1.0, "nan"]]


def test_write_json_is_sorted(tmp_path) -> None:
    path = write_json(tmp_path / "deep" / "out.json", {"b": 1, "a": Histogram(np.array([1]), np.array([0.0, 1.0]))})

    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text)["a"]["counts"] == [1]


def test_samples_csv(tmp_path) -> None:
    path = write_samples_csv(tmp_path / "s.csv", {"model": np.array([0.1, 0.2]), "ito": [1.0, 2.0]})

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["model,ito", "0.1,1.0", "0.2,2.0"]
    with pytest.raises(ValueError):
        write_samples_csv(tmp_path / "bad.csv", {"a": [1.0], "b": [1.0, 2.0]})


def test_trajectory_csv(tmp_path) -> None:
    trajectory = integrate(mk_phase(), 0.01, arnold(), 0.1, 5)

    path = write_trajectory_csv(tmp_path / "traj.csv", trajectory)

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRAJECTORY_HEADER)
    assert len(lines) == len(trajectory) + 1
    assert float(lines[-1].split(",")[0]) == pytest.approx(0.5)


def test_histogram_file(tmp_path) -> None:
    hist = Histogram(
        counts=np.array([3, 0, 5]), edges=np.array([-1.5, -0.5, 0.5, 1.5]), underflow=2, overflow=1
    )

    path = write_histogram(tmp_path / "h.hist", hist, "model s=1")
    again = read_histogram(path)

    assert histogram_text(hist, "model s=1").splitlines()[:2] == [
        "# model s=1",
        "# underflow 2 overflow 1 total 11",
    ]
    assert again.counts.tolist() == [3, 0, 5]
    assert again.edges.tolist() == [-1.5, -0.5, 0.5, 1.5]
    assert (again.underflow, again.overflow) == (2, 1)
