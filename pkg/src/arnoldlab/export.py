"""Artifact writers. Every writer returns the path it wrote."""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .models import Histogram, Trajectory

TRAJECTORY_HEADER = ("time", "p", "q", "I", "phi", "t")


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def grid_payload(values: np.ndarray, **axes: Iterable[float]) -> dict[str, Any]:
    """A grid flattened row-major together with its shape and axis nodes."""
    values = np.asarray(values, dtype=float)
    return {
        "shape": list(values.shape),
        "order": "row-major",
        "axes": {name: [float(v) for v in np.asarray(nodes, dtype=float)] for name, nodes in axes.items()},
        "values": [float(v) for v in values.ravel(order="C")],
    }


def to_jsonable(value: Any) -> Any:
    """Reduce a value to JSON types; non-finite floats become text."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"real": to_jsonable(value.real), "imag": to_jsonable(value.imag)}
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_json(path: Path, data: Any) -> Path:
    text = json.dumps(to_jsonable(data), sort_keys=True, ensure_ascii=True, indent=2)
    _prepare(path).write_text(text + "\n", encoding="utf-8")
    return path


def write_text(path: Path, text: str) -> Path:
    _prepare(path).write_text(text, encoding="utf-8")
    return path


def write_trajectory_csv(path: Path, trajectory: Trajectory) -> Path:
    with _prepare(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for time, row in zip(trajectory.times, trajectory.states, strict=True):
            writer.writerow([repr(float(time)), *(repr(float(v)) for v in row)])
    return path


def write_samples_csv(path: Path, columns: Mapping[str, np.ndarray]) -> Path:
    names = list(columns)
    data = [np.asarray(columns[name], dtype=float).ravel() for name in names]
    if len({d.size for d in data}) > 1:
        raise ValueError("sample columns must have equal length")
    with _prepare(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(names)
        for row in zip(*data, strict=True):
            writer.writerow([repr(float(v)) for v in row])
    return path


def histogram_text(hist: Histogram, title: str = "") -> str:
    lines = []
    if title:
        lines.append(f"# {title}")
    lines.append(f"# underflow {hist.underflow} overflow {hist.overflow} total {hist.total}")
    lines.append("# left right center count")
    for left, right, center, count in zip(
        hist.edges[:-1], hist.edges[1:], hist.centers, hist.counts, strict=True
    ):
        lines.append(f"{float(left)!r} {float(right)!r} {float(center)!r} {int(count)}")
    return "\n".join(lines) + "\n"


def write_histogram(path: Path, hist: Histogram, title: str = "") -> Path:
    return write_text(path, histogram_text(hist, title))


def read_histogram(path: Path) -> Histogram:
    """Parse a file written by :func:`write_histogram`."""
    edges: list[float] = []
    counts: list[int] = []
    underflow = overflow = 0
    for raw in path.read_text(encoding="utf-8").splitlines():
        if raw.startswith("# underflow"):
            fields = raw.split()
            underflow, overflow = int(fields[2]), int(fields[4])
            continue
        if not raw.strip() or raw.startswith("#"):
            continue
        left, right, _, count = raw.split()
        if not edges:
            edges.append(float(left))
        edges.append(float(right))
        counts.append(int(count))
    return Histogram(
        counts=np.array(counts), edges=np.array(edges), underflow=underflow, overflow=overflow
    )
