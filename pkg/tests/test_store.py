from __future__ import annotations

import sqlite3

import pytest
from blake3 import blake3

from arnoldlab import __version__
from arnoldlab.errors import ConfigError
from arnoldlab.store import (
    SCHEMA_VERSION,
    file_digest,
    ledger_path,
    load_artifacts,
    load_runs,
    record_run,
)


def _record(out_dir, command: str = "melnikov", **extra) -> int:
    artifact = out_dir / "tables" / "table.txt"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("k1 k2\n", encoding="utf-8")
    options = {
        "command": command,
        "config_digest": "abc",
        "seed": 7,
        "status": "passed",
        "exit_code": 0,
        "seconds": 0.5,
        "artifacts": [artifact],
        "summary": {"max_error": 1e-9},
    }
    options.update(extra)
    return record_run(out_dir, **options)


def test_record_run_bootstraps_versioned_ledger(tmp_path) -> None:
    _record(tmp_path)

    conn = sqlite3.connect(ledger_path(tmp_path))
    try:
        (stamp,) = conn.execute("PRAGMA user_version").fetchone()
    finally:
        conn.close()
    assert stamp == SCHEMA_VERSION
    assert [run.version for run in load_runs(tmp_path)] == [__version__]


def test_runs_and_artifacts_round_trip(tmp_path) -> None:
    run_id = _record(tmp_path)

    (run,) = load_runs(tmp_path)
    (artifact,) = load_artifacts(tmp_path, run_id)

    assert run.run_id == run_id
    assert (run.command, run.seed, run.status, run.exit_code) == ("melnikov", 7, "passed", 0)
    assert run.summary == {"max_error": 1e-9}
    assert artifact.relpath == "tables/table.txt"
    assert artifact.size == 6
    assert artifact.digest == blake3(b"k1 k2\n").hexdigest()
    assert artifact.digest == file_digest(tmp_path / "tables" / "table.txt")


def test_runs_filter_by_command(tmp_path) -> None:
    _record(tmp_path, "melnikov")
    _record(tmp_path, "twist", status="failed", exit_code=1)

    (twist,) = load_runs(tmp_path, "twist")

    assert twist.status == "failed"
    assert twist.exit_code == 1
    assert [r.command for r in load_runs(tmp_path)] == ["melnikov", "twist"]
    assert load_runs(tmp_path, "nhil") == []


def test_foreign_database_is_reinitialized(tmp_path) -> None:
    conn = sqlite3.connect(ledger_path(tmp_path))
    try:
        conn.execute("CREATE TABLE leftovers (id INTEGER PRIMARY KEY)")
        conn.execute("CREATE INDEX idx_leftovers ON leftovers(id)")
        conn.commit()
    finally:
        conn.close()

    assert load_runs(tmp_path) == []

    conn = sqlite3.connect(ledger_path(tmp_path))
    try:
        names = {row[0] for row in conn.execute("SELECT name FROM sqlite_master")}
    finally:
        conn.close()
    assert "leftovers" not in names
    assert "idx_leftovers" not in names
    assert {"runs", "artifacts"} <= names


def test_reopening_keeps_runs(tmp_path) -> None:
    _record(tmp_path)
    _record(tmp_path, "twist")

    assert [r.command for r in load_runs(tmp_path)] == ["melnikov", "twist"]


def test_newer_ledger_schema_is_rejected(tmp_path) -> None:
    _record(tmp_path)
    conn = sqlite3.connect(ledger_path(tmp_path))
    try:
        conn.execute(f"PRAGMA user_version = {SCHEMA_VERSION + 1}")
        conn.commit()
    finally:
        conn.close()

    with pytest.raises(ConfigError):
        load_runs(tmp_path)
