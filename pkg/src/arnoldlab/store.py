"""Run ledger: a versioned SQLite sidecar next to each command's outputs.

Output files stay a pure function of (config, seed); timestamps, durations
and artifact digests live only here.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from blake3 import blake3

from . import __version__
from .errors import ConfigError

LEDGER_NAME = "runs.sqlite3"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    command: str
    version: str
    config_digest: str
    seed: int
    status: str
    exit_code: int
    seconds: float
    summary: dict[str, Any]


@dataclass(frozen=True)
class ArtifactRecord:
    run_id: int
    relpath: str
    digest: str
    size: int


def ledger_path(out_dir: Path) -> Path:
    return out_dir / LEDGER_NAME


def file_digest(path: Path) -> str:
    hasher = blake3()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def _connect(db_path: Path) -> sqlite3.Connection:
    db_path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    return conn


def _init_schema(conn: sqlite3.Connection) -> None:
    """Create the ledger tables; a file without the schema stamp is cleared first."""
    conn.execute("PRAGMA journal_mode=WAL")
    stamp = int(conn.execute("PRAGMA user_version").fetchone()[0])
    if stamp > SCHEMA_VERSION:
        raise ConfigError(f"ledger schema {stamp} is newer than {SCHEMA_VERSION}")
    if stamp == 0:
        foreign = conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'"
        ).fetchall()
        for row in foreign:
            conn.execute(f'DROP TABLE "{row["name"]}"')
    conn.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            run_id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            version TEXT NOT NULL,
            config_digest TEXT NOT NULL,
            seed TEXT NOT NULL,
            status TEXT NOT NULL,
            exit_code INTEGER NOT NULL,
            seconds REAL NOT NULL,
            summary_json TEXT NOT NULL DEFAULT '{}',
            started_at TEXT NOT NULL DEFAULT CURRENT_TIMESTAMP
        )
        """
    )
    conn.execute(
        """
        CREATE TABLE IF NOT EXISTS artifacts (
            run_id INTEGER NOT NULL REFERENCES runs(run_id),
            relpath TEXT NOT NULL,
            digest TEXT NOT NULL,
            size INTEGER NOT NULL,
            PRIMARY KEY (run_id, relpath)
        )
        """
    )
    conn.execute(
        """
        CREATE INDEX IF NOT EXISTS idx_runs_digest
        ON runs(config_digest, command)
        """
    )
    conn.execute(f"PRAGMA user_version = {SCHEMA_VERSION}")
    conn.commit()


def record_run(
    out_dir: Path,
    *,
    command: str,
    config_digest: str,
    seed: int,
    status: str,
    exit_code: int,
    seconds: float,
    artifacts: list[Path],
    summary: dict[str, Any] | None = None,
) -> int:
    """Insert one run and the blake3 digests of its artifacts; returns the run id."""
    conn = _connect(ledger_path(out_dir))
    try:
        _init_schema(conn)
        with conn:
            cursor = conn.execute(
                """
                INSERT INTO runs (
                    command, version, config_digest, seed, status, exit_code, seconds, summary_json
                )
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    command,
                    __version__,
                    config_digest,
                    str(seed),
                    status,
                    exit_code,
                    seconds,
                    json.dumps(summary or {}, sort_keys=True, ensure_ascii=True),
                ),
            )
            run_id = int(cursor.lastrowid)
            conn.executemany(
                """
                INSERT INTO artifacts (run_id, relpath, digest, size)
                VALUES (?, ?, ?, ?)
                ON CONFLICT(run_id, relpath) DO UPDATE SET
                    digest = excluded.digest,
                    size = excluded.size
                """,
                [
                    (
                        run_id,
                        path.relative_to(out_dir).as_posix(),
                        file_digest(path),
                        path.stat().st_size,
                    )
                    for path in artifacts
                ],
            )
        return run_id
    finally:
        conn.close()


def load_runs(out_dir: Path, command: str | None = None) -> list[RunRecord]:
    conn = _connect(ledger_path(out_dir))
    try:
        _init_schema(conn)
        query = "SELECT * FROM runs"
        params: tuple[str, ...] = ()
        if command is not None:
            query += " WHERE command = ?"
            params = (command,)
        rows = conn.execute(query + " ORDER BY run_id", params).fetchall()
        return [
            RunRecord(
                run_id=int(row["run_id"]),
                command=str(row["command"]),
                version=str(row["version"]),
                config_digest=str(row["config_digest"]),
                seed=int(row["seed"]),
                status=str(row["status"]),
                exit_code=int(row["exit_code"]),
                seconds=float(row["seconds"]),
                summary=json.loads(str(row["summary_json"])),
            )
            for row in rows
        ]
    finally:
        conn.close()


def load_artifacts(out_dir: Path, run_id: int) -> list[ArtifactRecord]:
    conn = _connect(ledger_path(out_dir))
    try:
        _init_schema(conn)
        rows = conn.execute(
            "SELECT * FROM artifacts WHERE run_id = ? ORDER BY relpath", (run_id,)
        ).fetchall()
        return [
            ArtifactRecord(
                run_id=int(row["run_id"]),
                relpath=str(row["relpath"]),
                digest=str(row["digest"]),
                size=int(row["size"]),
            )
            for row in rows
        ]
    finally:
        conn.close()
