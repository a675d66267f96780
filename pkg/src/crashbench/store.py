"""Embedded result store and faceted queries behind the dashboard.

Schema (sqlite):

  bugs(bug_id PK, title, subsystem, bug_type, reported_date, kernel_commit,
       fixed_date, fix_commit, lingering_days, dev_patch_loc,
       dev_patch_files, reproduction_rate, crash_report)
  runs(experiment, bug_id, scaffold, model, attempt, crf_enabled,
       oracle_mode, cost_limit, exit_status, dollar_cost, wall_time,
       crf_calls, patch, trajectory_json,
       PK (experiment, bug_id, scaffold, attempt))
  evaluations(experiment, bug_id, scaffold, model, attempt, crash_resolved,
       compile_ok, file_iou, function_iou, equivalence, votes_eq, votes_dis,
       dollar_cost, wall_time, crf_calls, crf_enabled, oracle_mode,
       cost_limit, flags_json, PK (experiment, bug_id, scaffold, attempt))
  stages(experiment, stage, digest, completed_at, counts_json,
       PK (experiment, stage))

Writes are append-style keyed by natural identity (INSERT OR IGNORE), so
re-running a pipeline stage cannot duplicate rows. Readers see snapshot
lists; many readers and one logical writer per experiment is the intended
regime.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path
from typing import Sequence

from .corpus import BugRecord
from .diffs import parse_unified_diff, patch_size
from .environment import AgentRunArtifact
from .errors import InvalidFilter, InvalidGroupKey
from .evaluation import EvaluationRecord
from .metrics import MetricsReport, build_report, round_pct

MAX_PAGE_SIZE = 500

GROUP_KEYS = {
    "scaffold": ("scaffold",),
    "model": ("model",),
    "scaffold,model": ("scaffold", "model"),
    "config": ("scaffold", "model", "crf_enabled", "oracle_mode", "cost_limit"),
}


@dataclass
class FilterSpec:
    """Conjunctive attribute filters; unknown keys are rejected."""

    fixed_after: date | None = None
    fixed_before: date | None = None
    subsystem: list[str] | None = None
    bug_type: list[str] | None = None
    scaffold: list[str] | None = None
    model: list[str] | None = None
    crf_enabled: bool | None = None
    oracle_mode: bool | None = None
    cost_limit: float | None = None
    crash_resolved: bool | None = None
    equivalence: str | None = None
    iou_min: float | None = None
    iou_max: float | None = None

    _LIST_KEYS = {"subsystem", "bug_type", "scaffold", "model"}
    _BOOL_KEYS = {"crf_enabled", "oracle_mode", "crash_resolved"}
    _DATE_KEYS = {"fixed_after", "fixed_before"}
    _FLOAT_KEYS = {"cost_limit", "iou_min", "iou_max"}

    @classmethod
    def known_keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_query(cls, params: dict[str, list[str] | str]) -> "FilterSpec":
        spec = cls()
        for key, raw in params.items():
            if key not in cls.known_keys():
                raise InvalidFilter(key)
            values = raw if isinstance(raw, list) else [raw]
            if key in cls._LIST_KEYS:
                setattr(spec, key, values)
            elif key in cls._BOOL_KEYS:
                setattr(spec, key, values[0].lower() in ("1", "true", "yes"))
            elif key in cls._DATE_KEYS:
                try:
                    setattr(spec, key, date.fromisoformat(values[0]))
                except ValueError:
                    raise InvalidFilter(key)
            elif key in cls._FLOAT_KEYS:
                try:
                    setattr(spec, key, float(values[0]))
                except ValueError:
                    raise InvalidFilter(key)
            else:
                setattr(spec, key, values[0])
        spec.validate()
        return spec

    def validate(self) -> None:
        if (
            self.fixed_after is not None
            and self.fixed_before is not None
            and self.fixed_after > self.fixed_before
        ):
            raise InvalidFilter("fixed_after (after the end of the range)")
        if self.equivalence is not None and self.equivalence not in (
            "equivalent",
            "discrepant",
            "not_applicable",
        ):
            raise InvalidFilter("equivalence")

    def to_doc(self) -> dict:
        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            doc[f.name] = v.isoformat() if isinstance(v, date) else v
        return doc


@dataclass(frozen=True)
class LeaderboardRow:
    group: dict
    crr: float
    epr: float
    file_iou: float
    function_iou: float
    mean_cost: float
    mean_wall_time: float
    n_bugs: int

    def to_doc(self) -> dict:
        return {
            "group": self.group,
            "crr": round_pct(self.crr),
            "epr": round_pct(self.epr),
            "file_iou": round_pct(self.file_iou),
            "function_iou": round_pct(self.function_iou),
            "mean_cost": round(self.mean_cost, 4),
            "mean_wall_time": round(self.mean_wall_time, 3),
            "n_bugs": self.n_bugs,
        }


_SCHEMA = """
CREATE TABLE IF NOT EXISTS bugs (
    bug_id TEXT PRIMARY KEY,
    title TEXT, subsystem TEXT, bug_type TEXT,
    reported_date TEXT, kernel_commit TEXT,
    fixed_date TEXT, fix_commit TEXT,
    lingering_days INTEGER, dev_patch_loc INTEGER, dev_patch_files INTEGER,
    reproduction_rate REAL, crash_report TEXT
);
CREATE TABLE IF NOT EXISTS runs (
    experiment TEXT, bug_id TEXT, scaffold TEXT, model TEXT, attempt INTEGER,
    crf_enabled INTEGER, oracle_mode INTEGER, cost_limit REAL,
    exit_status TEXT, dollar_cost REAL, wall_time REAL, crf_calls INTEGER,
    patch TEXT, trajectory_json TEXT,
    PRIMARY KEY (experiment, bug_id, scaffold, attempt)
);
CREATE TABLE IF NOT EXISTS evaluations (
    experiment TEXT, bug_id TEXT, scaffold TEXT, model TEXT, attempt INTEGER,
    crash_resolved INTEGER, compile_ok INTEGER,
    file_iou REAL, function_iou REAL,
    equivalence TEXT, votes_eq INTEGER, votes_dis INTEGER,
    dollar_cost REAL, wall_time REAL, crf_calls INTEGER,
    crf_enabled INTEGER, oracle_mode INTEGER, cost_limit REAL,
    flags_json TEXT,
    PRIMARY KEY (experiment, bug_id, scaffold, attempt)
);
CREATE TABLE IF NOT EXISTS stages (
    experiment TEXT, stage TEXT, digest TEXT, completed_at TEXT, counts_json TEXT,
    PRIMARY KEY (experiment, stage)
);
"""


class ResultStore:
    def __init__(self, path: Path | str):
        self.path = str(path)
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    # --- writes -----------------------------------------------------------

    def upsert_bug(self, record: BugRecord) -> None:
        loc = files = lingering = None
        fixed_date = fix_commit = None
        if record.fix:
            fixed_date = record.fix.fixed_date.isoformat()
            fix_commit = record.fix.fix_commit
            lingering = (record.fix.fixed_date - record.reported_date).days
            loc, files = patch_size(parse_unified_diff(record.fix.dev_patch))
        with self._lock:
            self._conn.execute(
                """INSERT INTO bugs VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?)
                   ON CONFLICT(bug_id) DO UPDATE SET
                     title=excluded.title, subsystem=excluded.subsystem,
                     bug_type=excluded.bug_type, reported_date=excluded.reported_date,
                     kernel_commit=excluded.kernel_commit, fixed_date=excluded.fixed_date,
                     fix_commit=excluded.fix_commit, lingering_days=excluded.lingering_days,
                     dev_patch_loc=excluded.dev_patch_loc,
                     dev_patch_files=excluded.dev_patch_files,
                     reproduction_rate=excluded.reproduction_rate,
                     crash_report=excluded.crash_report""",
                (
                    record.bug_id, record.title, record.subsystem, record.bug_type,
                    record.reported_date.isoformat(), record.kernel_commit,
                    fixed_date, fix_commit, lingering, loc, files,
                    record.reproduction_rate, record.crash_report,
                ),
            )
            self._conn.commit()

    def insert_run(
        self,
        experiment: str,
        artifact: AgentRunArtifact,
        model: str = "",
        crf_enabled: bool = False,
        oracle_mode: bool = False,
        cost_limit: float | None = None,
    ) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR IGNORE INTO runs VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    experiment, artifact.bug_id, artifact.agent_name, model,
                    artifact.attempt_index, int(crf_enabled), int(oracle_mode),
                    cost_limit, artifact.exit_status, artifact.dollar_cost,
                    artifact.wall_time, artifact.crf_calls, artifact.patch,
                    json.dumps([e.to_doc() for e in artifact.trajectory]),
                ),
            )
            self._conn.commit()

    def insert_evaluation(
        self,
        experiment: str,
        record: EvaluationRecord,
        model: str = "",
        crf_enabled: bool = False,
        oracle_mode: bool = False,
        cost_limit: float | None = None,
    ) -> None:
        loc = record.localization
        votes = record.judge_votes or (None, None)
        with self._lock:
            self._conn.execute(
                "INSERT OR IGNORE INTO evaluations VALUES "
                "(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    experiment, record.bug_id, record.agent_name, model,
                    record.attempt_index, int(record.crash_resolved),
                    int(record.compile_ok),
                    loc.file_iou if loc else None,
                    loc.function_iou if loc else None,
                    record.equivalence, votes[0], votes[1],
                    record.dollar_cost, record.wall_time, record.crf_calls,
                    int(crf_enabled), int(oracle_mode), cost_limit,
                    json.dumps(record.flags),
                ),
            )
            self._conn.commit()

    # --- stage bookkeeping --------------------------------------------------

    def stage_state(self, experiment: str, stage: str) -> dict | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM stages WHERE experiment=? AND stage=?", (experiment, stage)
            ).fetchone()
        if row is None:
            return None
        return {
            "digest": row["digest"],
            "completed_at": row["completed_at"],
            "counts": json.loads(row["counts_json"]),
        }

    def mark_stage(self, experiment: str, stage: str, digest: str, counts: dict) -> None:
        from datetime import datetime, timezone

        with self._lock:
            self._conn.execute(
                "INSERT INTO stages VALUES (?,?,?,?,?) "
                "ON CONFLICT(experiment, stage) DO UPDATE SET "
                "digest=excluded.digest, completed_at=excluded.completed_at, "
                "counts_json=excluded.counts_json",
                (
                    experiment, stage, digest,
                    datetime.now(timezone.utc).isoformat(), json.dumps(counts),
                ),
            )
            self._conn.commit()

    def clear_stage(self, experiment: str, stage: str) -> None:
        with self._lock:
            self._conn.execute(
                "DELETE FROM stages WHERE experiment=? AND stage=?", (experiment, stage)
            )
            self._conn.commit()

    def run_keys(self, experiment: str) -> set[tuple]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT bug_id, scaffold, attempt FROM runs WHERE experiment=?", (experiment,)
            ).fetchall()
        return {tuple(r) for r in rows}

    def evaluation_keys(self, experiment: str) -> set[tuple]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT bug_id, scaffold, attempt FROM evaluations WHERE experiment=?",
                (experiment,),
            ).fetchall()
        return {tuple(r) for r in rows}

    def delete_runs(self, experiment: str) -> None:
        with self._lock:
            self._conn.execute("DELETE FROM runs WHERE experiment=?", (experiment,))
            self._conn.commit()

    def delete_evaluations(self, experiment: str) -> None:
        with self._lock:
            self._conn.execute("DELETE FROM evaluations WHERE experiment=?", (experiment,))
            self._conn.commit()

    # --- filter compilation ---------------------------------------------------

    def _bug_conditions(self, spec: FilterSpec) -> tuple[list[str], list]:
        where, args = [], []
        if spec.fixed_after is not None:
            where.append("b.fixed_date IS NOT NULL AND b.fixed_date >= ?")
            args.append(spec.fixed_after.isoformat())
        if spec.fixed_before is not None:
            where.append("b.fixed_date IS NOT NULL AND b.fixed_date <= ?")
            args.append(spec.fixed_before.isoformat())
        for key, column in (("subsystem", "b.subsystem"), ("bug_type", "b.bug_type")):
            values = getattr(spec, key)
            if values:
                where.append(f"{column} IN ({','.join('?' * len(values))})")
                args.extend(values)
        return where, args

    def _eval_conditions(self, spec: FilterSpec) -> tuple[list[str], list]:
        where, args = [], []
        for key, column in (("scaffold", "e.scaffold"), ("model", "e.model")):
            values = getattr(spec, key)
            if values:
                where.append(f"{column} IN ({','.join('?' * len(values))})")
                args.extend(values)
        if spec.crf_enabled is not None:
            where.append("e.crf_enabled = ?")
            args.append(int(spec.crf_enabled))
        if spec.oracle_mode is not None:
            where.append("e.oracle_mode = ?")
            args.append(int(spec.oracle_mode))
        if spec.cost_limit is not None:
            where.append("(e.cost_limit IS NOT NULL AND e.cost_limit <= ?)")
            args.append(spec.cost_limit)
        if spec.crash_resolved is not None:
            where.append("e.crash_resolved = ?")
            args.append(int(spec.crash_resolved))
        if spec.equivalence is not None:
            where.append("e.equivalence = ?")
            args.append(spec.equivalence)
        if spec.iou_min is not None:
            where.append("e.file_iou IS NOT NULL AND e.file_iou >= ?")
            args.append(spec.iou_min)
        if spec.iou_max is not None:
            where.append("e.file_iou IS NOT NULL AND e.file_iou <= ?")
            args.append(spec.iou_max)
        return where, args

    def _has_eval_filters(self, spec: FilterSpec) -> bool:
        return bool(self._eval_conditions(spec)[0])

    # --- queries ------------------------------------------------------------------

    def query_bugs(
        self, spec: FilterSpec, page: int = 1, page_size: int = 100
    ) -> tuple[int, list[dict]]:
        """Paged bug summaries; ordering is (fixed_date desc, bug_id asc)."""
        page_size = min(max(1, page_size), MAX_PAGE_SIZE)
        where, args = self._bug_conditions(spec)
        sql = "FROM bugs b"
        if self._has_eval_filters(spec):
            eval_where, eval_args = self._eval_conditions(spec)
            sql += (
                " WHERE EXISTS (SELECT 1 FROM evaluations e WHERE e.bug_id = b.bug_id"
                + ("" if not eval_where else " AND " + " AND ".join(eval_where))
                + ")"
            )
            args = eval_args + args
            if where:
                sql += " AND " + " AND ".join(where)
        elif where:
            sql += " WHERE " + " AND ".join(where)

        with self._lock:
            total = self._conn.execute(f"SELECT COUNT(*) {sql}", args).fetchone()[0]
            rows = self._conn.execute(
                f"SELECT b.* {sql} ORDER BY b.fixed_date IS NULL, b.fixed_date DESC, "
                f"b.bug_id ASC LIMIT ? OFFSET ?",
                args + [page_size, (page - 1) * page_size],
            ).fetchall()
        return total, [dict(r) for r in rows]

    def _eval_rows(self, spec: FilterSpec, experiment: str | None = None) -> list[sqlite3.Row]:
        bug_where, bug_args = self._bug_conditions(spec)
        eval_where, eval_args = self._eval_conditions(spec)
        where = eval_where + bug_where
        args = eval_args + bug_args
        if experiment:
            where.append("e.experiment = ?")
            args.append(experiment)
        sql = (
            "SELECT e.*, b.fixed_date, b.subsystem, b.bug_type FROM evaluations e "
            "JOIN bugs b ON b.bug_id = e.bug_id"
        )
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += " ORDER BY e.bug_id, e.scaffold, e.attempt"
        with self._lock:
            return self._conn.execute(sql, args).fetchall()

    @staticmethod
    def _row_to_record(row: sqlite3.Row) -> EvaluationRecord:
        from .analyzer import LocalizationScore

        loc = None
        if row["file_iou"] is not None:
            loc = LocalizationScore(row["file_iou"], row["function_iou"])
        votes = None
        if row["votes_eq"] is not None:
            votes = (row["votes_eq"], row["votes_dis"])
        return EvaluationRecord(
            bug_id=row["bug_id"],
            agent_name=row["scaffold"],
            attempt_index=row["attempt"],
            crash_resolved=bool(row["crash_resolved"]),
            compile_ok=bool(row["compile_ok"]),
            localization=loc,
            equivalence=row["equivalence"],
            judge_votes=votes,
            dollar_cost=row["dollar_cost"],
            wall_time=row["wall_time"],
            crf_calls=row["crf_calls"],
            flags=json.loads(row["flags_json"]),
        )

    def records(self, spec: FilterSpec, experiment: str | None = None) -> list[EvaluationRecord]:
        return [self._row_to_record(r) for r in self._eval_rows(spec, experiment)]

    def leaderboard(
        self, group_by: str, spec: FilterSpec, experiment: str | None = None
    ) -> list[LeaderboardRow]:
        """One row per group; aggregates come from the metrics module."""
        if group_by not in GROUP_KEYS:
            raise InvalidGroupKey(group_by)
        key_fields = GROUP_KEYS[group_by]
        groups: dict[tuple, list[sqlite3.Row]] = {}
        for row in self._eval_rows(spec, experiment):
            key = tuple(row[f] for f in key_fields)
            groups.setdefault(key, []).append(row)
        rows = []
        for key, members in groups.items():
            records = [self._row_to_record(r) for r in members]
            report = build_report(records)
            rows.append(
                LeaderboardRow(
                    group=dict(zip(key_fields, key)),
                    crr=report.crr_percent,
                    epr=report.epr_percent,
                    file_iou=report.file_iou_mean,
                    function_iou=report.function_iou_mean,
                    mean_cost=sum(r.dollar_cost for r in records) / len(records),
                    mean_wall_time=sum(r.wall_time for r in records) / len(records),
                    n_bugs=report.n_bugs,
                )
            )
        rows.sort(key=lambda r: (-r.crr, tuple(str(v) for v in r.group.values())))
        return rows

    def toughest_bugs(self, spec: FilterSpec, experiment: str | None = None) -> list[str]:
        """Bugs attempted in scope that no agent attempt resolved."""
        by_bug: dict[str, bool] = {}
        for row in self._eval_rows(spec, experiment):
            by_bug[row["bug_id"]] = by_bug.get(row["bug_id"], False) or bool(row["crash_resolved"])
        return sorted(bug_id for bug_id, solved in by_bug.items() if not solved)

    def metrics_report(self, spec: FilterSpec, experiment: str | None = None) -> MetricsReport:
        return build_report(self.records(spec, experiment), filters=spec.to_doc())

    def fixed_dates(self) -> dict[str, date]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT bug_id, fixed_date FROM bugs WHERE fixed_date IS NOT NULL"
            ).fetchall()
        return {r["bug_id"]: date.fromisoformat(r["fixed_date"]) for r in rows}

    def query_runs(
        self, spec: FilterSpec, bug_id: str | None = None, experiment: str | None = None
    ) -> list[dict]:
        where, args = [], []
        for key, column in (("scaffold", "r.scaffold"), ("model", "r.model")):
            values = getattr(spec, key)
            if values:
                where.append(f"{column} IN ({','.join('?' * len(values))})")
                args.extend(values)
        if bug_id:
            where.append("r.bug_id = ?")
            args.append(bug_id)
        if experiment:
            where.append("r.experiment = ?")
            args.append(experiment)
        if spec.crf_enabled is not None:
            where.append("r.crf_enabled = ?")
            args.append(int(spec.crf_enabled))
        sql = (
            "SELECT r.*, e.crash_resolved, e.equivalence, e.file_iou, e.function_iou "
            "FROM runs r LEFT JOIN evaluations e ON e.experiment = r.experiment "
            "AND e.bug_id = r.bug_id AND e.scaffold = r.scaffold AND e.attempt = r.attempt"
        )
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += " ORDER BY r.bug_id, r.scaffold, r.attempt"
        with self._lock:
            rows = self._conn.execute(sql, args).fetchall()
        out = []
        for r in rows:
            doc = dict(r)
            doc["trajectory"] = json.loads(doc.pop("trajectory_json") or "[]")
            out.append(doc)
        return out
