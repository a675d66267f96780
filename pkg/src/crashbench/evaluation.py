"""Per-attempt evaluation: crash resolution, localization and equivalence.

Crash resolution runs a fixed number of reproduction trials (25 by default)
against the patched build and requires zero crashes -- the strict reading.
Resolution alone is necessary but not sufficient for a valid patch, and
judged equivalence is sufficient but not necessary, so the two bracket the
true fix rate rather than pin it; records carry both.

For bugs without a developer fix the evaluation stops after crash
resolution: localization is absent and equivalence is `not_applicable`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .analyzer import DiffAnalysis, LocalizationScore, extract_modified_functions, localization_iou
from .backend import BuildJob, ReproductionJob, stable_seed
from .corpus import BugRecord, FixRecord
from .diffs import parse_unified_diff
from .environment import AgentRunArtifact
from .errors import (
    BackendUnavailable,
    ConfigError,
    CrashBenchError,
    JudgeUnavailable,
    PartialVotes,
)
from .judge import DEFAULT_CRITERION, EQUIVALENT, JudgeClient

EQ_EQUIVALENT = "equivalent"
EQ_DISCREPANT = "discrepant"
EQ_NOT_APPLICABLE = "not_applicable"

DEFAULT_RUNS = 25
DEFAULT_VOTES = 9
DEFAULT_THRESHOLD = 5
RETRIES = 3


@dataclass(frozen=True)
class EvalConfig:
    runs: int = DEFAULT_RUNS
    votes: int = DEFAULT_VOTES
    threshold: int = DEFAULT_THRESHOLD
    seed: int = 0
    criterion: str = DEFAULT_CRITERION
    retry_wait: float = 0.05


@dataclass
class EvaluationRecord:
    bug_id: str
    agent_name: str
    attempt_index: int
    crash_resolved: bool
    compile_ok: bool
    localization: LocalizationScore | None = None
    equivalence: str = EQ_NOT_APPLICABLE
    judge_votes: tuple[int, int] | None = None  # (equivalent, discrepant)
    dollar_cost: float = 0.0
    wall_time: float = 0.0
    crf_calls: int = 0
    flags: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "bug_id": self.bug_id,
            "agent_name": self.agent_name,
            "attempt_index": self.attempt_index,
            "crash_resolved": self.crash_resolved,
            "compile_ok": self.compile_ok,
            "localization": (
                {"file_iou": self.localization.file_iou, "function_iou": self.localization.function_iou}
                if self.localization
                else None
            ),
            "equivalence": self.equivalence,
            "judge_votes": list(self.judge_votes) if self.judge_votes else None,
            "dollar_cost": self.dollar_cost,
            "wall_time": self.wall_time,
            "crf_calls": self.crf_calls,
            "flags": self.flags,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EvaluationRecord":
        loc = doc.get("localization")
        votes = doc.get("judge_votes")
        return cls(
            bug_id=doc["bug_id"],
            agent_name=doc["agent_name"],
            attempt_index=doc["attempt_index"],
            crash_resolved=doc["crash_resolved"],
            compile_ok=doc["compile_ok"],
            localization=LocalizationScore(loc["file_iou"], loc["function_iou"]) if loc else None,
            equivalence=doc.get("equivalence", EQ_NOT_APPLICABLE),
            judge_votes=(votes[0], votes[1]) if votes else None,
            dollar_cost=doc.get("dollar_cost", 0.0),
            wall_time=doc.get("wall_time", 0.0),
            crf_calls=doc.get("crf_calls", 0),
            flags=list(doc.get("flags", [])),
        )


def _with_retries(fn, wait: float):
    last: Exception | None = None
    for i in range(RETRIES):
        try:
            return fn()
        except (BackendUnavailable, JudgeUnavailable) as exc:
            last = exc
            time.sleep(wait * (2**i))
    assert last is not None
    raise last


def evaluate_crash_resolution(
    bug: BugRecord,
    patch_text: str,
    backend,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
    retry_wait: float = 0.05,
) -> tuple[bool, bool]:
    """(crash_resolved, compile_ok) after `runs` reproduction trials.

    A failed build is (False, False) and submits no reproduction job;
    resolution requires every single trial to come back crash-free.
    """
    build = _with_retries(
        lambda: backend.submit_build(
            BuildJob(source_ref=bug.kernel_commit, patch=patch_text, config_ref=bug.kernel_config)
        ).result(),
        retry_wait,
    )
    if not build.ok:
        return False, False
    outcome = _with_retries(
        lambda: backend.submit_reproduction(
            ReproductionJob(
                kernel_artifact_ref=build.kernel_artifact_ref,
                reproducer_ref=bug.reproducer,
                trials=runs,
                seed=seed,
            )
        ).result(),
        retry_wait,
    )
    return (not outcome.any_crash), True


def judge_equivalence(
    agent_patch: str,
    fix: FixRecord,
    judge: JudgeClient,
    votes: int = DEFAULT_VOTES,
    threshold: int = DEFAULT_THRESHOLD,
    criterion: str = DEFAULT_CRITERION,
    retry_wait: float = 0.05,
) -> tuple[str, tuple[int, int]]:
    """Majority vote over independent judge calls.

    Requires an odd vote count and a threshold that is a strict majority;
    the patch is equivalent iff at least `threshold` votes say so.
    """
    if votes % 2 == 0:
        raise ConfigError(f"vote count must be odd, got {votes}")
    if not votes >= threshold >= math.ceil(votes / 2):
        raise ConfigError(f"need votes >= threshold >= ceil(votes/2); got {votes}, {threshold}")

    equivalent_count = discrepant_count = 0
    for _ in range(votes):
        try:
            v = _with_retries(
                lambda: judge.vote(agent_patch, fix.dev_patch, fix.commit_message, criterion),
                retry_wait,
            )
        except JudgeUnavailable as exc:
            raise PartialVotes(equivalent_count + discrepant_count, votes) from exc
        if v == EQUIVALENT:
            equivalent_count += 1
        else:
            discrepant_count += 1
    verdict = EQ_EQUIVALENT if equivalent_count >= threshold else EQ_DISCREPANT
    return verdict, (equivalent_count, discrepant_count)


def evaluate_localization(agent_patch: str, fix: FixRecord, tree: Path | str) -> LocalizationScore:
    """IoU of (files, functions) modified by the agent vs the developer."""
    agent_analysis = (
        extract_modified_functions(parse_unified_diff(agent_patch), tree)
        if agent_patch.strip()
        else DiffAnalysis()
    )
    dev_analysis = extract_modified_functions(parse_unified_diff(fix.dev_patch), tree)
    return localization_iou(agent_analysis, dev_analysis)


def evaluate_attempt(
    artifact: AgentRunArtifact,
    bug: BugRecord,
    backend,
    judge: JudgeClient,
    config: EvalConfig = EvalConfig(),
    tree: Path | str | None = None,
) -> EvaluationRecord:
    """Compose the three sub-evaluations for one agent attempt.

    Sub-failures are recorded as flags on the record rather than dropped;
    the record is always produced.
    """
    if artifact.bug_id != bug.bug_id:
        raise ValueError(f"artifact {artifact.bug_id} does not belong to bug {bug.bug_id}")

    record = EvaluationRecord(
        bug_id=bug.bug_id,
        agent_name=artifact.agent_name,
        attempt_index=artifact.attempt_index,
        crash_resolved=False,
        compile_ok=False,
        dollar_cost=artifact.dollar_cost,
        wall_time=artifact.wall_time,
        crf_calls=artifact.crf_calls,
    )

    seed = stable_seed(config.seed, "eval", bug.bug_id, artifact.agent_name, artifact.attempt_index)
    try:
        record.crash_resolved, record.compile_ok = evaluate_crash_resolution(
            bug, artifact.patch, backend, runs=config.runs, seed=seed, retry_wait=config.retry_wait
        )
    except CrashBenchError as exc:
        record.flags.append(f"crash_resolution_failed:{exc}")

    if bug.fix is None:
        return record  # open bug: the evaluation stops here

    try:
        if tree is None:
            raise ValueError("source tree required to localize against a fixed bug")
        record.localization = evaluate_localization(artifact.patch, bug.fix, tree)
    except (CrashBenchError, ValueError) as exc:
        record.flags.append(f"localization_failed:{exc}")

    try:
        record.equivalence, record.judge_votes = judge_equivalence(
            artifact.patch,
            bug.fix,
            judge,
            votes=config.votes,
            threshold=config.threshold,
            criterion=config.criterion,
            retry_wait=config.retry_wait,
        )
    except PartialVotes as exc:
        record.equivalence = EQ_NOT_APPLICABLE
        record.flags.append(f"partial_votes:{exc.obtained}/{votes_total(config)}")
    return record


def votes_total(config: EvalConfig) -> int:
    return config.votes


# --- persistence ---------------------------------------------------------------

def record_path(results_root: Path | str, experiment: str, record: EvaluationRecord) -> Path:
    return (
        Path(results_root)
        / experiment
        / record.bug_id
        / record.agent_name
        / f"{record.attempt_index}.json"
    )


def persist_record(results_root: Path | str, experiment: str, record: EvaluationRecord) -> Path:
    """Write the record exactly once; an existing file wins (idempotent rerun)."""
    path = record_path(results_root, experiment, record)
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record.to_doc(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)
    return path


def load_records(results_root: Path | str, experiment: str) -> list[EvaluationRecord]:
    root = Path(results_root) / experiment
    records = []
    for path in sorted(root.glob("*/*/*.json")):
        records.append(EvaluationRecord.from_doc(json.loads(path.read_text())))
    return records
