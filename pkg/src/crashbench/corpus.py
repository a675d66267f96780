"""Bug corpus: ingestion, curation, dataset statistics and time splits.

Layout on disk::

    corpus/
      blobs/<sha256>           content-addressed bodies
      <bug_id>/record.json     one canonical record per bug

Record JSON keys match the in-memory record fields; dates are ISO-8601
calendar dates (UTC, intra-day ordering is not modeled). Reproducer, kernel
config and developer patch bodies are stored as blob references.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Iterator

from . import blobs as blobmod
from .blobs import BlobStore
from .diffs import parse_unified_diff, patch_size
from .errors import (
    DiffSyntaxError,
    EmptyCorpus,
    MalformedDate,
    MalformedRecord,
    MissingField,
    UnknownBug,
)

MANDATORY_FIELDS = ("bug_id", "reported_date", "kernel_commit", "crash_report", "reproducer")
FIX_FIELDS = ("fixed_date", "fix_commit", "commit_message", "dev_patch")


@dataclass(frozen=True)
class FixRecord:
    fixed_date: date
    fix_commit: str
    commit_message: str
    dev_patch: str  # unified-diff text


@dataclass
class BugRecord:
    bug_id: str
    title: str
    subsystem: str
    bug_type: str
    reported_date: date
    kernel_commit: str
    kernel_config: str  # blob reference
    reproducer: str     # blob reference
    crash_report: str
    fix: FixRecord | None = None
    reproduction_rate: float | None = None  # set iff the bug passed curation
    extra: dict = field(default_factory=dict)  # provided-only metadata (e.g. cause bisection)

    @property
    def is_fixed(self) -> bool:
        return self.fix is not None


@dataclass(frozen=True)
class DatasetCard:
    n_bugs: int
    n_subsystems: int
    n_bug_types: int
    avg_fixed_per_month: float
    avg_gold_patch_loc: float
    avg_gold_patch_files: float
    median_days_report_to_fix: float


def _parse_date(value, field_name: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise MalformedDate(str(value), f"field {field_name}") from exc


def _as_blob_ref(value: str, store: BlobStore) -> str:
    """Store inline content; pass existing references through unchanged."""
    if blobmod.is_ref(value):
        return value
    return store.put(value)


def ingest_report(raw: dict, blob_store: BlobStore) -> BugRecord:
    """Turn one raw report document into a canonical BugRecord.

    Deterministic and idempotent: identical documents yield field-identical
    records (content-addressing makes the blob refs stable too).
    """
    for name in MANDATORY_FIELDS:
        if name not in raw or raw[name] in (None, ""):
            raise MissingField(name)

    reported = _parse_date(raw["reported_date"], "reported_date")
    fix = None
    if any(k in raw for k in FIX_FIELDS) or "fix" in raw:
        fix_doc = raw.get("fix") or {k: raw.get(k) for k in FIX_FIELDS}
        for name in FIX_FIELDS:
            if fix_doc.get(name) in (None, ""):
                raise MissingField(f"fix.{name}")
        fixed = _parse_date(fix_doc["fixed_date"], "fixed_date")
        if fixed < reported:
            raise MalformedRecord(
                f"{raw['bug_id']}: fixed_date {fixed} precedes reported_date {reported}"
            )
        dev_patch = fix_doc["dev_patch"]
        if blobmod.is_ref(dev_patch):
            dev_patch = blob_store.get_text(dev_patch)
        try:
            parse_unified_diff(dev_patch)
        except DiffSyntaxError as exc:
            raise MalformedRecord(f"{raw['bug_id']}: dev_patch does not parse: {exc}") from exc
        fix = FixRecord(
            fixed_date=fixed,
            fix_commit=str(fix_doc["fix_commit"]),
            commit_message=str(fix_doc["commit_message"]),
            dev_patch=dev_patch,
        )

    return BugRecord(
        bug_id=str(raw["bug_id"]),
        title=str(raw.get("title", "")),
        subsystem=str(raw.get("subsystem", "unknown")),
        bug_type=str(raw.get("bug_type", "unknown")),
        reported_date=reported,
        kernel_commit=str(raw["kernel_commit"]),
        kernel_config=_as_blob_ref(str(raw.get("kernel_config", "")), blob_store),
        reproducer=_as_blob_ref(str(raw["reproducer"]), blob_store),
        crash_report=str(raw["crash_report"]),
        fix=fix,
        extra=dict(raw.get("extra", {})),
    )


# --- persistence -------------------------------------------------------------

def record_to_doc(record: BugRecord, blob_store: BlobStore) -> dict:
    doc = {
        "bug_id": record.bug_id,
        "title": record.title,
        "subsystem": record.subsystem,
        "bug_type": record.bug_type,
        "reported_date": record.reported_date.isoformat(),
        "kernel_commit": record.kernel_commit,
        "kernel_config": record.kernel_config,
        "reproducer": record.reproducer,
        "crash_report": record.crash_report,
        "fix": None,
        "reproduction_rate": record.reproduction_rate,
        "extra": record.extra,
    }
    if record.fix:
        doc["fix"] = {
            "fixed_date": record.fix.fixed_date.isoformat(),
            "fix_commit": record.fix.fix_commit,
            "commit_message": record.fix.commit_message,
            "dev_patch": blob_store.put(record.fix.dev_patch),
        }
    return doc


def doc_to_record(doc: dict, blob_store: BlobStore) -> BugRecord:
    fix = None
    if doc.get("fix"):
        fd = doc["fix"]
        dev_patch = fd["dev_patch"]
        if blobmod.is_ref(dev_patch):
            dev_patch = blob_store.get_text(dev_patch)
        fix = FixRecord(
            fixed_date=_parse_date(fd["fixed_date"], "fixed_date"),
            fix_commit=fd["fix_commit"],
            commit_message=fd["commit_message"],
            dev_patch=dev_patch,
        )
    return BugRecord(
        bug_id=doc["bug_id"],
        title=doc.get("title", ""),
        subsystem=doc.get("subsystem", "unknown"),
        bug_type=doc.get("bug_type", "unknown"),
        reported_date=_parse_date(doc["reported_date"], "reported_date"),
        kernel_commit=doc["kernel_commit"],
        kernel_config=doc.get("kernel_config", ""),
        reproducer=doc["reproducer"],
        crash_report=doc["crash_report"],
        fix=fix,
        reproduction_rate=doc.get("reproduction_rate"),
        extra=dict(doc.get("extra", {})),
    )


class CorpusStore:
    """Single-writer record store; snapshots handed to readers are plain lists."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.blobs = BlobStore(self.root / "blobs")

    def save(self, record: BugRecord) -> Path:
        bug_dir = self.root / record.bug_id
        bug_dir.mkdir(parents=True, exist_ok=True)
        path = bug_dir / "record.json"
        path.write_text(json.dumps(record_to_doc(record, self.blobs), indent=2, sort_keys=True) + "\n")
        return path

    def load(self, bug_id: str) -> BugRecord:
        path = self.root / bug_id / "record.json"
        if not path.exists():
            raise UnknownBug(bug_id)
        return doc_to_record(json.loads(path.read_text()), self.blobs)

    def __contains__(self, bug_id: str) -> bool:
        return (self.root / bug_id / "record.json").exists()

    def bug_ids(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(
            p.parent.name for p in self.root.glob("*/record.json")
        )

    def load_all(self) -> list[BugRecord]:
        return [self.load(bug_id) for bug_id in self.bug_ids()]


# --- fetchers -----------------------------------------------------------------

class DirectoryFetcher:
    """Reads raw report documents (*.json) from a directory, sorted by name."""

    def __init__(self, path: Path | str):
        self.path = Path(path)

    def __iter__(self) -> Iterator[dict]:
        for doc_path in sorted(self.path.glob("*.json")):
            yield json.loads(doc_path.read_text())


class FeedFetcher:
    """Reads raw report documents from a paginated feed endpoint.

    The feed serves ``GET <url>?page=N`` returning
    ``{"reports": [...], "next_page": int | null}``. Identical content
    produces records identical to the directory fetcher's.
    """

    def __init__(self, url: str, session=None):
        self.url = url
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def __iter__(self) -> Iterator[dict]:
        page: int | None = 1
        while page is not None:
            resp = self.session.get(self.url, params={"page": page}, timeout=30)
            resp.raise_for_status()
            doc = resp.json()
            yield from doc.get("reports", [])
            page = doc.get("next_page")


# --- curation -------------------------------------------------------------------

@dataclass(frozen=True)
class CurationResult:
    bug_id: str
    admitted: bool
    observed: int
    attempts: int
    reason: str = ""

    @property
    def rate(self) -> float:
        return self.observed / self.attempts if self.attempts else 0.0


def filter_reproducible(bug: BugRecord, backend, attempts: int = 5, seed: int = 0) -> CurationResult:
    """Reproduction-based admission: run `attempts` trials on the unpatched tree.

    Admits the bug iff at least one trial reproduces the crash, recording
    reproduction_rate = observed/attempts on the record. A baseline tree that
    fails to compile rejects the bug with the reason recorded.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    from .backend import BuildJob, ReproductionJob  # local import avoids a cycle

    build = backend.submit_build(
        BuildJob(source_ref=bug.kernel_commit, patch="", config_ref=bug.kernel_config)
    ).result()
    if not build.ok:
        return CurationResult(bug.bug_id, False, 0, attempts, reason=f"baseline build failed: {build.log}")

    outcome = backend.submit_reproduction(
        ReproductionJob(
            kernel_artifact_ref=build.kernel_artifact_ref,
            reproducer_ref=bug.reproducer,
            trials=attempts,
            seed=seed,
        )
    ).result()
    observed = sum(outcome.crashes)
    admitted = observed >= 1
    if admitted:
        bug.reproduction_rate = observed / attempts
    return CurationResult(
        bug.bug_id,
        admitted,
        observed,
        attempts,
        reason="" if admitted else "crash not reproduced in any trial",
    )


# --- statistics --------------------------------------------------------------------

def _months_inclusive(first: date, last: date) -> int:
    return (last.year - first.year) * 12 + (last.month - first.month) + 1


def dataset_stats(
    corpus: Iterable[BugRecord],
    analyzer: Callable[[str], tuple[int, int]] | None = None,
) -> DatasetCard:
    """Dataset card over a corpus snapshot (order-insensitive).

    Gold-patch LoC counts added+removed lines only; monthly fix throughput
    spans the inclusive calendar months of the fixed range.
    """
    records = list(corpus)
    if not records:
        raise EmptyCorpus("dataset_stats needs a nonempty corpus")
    if analyzer is None:
        analyzer = lambda text: patch_size(parse_unified_diff(text))

    fixed = [r for r in records if r.fix is not None]
    if fixed:
        dates = [r.fix.fixed_date for r in fixed]
        months = _months_inclusive(min(dates), max(dates))
        avg_fixed_per_month = len(fixed) / months
        sizes = [analyzer(r.fix.dev_patch) for r in fixed]
        avg_loc = sum(s[0] for s in sizes) / len(sizes)
        avg_files = sum(s[1] for s in sizes) / len(sizes)
        gaps = [(r.fix.fixed_date - r.reported_date).days for r in fixed]
        median_days = float(statistics.median(gaps))
    else:
        avg_fixed_per_month = avg_loc = avg_files = median_days = 0.0

    return DatasetCard(
        n_bugs=len(records),
        n_subsystems=len({r.subsystem for r in records}),
        n_bug_types=len({r.bug_type for r in records}),
        avg_fixed_per_month=avg_fixed_per_month,
        avg_gold_patch_loc=avg_loc,
        avg_gold_patch_files=avg_files,
        median_days_report_to_fix=median_days,
    )


def split_by_cutoff(
    corpus: Iterable[BugRecord], cutoff_date: date
) -> tuple[list[BugRecord], list[BugRecord]]:
    """Partition *fixed* bugs at the cutoff; a fix dated on the cutoff day
    counts as before. Unfixed bugs belong to neither side."""
    before: list[BugRecord] = []
    after: list[BugRecord] = []
    for record in corpus:
        if record.fix is None:
            continue
        if record.fix.fixed_date <= cutoff_date:
            before.append(record)
        else:
            after.append(record)
    return before, after
