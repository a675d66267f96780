"""Execution backend abstraction: build + crash-reproduction jobs.

The interface is asynchronous by contract (real kernel jobs take tens of
minutes): `submit_*` returns a handle that callers poll or block on. The
bundled simulator resolves jobs deterministically from declarative
per-bug scenarios, so every outcome is a pure function of
(job, scenario, seed). A wire client/server pair mirrors the same job and
result types as JSON for remote deployments.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .analyzer import DiffAnalysis, extract_modified_functions, _trailer_fallback
from .diffs import Patch, parse_unified_diff
from .errors import (
    BackendUnavailable,
    DiffSyntaxError,
    MissingPrice,
    UnknownKernelArtifact,
)


def stable_seed(*parts) -> int:
    """Platform-independent 64-bit seed derived from arbitrary parts."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _unit_draw(*parts) -> float:
    """Deterministic draw in [0, 1) keyed by the given parts."""
    return stable_seed(*parts) / 2**64


# --- job and result types ------------------------------------------------------

@dataclass(frozen=True)
class BuildJob:
    source_ref: str
    patch: str  # unified-diff text; empty string builds the baseline
    config_ref: str = ""
    cache_key: str | None = None  # opaque incremental-compilation token

    def digest(self) -> str:
        doc = json.dumps(
            {"source_ref": self.source_ref, "patch": self.patch, "config_ref": self.config_ref},
            sort_keys=True,
        )
        return hashlib.sha256(doc.encode()).hexdigest()


@dataclass(frozen=True)
class BuildResult:
    ok: bool
    kernel_artifact_ref: str | None = None
    log: str = ""
    vcpu_seconds: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ReproductionJob:
    kernel_artifact_ref: str
    reproducer_ref: str
    trials: int
    seed: int


@dataclass(frozen=True)
class ReproductionOutcome:
    crashes: tuple[bool, ...]
    crash_report: str | None  # present iff >=1 crash
    vcpu_seconds: Mapping[str, float] = field(default_factory=dict)

    @property
    def any_crash(self) -> bool:
        return any(self.crashes)


class JobHandle:
    """Completed-or-pending job; simulator handles resolve eagerly."""

    def __init__(self, result=None, error: Exception | None = None):
        self._result = result
        self._error = error

    def done(self) -> bool:
        return True

    def result(self, timeout: float | None = None):
        if self._error is not None:
            raise self._error
        return self._result


# --- declarative scenarios ----------------------------------------------------------

@dataclass(frozen=True)
class RulePredicate:
    """Conjunctive rule over a patch's DiffAnalysis plus its added text.

    A predicate with no clauses matches nothing unless `always` is set;
    scenarios must state what they mean.
    """

    files_any: tuple[str, ...] = ()
    files_all: tuple[str, ...] = ()
    functions_any: tuple[str, ...] = ()
    functions_all: tuple[str, ...] = ()
    content_any: tuple[str, ...] = ()
    always: bool = False

    def matches(self, analysis: DiffAnalysis, added_text: str) -> bool:
        if self.always:
            return True
        clauses = 0
        if self.files_any:
            clauses += 1
            if not set(self.files_any) & analysis.modified_files:
                return False
        if self.files_all:
            clauses += 1
            if not set(self.files_all) <= analysis.modified_files:
                return False
        if self.functions_any:
            clauses += 1
            if not set(self.functions_any) & analysis.modified_functions:
                return False
        if self.functions_all:
            clauses += 1
            if not set(self.functions_all) <= analysis.modified_functions:
                return False
        if self.content_any:
            clauses += 1
            if not any(pat in added_text for pat in self.content_any):
                return False
        return clauses > 0

    @classmethod
    def from_doc(cls, doc: dict | None) -> "RulePredicate | None":
        if not doc:
            return None
        return cls(
            files_any=tuple(doc.get("files_any", [])),
            files_all=tuple(doc.get("files_all", [])),
            functions_any=tuple(doc.get("functions_any", [])),
            functions_all=tuple(doc.get("functions_all", [])),
            content_any=tuple(doc.get("content_any", [])),
            always=bool(doc.get("always", False)),
        )


@dataclass(frozen=True)
class SimScenario:
    bug_id: str
    crash_prob_unfixed: float = 1.0
    crash_prob_fixed: float = 0.0
    compile_predicate: RulePredicate | None = None  # matching edits break the build
    fix_predicate: RulePredicate | None = None      # matching edits count as fixed
    mutated_report: str = ""                        # trace shown when a non-empty patch still crashes
    base_report: str = ""                           # trace on the unpatched tree

    def __post_init__(self):
        for p in (self.crash_prob_unfixed, self.crash_prob_fixed):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{self.bug_id}: probability out of range: {p}")


def scenario_from_doc(doc: dict) -> SimScenario:
    return SimScenario(
        bug_id=doc["bug_id"],
        crash_prob_unfixed=float(doc.get("crash_prob_unfixed", 1.0)),
        crash_prob_fixed=float(doc.get("crash_prob_fixed", 0.0)),
        compile_predicate=RulePredicate.from_doc(doc.get("compile_breaks")),
        fix_predicate=RulePredicate.from_doc(doc.get("fix")),
        mutated_report=doc.get("mutated_report", ""),
        base_report=doc.get("base_report", ""),
    )


def load_scenarios(path: Path | str) -> dict[str, SimScenario]:
    """Load scenario documents from a file (list or single doc) or directory."""
    path = Path(path)
    docs: list[dict] = []
    if path.is_dir():
        for p in sorted(list(path.glob("*.json")) + list(path.glob("*.yaml")) + list(path.glob("*.yml"))):
            loaded = yaml.safe_load(p.read_text())
            docs.extend(loaded if isinstance(loaded, list) else [loaded])
    else:
        loaded = yaml.safe_load(path.read_text())
        docs = loaded if isinstance(loaded, list) else [loaded]
    scenarios = {}
    for doc in docs:
        scenario = scenario_from_doc(doc)
        scenarios[scenario.bug_id] = scenario
    return scenarios


# --- cost model -----------------------------------------------------------------------

@dataclass(frozen=True)
class CostProfile:
    """Constant-plus-noise vCPU time synthesis for simulated jobs."""

    builder_base: float = 545.0
    vm_base_per_trial: float = 57.6
    jitter: float = 0.10  # +/- fraction of base


# Default prices calibrated so a ~10-trial reproduction plus its build lands
# around $0.28 of vCPU time; override per deployment.
DEFAULT_PRICING: dict[str, float] = {
    "builder": 0.00025,
    "vm_manager": 0.00025,
}


def estimate_job_cost(vcpu_seconds: Mapping[str, float], pricing: Mapping[str, float]) -> float:
    """Dollar cost: sum of component vCPU seconds times per-second prices."""
    total = 0.0
    for component, seconds in vcpu_seconds.items():
        if component not in pricing:
            raise MissingPrice(component)
        total += seconds * pricing[component]
    return total


# --- simulator ---------------------------------------------------------------------------

@dataclass
class _ArtifactInfo:
    bug_id: str
    fixed: bool
    patch_empty: bool


class SimulatorBackend:
    """Deterministic desk-scale stand-in for the kernel build/boot platform.

    Bug identity is resolved from job fields: builds match scenarios through
    `source_ref` and reproductions through `reproducer_ref`, both registered
    via `register_bug`. Results are pure functions of (job, scenario, seed);
    build results are cached by job digest.
    """

    def __init__(
        self,
        scenarios: Mapping[str, SimScenario],
        source_trees: Path | Mapping[str, Path] | None = None,
        cost_profile: CostProfile = CostProfile(),
    ):
        self.scenarios = dict(scenarios)
        self.source_trees = source_trees
        self.cost_profile = cost_profile
        self._by_source_ref: dict[str, str] = {}
        self._by_reproducer: dict[str, str] = {}
        self._build_cache: dict[str, BuildResult] = {}
        self._artifacts: dict[str, _ArtifactInfo] = {}
        self._lock = threading.Lock()
        self.fail_next = 0  # tests: raise BackendUnavailable on the next N submissions
        self.reproduction_jobs = 0

    def register_bug(self, bug_id: str, source_ref: str, reproducer_ref: str) -> None:
        self._by_source_ref[source_ref] = bug_id
        self._by_reproducer[reproducer_ref] = bug_id

    # -- scenario plumbing

    def _scenario_for(self, bug_id: str) -> SimScenario:
        if bug_id not in self.scenarios:
            raise BackendUnavailable(f"no scenario for bug {bug_id}")
        return self.scenarios[bug_id]

    def _tree_for(self, bug_id: str) -> Path | None:
        if self.source_trees is None:
            return None
        if isinstance(self.source_trees, (str, Path)):
            return Path(self.source_trees)
        return self.source_trees.get(bug_id)

    def _analyze(self, patch: Patch, bug_id: str) -> DiffAnalysis:
        tree = self._tree_for(bug_id)
        if tree is not None:
            return extract_modified_functions(patch, tree)
        # no tree available: files from deltas, functions from hunk trailers
        analysis = DiffAnalysis()
        for delta in patch.files:
            analysis.modified_files.add(delta.path)
            analysis.modified_functions.update(
                f"{delta.path}::{n}" for n in _trailer_fallback(delta)
            )
        return analysis

    def _maybe_fail(self) -> None:
        with self._lock:
            if self.fail_next > 0:
                self.fail_next -= 1
                raise BackendUnavailable("simulated transient outage")

    # -- submissions

    def submit_build(self, job: BuildJob) -> JobHandle:
        self._maybe_fail()
        digest = job.digest()
        with self._lock:
            cached = self._build_cache.get(digest)
        if cached is not None:
            return JobHandle(cached)

        bug_id = self._by_source_ref.get(job.source_ref)
        if bug_id is None:
            return JobHandle(error=BackendUnavailable(f"unknown source ref {job.source_ref}"))
        scenario = self._scenario_for(bug_id)

        added_text = ""
        if job.patch.strip():
            try:
                patch = parse_unified_diff(job.patch)
            except DiffSyntaxError as exc:
                return JobHandle(error=exc)
            analysis = self._analyze(patch, bug_id)
            added_text = "\n".join(
                l[1:] for d in patch.files for h in d.hunks for l in h.lines if l[0] == "+"
            )
        else:
            patch = None
            analysis = DiffAnalysis()

        builder_s = self._synth_seconds(self.cost_profile.builder_base, "build", bug_id, digest)
        if (
            patch is not None
            and scenario.compile_predicate is not None
            and scenario.compile_predicate.matches(analysis, added_text)
        ):
            result = BuildResult(
                ok=False,
                log=f"error: patch for {bug_id} does not compile "
                f"(touched {', '.join(sorted(analysis.modified_files))})",
                vcpu_seconds={"builder": builder_s},
            )
        else:
            fixed = (
                patch is not None
                and scenario.fix_predicate is not None
                and scenario.fix_predicate.matches(analysis, added_text)
            )
            ref = f"kernel-{digest[:16]}"
            with self._lock:
                self._artifacts[ref] = _ArtifactInfo(
                    bug_id=bug_id, fixed=fixed, patch_empty=patch is None
                )
            result = BuildResult(
                ok=True, kernel_artifact_ref=ref, vcpu_seconds={"builder": builder_s}
            )
        with self._lock:
            self._build_cache[digest] = result
        return JobHandle(result)

    def submit_reproduction(self, job: ReproductionJob) -> JobHandle:
        self._maybe_fail()
        with self._lock:
            info = self._artifacts.get(job.kernel_artifact_ref)
            self.reproduction_jobs += 1
        if info is None:
            return JobHandle(error=UnknownKernelArtifact(job.kernel_artifact_ref))
        scenario = self._scenario_for(info.bug_id)
        p = scenario.crash_prob_fixed if info.fixed else scenario.crash_prob_unfixed

        crashes = tuple(
            _unit_draw(job.seed, info.bug_id, trial) < p for trial in range(job.trials)
        )
        report = None
        if any(crashes):
            if not info.patch_empty and scenario.mutated_report:
                report = scenario.mutated_report
            else:
                report = scenario.base_report or f"crash reproduced for {info.bug_id}"
        vm_s = sum(
            self._synth_seconds(
                self.cost_profile.vm_base_per_trial, "vm", info.bug_id, job.seed, trial
            )
            for trial in range(job.trials)
        )
        outcome = ReproductionOutcome(
            crashes=crashes, crash_report=report, vcpu_seconds={"vm_manager": vm_s}
        )
        return JobHandle(outcome)

    def _synth_seconds(self, base: float, *key) -> float:
        jitter = self.cost_profile.jitter
        return base * (1.0 + jitter * (2.0 * _unit_draw(*key, "cost") - 1.0))


# --- wire API -------------------------------------------------------------------------------

def _job_to_doc(job) -> dict:
    if isinstance(job, BuildJob):
        return {
            "kind": "build",
            "source_ref": job.source_ref,
            "patch": job.patch,
            "config_ref": job.config_ref,
            "cache_key": job.cache_key,
        }
    return {
        "kind": "reproduction",
        "kernel_artifact_ref": job.kernel_artifact_ref,
        "reproducer_ref": job.reproducer_ref,
        "trials": job.trials,
        "seed": job.seed,
    }


def _result_to_doc(result) -> dict:
    if isinstance(result, BuildResult):
        return {
            "kind": "build",
            "ok": result.ok,
            "kernel_artifact_ref": result.kernel_artifact_ref,
            "log": result.log,
            "vcpu_seconds": dict(result.vcpu_seconds),
        }
    return {
        "kind": "reproduction",
        "crashes": list(result.crashes),
        "crash_report": result.crash_report,
        "vcpu_seconds": dict(result.vcpu_seconds),
    }


def _result_from_doc(doc: dict):
    if doc["kind"] == "build":
        return BuildResult(
            ok=doc["ok"],
            kernel_artifact_ref=doc.get("kernel_artifact_ref"),
            log=doc.get("log", ""),
            vcpu_seconds=doc.get("vcpu_seconds", {}),
        )
    return ReproductionOutcome(
        crashes=tuple(bool(c) for c in doc["crashes"]),
        crash_report=doc.get("crash_report"),
        vcpu_seconds=doc.get("vcpu_seconds", {}),
    )


class RemoteJobHandle(JobHandle):
    def __init__(self, backend: "RemoteBackend", job_id: str):
        super().__init__()
        self.backend = backend
        self.job_id = job_id
        self._resolved = False

    def done(self) -> bool:
        if self._resolved:
            return True
        status = self.backend._poll(self.job_id)
        if status["status"] == "done":
            self._store(status)
            return True
        return False

    def _store(self, status: dict) -> None:
        if status.get("error"):
            self._error = BackendUnavailable(status["error"])
        else:
            self._result = _result_from_doc(status["result"])
        self._resolved = True

    def result(self, timeout: float | None = None):
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._resolved:
            status = self.backend._poll(self.job_id)
            if status["status"] == "done":
                self._store(status)
                break
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError(f"job {self.job_id} still pending")
            time.sleep(self.backend.poll_interval)
        return super().result()


class RemoteBackend:
    """Client for a backend served over the submit/poll/fetch wire API."""

    def __init__(self, base_url: str, poll_interval: float = 0.05, session=None):
        self.base_url = base_url.rstrip("/")
        self.poll_interval = poll_interval
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def _submit(self, job) -> JobHandle:
        try:
            resp = self.session.post(f"{self.base_url}/jobs", json=_job_to_doc(job), timeout=30)
        except Exception as exc:
            raise BackendUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise BackendUnavailable(f"submit failed: HTTP {resp.status_code}: {resp.text}")
        return RemoteJobHandle(self, resp.json()["job_id"])

    def _poll(self, job_id: str) -> dict:
        resp = self.session.get(f"{self.base_url}/jobs/{job_id}", timeout=30)
        if resp.status_code != 200:
            raise BackendUnavailable(f"poll failed: HTTP {resp.status_code}")
        return resp.json()

    def submit_build(self, job: BuildJob) -> JobHandle:
        return self._submit(job)

    def submit_reproduction(self, job: ReproductionJob) -> JobHandle:
        return self._submit(job)


def serve_backend(backend, host: str = "127.0.0.1", port: int = 0):
    """Expose any backend over the wire API; returns (server, thread).

    Call `server.shutdown()` to stop. The bound port is `server.server_port`.
    """
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    jobs: dict[str, dict] = {}
    lock = threading.Lock()
    counter = [0]

    def run_job(job_id: str, doc: dict) -> None:
        try:
            if doc["kind"] == "build":
                job = BuildJob(
                    source_ref=doc["source_ref"],
                    patch=doc["patch"],
                    config_ref=doc.get("config_ref", ""),
                    cache_key=doc.get("cache_key"),
                )
                result = backend.submit_build(job).result()
            else:
                job = ReproductionJob(
                    kernel_artifact_ref=doc["kernel_artifact_ref"],
                    reproducer_ref=doc["reproducer_ref"],
                    trials=int(doc["trials"]),
                    seed=int(doc["seed"]),
                )
                result = backend.submit_reproduction(job).result()
            payload = {"status": "done", "result": _result_to_doc(result)}
        except Exception as exc:
            payload = {"status": "done", "error": str(exc)}
        with lock:
            jobs[job_id] = payload

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # silent server
            pass

        def _send(self, code: int, doc: dict) -> None:
            body = json.dumps(doc).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            if self.path != "/jobs":
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", 0))
            doc = json.loads(self.rfile.read(length))
            with lock:
                counter[0] += 1
                job_id = f"job-{counter[0]}"
                jobs[job_id] = {"status": "pending"}
            threading.Thread(target=run_job, args=(job_id, doc), daemon=True).start()
            self._send(200, {"job_id": job_id})

        def do_GET(self):
            if not self.path.startswith("/jobs/"):
                self._send(404, {"error": "not found"})
                return
            job_id = self.path[len("/jobs/"):]
            with lock:
                payload = jobs.get(job_id)
            if payload is None:
                self._send(404, {"error": f"unknown job {job_id}"})
            else:
                self._send(200, payload)

    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
