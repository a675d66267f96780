"""Crash-resolution feedback: the `run_kernel` protocol behind agents' edits.

One feedback call builds the caller's current edit and, when it compiles,
replays the reproducer for a configurable number of trials. Exactly one of
three verdicts comes back:

  CRASH_RESOLVED      zero trials crashed
  CRASH_REPRODUCED    at least one crash; payload is the new stack trace
  COMPILE_ERROR       the edit does not build; payload is the compiler log

The gateway is stateless over the execution backend; identical requests with
the same seed yield identical verdicts, and a failed build short-circuits
(no reproduction job is ever submitted for it).
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Mapping

from .backend import (
    DEFAULT_PRICING,
    BuildJob,
    ReproductionJob,
    estimate_job_cost,
    stable_seed,
    _unit_draw,
)
from .corpus import BugRecord
from .diffs import parse_unified_diff
from .errors import DiffSyntaxError, UnknownBug

VERDICT_RESOLVED = "CRASH_RESOLVED"
VERDICT_REPRODUCED = "CRASH_REPRODUCED"
VERDICT_COMPILE_ERROR = "COMPILE_ERROR"

DEFAULT_CRF_TRIALS = 10

# simulated wall latencies; a failed build returns far sooner than a full
# build-and-boot round (minutes vs tens of minutes on real infrastructure)
LATENCY_COMPILE_ERROR_S = 120.0
LATENCY_FULL_RUN_S = 1200.0


@dataclass(frozen=True)
class CRFRequest:
    bug_id: str
    workspace_diff: str
    attempt: str = "1"


@dataclass(frozen=True)
class CRFVerdict:
    verdict: str  # one of the three headers
    payload: str  # report or compiler log; empty for CRASH_RESOLVED
    cost: float
    latency_ms: float
    crf_trials: int

    def to_doc(self) -> dict:
        return {
            "verdict": self.verdict,
            "payload": self.payload,
            "cost": self.cost,
            "latency_ms": self.latency_ms,
            "crf_trials": self.crf_trials,
        }

    def to_text(self) -> str:
        """Tool-side text protocol: bit-exact header line, then the payload."""
        if self.payload:
            return f"{self.verdict}\n{self.payload.rstrip()}\n"
        return f"{self.verdict}\n"


@dataclass
class CRFGateway:
    backend: object
    bugs: Mapping[str, BugRecord]
    crf_trials: int = DEFAULT_CRF_TRIALS
    seed: int = 0
    pricing: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_PRICING))
    calls: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def handle_run_kernel(self, req: CRFRequest) -> CRFVerdict:
        bug = self.bugs.get(req.bug_id)
        if bug is None or bug.reproduction_rate is None:
            raise UnknownBug(req.bug_id)

        diff = req.workspace_diff
        if diff.strip():
            parse_unified_diff(diff)  # DiffSyntaxError relays as a structured error

        build = self.backend.submit_build(
            BuildJob(source_ref=bug.kernel_commit, patch=diff, config_ref=bug.kernel_config)
        ).result()

        diff_digest = hashlib.sha256(diff.encode()).hexdigest()
        jitter = 0.9 + 0.2 * _unit_draw(self.seed, req.bug_id, diff_digest, "latency")
        vcpu = dict(build.vcpu_seconds)
        if not build.ok:
            verdict = CRFVerdict(
                verdict=VERDICT_COMPILE_ERROR,
                payload=build.log,
                cost=estimate_job_cost(vcpu, self.pricing),
                latency_ms=LATENCY_COMPILE_ERROR_S * jitter * 1000.0,
                crf_trials=self.crf_trials,
            )
        else:
            outcome = self.backend.submit_reproduction(
                ReproductionJob(
                    kernel_artifact_ref=build.kernel_artifact_ref,
                    reproducer_ref=bug.reproducer,
                    trials=self.crf_trials,
                    seed=stable_seed(self.seed, "crf", req.bug_id, req.attempt, diff_digest),
                )
            ).result()
            for component, seconds in outcome.vcpu_seconds.items():
                vcpu[component] = vcpu.get(component, 0.0) + seconds
            if outcome.any_crash:
                verdict = CRFVerdict(
                    verdict=VERDICT_REPRODUCED,
                    payload=outcome.crash_report or "",
                    cost=estimate_job_cost(vcpu, self.pricing),
                    latency_ms=LATENCY_FULL_RUN_S * jitter * 1000.0,
                    crf_trials=self.crf_trials,
                )
            else:
                verdict = CRFVerdict(
                    verdict=VERDICT_RESOLVED,
                    payload="",
                    cost=estimate_job_cost(vcpu, self.pricing),
                    latency_ms=LATENCY_FULL_RUN_S * jitter * 1000.0,
                    crf_trials=self.crf_trials,
                )
        with self._lock:
            self.calls.append((req.bug_id, req.attempt, verdict.verdict))
        return verdict


def serve_gateway(gateway: CRFGateway, host: str = "127.0.0.1", port: int = 0):
    """Serve POST /v1/run_kernel; returns (server, thread). Port 0 auto-binds."""
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code: int, doc: dict) -> None:
            body = json.dumps(doc).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            if self.path != "/v1/run_kernel":
                self._send(404, {"error": {"type": "NotFound", "message": self.path}})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                doc = json.loads(self.rfile.read(length))
                req = CRFRequest(
                    bug_id=str(doc["bug_id"]),
                    workspace_diff=str(doc.get("diff", "")),
                    attempt=str(doc.get("attempt", "1")),
                )
            except (json.JSONDecodeError, KeyError) as exc:
                self._send(400, {"error": {"type": "BadRequest", "message": str(exc)}})
                return
            try:
                verdict = gateway.handle_run_kernel(req)
            except UnknownBug as exc:
                self._send(404, {"error": {"type": "UnknownBug", "message": str(exc)}})
                return
            except DiffSyntaxError as exc:
                self._send(
                    400,
                    {
                        "error": {
                            "type": "DiffSyntaxError",
                            "message": str(exc),
                            "line_no": exc.line_no,
                        }
                    },
                )
                return
            self._send(200, verdict.to_doc())

    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
