"""Layered agent execution environments and the invocation contract.

An environment is declarative: a per-bug base layer (crash context, source
revision, feedback-tool install) plus an agent-specific overlay (install
steps, invocation command, env vars). The default driver realizes specs as
process-isolated workspaces rather than container images, which keeps the
whole loop runnable at desk scale; the layer descriptions are engine-ready
for drivers that do build images.

Invocation contract (what any agent sees):
  * argv offers the crash-context path via the `{crash_context}` placeholder
    and the workspace path via `{workspace}`; `{python}` expands to the
    hosting interpreter.
  * the workspace is a private copy of the source tree; the net edit is
    captured by snapshot diff at the end, never taken from agent output.
  * `run_kernel` is on PATH when crash-resolution feedback is enabled.
  * the agent appends trajectory events (JSON lines, `{"kind", "payload"}`)
    to $CRASHBENCH_TRAJECTORY; declared dollar costs ride in
    `payload.cost` and are summed by the invoker.
  * exit 0 means normal completion.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import string
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import BugRecord
from .diffs import diff_trees
from .errors import (
    MissingCrashReport,
    PlaceholderUnresolved,
    SandboxError,
    WorkspaceInitFailed,
)

BUILTIN_PLACEHOLDERS = {"python", "crash_context", "workspace"}
DEFAULT_TIME_LIMIT = 2 * 60 * 60  # seconds per attempt

EXIT_COMPLETED = "completed"
EXIT_TIMEOUT = "timeout"
EXIT_BUDGET = "budget_exceeded"
EXIT_CRASHED = "crashed"


@dataclass(frozen=True)
class CRFToolSpec:
    """Where the feedback tool lands and which gateway it talks to.

    `endpoint` is a logical name; the concrete gateway URL is injected at
    invocation time so cache keys stay stable across runs.
    """

    entrypoint: str = "run_kernel"
    endpoint: str = "local"


@dataclass(frozen=True)
class BaseEnvironmentSpec:
    bug_id: str
    crash_context: str
    source_ref: str
    crf_tool: CRFToolSpec = CRFToolSpec()

    @property
    def cache_key(self) -> str:
        doc = json.dumps(
            {
                "bug_id": self.bug_id,
                "source_ref": self.source_ref,
                "crash_context": self.crash_context,
                "crf_tool": [self.crf_tool.entrypoint, self.crf_tool.endpoint],
            },
            sort_keys=True,
        )
        return hashlib.sha256(doc.encode()).hexdigest()


@dataclass(frozen=True)
class AgentOverlay:
    agent_name: str
    invocation_template: str
    install_steps: tuple[str, ...] = ()
    env_vars: dict[str, str] = field(default_factory=dict, hash=False)

    def placeholders(self) -> set[str]:
        return {
            name
            for _, name, _, _ in string.Formatter().parse(self.invocation_template)
            if name
        }


@dataclass(frozen=True)
class EnvironmentSpec:
    base: BaseEnvironmentSpec
    overlay: AgentOverlay

    def to_doc(self) -> dict:
        return {
            "base": {
                "bug_id": self.base.bug_id,
                "crash_context": self.base.crash_context,
                "source_ref": self.base.source_ref,
                "crf_tool": [self.base.crf_tool.entrypoint, self.base.crf_tool.endpoint],
                "cache_key": self.base.cache_key,
            },
            "overlay": {
                "agent_name": self.overlay.agent_name,
                "install_steps": list(self.overlay.install_steps),
                "invocation_template": self.overlay.invocation_template,
                "env_vars": dict(sorted(self.overlay.env_vars.items())),
            },
        }

    def serialize(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, indent=2) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


@dataclass
class TrajectoryEvent:
    step_kind: str
    payload: dict
    ts: float

    def to_doc(self) -> dict:
        return {"kind": self.step_kind, "payload": self.payload, "ts": self.ts}


@dataclass
class AgentRunArtifact:
    bug_id: str
    agent_name: str
    attempt_index: int
    patch: str
    dollar_cost: float
    wall_time: float
    trajectory: list[TrajectoryEvent]
    exit_status: str
    stdout: str = ""
    stderr: str = ""

    @property
    def crf_calls(self) -> int:
        return sum(1 for e in self.trajectory if e.step_kind == "crf_call")


@dataclass(frozen=True)
class Limits:
    budget: float | None = None
    step_limit: int | None = None
    time_limit: float | None = DEFAULT_TIME_LIMIT


CONTEXT_SECTIONS = ("== CRASH REPORT ==", "== REPRODUCER ==", "== FEEDBACK TOOL ==")


def build_base_spec(bug: BugRecord, crf_tool: CRFToolSpec = CRFToolSpec()) -> BaseEnvironmentSpec:
    """Synthesize the per-bug base layer; deterministic, so cache keys are too."""
    if not bug.crash_report.strip():
        raise MissingCrashReport(bug.bug_id)
    context = "\n".join(
        [
            CONTEXT_SECTIONS[0],
            bug.crash_report.rstrip("\n"),
            "",
            CONTEXT_SECTIONS[1],
            f"bug: {bug.bug_id}",
            f"reproducer blob: {bug.reproducer}",
            "",
            CONTEXT_SECTIONS[2],
            f"Run `{crf_tool.entrypoint}` from anywhere inside the workspace to compile",
            "your current edit and replay the reproducer against it. It prints exactly",
            "one of:",
            "  CRASH_RESOLVED",
            "  CRASH_REPRODUCED   (followed by the new crashing stack trace)",
            "  COMPILE_ERROR      (followed by the compiler log)",
            "",
        ]
    )
    return BaseEnvironmentSpec(
        bug_id=bug.bug_id,
        crash_context=context,
        source_ref=bug.kernel_commit,
        crf_tool=crf_tool,
    )


def compose(base: BaseEnvironmentSpec, overlay: AgentOverlay) -> EnvironmentSpec:
    """Stack an agent overlay on a base layer, verifying placeholders resolve."""
    declared = BUILTIN_PLACEHOLDERS | set(overlay.env_vars)
    for name in overlay.placeholders():
        if name not in declared:
            raise PlaceholderUnresolved(name)
    return EnvironmentSpec(base=base, overlay=overlay)


def _load_trajectory(path: Path, t0: float) -> list[TrajectoryEvent]:
    events: list[TrajectoryEvent] = []
    last_ts = t0
    if path.exists():
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                events.append(TrajectoryEvent("malformed_event", {"raw": line[:200]}, last_ts))
                continue
            ts = float(doc.get("ts", last_ts))
            ts = max(ts, last_ts)  # invariant: nondecreasing
            last_ts = ts
            events.append(TrajectoryEvent(str(doc.get("kind", "event")), doc.get("payload", {}) or {}, ts))
    return events


def _sum_declared_cost(events: list[TrajectoryEvent]) -> float:
    total = 0.0
    for e in events:
        cost = e.payload.get("cost")
        if isinstance(cost, (int, float)):
            total += float(cost)
    return total


def invoke_agent(
    spec: EnvironmentSpec,
    source_tree: Path | str,
    limits: Limits = Limits(),
    attempt_index: int = 1,
    gateway_url: str | None = None,
    run_root: Path | str | None = None,
    keep_sandbox: bool = False,
) -> AgentRunArtifact:
    """Run the composed environment's agent once and collect its outputs.

    The workspace is a private copy of `source_tree` (checked out at the
    spec's source_ref by real drivers). Always returns all four outputs --
    patch, cost, time, trajectory -- even when the attempt times out; a
    step-limit or budget overrun maps to `budget_exceeded`.
    """
    source_tree = Path(source_tree)
    if not source_tree.is_dir():
        raise WorkspaceInitFailed(f"source tree missing: {source_tree}")

    sandbox = Path(tempfile.mkdtemp(prefix=f"{spec.base.bug_id}-{spec.overlay.agent_name}-",
                                    dir=str(run_root) if run_root else None))
    try:
        workspace = sandbox / "workspace"
        baseline = sandbox / "baseline"
        try:
            shutil.copytree(source_tree, workspace)
            shutil.copytree(source_tree, baseline)
        except OSError as exc:
            raise WorkspaceInitFailed(str(exc)) from exc

        context_path = sandbox / "crash_context.txt"
        context_path.write_text(spec.base.crash_context)
        trajectory_path = sandbox / "trajectory.jsonl"

        env = dict(os.environ)
        env.update(spec.overlay.env_vars)
        env["CRASHBENCH_TRAJECTORY"] = str(trajectory_path)
        env["CRASHBENCH_WORKSPACE"] = str(workspace)
        env["CRASHBENCH_BASELINE"] = str(baseline)
        env["CRASHBENCH_BUG_ID"] = spec.base.bug_id
        env["CRASHBENCH_ATTEMPT"] = str(attempt_index)

        if gateway_url:
            bin_dir = sandbox / "bin"
            bin_dir.mkdir()
            tool = bin_dir / spec.base.crf_tool.entrypoint
            tool.write_text(
                "#!/bin/sh\n"
                f'exec "{sys.executable}" -m crashbench.crf_tool "$@"\n'
            )
            tool.chmod(0o755)
            env["PATH"] = f"{bin_dir}{os.pathsep}{env.get('PATH', '')}"
            env["CRASHBENCH_GATEWAY_URL"] = gateway_url

        for step in spec.overlay.install_steps:
            proc = subprocess.run(
                ["/bin/sh", "-c", step], cwd=sandbox, env=env,
                capture_output=True, text=True, timeout=600,
            )
            if proc.returncode != 0:
                raise SandboxError(
                    f"install step failed ({step!r}): {proc.stderr.strip()[:500]}"
                )

        command = spec.overlay.invocation_template.format(
            python=sys.executable,
            crash_context=str(context_path),
            workspace=str(workspace),
            **spec.overlay.env_vars,
        )

        t0 = time.time()
        exit_status = EXIT_COMPLETED
        stdout = stderr = ""
        try:
            proc = subprocess.run(
                ["/bin/sh", "-c", command],
                cwd=workspace,
                env=env,
                capture_output=True,
                text=True,
                timeout=limits.time_limit,
            )
            stdout, stderr = proc.stdout, proc.stderr
            if proc.returncode != 0:
                exit_status = EXIT_CRASHED
        except subprocess.TimeoutExpired as exc:
            stdout = (exc.stdout or b"").decode() if isinstance(exc.stdout, bytes) else (exc.stdout or "")
            stderr = (exc.stderr or b"").decode() if isinstance(exc.stderr, bytes) else (exc.stderr or "")
            exit_status = EXIT_TIMEOUT
        except OSError as exc:
            raise SandboxError(f"failed to spawn agent: {exc}") from exc
        wall_time = time.time() - t0

        # trust boundary: the patch is what the tree says, not what the agent says
        patch = diff_trees(baseline, workspace)
        events = _load_trajectory(trajectory_path, t0)
        cost = _sum_declared_cost(events)

        agent_steps = sum(1 for e in events if e.step_kind != "invocation")
        if exit_status == EXIT_COMPLETED:
            if limits.budget is not None and cost > limits.budget:
                exit_status = EXIT_BUDGET
            elif limits.step_limit is not None and agent_steps > limits.step_limit:
                exit_status = EXIT_BUDGET

        events.append(
            TrajectoryEvent(
                "invocation",
                {"exit_status": exit_status, "wall_time": wall_time},
                t0 + wall_time,
            )
        )
        return AgentRunArtifact(
            bug_id=spec.base.bug_id,
            agent_name=spec.overlay.agent_name,
            attempt_index=attempt_index,
            patch=patch,
            dollar_cost=cost,
            wall_time=wall_time,
            trajectory=events,
            exit_status=exit_status,
            stdout=stdout,
            stderr=stderr,
        )
    finally:
        if not keep_sandbox:
            shutil.rmtree(sandbox, ignore_errors=True)


def overlay_from_doc(doc: dict) -> AgentOverlay:
    """Overlay manifest: {agent_name, invocation_template, install_steps?, env_vars?}."""
    return AgentOverlay(
        agent_name=doc["agent_name"],
        invocation_template=doc["invocation_template"],
        install_steps=tuple(doc.get("install_steps", [])),
        env_vars=dict(doc.get("env_vars", {})),
    )
