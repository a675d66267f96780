"""Experiment configuration: one declarative document drives the pipeline.

YAML (or JSON) with the following shape; CLI flags override top-level
fields. Paths are resolved relative to the config file's directory.

    experiment: demo
    corpus: corpus/
    reports: reports/            # directory fetcher; or reports_feed: <url>
    results: results/
    store: results/crashbench.db
    source_tree: tree/
    scenarios: scenarios.yaml
    backend: sim                 # sim | remote
    remote_url: null
    seed: 42
    attempts_per_bug: 1
    curation_attempts: 5
    pool_size: 4
    limits: {budget: null, step_limit: null, time_limit: 7200}
    evaluation: {runs: 25, votes: 9, threshold: 5, crf_trials: 10}
    judge: {kind: identity}
    cutoff_date: 2025-01-31
    schedule: {interval_s: 604800, jitter_s: 3600}
    agents:
      - manifest:
          agent_name: fixer
          invocation_template: "{python} -m crashbench.agents.scripted {crash_context} {workspace}"
          env_vars: {SCRIPTED_PLAYBOOK: playbook.json}
        model: scripted
        crf_enabled: true
        oracle_mode: false
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import yaml

from .environment import AgentOverlay, Limits, overlay_from_doc
from .errors import ConfigError


@dataclass
class AgentEntry:
    overlay: AgentOverlay
    model: str = ""
    crf_enabled: bool = False
    oracle_mode: bool = False


@dataclass
class ExperimentConfig:
    experiment: str
    corpus: Path
    results: Path
    store: Path
    source_tree: Path | None = None
    reports: Path | None = None
    reports_feed: str | None = None
    scenarios: Path | None = None
    backend: str = "sim"
    remote_url: str | None = None
    seed: int = 0
    attempts_per_bug: int = 1
    curation_attempts: int = 5
    pool_size: int = 4
    limits: Limits = Limits()
    runs: int = 25
    votes: int = 9
    threshold: int = 5
    crf_trials: int = 10
    judge: dict = field(default_factory=lambda: {"kind": "identity"})
    cutoff_date: date | None = None
    interval_s: float = 7 * 24 * 3600
    jitter_s: float = 3600
    agents: list[AgentEntry] = field(default_factory=list)

    def validate(self) -> None:
        if not self.experiment:
            raise ConfigError("experiment name required")
        if self.runs < 1:
            raise ConfigError(f"evaluation.runs must be >= 1, got {self.runs}")
        if self.votes % 2 == 0:
            raise ConfigError(f"evaluation.votes must be odd, got {self.votes}")
        if not self.votes >= self.threshold >= math.ceil(self.votes / 2):
            raise ConfigError(
                f"need votes >= threshold >= majority; got {self.votes}/{self.threshold}"
            )
        if self.attempts_per_bug < 1:
            raise ConfigError("attempts_per_bug must be >= 1")
        if self.backend not in ("sim", "remote"):
            raise ConfigError(f"backend must be sim or remote, got {self.backend}")
        if self.backend == "remote" and not self.remote_url:
            raise ConfigError("remote backend requires remote_url")
        if self.backend == "sim":
            if self.scenarios is None or not Path(self.scenarios).exists():
                raise ConfigError(f"scenario path missing: {self.scenarios}")
        if self.reports is not None and not Path(self.reports).exists():
            raise ConfigError(f"reports path missing: {self.reports}")
        if self.source_tree is not None and not Path(self.source_tree).exists():
            raise ConfigError(f"source tree missing: {self.source_tree}")

    def config_digest(self) -> str:
        """Digest of experiment-defining parameters; drift forces --force."""
        doc = {
            "seed": self.seed,
            "attempts_per_bug": self.attempts_per_bug,
            "curation_attempts": self.curation_attempts,
            "runs": self.runs,
            "votes": self.votes,
            "threshold": self.threshold,
            "crf_trials": self.crf_trials,
            "judge": self.judge,
            "backend": self.backend,
            "limits": [self.limits.budget, self.limits.step_limit, self.limits.time_limit],
            "agents": [
                {
                    "name": a.overlay.agent_name,
                    "template": a.overlay.invocation_template,
                    "install": list(a.overlay.install_steps),
                    "env": dict(sorted(a.overlay.env_vars.items())),
                    "model": a.model,
                    "crf": a.crf_enabled,
                    "oracle": a.oracle_mode,
                }
                for a in self.agents
            ],
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_config(path: Path | str, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = path.parent

    limits_doc = doc.get("limits", {}) or {}
    eval_doc = doc.get("evaluation", {}) or {}
    schedule_doc = doc.get("schedule", {}) or {}

    agents = []
    for entry in doc.get("agents", []) or []:
        manifest = entry.get("manifest") or entry
        overlay = overlay_from_doc(manifest)
        env_vars = {
            k: str(_resolve(base, v)) if k.endswith(("_PLAYBOOK", "_FILE", "_PATH")) else v
            for k, v in overlay.env_vars.items()
        }
        overlay = AgentOverlay(
            agent_name=overlay.agent_name,
            invocation_template=overlay.invocation_template,
            install_steps=overlay.install_steps,
            env_vars=env_vars,
        )
        agents.append(
            AgentEntry(
                overlay=overlay,
                model=str(entry.get("model", "")),
                crf_enabled=bool(entry.get("crf_enabled", False)),
                oracle_mode=bool(entry.get("oracle_mode", False)),
            )
        )

    cutoff = doc.get("cutoff_date")
    if cutoff is not None and not isinstance(cutoff, date):
        cutoff = date.fromisoformat(str(cutoff))

    judge_doc = dict(doc.get("judge", {"kind": "identity"}))
    if "criterion_file" in judge_doc:
        judge_doc["criterion_file"] = str(_resolve(base, judge_doc["criterion_file"]))

    results = _resolve(base, doc.get("results", "results"))
    config = ExperimentConfig(
        experiment=str(doc.get("experiment", "")),
        corpus=_resolve(base, doc.get("corpus", "corpus")),
        results=results,
        store=_resolve(base, doc.get("store")) or results / "crashbench.db",
        source_tree=_resolve(base, doc.get("source_tree")),
        reports=_resolve(base, doc.get("reports")),
        reports_feed=doc.get("reports_feed"),
        scenarios=_resolve(base, doc.get("scenarios")),
        backend=str(doc.get("backend", "sim")),
        remote_url=doc.get("remote_url"),
        seed=int(doc.get("seed", 0)),
        attempts_per_bug=int(doc.get("attempts_per_bug", 1)),
        curation_attempts=int(doc.get("curation_attempts", 5)),
        pool_size=int(doc.get("pool_size", 4)),
        limits=Limits(
            budget=limits_doc.get("budget"),
            step_limit=limits_doc.get("step_limit"),
            time_limit=limits_doc.get("time_limit", 7200),
        ),
        runs=int(eval_doc.get("runs", 25)),
        votes=int(eval_doc.get("votes", 9)),
        threshold=int(eval_doc.get("threshold", 5)),
        crf_trials=int(eval_doc.get("crf_trials", 10)),
        judge=judge_doc,
        cutoff_date=cutoff,
        interval_s=float(schedule_doc.get("interval_s", 7 * 24 * 3600)),
        jitter_s=float(schedule_doc.get("jitter_s", 3600)),
        agents=agents,
    )
    config.validate()
    return config
