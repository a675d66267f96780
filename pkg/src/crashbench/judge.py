"""Equivalence-judge clients.

The production judge is an LLM behind this interface; the harness ships
scripted implementations so evaluation is deterministic under test. Every
vote is an independent call with no shared conversation state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .errors import JudgeUnavailable

EQUIVALENT = "equivalent"
DISCREPANT = "discrepant"

# Rigid criterion: identical structure and logic decide the vote; variable
# renames alone do not make two patches different.
DEFAULT_CRITERION = (
    "Compare the candidate patch against the developer patch. Vote 'equivalent' "
    "only when both implement the same logic with the same structure; ignore "
    "differences that are pure variable renames. Anything else -- different "
    "control flow, different guarded conditions, extra or missing behavior -- "
    "is 'discrepant'."
)


class JudgeClient:
    """One vote per call: 'equivalent' or 'discrepant'."""

    def vote(self, agent_patch: str, dev_patch: str, commit_message: str, criterion: str) -> str:
        raise NotImplementedError


@dataclass
class ConstantJudge(JudgeClient):
    answer: str = EQUIVALENT

    def vote(self, agent_patch, dev_patch, commit_message, criterion) -> str:
        return self.answer


@dataclass
class SequenceJudge(JudgeClient):
    """Plays back a fixed vote sequence, cycling when exhausted."""

    votes: list[str] = field(default_factory=list)
    _i: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def vote(self, agent_patch, dev_patch, commit_message, criterion) -> str:
        with self._lock:
            v = self.votes[self._i % len(self.votes)]
            self._i += 1
        return v


def _normalize_diff(text: str) -> str:
    """Ignore hunk headers and context so equal edits compare equal."""
    lines = []
    for line in text.splitlines():
        if line.startswith(("+++", "---", "@@", "diff ", "index ")):
            continue
        if line.startswith(("+", "-")):
            lines.append(line.rstrip())
    return "\n".join(lines)


class IdentityJudge(JudgeClient):
    """Votes equivalent iff the two patches make the same line edits."""

    def vote(self, agent_patch, dev_patch, commit_message, criterion) -> str:
        same = _normalize_diff(agent_patch) == _normalize_diff(dev_patch)
        return EQUIVALENT if same else DISCREPANT


@dataclass
class FlakyJudge(JudgeClient):
    """Raises JudgeUnavailable for the first `failures` calls, then delegates."""

    inner: JudgeClient
    failures: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def vote(self, agent_patch, dev_patch, commit_message, criterion) -> str:
        with self._lock:
            if self.failures > 0:
                self.failures -= 1
                raise JudgeUnavailable("simulated judge outage")
        return self.inner.vote(agent_patch, dev_patch, commit_message, criterion)


def judge_from_doc(doc: dict) -> JudgeClient:
    """Judge configuration: {"kind": identity|always_equivalent|always_discrepant|sequence}."""
    kind = doc.get("kind", "identity")
    if kind == "identity":
        return IdentityJudge()
    if kind == "always_equivalent":
        return ConstantJudge(EQUIVALENT)
    if kind == "always_discrepant":
        return ConstantJudge(DISCREPANT)
    if kind == "sequence":
        return SequenceJudge(list(doc["votes"]))
    raise ValueError(f"unknown judge kind: {kind}")
