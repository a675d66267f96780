"""Exception types shared across the benchmark harness.

Every error that crosses a module boundary lives here so callers can catch
one family (`CrashBenchError`) or a specific failure without importing the
module that raised it.
"""

from __future__ import annotations


class CrashBenchError(Exception):
    """Base class for all harness errors."""


# --- corpus ---------------------------------------------------------------

class MissingField(CrashBenchError):
    def __init__(self, name: str):
        super().__init__(f"mandatory field missing: {name}")
        self.name = name


class MalformedDate(CrashBenchError):
    def __init__(self, value: str, detail: str = ""):
        msg = f"unparseable date: {value!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.value = value


class MalformedRecord(CrashBenchError):
    """Record violates an invariant (e.g. fix predates the report)."""


class EmptyCorpus(CrashBenchError):
    pass


class UnknownBug(CrashBenchError):
    def __init__(self, bug_id: str):
        super().__init__(f"bug not in corpus (or not curated): {bug_id}")
        self.bug_id = bug_id


# --- diff parsing / analysis ----------------------------------------------

class DiffSyntaxError(CrashBenchError):
    def __init__(self, line_no: int, detail: str):
        super().__init__(f"diff syntax error at line {line_no}: {detail}")
        self.line_no = line_no
        self.detail = detail


class PatchApplyError(CrashBenchError):
    """Hunk context does not match the file it is applied to."""


class FileNotInTree(CrashBenchError):
    def __init__(self, path: str):
        super().__init__(f"file not present in source tree: {path}")
        self.path = path


class UnbalancedBraces(CrashBenchError):
    def __init__(self, path: str):
        super().__init__(f"unbalanced braces while scanning: {path}")
        self.path = path


# --- environment / invocation ----------------------------------------------

class MissingCrashReport(CrashBenchError):
    pass


class PlaceholderUnresolved(CrashBenchError):
    def __init__(self, name: str):
        super().__init__(f"invocation template references undeclared placeholder: {{{name}}}")
        self.name = name


class WorkspaceInitFailed(CrashBenchError):
    pass


class SandboxError(CrashBenchError):
    """Driver-level failure, distinct from agent exit statuses."""


# --- execution backend ------------------------------------------------------

class BackendUnavailable(CrashBenchError):
    """Transient backend failure; callers may retry."""


class BuildFailed(CrashBenchError):
    """Baseline tree does not compile; the bug cannot be curated."""


class UnknownKernelArtifact(CrashBenchError):
    def __init__(self, ref: str):
        super().__init__(f"no built kernel artifact with ref: {ref}")
        self.ref = ref


class MissingPrice(CrashBenchError):
    def __init__(self, component: str):
        super().__init__(f"pricing table has no entry for component: {component}")
        self.component = component


# --- evaluation --------------------------------------------------------------

class JudgeUnavailable(CrashBenchError):
    """Transient judge failure; callers may retry."""


class PartialVotes(CrashBenchError):
    def __init__(self, obtained: int, wanted: int):
        super().__init__(f"only {obtained} of {wanted} judge votes obtained; verdict withheld")
        self.obtained = obtained
        self.wanted = wanted


# --- metrics -----------------------------------------------------------------

class EmptyInput(CrashBenchError):
    pass


class MixedOpenBugs(CrashBenchError):
    """Equivalence aggregation rejects record sets containing open bugs."""


class InsufficientAttempts(CrashBenchError):
    def __init__(self, bug_id: str, have: int, need: int):
        super().__init__(f"bug {bug_id} has {have} attempts, need >= {need}")
        self.bug_id = bug_id


class UndefinedMetric(CrashBenchError):
    def __init__(self, name: str):
        super().__init__(f"metric undefined (zero denominator): {name}")
        self.name = name


class EmptySide(CrashBenchError):
    def __init__(self, which: str):
        super().__init__(f"cutoff split produced an empty side: {which}")
        self.which = which


# --- query / service ----------------------------------------------------------

class InvalidFilter(CrashBenchError):
    def __init__(self, key: str):
        super().__init__(f"unknown filter key: {key}")
        self.key = key


class InvalidGroupKey(CrashBenchError):
    def __init__(self, key: str):
        super().__init__(f"unsupported leaderboard grouping: {key}")
        self.key = key


# --- pipeline -------------------------------------------------------------------

class ConfigError(CrashBenchError):
    """Experiment configuration failed validation."""


class StageFailed(CrashBenchError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
