"""Unified-diff parsing, serialization, application and tree snapshots.

The parser is strict: hunk headers must agree with hunk bodies, hunks must
be ordered and non-overlapping in old-file coordinates, and paths must be
repository-relative. Serialization normalizes headers, so a parse/serialize
round trip is stable (equal deltas, recomputed counts).
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DiffSyntaxError, PatchApplyError

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(?:\s(.*))?$")
_GIT_HEADER_RE = re.compile(r'^diff --git (?:"?a/(.*?)"?) (?:"?b/(.*?)"?)$')
_NO_NEWLINE = "\\ No newline at end of file"

# git envelope lines that carry no hunk content
_META_PREFIXES = (
    "index ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "copy from",
    "copy to",
)


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    # body lines, each normalized to marker (' ', '-', '+') plus content
    lines: tuple[str, ...]
    trailer: str = ""
    # indices into `lines` followed by a "no newline at end of file" marker
    no_newline_after: frozenset[int] = frozenset()


@dataclass(frozen=True)
class FileDelta:
    old_path: str | None
    new_path: str | None
    hunks: tuple[Hunk, ...] = ()
    is_binary: bool = False

    @property
    def path(self) -> str:
        p = self.new_path if self.new_path is not None else self.old_path
        assert p is not None
        return p

    @property
    def is_add(self) -> bool:
        return self.old_path is None

    @property
    def is_delete(self) -> bool:
        return self.new_path is None


@dataclass(frozen=True)
class Patch:
    files: tuple[FileDelta, ...]
    raw_text: str = field(default="", compare=False)

    @property
    def is_empty(self) -> bool:
        return not self.files


EMPTY_PATCH = Patch(files=())


def _normalize_path(raw: str, line_no: int) -> str | None:
    """Strip the a/|b/ convention and timestamps; None for /dev/null."""
    path = raw.split("\t", 1)[0].strip()
    if path == "/dev/null":
        return None
    if path.startswith(("a/", "b/")):
        path = path[2:]
    if path.startswith("/"):
        raise DiffSyntaxError(line_no, f"absolute path not allowed: {path}")
    parts = [p for p in path.split("/") if p not in ("", ".")]
    if ".." in parts:
        raise DiffSyntaxError(line_no, f"path escapes repository: {path}")
    if not parts:
        raise DiffSyntaxError(line_no, f"empty path: {raw!r}")
    return "/".join(parts)


def parse_unified_diff(text: str) -> Patch:
    """Parse unified-diff text (git or plain flavor) into a Patch.

    Raises DiffSyntaxError on malformed headers, count mismatches between
    hunk headers and bodies, or unordered/overlapping hunks.
    """
    if not text.strip():
        raise DiffSyntaxError(0, "empty diff text")

    lines = text.splitlines()
    deltas: list[FileDelta] = []

    i = 0
    n = len(lines)
    # per-file state carried from the git envelope to the ---/+++ headers
    pending_git: tuple[str | None, str | None] | None = None
    pending_rename: tuple[str | None, str | None] = (None, None)

    def flush_pure_rename() -> None:
        nonlocal pending_git, pending_rename
        old_r, new_r = pending_rename
        if old_r is not None and new_r is not None:
            deltas.append(FileDelta(old_path=old_r, new_path=new_r))
        pending_git = None
        pending_rename = (None, None)

    while i < n:
        line = lines[i]
        line_no = i + 1

        if line.startswith("diff --git"):
            flush_pure_rename()
            m = _GIT_HEADER_RE.match(line)
            if m:
                pending_git = (
                    _normalize_path(m.group(1), line_no),
                    _normalize_path(m.group(2), line_no),
                )
            i += 1
            continue
        if line.startswith("rename from "):
            pending_rename = (_normalize_path(line[len("rename from "):], line_no), pending_rename[1])
            i += 1
            continue
        if line.startswith("rename to "):
            pending_rename = (pending_rename[0], _normalize_path(line[len("rename to "):], line_no))
            i += 1
            continue
        if line.startswith("Binary files ") and line.endswith(" differ"):
            old_p, new_p = pending_git if pending_git else (None, None)
            if old_p is None and new_p is None:
                raise DiffSyntaxError(line_no, "binary marker without a git header")
            deltas.append(FileDelta(old_path=old_p, new_path=new_p, is_binary=True))
            pending_git = None
            pending_rename = (None, None)
            i += 1
            continue
        if line.startswith(_META_PREFIXES) or not line.strip():
            i += 1
            continue

        if line.startswith("--- "):
            if i + 1 >= n or not lines[i + 1].startswith("+++ "):
                raise DiffSyntaxError(line_no, "'---' header not followed by '+++'")
            old_path = _normalize_path(line[4:], line_no)
            new_path = _normalize_path(lines[i + 1][4:], line_no + 1)
            # a rename envelope overrides stripped header paths
            if pending_rename != (None, None):
                old_path = pending_rename[0] or old_path
                new_path = pending_rename[1] or new_path
            if old_path is None and new_path is None:
                raise DiffSyntaxError(line_no, "both sides are /dev/null")
            i += 2
            hunks, i = _parse_hunks(lines, i)
            if not hunks:
                raise DiffSyntaxError(line_no, "file header without hunks")
            _check_hunk_order(hunks, line_no)
            deltas.append(FileDelta(old_path=old_path, new_path=new_path, hunks=tuple(hunks)))
            pending_git = None
            pending_rename = (None, None)
            continue

        if line.startswith(("@@", "+", "-", " ", "\\")):
            raise DiffSyntaxError(line_no, f"content outside any file section: {line[:40]!r}")
        # anything else (mail headers, commit message) is tolerated as preamble
        i += 1

    flush_pure_rename()
    if not deltas:
        raise DiffSyntaxError(0, "no file deltas found")
    return Patch(files=tuple(deltas), raw_text=text)


def _parse_hunks(lines: list[str], i: int) -> tuple[list[Hunk], int]:
    hunks: list[Hunk] = []
    n = len(lines)
    while i < n and lines[i].startswith("@@"):
        header_no = i + 1
        m = _HUNK_RE.match(lines[i])
        if not m:
            raise DiffSyntaxError(header_no, f"malformed hunk header: {lines[i]!r}")
        old_start = int(m.group(1))
        old_len = int(m.group(2)) if m.group(2) is not None else 1
        new_start = int(m.group(3))
        new_len = int(m.group(4)) if m.group(4) is not None else 1
        trailer = m.group(5) or ""
        i += 1

        body: list[str] = []
        no_nl: set[int] = set()
        remaining_old, remaining_new = old_len, new_len
        while remaining_old > 0 or remaining_new > 0:
            if i >= n:
                raise DiffSyntaxError(header_no, "hunk body shorter than header counts")
            raw = lines[i]
            if raw == _NO_NEWLINE or raw.startswith("\\ "):
                if not body:
                    raise DiffSyntaxError(i + 1, "newline marker before any hunk line")
                no_nl.add(len(body) - 1)
                i += 1
                continue
            if raw == "":
                tag, content = " ", ""
            else:
                tag, content = raw[0], raw[1:]
            if tag == " ":
                if remaining_old <= 0 or remaining_new <= 0:
                    raise DiffSyntaxError(i + 1, "hunk body longer than header counts")
                remaining_old -= 1
                remaining_new -= 1
            elif tag == "-":
                if remaining_old <= 0:
                    raise DiffSyntaxError(i + 1, "hunk body longer than header counts")
                remaining_old -= 1
            elif tag == "+":
                if remaining_new <= 0:
                    raise DiffSyntaxError(i + 1, "hunk body longer than header counts")
                remaining_new -= 1
            else:
                raise DiffSyntaxError(i + 1, f"unexpected line in hunk body: {raw[:40]!r}")
            body.append(tag + content)
            i += 1
        # trailing no-newline marker after the final body line
        if i < n and (lines[i] == _NO_NEWLINE or lines[i].startswith("\\ ")):
            no_nl.add(len(body) - 1)
            i += 1
        if i < n and lines[i] and lines[i][0] in "+-" and not lines[i].startswith(("+++", "---")):
            raise DiffSyntaxError(i + 1, "hunk body longer than header counts")
        hunks.append(
            Hunk(old_start, old_len, new_start, new_len, tuple(body), trailer, frozenset(no_nl))
        )
    return hunks, i


def _check_hunk_order(hunks: list[Hunk], line_no: int) -> None:
    prev_end = 0
    for h in hunks:
        if h.old_start < prev_end:
            raise DiffSyntaxError(line_no, "hunks unordered or overlapping in old coordinates")
        prev_end = h.old_start + h.old_len


def serialize_patch(patch: Patch) -> str:
    """Render a Patch back to unified-diff text with normalized headers."""
    out: list[str] = []
    for delta in patch.files:
        old_label = f"a/{delta.old_path}" if delta.old_path is not None else "/dev/null"
        new_label = f"b/{delta.new_path}" if delta.new_path is not None else "/dev/null"
        renamed = (
            delta.old_path is not None
            and delta.new_path is not None
            and delta.old_path != delta.new_path
        )
        if renamed or delta.is_binary or not delta.hunks:
            ga = delta.old_path if delta.old_path is not None else delta.new_path
            gb = delta.new_path if delta.new_path is not None else delta.old_path
            out.append(f"diff --git a/{ga} b/{gb}")
            if renamed:
                out.append(f"rename from {delta.old_path}")
                out.append(f"rename to {delta.new_path}")
        if delta.is_binary:
            out.append(f"Binary files {old_label} and {new_label} differ")
            continue
        if not delta.hunks:
            continue
        out.append(f"--- {old_label}")
        out.append(f"+++ {new_label}")
        for h in delta.hunks:
            old_len = sum(1 for l in h.lines if l[0] in " -")
            new_len = sum(1 for l in h.lines if l[0] in " +")
            header = f"@@ -{h.old_start},{old_len} +{h.new_start},{new_len} @@"
            if h.trailer:
                header += f" {h.trailer}"
            out.append(header)
            for idx, l in enumerate(h.lines):
                out.append(l)
                if idx in h.no_newline_after:
                    out.append(_NO_NEWLINE)
    return "\n".join(out) + "\n" if out else ""


def patch_size(patch: Patch) -> tuple[int, int]:
    """(added+removed line count, distinct file count) of a patch."""
    loc = 0
    paths: set[str] = set()
    for delta in patch.files:
        paths.add(delta.path)
        for h in delta.hunks:
            loc += sum(1 for l in h.lines if l[0] in "+-")
    return loc, len(paths)


def changed_line_numbers(delta: FileDelta) -> tuple[list[int], list[int]]:
    """1-based positions of removed lines (old file) and added lines (new file)."""
    old_changed: list[int] = []
    new_changed: list[int] = []
    for h in delta.hunks:
        old_cur, new_cur = h.old_start, h.new_start
        for l in h.lines:
            tag = l[0]
            if tag == " ":
                old_cur += 1
                new_cur += 1
            elif tag == "-":
                old_changed.append(old_cur)
                old_cur += 1
            else:
                new_changed.append(new_cur)
                new_cur += 1
    return old_changed, new_changed


def apply_delta(old_text: str | None, delta: FileDelta) -> str | None:
    """Apply one FileDelta to the pre-image text; None result means deleted."""
    if delta.is_binary:
        raise PatchApplyError(f"cannot apply binary delta: {delta.path}")
    old_lines = old_text.splitlines() if old_text else []
    new_lines: list[str] = []
    cursor = 0  # 0-based index into old_lines
    ends_with_newline = True
    for h in delta.hunks:
        start = h.old_start - 1 if h.old_len > 0 else h.old_start
        if start < cursor or start > len(old_lines):
            raise PatchApplyError(f"hunk start out of range in {delta.path}")
        new_lines.extend(old_lines[cursor:start])
        cursor = start
        for idx, l in enumerate(h.lines):
            tag, content = l[0], l[1:]
            if tag in " -":
                if cursor >= len(old_lines) or old_lines[cursor] != content:
                    raise PatchApplyError(
                        f"context mismatch at {delta.path}:{cursor + 1}: "
                        f"expected {content!r}"
                    )
                cursor += 1
            if tag in " +":
                new_lines.append(content)
                if idx in h.no_newline_after:
                    ends_with_newline = False
    new_lines.extend(old_lines[cursor:])
    if delta.is_delete:
        if new_lines:
            raise PatchApplyError(f"delete delta leaves residual lines in {delta.path}")
        return None
    if not new_lines:
        return ""
    return "\n".join(new_lines) + ("\n" if ends_with_newline else "")


def apply_patch_to_tree(patch: Patch, root: Path | str) -> None:
    """Apply every delta to files under root (in place)."""
    root = Path(root)
    for delta in patch.files:
        src = root / delta.old_path if delta.old_path else None
        old_text = src.read_text() if src is not None and src.exists() else None
        if delta.old_path and old_text is None and not delta.is_add:
            raise PatchApplyError(f"pre-image missing: {delta.old_path}")
        new_text = apply_delta(old_text, delta)
        if delta.old_path and (delta.is_delete or delta.old_path != delta.new_path):
            if src is not None and src.exists():
                src.unlink()
        if new_text is not None and delta.new_path:
            dst = root / delta.new_path
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_text(new_text)


def _tree_files(root: Path) -> dict[str, Path]:
    files: dict[str, Path] = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.is_symlink():
            files[p.relative_to(root).as_posix()] = p
    return files


def diff_trees(old_root: Path | str, new_root: Path | str, context: int = 3) -> str:
    """Unified diff between two directory snapshots (empty string if equal).

    Files that do not decode as UTF-8 are reported as binary deltas.
    """
    old_root, new_root = Path(old_root), Path(new_root)
    old_files = _tree_files(old_root)
    new_files = _tree_files(new_root)
    out: list[str] = []
    for rel in sorted(set(old_files) | set(new_files)):
        old_p, new_p = old_files.get(rel), new_files.get(rel)
        old_data = old_p.read_bytes() if old_p else None
        new_data = new_p.read_bytes() if new_p else None
        if old_data == new_data:
            continue
        try:
            old_text = old_data.decode("utf-8") if old_data is not None else None
            new_text = new_data.decode("utf-8") if new_data is not None else None
        except UnicodeDecodeError:
            out.append(f"diff --git a/{rel} b/{rel}")
            out.append(
                f"Binary files {'a/' + rel if old_data is not None else '/dev/null'} "
                f"and {'b/' + rel if new_data is not None else '/dev/null'} differ"
            )
            continue
        from_label = f"a/{rel}" if old_text is not None else "/dev/null"
        to_label = f"b/{rel}" if new_text is not None else "/dev/null"
        old_lines = old_text.splitlines(keepends=True) if old_text else []
        new_lines = new_text.splitlines(keepends=True) if new_text else []
        chunk = list(
            difflib.unified_diff(old_lines, new_lines, from_label, to_label, n=context, lineterm="\n")
        )
        for raw in chunk:
            if raw.endswith("\n"):
                out.append(raw[:-1])
            else:
                out.append(raw)
                out.append(_NO_NEWLINE)
    return "\n".join(out) + "\n" if out else ""
