"""Patch analysis: modified files/functions and localization overlap scores.

A function is "modified" when any changed line falls inside its body span.
Spans in C-like sources are found by matching top-level braces on the
post-image for added lines and the pre-image for removed lines; a span runs
from the line holding the function's name token through the line of its
closing brace. Changes landing outside every function (globals, macros,
struct definitions, includes) are charged to the pseudo-function
``<toplevel>`` so they still participate in function-level scores.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .diffs import FileDelta, Patch, apply_delta, changed_line_numbers
from .errors import FileNotInTree, UnbalancedBraces

TOPLEVEL = "<toplevel>"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_TRAILER_FUNC_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(")


@dataclass(frozen=True)
class FunctionSpan:
    name: str
    start_line: int  # line of the name token, 1-based
    end_line: int    # line of the matching closing brace, inclusive


@dataclass(frozen=True)
class LocalizationScore:
    file_iou: float
    function_iou: float


@dataclass
class DiffAnalysis:
    modified_files: set[str] = field(default_factory=set)
    modified_functions: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        # sorted arrays give deterministic bytes for caching
        doc = {
            "modified_files": sorted(self.modified_files),
            "modified_functions": sorted(self.modified_functions),
            "warnings": sorted(self.warnings),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DiffAnalysis":
        doc = json.loads(text)
        return cls(
            modified_files=set(doc.get("modified_files", [])),
            modified_functions=set(doc.get("modified_functions", [])),
            warnings=list(doc.get("warnings", [])),
        )


def _blank_comments_and_strings(text: str) -> str:
    """Replace comment/string interiors with spaces, preserving layout."""
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                out[i] = " "
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            out[i] = out[i + 1] = " "
            i += 2
            while i < n and not (text[i] == "*" and i + 1 < n and text[i + 1] == "/"):
                if text[i] != "\n":
                    out[i] = " "
                i += 1
            if i + 1 < n:
                out[i] = out[i + 1] = " "
                i += 2
        elif c in "\"'":
            quote = c
            i += 1
            while i < n and text[i] != quote:
                if text[i] == "\\" and i + 1 < n:
                    out[i] = " "
                    i += 1
                if text[i] != "\n":
                    out[i] = " "
                i += 1
            i += 1
        else:
            i += 1
    return "".join(out)


def scan_function_spans(text: str, path: str = "<memory>") -> list[FunctionSpan]:
    """Top-level brace matching over C-like source.

    A top-level ``{`` opens a function body iff it is directly preceded by a
    parenthesized parameter list whose opening ``(`` follows an identifier
    (the function name). Struct/enum/array-initializer braces fail that test
    and their contents stay top-level.
    """
    clean = _blank_comments_and_strings(text)
    # line number lookup: line_of[i] = 1-based line containing offset i
    line_of: list[int] = []
    ln = 1
    for ch in clean:
        line_of.append(ln)
        if ch == "\n":
            ln += 1
    line_of.append(ln)

    spans: list[FunctionSpan] = []
    depth = 0
    open_stack: list[int] = []
    current: tuple[str, int] | None = None  # (name, span start line)

    i, n = 0, len(clean)
    while i < n:
        ch = clean[i]
        if ch == "{":
            if depth == 0:
                header = _match_function_header(clean, i)
                if header is not None:
                    current = header
            depth += 1
            open_stack.append(i)
        elif ch == "}":
            if depth == 0:
                raise UnbalancedBraces(path)
            depth -= 1
            open_stack.pop()
            if depth == 0 and current is not None:
                name, start_line = current
                spans.append(FunctionSpan(name, start_line, line_of[i]))
                current = None
        i += 1
    if depth != 0:
        raise UnbalancedBraces(path)
    return spans


def _match_function_header(clean: str, brace_idx: int) -> tuple[str, int] | None:
    """If the '{' at brace_idx closes a `name(...)` header, return (name, line)."""
    j = brace_idx - 1
    while j >= 0 and clean[j] in " \t\n\r":
        j -= 1
    if j < 0 or clean[j] != ")":
        return None
    # walk back over the balanced parameter list
    depth = 0
    while j >= 0:
        if clean[j] == ")":
            depth += 1
        elif clean[j] == "(":
            depth -= 1
            if depth == 0:
                break
        j -= 1
    if j < 0:
        return None
    k = j - 1
    while k >= 0 and clean[k] in " \t\n\r":
        k -= 1
    end = k + 1
    while k >= 0 and (clean[k].isalnum() or clean[k] == "_"):
        k -= 1
    name = clean[k + 1:end]
    if not name or not _IDENT_RE.fullmatch(name):
        return None
    # reject control keywords so `if (...) {` at top level (macros) is not a function
    if name in {"if", "for", "while", "switch", "do", "else", "return", "sizeof"}:
        return None
    start_line = clean.count("\n", 0, k + 1) + 1
    return name, start_line


def functions_at_lines(spans: list[FunctionSpan], lines: list[int]) -> set[str]:
    hit: set[str] = set()
    for line in lines:
        name = TOPLEVEL
        for span in spans:
            if span.start_line <= line <= span.end_line:
                name = span.name
                break
        hit.add(name)
    return hit


def _trailer_fallback(delta: FileDelta) -> set[str]:
    """Function names from `@@ ... @@ <context>` trailers; <toplevel> otherwise."""
    names: set[str] = set()
    for h in delta.hunks:
        m = None
        for m in _TRAILER_FUNC_RE.finditer(h.trailer):
            pass  # last identifier( wins: `static int foo(` -> foo
        if m:
            names.add(m.group(1))
        else:
            names.add(TOPLEVEL)
    return names or {TOPLEVEL}


def extract_modified_functions(patch: Patch, tree: Path | str) -> DiffAnalysis:
    """Analyze a patch against the pre-image source tree.

    The tree must hold the pre-image of every touched file (nothing for pure
    additions). When a file's braces do not balance, extraction falls back to
    hunk-header trailers for that file and records a warning.
    """
    tree = Path(tree)
    analysis = DiffAnalysis()
    for delta in patch.files:
        path = delta.path
        analysis.modified_files.add(path)
        if delta.is_binary or not delta.hunks:
            continue

        old_text: str | None = None
        if delta.old_path is not None:
            src = tree / delta.old_path
            if not src.exists():
                raise FileNotInTree(delta.old_path)
            old_text = src.read_text()

        old_changed, new_changed = changed_line_numbers(delta)
        names: set[str] = set()
        try:
            if old_changed and old_text is not None:
                old_spans = scan_function_spans(old_text, delta.old_path or path)
                names |= functions_at_lines(old_spans, old_changed)
            if new_changed and not delta.is_delete:
                new_text = apply_delta(old_text, delta)
                assert new_text is not None
                new_spans = scan_function_spans(new_text, path)
                names |= functions_at_lines(new_spans, new_changed)
        except UnbalancedBraces:
            names = _trailer_fallback(delta)
            analysis.warnings.append(f"unbalanced braces in {path}; used hunk-header fallback")
        analysis.modified_functions.update(f"{path}::{n}" for n in names)
    return analysis


def _iou(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0  # perfect agreement on "nothing changed"
    union = a | b
    return len(a & b) / len(union)


def localization_iou(agent: DiffAnalysis, dev: DiffAnalysis) -> LocalizationScore:
    return LocalizationScore(
        file_iou=_iou(agent.modified_files, dev.modified_files),
        function_iou=_iou(agent.modified_functions, dev.modified_functions),
    )
