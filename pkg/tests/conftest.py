"""Shared fixtures: a generated C-like tree with ground-truth function spans,
and a 12-bug end-to-end corpus with scenarios, playbooks and agent overlays.

The tree generator records every function's exact span as it emits lines,
which makes it an oracle for the analyzer that is independent of any
scanning logic in the package.
"""

from __future__ import annotations

import difflib
import json
import random
from dataclasses import dataclass
from pathlib import Path

import pytest
import yaml


# --- generated analyzer fixture tree -------------------------------------------

@dataclass
class TreeFixture:
    root: Path
    spans: dict[str, list[tuple[str, int, int]]]  # rel -> [(name, start, end)]
    lines: dict[str, list[str]]                   # rel -> file lines (no newline)


def generate_c_tree(root: Path, n_files: int = 20, seed: int = 7) -> TreeFixture:
    rng = random.Random(seed)
    spans: dict[str, list[tuple[str, int, int]]] = {}
    lines_by_file: dict[str, list[str]] = {}
    for fi in range(n_files):
        rel = f"sub{fi % 4}/mod_{fi:02d}.c"
        stem = f"m{fi:02d}"
        lines: list[str] = []
        file_spans: list[tuple[str, int, int]] = []
        lines.append(f"/* module {stem}: generated fixture */")
        lines.append(f"#include <core/{stem}.h>")
        lines.append(f"#define {stem.upper()}_MAX {8 + fi}")
        lines.append("")
        lines.append(f"struct {stem}_state {{")
        lines.append("    int used;")
        lines.append(f"    char tag[{stem.upper()}_MAX];")
        lines.append("};")
        lines.append("")
        for k in range(rng.randint(3, 6)):
            name = f"{stem}_op{k}"
            start = len(lines) + 1  # 1-based line of the header/name token
            lines.append(f"static int {name}(struct {stem}_state *s, int v{k}) {{")
            for b in range(rng.randint(2, 7)):
                style = rng.randrange(4)
                if style == 0:
                    lines.append(f"    s->used += v{k} + {b}; /* step {b} */")
                elif style == 1:
                    lines.append(f"    if (s->used > {b}) {{ s->used -= {b}; }}")
                elif style == 2:
                    lines.append(f'    const char *note_{b} = "brace {{ inside literal";')
                else:
                    lines.append(f"    s->tag[{b}] = 'x';")
            lines.append(f"    return s->used + {k};")
            lines.append("}")
            file_spans.append((name, start, len(lines)))
            lines.append("")
        lines.append(f"int {stem}_footer_flag = 1;")
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        spans[rel] = file_spans
        lines_by_file[rel] = lines
    return TreeFixture(root=root, spans=spans, lines=lines_by_file)


@pytest.fixture(scope="session")
def c_tree(tmp_path_factory) -> TreeFixture:
    return generate_c_tree(tmp_path_factory.mktemp("ctree"))


def span_oracle(fixture: TreeFixture, rel: str, line: int, inserted: bool = False) -> str:
    """Ground-truth function for a changed line, straight from the generator.

    For in-place/removed lines the span containment test is start<=L<=end;
    an insertion after line L lands inside a body iff start<=L<=end-1.
    """
    for name, start, end in fixture.spans[rel]:
        if inserted:
            if start <= line <= end - 1:
                return name
        elif start <= line <= end:
            return name
    return "<toplevel>"


def unified_diff_for(rel: str, old_text: str, new_text: str) -> str:
    out = difflib.unified_diff(
        old_text.splitlines(keepends=True),
        new_text.splitlines(keepends=True),
        f"a/{rel}" if old_text else "/dev/null",
        f"b/{rel}" if new_text else "/dev/null",
        lineterm="\n",
    )
    return "".join(out)


# --- 12-bug end-to-end fixture ----------------------------------------------------

E2E_TREE_FILES = {
    "net/socket.c": [
        "/* socket glue */",
        "#include <net/core.h>",
        "",
        "static int sock_open(int fd) {",
        "    int placeholder_sock_open = 0;",
        "    return placeholder_sock_open + fd;",
        "}",
        "",
        "static int sock_close(int fd) {",
        "    int placeholder_sock_close = 0;",
        "    return placeholder_sock_close - fd;",
        "}",
    ],
    "mm/alloc.c": [
        "/* allocator shims */",
        "#include <mm/base.h>",
        "",
        "static int mem_reserve(int pages) {",
        "    int placeholder_mem_reserve = 0;",
        "    return placeholder_mem_reserve + pages;",
        "}",
        "",
        "static int mem_release(int pages) {",
        "    int placeholder_mem_release = 0;",
        "    return placeholder_mem_release - pages;",
        "}",
    ],
    "fs/inode.c": [
        "/* inode cache */",
        "#include <fs/vfs.h>",
        "",
        "static int inode_lookup(int ino) {",
        "    int placeholder_inode_lookup = 0;",
        "    return placeholder_inode_lookup + ino;",
        "}",
        "",
        "static int inode_evict(int ino) {",
        "    int placeholder_inode_evict = 0;",
        "    return placeholder_inode_evict - ino;",
        "}",
    ],
    "lib/fragile.c": [
        "/* known-delicate translation unit */",
        "static int fragile_init(void) {",
        "    int placeholder_fragile_init = 0;",
        "    return placeholder_fragile_init;",
        "}",
    ],
}

# bug -> (file, function, fixed_date or None, crash_prob_unfixed)
E2E_BUGS = {
    "b01": ("net/socket.c", "sock_open", "2024-07-15", 1.0),
    "b02": ("net/socket.c", "sock_close", "2024-09-01", 1.0),
    "b03": ("mm/alloc.c", "mem_reserve", "2024-11-20", 1.0),
    "b04": ("mm/alloc.c", "mem_release", "2025-01-31", 1.0),  # boundary: before side
    "b05": ("fs/inode.c", "inode_lookup", "2025-02-10", 1.0),
    "b06": ("fs/inode.c", "inode_evict", "2025-03-05", 1.0),
    "b07": ("net/socket.c", "sock_open", "2025-04-22", 1.0),
    "b08": ("mm/alloc.c", "mem_reserve", "2025-06-01", 1.0),
    "b09": ("fs/inode.c", "inode_lookup", None, 1.0),
    "b10": ("net/socket.c", "sock_close", None, 1.0),
    "b11": ("lib/fragile.c", "fragile_init", None, 0.0),
    "b12": ("lib/fragile.c", "fragile_init", None, 0.0),
}

SUBSYSTEM_OF = {"net": "net", "mm": "mm", "fs": "fs", "lib": "lib"}
BUG_TYPES = ["use-after-free", "out-of-bounds", "deadlock", "null-deref"]


def _guard_edit(file_lines: list[str], function: str, guard: str) -> tuple[str, str, str]:
    """(anchor, replacement, new_text) inserting a guard call after the
    function's placeholder line."""
    anchor = f"    int placeholder_{function} = 0;"
    assert anchor in file_lines
    replacement = anchor + "\n" + f"    {guard}();"
    old_text = "\n".join(file_lines) + "\n"
    new_text = old_text.replace(anchor, replacement, 1)
    return anchor, replacement, new_text


@dataclass
class E2EFixture:
    root: Path
    config_path: Path
    tree: Path
    reports: Path
    expected_admitted: list[str]
    expected_rejected: list[str]


def build_e2e_fixture(root: Path, experiment: str = "demo", attempts_per_bug: int = 1) -> E2EFixture:
    tree = root / "tree"
    for rel, lines in E2E_TREE_FILES.items():
        p = tree / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join(lines) + "\n")

    reports = root / "reports"
    reports.mkdir()
    scenarios = []
    fixer_book: dict = {"default": {"edits": []}, "bugs": {}}
    for idx, (bug_id, (rel, function, fixed, p_unfixed)) in enumerate(E2E_BUGS.items()):
        guard = f"guard_bug_{bug_id[1:]}"
        doc = {
            "bug_id": bug_id,
            "title": f"crash in {function}",
            "subsystem": SUBSYSTEM_OF[rel.split("/")[0]],
            "bug_type": BUG_TYPES[idx % len(BUG_TYPES)],
            "reported_date": f"2024-0{(idx % 6) + 1}-10",
            "kernel_commit": f"commit-{bug_id}",
            "kernel_config": f"CONFIG_{bug_id.upper()}=y",
            "reproducer": f"repro program for {bug_id}",
            "crash_report": f"BUG: KASAN: crash in {function} ({bug_id})",
        }
        anchor, replacement, new_text = _guard_edit(E2E_TREE_FILES[rel], function, guard)
        if fixed is not None:
            old_text = "\n".join(E2E_TREE_FILES[rel]) + "\n"
            doc["fix"] = {
                "fixed_date": fixed,
                "fix_commit": f"fix-{bug_id}",
                "commit_message": f"{rel.split('/')[0]}: guard {function} against {bug_id}",
                "dev_patch": unified_diff_for(rel, old_text, new_text),
            }
        (reports / f"{bug_id}.json").write_text(json.dumps(doc, indent=2))

        scenarios.append(
            {
                "bug_id": bug_id,
                "crash_prob_unfixed": p_unfixed,
                "crash_prob_fixed": 0.0,
                "base_report": doc["crash_report"],
                "mutated_report": f"BUG: KASAN: shifted trace for {bug_id}",
                "compile_breaks": {"files_any": ["lib/fragile.c"]},
                "fix": {
                    "functions_all": [f"{rel}::{function}"],
                    "content_any": [f"{guard}()"],
                },
            }
        )

        # the fixer applies the developer edit; for b08 it edits the wrong
        # function in the same file, for open bugs it still lands the guard
        if bug_id in ("b11", "b12"):
            continue
        if bug_id == "b08":
            wrong_anchor, wrong_repl, _ = _guard_edit(E2E_TREE_FILES[rel], "mem_release", "guard_wrong_08")
            edits = [{"path": rel, "find": wrong_anchor, "replace": wrong_repl}]
        else:
            edits = [{"path": rel, "find": anchor, "replace": replacement}]
        entry: dict = {"edits": edits, "cost": 0.40, "llm_calls": 2}
        if bug_id == "b01":
            entry["call_crf"] = 1
        fixer_book["bugs"][bug_id] = entry

    (root / "scenarios.yaml").write_text(yaml.safe_dump(scenarios))
    (root / "fixer.json").write_text(json.dumps(fixer_book, indent=2))
    (root / "noop.json").write_text(json.dumps({"default": {"edits": [], "cost": 0.05}}))
    (root / "breaker.json").write_text(
        json.dumps(
            {"default": {"edits": [{"path": "lib/fragile.c", "append": "int breaker_was_here = 1;"}],
                          "cost": 0.10}}
        )
    )

    template = "{python} -m crashbench.agents.scripted {crash_context} {workspace}"
    config = {
        "experiment": experiment,
        "corpus": "corpus",
        "reports": "reports",
        "results": "results",
        "source_tree": "tree",
        "scenarios": "scenarios.yaml",
        "backend": "sim",
        "seed": 1234,
        "attempts_per_bug": attempts_per_bug,
        "curation_attempts": 5,
        "pool_size": 4,
        "evaluation": {"runs": 25, "votes": 9, "threshold": 5, "crf_trials": 10},
        "judge": {"kind": "identity"},
        "cutoff_date": "2025-01-31",
        "agents": [
            {
                "manifest": {
                    "agent_name": "fixer",
                    "invocation_template": template,
                    "env_vars": {"SCRIPTED_PLAYBOOK": "fixer.json"},
                },
                "model": "scripted-v1",
                "crf_enabled": True,
            },
            {
                "manifest": {
                    "agent_name": "noop",
                    "invocation_template": template,
                    "env_vars": {"SCRIPTED_PLAYBOOK": "noop.json"},
                },
                "model": "scripted-v1",
            },
            {
                "manifest": {
                    "agent_name": "breaker",
                    "invocation_template": template,
                    "env_vars": {"SCRIPTED_PLAYBOOK": "breaker.json"},
                },
                "model": "scripted-v1",
            },
        ],
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    (root / "corpus").mkdir()
    return E2EFixture(
        root=root,
        config_path=config_path,
        tree=tree,
        reports=reports,
        expected_admitted=[b for b, (_, _, _, p) in E2E_BUGS.items() if p > 0],
        expected_rejected=["b11", "b12"],
    )
