"""Changed-function extraction vs the generator's ground-truth spans, plus
IoU properties."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crashbench.analyzer import (
    TOPLEVEL,
    DiffAnalysis,
    localization_iou,
    scan_function_spans,
)
from crashbench.analyzer import extract_modified_functions
from crashbench.diffs import parse_unified_diff
from crashbench.errors import FileNotInTree, UnbalancedBraces

from conftest import span_oracle, unified_diff_for


def test_scanner_matches_generator_spans(c_tree):
    for rel, expected in c_tree.spans.items():
        text = (c_tree.root / rel).read_text()
        got = [(s.name, s.start_line, s.end_line) for s in scan_function_spans(text, rel)]
        assert got == expected


def test_edit_inside_function_body(c_tree):
    rel = next(iter(c_tree.spans))
    name, start, end = c_tree.spans[rel][0]
    old_text = "\n".join(c_tree.lines[rel]) + "\n"
    lines = c_tree.lines[rel][:]
    lines[start] = lines[start] + " /* touched */"  # first body line (index start == line start+1)
    diff = unified_diff_for(rel, old_text, "\n".join(lines) + "\n")
    analysis = extract_modified_functions(parse_unified_diff(diff), c_tree.root)
    assert analysis.modified_files == {rel}
    assert analysis.modified_functions == {f"{rel}::{name}"}


def test_edit_above_functions_is_toplevel(c_tree):
    rel = next(iter(c_tree.spans))
    old_text = "\n".join(c_tree.lines[rel]) + "\n"
    lines = c_tree.lines[rel][:]
    lines[2] = lines[2] + " /* bumped */"  # a #define line
    diff = unified_diff_for(rel, old_text, "\n".join(lines) + "\n")
    analysis = extract_modified_functions(parse_unified_diff(diff), c_tree.root)
    assert analysis.modified_functions == {f"{rel}::{TOPLEVEL}"}


def test_struct_body_edit_is_toplevel(c_tree):
    rel = next(iter(c_tree.spans))
    old_text = "\n".join(c_tree.lines[rel]) + "\n"
    lines = c_tree.lines[rel][:]
    assert lines[5] == "    int used;"  # inside the struct block
    lines[5] = "    long used;"
    diff = unified_diff_for(rel, old_text, "\n".join(lines) + "\n")
    analysis = extract_modified_functions(parse_unified_diff(diff), c_tree.root)
    assert analysis.modified_functions == {f"{rel}::{TOPLEVEL}"}


def random_edit_cases(c_tree, n: int, seed: int):
    """(diff_text, rel, expected function name) tuples over the fixture tree."""
    rng = random.Random(seed)
    rels = sorted(c_tree.spans)
    cases = []
    for _ in range(n):
        rel = rng.choice(rels)
        lines = c_tree.lines[rel][:]
        old_text = "\n".join(lines) + "\n"
        kind = rng.choice(["replace", "insert", "delete"])
        line_no = rng.randint(1, len(lines))
        if kind == "replace":
            lines[line_no - 1] = lines[line_no - 1] + " /* edited */"
            expected = span_oracle(c_tree, rel, line_no)
        elif kind == "insert":
            lines.insert(line_no, "    /* injected note */")
            expected = span_oracle(c_tree, rel, line_no, inserted=True)
        else:
            # deleting a header or closing-brace line would unbalance the
            # post-image; the pre-image side still names the function
            victim = lines[line_no - 1]
            if victim.rstrip().endswith("{") or victim.strip() == "}":
                lines[line_no - 1] = victim + " /* edited */"
                kind = "replace"
            else:
                del lines[line_no - 1]
            expected = span_oracle(c_tree, rel, line_no)
        new_text = "\n".join(lines) + "\n"
        cases.append((unified_diff_for(rel, old_text, new_text), rel, expected))
    return cases


def test_random_single_line_edits_match_oracle(c_tree):
    for diff, rel, expected in random_edit_cases(c_tree, 300, seed=5150):
        analysis = extract_modified_functions(parse_unified_diff(diff), c_tree.root)
        assert analysis.modified_files == {rel}
        assert analysis.modified_functions == {f"{rel}::{expected}"}, diff


def test_whole_function_deletion_named_from_preimage(c_tree):
    rel = next(iter(c_tree.spans))
    name, start, end = c_tree.spans[rel][1]
    old_lines = c_tree.lines[rel]
    new_lines = old_lines[: start - 1] + old_lines[end:]
    diff = unified_diff_for(rel, "\n".join(old_lines) + "\n", "\n".join(new_lines) + "\n")
    analysis = extract_modified_functions(parse_unified_diff(diff), c_tree.root)
    assert f"{rel}::{name}" in analysis.modified_functions


def test_file_missing_from_tree_raises(c_tree):
    diff = "--- a/notthere.c\n+++ b/notthere.c\n@@ -1,1 +1,1 @@\n-a\n+b\n"
    with pytest.raises(FileNotInTree):
        extract_modified_functions(parse_unified_diff(diff), c_tree.root)


def test_unbalanced_braces_falls_back_to_trailer(tmp_path):
    src = tmp_path / "broken.c"
    src.write_text("int f() {\n    int x = 1;\n/* missing closing brace\n")
    diff = (
        "--- a/broken.c\n"
        "+++ b/broken.c\n"
        "@@ -2,1 +2,1 @@ int f()\n"
        "-    int x = 1;\n"
        "+    int x = 2;\n"
    )
    analysis = extract_modified_functions(parse_unified_diff(diff), tmp_path)
    assert analysis.modified_functions == {"broken.c::f"}
    assert analysis.warnings


def test_unbalanced_scan_raises():
    with pytest.raises(UnbalancedBraces):
        scan_function_spans("int f() {\n  int x;\n", "f.c")


def test_pure_addition_uses_post_image(tmp_path):
    diff = (
        "--- /dev/null\n"
        "+++ b/fresh.c\n"
        "@@ -0,0 +1,3 @@\n"
        "+int newfn(void) {\n"
        "+    return 1;\n"
        "+}\n"
    )
    analysis = extract_modified_functions(parse_unified_diff(diff), tmp_path)
    assert analysis.modified_files == {"fresh.c"}
    assert analysis.modified_functions == {"fresh.c::newfn"}


def test_analysis_json_is_deterministic():
    a = DiffAnalysis(modified_files={"b.c", "a.c"}, modified_functions={"b.c::g", "a.c::f"})
    b = DiffAnalysis(modified_files={"a.c", "b.c"}, modified_functions={"a.c::f", "b.c::g"})
    assert a.to_json() == b.to_json()
    assert DiffAnalysis.from_json(a.to_json()).modified_files == a.modified_files


# --- IoU ------------------------------------------------------------------------

def test_iou_identity():
    x = DiffAnalysis(modified_files={"b"}, modified_functions={"b::f"})
    score = localization_iou(x, x)
    assert score.file_iou == 1.0 and score.function_iou == 1.0


def test_iou_enumerated_example():
    a = DiffAnalysis(modified_files={"a", "b"})
    d = DiffAnalysis(modified_files={"b", "c"})
    assert localization_iou(a, d).file_iou == pytest.approx(1 / 3)


def test_iou_empty_vs_nonempty_and_empty_convention():
    empty = DiffAnalysis()
    one = DiffAnalysis(modified_files={"a"}, modified_functions={"a::f"})
    assert localization_iou(empty, one).function_iou == 0.0
    assert localization_iou(empty, DiffAnalysis()).file_iou == 1.0
    assert localization_iou(empty, DiffAnalysis()).function_iou == 1.0


names = st.sets(st.sampled_from([f"f{i}.c" for i in range(8)]), max_size=6)


@settings(max_examples=200, deadline=None)
@given(a=names, b=names)
def test_iou_symmetry_and_bounds(a, b):
    x = DiffAnalysis(modified_files=set(a))
    y = DiffAnalysis(modified_files=set(b))
    ab = localization_iou(x, y)
    ba = localization_iou(y, x)
    assert ab.file_iou == ba.file_iou
    assert 0.0 <= ab.file_iou <= 1.0
    if a:
        assert localization_iou(x, x).file_iou == 1.0
