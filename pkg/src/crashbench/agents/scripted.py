"""Scripted reference agent for tests and demos.

Honors the standard invocation contract (crash-context path as argv[1],
workspace path as argv[2], `run_kernel` on PATH) and takes its editing
instructions from a JSON playbook instead of a model:

    {
      "default": { ...entry... },
      "bugs": { "<bug_id>": { ...entry... } }
    }

entry fields:
    edits:      list of edit ops applied to the workspace, each one of
                  {"path", "find", "replace"}   first-occurrence substitution
                  {"path", "append": "line"}    append a line
                  {"path", "create": "content"} write a new file
                  {"path", "delete_file": true}
    cost:       total dollars to declare across llm_call events (default 0)
    llm_calls:  how many llm_call events to emit (default 1)
    call_crf:   how many times to invoke run_kernel after editing (default 0)
    exit_code:  process exit code (default 0)
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import sys
import time
from pathlib import Path


def _bug_id_from_context(context_text: str) -> str | None:
    m = re.search(r"^bug: (\S+)$", context_text, re.MULTILINE)
    return m.group(1) if m else None


def _log(kind: str, payload: dict) -> None:
    path = os.environ.get("CRASHBENCH_TRAJECTORY")
    if not path:
        return
    with open(path, "a") as fh:
        fh.write(json.dumps({"kind": kind, "payload": payload, "ts": time.time()}) + "\n")


def _apply_edit(workspace: Path, edit: dict) -> None:
    target = workspace / edit["path"]
    if edit.get("delete_file"):
        if target.exists():
            target.unlink()
        return
    if "create" in edit:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(edit["create"])
        return
    if "append" in edit:
        text = target.read_text() if target.exists() else ""
        if text and not text.endswith("\n"):
            text += "\n"
        target.write_text(text + edit["append"].rstrip("\n") + "\n")
        return
    if "find" in edit:
        text = target.read_text()
        if edit["find"] not in text:
            raise SystemExit(f"scripted edit: {edit['find']!r} not found in {edit['path']}")
        target.write_text(text.replace(edit["find"], edit["replace"], 1))
        return
    raise SystemExit(f"scripted edit: unrecognized op {edit}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) < 2:
        print("usage: scripted <crash_context> <workspace>", file=sys.stderr)
        return 2
    context_path, workspace = Path(argv[0]), Path(argv[1])

    playbook_path = os.environ.get("SCRIPTED_PLAYBOOK")
    playbook = json.loads(Path(playbook_path).read_text()) if playbook_path else {}

    bug_id = os.environ.get("CRASHBENCH_BUG_ID") or _bug_id_from_context(context_path.read_text())
    entry = playbook.get("bugs", {}).get(bug_id, playbook.get("default", {}))

    llm_calls = max(1, int(entry.get("llm_calls", 1)))
    per_call = float(entry.get("cost", 0.0)) / llm_calls
    for i in range(llm_calls):
        _log("llm_call", {"cost": per_call, "index": i})

    for edit in entry.get("edits", []):
        _apply_edit(workspace, edit)
        _log("edit", {"path": edit.get("path")})

    for _ in range(int(entry.get("call_crf", 0))):
        proc = subprocess.run(
            ["run_kernel"], capture_output=True, text=True, cwd=workspace
        )
        header = proc.stdout.splitlines()[0] if proc.stdout else "NO_OUTPUT"
        _log("crf_observed", {"header": header, "rc": proc.returncode})

    return int(entry.get("exit_code", 0))


if __name__ == "__main__":
    sys.exit(main())
