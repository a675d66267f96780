"""Thin in-environment client behind the `run_kernel` entrypoint.

Reads its wiring from the environment (set by the invoker), snapshots the
workspace's net edit, posts it to the gateway and prints the verdict in the
fixed text protocol. Any shell-capable agent can parse the first line.
"""

from __future__ import annotations

import json
import os
import sys
import time

import requests

from .diffs import diff_trees


def main(argv: list[str] | None = None) -> int:
    gateway = os.environ.get("CRASHBENCH_GATEWAY_URL")
    baseline = os.environ.get("CRASHBENCH_BASELINE")
    workspace = os.environ.get("CRASHBENCH_WORKSPACE")
    bug_id = os.environ.get("CRASHBENCH_BUG_ID")
    attempt = os.environ.get("CRASHBENCH_ATTEMPT", "1")
    if not all((gateway, baseline, workspace, bug_id)):
        print("run_kernel: environment not wired (missing CRASHBENCH_* vars)", file=sys.stderr)
        return 2

    diff = diff_trees(baseline, workspace)
    t0 = time.time()
    try:
        resp = requests.post(
            f"{gateway.rstrip('/')}/v1/run_kernel",
            json={"bug_id": bug_id, "diff": diff, "attempt": attempt},
            timeout=600,
        )
    except requests.RequestException as exc:
        print(f"run_kernel: gateway unreachable: {exc}", file=sys.stderr)
        return 2

    if resp.status_code != 200:
        # structured error, not a verdict: relay and fail
        print(f"run_kernel: {resp.text}", file=sys.stderr)
        _log_event("crf_error", {"status": resp.status_code, "wall_s": time.time() - t0})
        return 1

    doc = resp.json()
    sys.stdout.write(doc["verdict"] + "\n")
    if doc.get("payload"):
        sys.stdout.write(doc["payload"].rstrip() + "\n")
    # job_cost is infrastructure spend, kept out of the agent's dollar cost
    _log_event(
        "crf_call",
        {
            "verdict": doc["verdict"],
            "job_cost": doc.get("cost", 0.0),
            "latency_ms": doc.get("latency_ms", 0.0),
            "wall_s": time.time() - t0,
        },
    )
    return 0


def _log_event(kind: str, payload: dict) -> None:
    path = os.environ.get("CRASHBENCH_TRAJECTORY")
    if not path:
        return
    with open(path, "a") as fh:
        fh.write(json.dumps({"kind": kind, "payload": payload, "ts": time.time()}) + "\n")


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
