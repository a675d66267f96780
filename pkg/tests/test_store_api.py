"""Result store queries, leaderboard/metrics agreement, and the HTTP API."""

from __future__ import annotations

import random
from datetime import date

import pytest
from fastapi.testclient import TestClient

from crashbench.analyzer import LocalizationScore
from crashbench.api import create_app
from crashbench.blobs import BlobStore
from crashbench.corpus import ingest_report
from crashbench.errors import InvalidFilter, InvalidGroupKey
from crashbench.evaluation import EvaluationRecord
from crashbench.metrics import build_report, round_pct
from crashbench.store import FilterSpec, ResultStore

from test_corpus import raw_doc


def seeded_store(tmp_path, n_bugs=10) -> ResultStore:
    store = ResultStore(tmp_path / "store.db")
    blobs = BlobStore(tmp_path / "blobs")
    rng = random.Random(31)
    subsystems = ["net", "mm", "fs"]
    types = ["use-after-free", "out-of-bounds", "deadlock"]
    for i in range(n_bugs):
        doc = raw_doc(bug_id=f"b{i:02d}", reported_date="2024-01-01")
        doc["subsystem"] = subsystems[i % 3]
        doc["bug_type"] = types[i % 3]
        if i >= 8:  # two open bugs
            del doc["fix"]
        else:
            doc["fix"]["fixed_date"] = (
                f"2024-{(i % 4) + 6:02d}-15" if i < 4 else f"2025-{(i % 4) + 1:02d}-15"
            )
        bug = ingest_report(doc, blobs)
        bug.reproduction_rate = 1.0
        store.upsert_bug(bug)
        for scaffold, resolves in (("alpha", i % 2 == 0), ("beta", i % 3 == 0)):
            fixed = i < 8
            store.insert_evaluation(
                "exp1",
                EvaluationRecord(
                    bug_id=bug.bug_id,
                    agent_name=scaffold,
                    attempt_index=1,
                    crash_resolved=resolves,
                    compile_ok=True,
                    localization=LocalizationScore(rng.random(), rng.random()) if fixed else None,
                    equivalence=("equivalent" if resolves and i % 4 == 0 else "discrepant")
                    if fixed
                    else "not_applicable",
                    judge_votes=(9, 0) if fixed else None,
                    dollar_cost=0.5,
                    wall_time=2.0,
                ),
                model="m1" if scaffold == "alpha" else "m2",
                crf_enabled=scaffold == "alpha",
            )
    return store


def test_query_bugs_empty_filter_returns_all(tmp_path):
    store = seeded_store(tmp_path)
    total, items = store.query_bugs(FilterSpec())
    assert total == 10
    assert len(items) == 10


def test_query_bugs_by_type(tmp_path):
    store = seeded_store(tmp_path)
    spec = FilterSpec.from_query({"bug_type": ["use-after-free"]})
    total, items = store.query_bugs(spec)
    assert total == 4  # i % 3 == 0 -> b00, b03, b06, b09
    assert all(item["bug_type"] == "use-after-free" for item in items)


def test_query_bugs_before_earliest_fix_is_empty(tmp_path):
    store = seeded_store(tmp_path)
    spec = FilterSpec.from_query({"fixed_before": "2000-01-01"})
    total, items = store.query_bugs(spec)
    assert total == 0 and items == []


def test_query_bugs_ordering_and_pagination_complete(tmp_path):
    store = seeded_store(tmp_path)
    total, all_items = store.query_bugs(FilterSpec(), page=1, page_size=500)
    pages = []
    for page in range(1, 6):
        _, items = store.query_bugs(FilterSpec(), page=page, page_size=3)
        pages.extend(items)
        if len(pages) >= total:
            break
    assert [i["bug_id"] for i in pages] == [i["bug_id"] for i in all_items]
    assert len({i["bug_id"] for i in pages}) == total


def test_unknown_filter_key_rejected():
    with pytest.raises(InvalidFilter):
        FilterSpec.from_query({"flavor": ["spicy"]})


def test_misordered_date_range_rejected():
    with pytest.raises(InvalidFilter):
        FilterSpec.from_query({"fixed_after": "2025-01-01", "fixed_before": "2024-01-01"})


def test_filter_conjunctivity(tmp_path):
    store = seeded_store(tmp_path)
    both = FilterSpec.from_query({"subsystem": ["net"], "crash_resolved": ["true"]})
    only_sub = FilterSpec.from_query({"subsystem": ["net"]})
    only_res = FilterSpec.from_query({"crash_resolved": ["true"]})
    ids = lambda spec: {r.bug_id + r.agent_name + str(r.attempt_index) for r in store.records(spec)}
    assert ids(both) == ids(only_sub) & ids(only_res)


def test_leaderboard_agrees_with_metrics_module(tmp_path):
    store = seeded_store(tmp_path)
    rows = store.leaderboard("scaffold", FilterSpec())
    assert len(rows) == 2
    for row in rows:
        group_records = store.records(FilterSpec(scaffold=[row.group["scaffold"]]))
        report = build_report(group_records)
        assert row.crr == report.crr_percent
        assert row.epr == report.epr_percent
        assert row.n_bugs == report.n_bugs
    # deterministic row order by CRR desc
    assert rows[0].crr >= rows[1].crr


def test_leaderboard_group_keys(tmp_path):
    store = seeded_store(tmp_path)
    assert len(store.leaderboard("scaffold,model", FilterSpec())) == 2
    assert len(store.leaderboard("config", FilterSpec())) == 2
    with pytest.raises(InvalidGroupKey):
        store.leaderboard("nonsense", FilterSpec())


def test_leaderboard_empty_scope(tmp_path):
    store = seeded_store(tmp_path)
    rows = store.leaderboard("scaffold", FilterSpec(scaffold=["ghost"]))
    assert rows == []


def test_toughest_bugs(tmp_path):
    store = seeded_store(tmp_path)
    tough = store.toughest_bugs(FilterSpec())
    # alpha solves evens, beta solves multiples of 3: unsolved = odd non-multiples of 3
    expected = {f"b{i:02d}" for i in range(10) if i % 2 and i % 3}
    assert set(tough) == expected


def test_toughest_respects_scope(tmp_path):
    store = seeded_store(tmp_path)
    tough_beta = store.toughest_bugs(FilterSpec(scaffold=["beta"]))
    assert set(tough_beta) == {f"b{i:02d}" for i in range(10) if i % 3}


def test_all_solved_gives_empty_toughest(tmp_path):
    store = seeded_store(tmp_path)
    solved = store.toughest_bugs(FilterSpec(crash_resolved=True))
    assert solved == []


# --- HTTP API ------------------------------------------------------------------------

@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(seeded_store(tmp_path)))


def test_health(client):
    assert client.get("/api/health").json() == {"status": "ok"}


def test_api_bugs_pagination(client):
    doc = client.get("/api/bugs", params={"page_size": 4, "page": 1}).json()
    assert doc["total"] == 10
    assert len(doc["items"]) == 4


def test_api_bugs_unknown_key_400(client):
    resp = client.get("/api/bugs", params={"spice": "high"})
    assert resp.status_code == 400
    assert resp.json()["error"]["type"] == "InvalidFilter"


def test_api_leaderboard_matches_store(client, tmp_path):
    doc = client.get("/api/leaderboard", params={"group_by": "scaffold"}).json()
    assert doc["group_by"] == "scaffold"
    assert [row["group"]["scaffold"] for row in doc["rows"]]
    crrs = [row["crr"] for row in doc["rows"]]
    assert crrs == sorted(crrs, reverse=True)


def test_api_leaderboard_bad_group(client):
    assert client.get("/api/leaderboard", params={"group_by": "zz"}).status_code == 400


def test_api_toughest(client):
    doc = client.get("/api/toughest").json()
    assert set(doc["bug_ids"]) == {f"b{i:02d}" for i in range(10) if i % 2 and i % 3}


def test_api_metrics_plain(client):
    doc = client.get("/api/metrics").json()
    assert doc["report"]["n_bugs"] == 10
    assert 0 <= doc["report"]["crr_percent"] <= 100


def test_api_metrics_filtered_empty(client):
    doc = client.get("/api/metrics", params={"scaffold": "ghost"}).json()
    assert doc["report"] is None


def test_api_metrics_cutoff(client):
    doc = client.get("/api/metrics", params={"cutoff_date": "2024-12-31"}).json()
    assert "cutoff" in doc
    assert set(doc["cutoff"]) == {"before", "after", "changes", "n_before", "n_after"}


def test_api_metrics_cutoff_empty_side(client):
    resp = client.get("/api/metrics", params={"cutoff_date": "1999-01-01"})
    assert resp.status_code == 409
    assert resp.json()["error"]["type"] == "EmptySide"


def test_api_runs_filter_keys(client):
    assert client.get("/api/runs", params={"bug_id": "b00"}).status_code == 200
    assert client.get("/api/runs", params={"nope": "x"}).status_code == 400


def test_api_serves_built_ui(tmp_path):
    ui = tmp_path / "dist"
    (ui / "assets").mkdir(parents=True)
    (ui / "index.html").write_text("<html><body>dashboard shell</body></html>")
    (ui / "assets" / "app.js").write_text("console.log('ok');")
    client = TestClient(create_app(seeded_store(tmp_path), ui_dir=ui))
    assert "dashboard shell" in client.get("/").text
    assert client.get("/assets/app.js").text == "console.log('ok');"
    assert client.get("/assets/missing.js").status_code == 404
