"""End-to-end benchmarking loop: ingest -> curate -> run -> evaluate -> report.

Each stage is resumable: work items already persisted are skipped, so a
rerun of a completed stage performs no duplicate writes. Stage state records
a digest of the experiment-defining configuration plus the stage's input
content; input drift (fresh reports arriving) re-runs incrementally, while
configuration drift aborts unless --force wipes the affected outputs.

One pipeline instance per experiment, enforced with a pid lockfile.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from .backend import RemoteBackend, SimulatorBackend, load_scenarios, stable_seed
from .config import AgentEntry, ExperimentConfig
from .corpus import (
    BugRecord,
    CorpusStore,
    DirectoryFetcher,
    FeedFetcher,
    dataset_stats,
    filter_reproducible,
    ingest_report,
    record_to_doc,
    split_by_cutoff,
)
from .crf import CRFGateway, serve_gateway
from .diffs import parse_unified_diff
from .environment import (
    AgentOverlay,
    AgentRunArtifact,
    TrajectoryEvent,
    build_base_spec,
    compose,
    invoke_agent,
)
from .errors import CrashBenchError, EmptyInput, EmptySide, StageFailed
from .evaluation import EvalConfig, evaluate_attempt, persist_record
from .judge import judge_from_doc
from .metrics import cutoff_report, render_cutoff_report, render_table, round_pct
from .store import FilterSpec, ResultStore

STAGES = ("ingest", "curate", "run", "evaluate", "report")


@contextmanager
def _experiment_lock(results_dir: Path, experiment: str):
    results_dir.mkdir(parents=True, exist_ok=True)
    lock = results_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
    except FileExistsError:
        try:
            pid = int(lock.read_text().strip() or 0)
            os.kill(pid, 0)
        except (ValueError, ProcessLookupError, PermissionError):
            lock.write_text(str(os.getpid()))  # stale lock from a dead run
        else:
            raise StageFailed("pipeline", f"experiment {experiment} already running (pid {pid})")
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


class Pipeline:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.corpus = CorpusStore(config.corpus)
        config.results.mkdir(parents=True, exist_ok=True)
        self.store = ResultStore(config.store)
        self._backend_instance = None

    # --- shared plumbing ---------------------------------------------------

    @property
    def exp_dir(self) -> Path:
        return self.config.results / self.config.experiment

    def backend(self):
        if self._backend_instance is None:
            if self.config.backend == "remote":
                self._backend_instance = RemoteBackend(self.config.remote_url)
            else:
                scenarios = load_scenarios(self.config.scenarios)
                sim = SimulatorBackend(scenarios, source_trees=self.config.source_tree)
                for bug in self.corpus.load_all():
                    sim.register_bug(bug.bug_id, bug.kernel_commit, bug.reproducer)
                self._backend_instance = sim
        return self._backend_instance

    def _input_digest(self, stage: str) -> str:
        h = hashlib.sha256()
        if stage == "ingest":
            if self.config.reports:
                for p in sorted(Path(self.config.reports).glob("*.json")):
                    h.update(p.name.encode())
                    h.update(p.read_bytes())
            if self.config.reports_feed:
                h.update(self.config.reports_feed.encode())
        elif stage == "curate":
            for bug_id in self.corpus.bug_ids():
                doc = record_to_doc(self.corpus.load(bug_id), self.corpus.blobs)
                doc.pop("reproduction_rate", None)  # curation output, not input
                h.update(json.dumps(doc, sort_keys=True).encode())
        elif stage == "run":
            h.update(json.dumps(sorted(self._admitted_ids())).encode())
        elif stage == "evaluate":
            h.update(json.dumps(sorted(map(str, self._run_keys()))).encode())
        elif stage == "report":
            h.update(json.dumps(sorted(map(str, self._evaluation_keys()))).encode())
        return h.hexdigest()

    def _stage_digest(self, stage: str) -> str:
        return f"{self.config.config_digest()}|{self._input_digest(stage)}"

    def _admitted_ids(self) -> list[str]:
        return [
            bug.bug_id for bug in self.corpus.load_all() if bug.reproduction_rate is not None
        ]

    def _record_digest(self, bug: BugRecord) -> str:
        doc = record_to_doc(bug, self.corpus.blobs)
        doc.pop("reproduction_rate", None)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def _run_keys(self) -> set[tuple]:
        return self.store.run_keys(self.config.experiment)

    def _evaluation_keys(self) -> set[tuple]:
        return self.store.evaluation_keys(self.config.experiment)

    # --- stage driver ---------------------------------------------------------

    def run(self, stages=None, force: bool = False) -> dict[str, dict]:
        wanted = list(stages) if stages else list(STAGES)
        for s in wanted:
            if s not in STAGES:
                raise StageFailed(s, "unknown stage")
        wanted.sort(key=STAGES.index)

        summary: dict[str, dict] = {}
        with _experiment_lock(self.exp_dir, self.config.experiment):
            for stage in wanted:
                summary[stage] = self._run_stage(stage, force)
        return summary

    def _run_stage(self, stage: str, force: bool) -> dict:
        digest = self._stage_digest(stage)
        state = self.store.stage_state(self.config.experiment, stage)
        if state is not None:
            stored_cfg = state["digest"].split("|", 1)[0]
            if stored_cfg != self.config.config_digest() and not force:
                raise StageFailed(
                    stage, "experiment configuration changed since the last run; use --force"
                )
            if state["digest"] == digest and not force:
                return {"status": "up_to_date", **state["counts"]}

        handler = getattr(self, f"_stage_{stage}")
        try:
            counts = handler(force)
        except StageFailed:
            raise
        except CrashBenchError as exc:
            raise StageFailed(stage, str(exc)) from exc
        # input may have changed as a result of the stage itself (e.g. curate
        # writes reproduction rates into the corpus), so re-digest afterwards
        self.store.mark_stage(self.config.experiment, stage, self._stage_digest(stage), counts)
        return {"status": "completed", **counts}

    # --- stages ------------------------------------------------------------------

    def _stage_ingest(self, force: bool) -> dict:
        if self.config.reports is None and self.config.reports_feed is None:
            raise StageFailed("ingest", "no reports directory or feed configured")
        fetcher = (
            DirectoryFetcher(self.config.reports)
            if self.config.reports is not None
            else FeedFetcher(self.config.reports_feed)
        )
        new = updated = unchanged = 0
        for doc in fetcher:
            record = ingest_report(doc, self.corpus.blobs)
            if record.bug_id in self.corpus:
                existing = self.corpus.load(record.bug_id)
                probe_old = record_to_doc(existing, self.corpus.blobs)
                probe_old["reproduction_rate"] = None
                probe_new = record_to_doc(record, self.corpus.blobs)
                if probe_old == probe_new:
                    unchanged += 1
                    continue
                updated += 1  # content changed: curation must rerun for this bug
            else:
                new += 1
            self.corpus.save(record)
            self.store.upsert_bug(record)
        self._backend_instance = None  # corpus changed; re-register on next use
        return {"ingested": new + updated + unchanged, "new": new, "updated": updated}

    def _curation_path(self) -> Path:
        return self.exp_dir / "curation.json"

    def _stage_curate(self, force: bool) -> dict:
        bugs = self.corpus.load_all()
        if not bugs:
            raise StageFailed("curate", "corpus is empty; run ingest first")
        path = self._curation_path()
        decisions: dict[str, dict] = {}
        if path.exists() and not force:
            decisions = json.loads(path.read_text())

        backend = self.backend()
        # re-curate bugs whose ingested content changed since their decision
        todo = [
            b
            for b in bugs
            if decisions.get(b.bug_id, {}).get("record_digest") != self._record_digest(b)
        ]

        def curate_one(bug: BugRecord):
            seed = stable_seed(self.config.seed, "curate", bug.bug_id)
            return filter_reproducible(
                bug, backend, attempts=self.config.curation_attempts, seed=seed
            )

        with ThreadPoolExecutor(max_workers=self.config.pool_size) as pool:
            results = list(pool.map(curate_one, todo))

        for bug, result in zip(todo, results):
            if result.admitted:
                self.corpus.save(bug)  # persists the observed reproduction rate
            decisions[bug.bug_id] = {**asdict(result), "record_digest": self._record_digest(bug)}
            self.store.upsert_bug(bug)

        self.exp_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(decisions, indent=2, sort_keys=True) + "\n")
        admitted = sum(1 for d in decisions.values() if d["admitted"])
        return {"curated": len(decisions), "admitted": admitted,
                "rejected": len(decisions) - admitted}

    def _overlay_for(self, entry: AgentEntry, bug: BugRecord) -> AgentOverlay:
        overlay = entry.overlay
        if entry.oracle_mode and bug.fix is not None:
            dev_files = sorted(
                {d.path for d in parse_unified_diff(bug.fix.dev_patch).files}
            )
            env = dict(overlay.env_vars)
            env["ORACLE_FILES"] = ",".join(dev_files)
            overlay = AgentOverlay(
                agent_name=overlay.agent_name,
                invocation_template=overlay.invocation_template,
                install_steps=overlay.install_steps,
                env_vars=env,
            )
        return overlay

    def _stage_run(self, force: bool) -> dict:
        if not self.config.agents:
            raise StageFailed("run", "no agents configured")
        if self.config.source_tree is None:
            raise StageFailed("run", "source_tree required to initialize workspaces")
        admitted = [b for b in self.corpus.load_all() if b.reproduction_rate is not None]
        if not admitted:
            raise StageFailed("run", "no admitted bugs; run curate first")

        if force:
            self.store.delete_runs(self.config.experiment)
        existing = self._run_keys()

        backend = self.backend()
        gateway_server = None
        gateway_url = None
        if any(e.crf_enabled for e in self.config.agents):
            gateway = CRFGateway(
                backend=backend,
                bugs={b.bug_id: b for b in admitted},
                crf_trials=self.config.crf_trials,
                seed=self.config.seed,
            )
            gateway_server, _ = serve_gateway(gateway)
            gateway_url = f"http://127.0.0.1:{gateway_server.server_port}"

        work = []
        for bug in admitted:
            for entry in self.config.agents:
                for attempt in range(1, self.config.attempts_per_bug + 1):
                    if (bug.bug_id, entry.overlay.agent_name, attempt) in existing:
                        continue
                    work.append((bug, entry, attempt))

        def run_one(item):
            bug, entry, attempt = item
            spec = compose(build_base_spec(bug), self._overlay_for(entry, bug))
            artifact = invoke_agent(
                spec,
                source_tree=self.config.source_tree,
                limits=self.config.limits,
                attempt_index=attempt,
                gateway_url=gateway_url if entry.crf_enabled else None,
            )
            self.store.insert_run(
                self.config.experiment,
                artifact,
                model=entry.model,
                crf_enabled=entry.crf_enabled,
                oracle_mode=entry.oracle_mode,
                cost_limit=self.config.limits.budget,
            )
            return artifact

        try:
            with ThreadPoolExecutor(max_workers=self.config.pool_size) as pool:
                list(pool.map(run_one, work))
        finally:
            if gateway_server is not None:
                gateway_server.shutdown()
        return {"invocations": len(work), "skipped": len(existing)}

    def _stage_evaluate(self, force: bool) -> dict:
        run_state = self.store.stage_state(self.config.experiment, "run")
        if run_state is None and not self._run_keys():
            raise StageFailed("evaluate", "missing run artifacts; run the run stage first")

        if force:
            self.store.delete_evaluations(self.config.experiment)
            for child in self.exp_dir.glob("*/"):
                if child.is_dir():
                    shutil.rmtree(child)
        existing = self._evaluation_keys()

        backend = self.backend()
        judge = judge_from_doc(self.config.judge)
        criterion = self.config.judge.get("criterion")
        if not criterion and self.config.judge.get("criterion_file"):
            criterion = Path(self.config.judge["criterion_file"]).read_text()
        eval_kwargs = {"criterion": criterion} if criterion else {}
        eval_config = EvalConfig(
            runs=self.config.runs,
            votes=self.config.votes,
            threshold=self.config.threshold,
            seed=self.config.seed,
            **eval_kwargs,
        )

        rows = self.store.query_runs(FilterSpec(), experiment=self.config.experiment)
        todo = [r for r in rows if (r["bug_id"], r["scaffold"], r["attempt"]) not in existing]

        def evaluate_one(row):
            bug = self.corpus.load(row["bug_id"])
            events = [
                TrajectoryEvent(e["kind"], e.get("payload", {}), e.get("ts", 0.0))
                for e in row["trajectory"]
            ]
            artifact = AgentRunArtifact(
                bug_id=row["bug_id"],
                agent_name=row["scaffold"],
                attempt_index=row["attempt"],
                patch=row["patch"],
                dollar_cost=row["dollar_cost"],
                wall_time=row["wall_time"],
                trajectory=events,
                exit_status=row["exit_status"],
            )
            record = evaluate_attempt(
                artifact, bug, backend, judge, eval_config, tree=self.config.source_tree
            )
            persist_record(self.config.results, self.config.experiment, record)
            self.store.insert_evaluation(
                self.config.experiment,
                record,
                model=row["model"],
                crf_enabled=bool(row["crf_enabled"]),
                oracle_mode=bool(row["oracle_mode"]),
                cost_limit=row["cost_limit"],
            )
            return record

        with ThreadPoolExecutor(max_workers=self.config.pool_size) as pool:
            list(pool.map(evaluate_one, todo))
        return {"evaluated": len(todo), "skipped": len(existing)}

    def _stage_report(self, force: bool) -> dict:
        records = self.store.records(FilterSpec(), experiment=self.config.experiment)
        if not records:
            raise StageFailed("report", "no evaluations to report on")

        rows = self.store.leaderboard("scaffold", FilterSpec(), experiment=self.config.experiment)
        doc: dict = {
            "experiment": self.config.experiment,
            "leaderboard": [r.to_doc() for r in rows],
            "metrics": self.store.metrics_report(
                FilterSpec(), experiment=self.config.experiment
            ).to_doc(),
        }
        try:
            card = dataset_stats(self.corpus.load_all())
            doc["dataset_card"] = {
                "n_bugs": card.n_bugs,
                "n_subsystems": card.n_subsystems,
                "n_bug_types": card.n_bug_types,
                "avg_fixed_per_month": round(card.avg_fixed_per_month, 2),
                "avg_gold_patch_loc": round(card.avg_gold_patch_loc, 2),
                "avg_gold_patch_files": round(card.avg_gold_patch_files, 2),
                "median_days_report_to_fix": card.median_days_report_to_fix,
            }
        except EmptyInput:
            pass

        text_lines = [
            f"experiment: {self.config.experiment}",
            "",
            render_table(
                ["scaffold", "CRR%", "EPR%", "file IoU%", "func IoU%", "cost$", "bugs"],
                [
                    [
                        row.group.get("scaffold", "?"),
                        f"{round_pct(row.crr):.2f}",
                        f"{round_pct(row.epr):.2f}",
                        f"{round_pct(row.file_iou):.2f}",
                        f"{round_pct(row.function_iou):.2f}",
                        f"{row.mean_cost:.2f}",
                        row.n_bugs,
                    ]
                    for row in rows
                ],
            ),
        ]
        if self.config.cutoff_date is not None:
            try:
                cr = cutoff_report(records, self.store.fixed_dates(), self.config.cutoff_date)
                doc["cutoff"] = cr.to_doc()
                text_lines += ["", f"cutoff split at {self.config.cutoff_date}:",
                               render_cutoff_report(cr)]
            except EmptySide as exc:
                doc["cutoff"] = None
                text_lines += ["", f"cutoff split unavailable: {exc}"]

        self.exp_dir.mkdir(parents=True, exist_ok=True)
        (self.exp_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        (self.exp_dir / "report.txt").write_text("\n".join(text_lines) + "\n")
        return {"bugs": doc["metrics"]["n_bugs"], "leaderboard_rows": len(rows)}


def run_pipeline(config: ExperimentConfig, stages=None, force: bool = False) -> dict[str, dict]:
    return Pipeline(config).run(stages=stages, force=force)


def schedule_loop(
    config: ExperimentConfig,
    iterations: int | None = None,
    sleeper=time.sleep,
    log=print,
) -> None:
    """Thin re-ingestion loop with a jittered interval; no external cron."""
    done = 0
    while iterations is None or done < iterations:
        summary = run_pipeline(config)
        log(f"[schedule] pipeline pass {done + 1}: " + json.dumps(summary))
        done += 1
        if iterations is not None and done >= iterations:
            break
        delay = config.interval_s + random.uniform(-config.jitter_s, config.jitter_s)
        sleeper(max(1.0, delay))
