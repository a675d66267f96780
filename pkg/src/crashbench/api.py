"""Read-only HTTP API over the result store.

Filter keys on every endpoint are exactly the FilterSpec field names;
anything else is rejected with a 400 rather than silently ignored. List
endpoints page at most 500 items. Writes happen through the pipeline, never
through this surface.
"""

from __future__ import annotations

from datetime import date
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .errors import EmptySide, InvalidFilter, InvalidGroupKey
from .metrics import cutoff_report
from .store import MAX_PAGE_SIZE, FilterSpec, ResultStore

_RESERVED = {"page", "page_size", "group_by", "experiment", "cutoff_date", "ks", "naive", "bug_id"}


def _parse_filters(request: Request) -> tuple[FilterSpec, dict[str, str]]:
    filters: dict[str, list[str]] = {}
    reserved: dict[str, str] = {}
    for key, value in request.query_params.multi_items():
        if key in _RESERVED:
            reserved[key] = value
        else:
            filters.setdefault(key, []).append(value)
    return FilterSpec.from_query(filters), reserved


def _error(code: int, exc: Exception) -> JSONResponse:
    return JSONResponse(
        status_code=code,
        content={"error": {"type": type(exc).__name__, "message": str(exc)}},
    )


def create_app(store: ResultStore, ui_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="crashbench", docs_url=None, redoc_url=None)

    @app.exception_handler(InvalidFilter)
    async def _invalid_filter(_req, exc):
        return _error(400, exc)

    @app.exception_handler(InvalidGroupKey)
    async def _invalid_group(_req, exc):
        return _error(400, exc)

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/bugs")
    def bugs(request: Request):
        spec, reserved = _parse_filters(request)
        page = max(1, int(reserved.get("page", 1)))
        page_size = min(int(reserved.get("page_size", 100)), MAX_PAGE_SIZE)
        total, items = store.query_bugs(spec, page=page, page_size=page_size)
        return {"total": total, "page": page, "page_size": page_size, "items": items}

    @app.get("/api/runs")
    def runs(request: Request):
        spec, reserved = _parse_filters(request)
        items = store.query_runs(
            spec,
            bug_id=reserved.get("bug_id"),
            experiment=reserved.get("experiment"),
        )
        return {"items": items}

    @app.get("/api/leaderboard")
    def leaderboard(request: Request):
        spec, reserved = _parse_filters(request)
        group_by = reserved.get("group_by", "scaffold")
        rows = store.leaderboard(group_by, spec, experiment=reserved.get("experiment"))
        return {"group_by": group_by, "rows": [r.to_doc() for r in rows]}

    @app.get("/api/toughest")
    def toughest(request: Request):
        spec, reserved = _parse_filters(request)
        return {"bug_ids": store.toughest_bugs(spec, experiment=reserved.get("experiment"))}

    @app.get("/api/metrics")
    def metrics(request: Request):
        spec, reserved = _parse_filters(request)
        records = store.records(spec, experiment=reserved.get("experiment"))
        if not records:
            return {"report": None, "n_records": 0}
        if "cutoff_date" in reserved:
            try:
                cutoff = date.fromisoformat(reserved["cutoff_date"])
            except ValueError as exc:
                return _error(400, exc)
            ks = tuple(int(k) for k in reserved.get("ks", "1").split(",") if k)
            naive = reserved.get("naive", "").lower() in ("1", "true", "yes")
            try:
                report = cutoff_report(records, store.fixed_dates(), cutoff, ks=ks, naive=naive)
            except EmptySide as exc:
                return _error(409, exc)
            return {"cutoff": report.to_doc(), "n_records": len(records)}
        report = store.metrics_report(spec, experiment=reserved.get("experiment"))
        return {"report": report.to_doc(), "n_records": len(records)}

    if ui_dir is not None:
        ui_dir = Path(ui_dir)
        index = ui_dir / "index.html"
        if index.exists():

            @app.get("/")
            def root():
                return FileResponse(index)

            @app.get("/assets/{name}")
            def asset(name: str):
                assets = (ui_dir / "assets").resolve()
                target = (assets / name).resolve()
                if assets not in target.parents or not target.exists():
                    return JSONResponse(status_code=404, content={"error": "not found"})
                return FileResponse(target)

    return app
