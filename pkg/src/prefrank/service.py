"""REST API over the dataset store for annotation sessions.

Thin JSON layer: every route defers validation and state transitions to
DatasetStore and maps its exceptions onto HTTP statuses (400 validation,
403 unqualified, 404 unknown, 409 conflict or wrong state). Image files
are served read-only from the store's image root for the annotation UI.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import Body, FastAPI, Query, Request, Response
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from prefrank.dataset import (
    ConflictError,
    DatasetError,
    DatasetStore,
    NotFoundError,
    NotQualifiedError,
    StateError,
    ValidationError,
    canonicalize_ranks,
)
from prefrank.jsonl import dumps_record

__all__ = ["create_app"]

_STATUS_BY_ERROR = [
    (NotQualifiedError, 403),
    (NotFoundError, 404),
    (ConflictError, 409),
    (StateError, 409),
    (ValidationError, 400),
]


class RankingSubmission(BaseModel):
    """One annotator's ranking of a task, in display order."""

    group_id: str
    annotator_id: str
    ranks: list[float] = Field(min_length=1)


class QualificationSubmission(BaseModel):
    """Qualification round: rankings submitted against the expert gold set."""

    gold: list[list[float]] = Field(min_length=1)
    submitted: list[list[float]]


class RejectionRequest(BaseModel):
    reason: str


def _group_summary(state) -> dict:
    group = state.group
    return {
        "group_id": group.group_id,
        "status": state.status,
        "rejection_reason": state.rejection_reason,
        "agreement": state.agreement,
        "annotations": len(group.annotations),
        "aggregate_ranks": group.aggregate.as_floats() if group.aggregate else None,
    }


def create_app(store: DatasetStore) -> FastAPI:
    app = FastAPI(title="prefrank dataset service")

    @app.exception_handler(DatasetError)
    async def dataset_error_handler(request: Request, exc: DatasetError):
        for error_type, status in _STATUS_BY_ERROR:
            if isinstance(exc, error_type):
                return JSONResponse(status_code=status, content={"detail": str(exc)})
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.post("/groups", status_code=201)
    def ingest_group(record: dict = Body(...)):
        group_id = store.ingest_group(record)
        return _group_summary(store.group(group_id))

    @app.get("/groups/{group_id}")
    def get_group(group_id: str):
        return _group_summary(store.group(group_id))

    @app.get("/tasks/next")
    def next_task(annotator: str = Query(...)):
        task = store.next_task(annotator)
        if task is None:
            return Response(status_code=204)
        return task

    @app.post("/rankings")
    def submit_ranking(submission: RankingSubmission):
        state = store.submit_ranking(
            submission.annotator_id, submission.group_id, submission.ranks
        )
        return _group_summary(state)

    @app.post("/groups/{group_id}/finalize")
    def finalize_group(group_id: str):
        return _group_summary(store.finalize_group(group_id))

    @app.post("/groups/{group_id}/reject")
    def reject_group(group_id: str, request: RejectionRequest):
        return _group_summary(store.reject_group(group_id, request.reason))

    @app.post("/annotators/{annotator_id}/qualification")
    def qualify_annotator(annotator_id: str, submission: QualificationSubmission):
        gold = [canonicalize_ranks(r) for r in submission.gold]
        submitted = [canonicalize_ranks(r) for r in submission.submitted]
        profile = store.qualify_annotator(annotator_id, gold, submitted)
        return {
            "annotator_id": profile.annotator_id,
            "qualification_score": profile.qualification_score,
            "status": profile.status,
        }

    @app.get("/annotators/{annotator_id}")
    def get_annotator(annotator_id: str):
        profile = store.annotator(annotator_id)
        return {
            "annotator_id": profile.annotator_id,
            "qualification_score": profile.qualification_score,
            "status": profile.status,
        }

    @app.get("/reports/win-rates")
    def win_rates():
        return store.report_win_rates()

    @app.get("/export")
    def export_dataset():
        lines = [dumps_record(r) for r in store.export_records()]
        return PlainTextResponse(
            "\n".join(lines) + "\n", media_type="application/x-ndjson"
        )

    @app.get("/images/{ref:path}")
    def serve_image(ref: str):
        root = store.image_root
        if root is None:
            raise NotFoundError("image serving requires the store's image root to be set")
        resolved = (root / ref).resolve()
        if not resolved.is_relative_to(Path(root).resolve()):
            raise ValidationError("image path escapes the image root")
        if not resolved.is_file():
            raise NotFoundError(f"no such image: {ref}")
        return FileResponse(resolved)

    return app
