"""HTTP/JSON service for live annotation sessions.

create_app() builds a FastAPI app around a single SessionStore. Every error
leaves as a {"code", "message"} JSON body: domain errors carry their own code
and map onto 404 (not found), 409 (exhausted / stale pair), or 422 (validation);
malformed request bodies are rewritten into the same shape so clients parse one
error format everywhere.

The data directory comes from, in order: the create_app argument, the
PAIRLENS_DATA_DIR environment variable, and finally ./pairlens_data.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import pandas as pd
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .data import Dataset, Roles
from .errors import PairlensError
from .matching import STRATEGY_KINDS, StrategyConfig
from .session import SessionStore

__all__ = ["create_app", "resolve_data_dir"]

_STATUS_BY_CODE = {
    "not_found": 404,
    "exhausted": 409,
    "stale_pair": 409,
    "validation_error": 422,
}


def resolve_data_dir(data_dir: str | Path | None = None) -> Path:
    if data_dir is not None:
        return Path(data_dir)
    env = os.environ.get("PAIRLENS_DATA_DIR")
    if env:
        return Path(env)
    return Path("pairlens_data")


class RolesBody(BaseModel):
    treatment: str
    outcome: str
    covariates: list[str]
    unobserved: list[str] = Field(default_factory=list)
    notes: str | None = None


class DatasetUpload(BaseModel):
    csv: str
    roles: RolesBody
    provenance: str = ""


class StrategyBody(BaseModel):
    kind: str
    dominance_margin: float = 0.2
    pi_gap_tolerance: float = 0.005
    max_unit_reuse: int = 3
    seed: int = 0
    strict: bool = False


class SessionCreate(BaseModel):
    dataset_id: str
    strategy: StrategyBody
    budget: int
    annotator: str = ""


class ExplanationBody(BaseModel):
    name: str
    origin: str


class AnnotationSubmit(BaseModel):
    pair_id: str
    explanations: list[ExplanationBody] = Field(default_factory=list)
    skipped: bool = False
    annotator: str = ""


def _error_response(code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS_BY_CODE.get(code, 400),
        content={"code": code, "message": message},
    )


def create_app(data_dir: str | Path | None = None) -> FastAPI:
    store = SessionStore(resolve_data_dir(data_dir))
    app = FastAPI(title="pairlens annotation service", version="1.0")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(PairlensError)
    async def _domain_error(request: Request, exc: PairlensError):
        return _error_response(exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _body_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(part) for part in first.get("loc", ()))
        msg = first.get("msg", "invalid request body")
        return _error_response("validation_error", f"{loc}: {msg}" if loc else msg)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return _error_response("validation_error", str(exc))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "datasets": len(store.list_datasets())}

    @app.post("/datasets", status_code=201)
    def upload_dataset(body: DatasetUpload):
        frame = pd.read_csv(io.StringIO(body.csv), float_precision="round_trip")
        roles = Roles(
            treatment=body.roles.treatment,
            outcome=body.roles.outcome,
            covariates=tuple(body.roles.covariates),
            unobserved=tuple(body.roles.unobserved),
            notes=body.roles.notes,
        )
        dataset = Dataset.from_frame(frame, roles, provenance=body.provenance)
        dataset_id = store.add_dataset(dataset)
        return {
            "dataset_id": dataset_id,
            "n": dataset.n,
            "columns": list(dataset.z_names),
            "has_oracle": dataset.u is not None,
        }

    @app.get("/datasets")
    def list_datasets():
        return {"datasets": store.list_datasets()}

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionCreate):
        if body.strategy.kind not in STRATEGY_KINDS:
            return _error_response(
                "validation_error",
                f"strategy.kind must be one of {list(STRATEGY_KINDS)}",
            )
        config = StrategyConfig(**body.strategy.model_dump())
        session = store.create_session(
            body.dataset_id, config, body.budget, annotator=body.annotator
        )
        return session.to_dict()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return store.get_session(session_id).to_dict()

    @app.get("/sessions/{session_id}/next")
    def next_pair(session_id: str):
        return store.next_pair(session_id).to_dict()

    @app.post("/sessions/{session_id}/annotations")
    def submit_annotation(session_id: str, body: AnnotationSubmit):
        return store.submit(
            session_id,
            body.pair_id,
            [e.model_dump() for e in body.explanations],
            skipped=body.skipped,
            annotator=body.annotator,
        )

    @app.get("/sessions/{session_id}/report")
    def report(session_id: str):
        return store.report(session_id).to_dict()

    return app
