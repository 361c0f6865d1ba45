"""Request/response models for the HTTP API."""
from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ErrorBody(BaseModel):
    code: str
    message: str
    exit_code: int


class IngestRequest(BaseModel):
    manifest_path: str
    blob_path: str


class IngestResponse(BaseModel):
    corpus_id: str
    split: str
    face_count: int
    image_count: int
    backends: Dict[str, int]


class ExportRequest(BaseModel):
    manifest_path: str
    blob_path: str
    out_manifest_path: str
    out_blob_path: str


class ExportResponse(BaseModel):
    out_manifest_path: str
    out_blob_path: str


class StageRequest(BaseModel):
    config_path: str
    stage: str
    overrides: Dict[str, object] = Field(default_factory=dict)


class StageResponse(BaseModel):
    stage: str
    state: str
    artifacts: List[str]


class PipelineRequest(BaseModel):
    config_path: str
    overrides: Dict[str, object] = Field(default_factory=dict)


class PipelineResponse(BaseModel):
    stages: List[StageResponse]
    run_log: str


class EvalRequest(BaseModel):
    config_path: str
    splits_path: str
    generated_manifest: str
    generated_blob: str
    output_dir: str
    overrides: Dict[str, object] = Field(default_factory=dict)


class EvalResponse(BaseModel):
    report_json: str
    report_csv: str
    aggregates: Dict[str, float]
    skipped_count: int
    summary: str


class LossesCheckRequest(BaseModel):
    seed: int = 0


class LossesCheckRow(BaseModel):
    name: str
    passed: bool
    detail: str


class LossesCheckResponse(BaseModel):
    rows: List[LossesCheckRow]
    all_passed: bool


class FixtureRequest(BaseModel):
    output_dir: str
    n_identities: int = 20
    members_per_identity: int = 10
    n_images: int = 60
    dim: int = 64
    seed: int = 0


class FixtureResponse(BaseModel):
    config_path: str
    single_manifest: str
    single_blob: str
    multi_manifest: str
    multi_blob: str
