"""FastAPI service wrapping the engine. The CLI is a thin client of this app;
it can also be served standalone with uvicorn for multi-client use."""
from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, metrics, pairing, store, synthetic
from ..config import RunConfig, load_config, save_config
from ..errors import ConfigError, MultiIDError
from ..losses import conformance_table
from ..pipeline import Pipeline
from . import schemas

app = FastAPI(title="multiid", version=__version__)


@app.exception_handler(MultiIDError)
async def multiid_error_handler(request: Request, exc: MultiIDError):
    body = schemas.ErrorBody(code=exc.code, message=str(exc), exit_code=exc.exit_code)
    return JSONResponse(status_code=400, content={"detail": body.model_dump()})


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(version=__version__)


@app.post("/ingest", response_model=schemas.IngestResponse)
def ingest(req: schemas.IngestRequest) -> schemas.IngestResponse:
    corpus = store.ingest(Path(req.manifest_path), Path(req.blob_path))
    return schemas.IngestResponse(
        corpus_id=corpus.corpus_id,
        split=corpus.split,
        face_count=corpus.face_count(),
        image_count=len(corpus.image_ids),
        backends=corpus.backends,
    )


@app.post("/export", response_model=schemas.ExportResponse)
def export(req: schemas.ExportRequest) -> schemas.ExportResponse:
    corpus = store.ingest(Path(req.manifest_path), Path(req.blob_path))
    store.export(corpus, Path(req.out_manifest_path), Path(req.out_blob_path))
    return schemas.ExportResponse(out_manifest_path=req.out_manifest_path,
                                  out_blob_path=req.out_blob_path)


def _config(path: str, overrides: dict) -> RunConfig:
    return load_config(Path(path), overrides)


@app.post("/stage", response_model=schemas.StageResponse)
def run_stage(req: schemas.StageRequest) -> schemas.StageResponse:
    cfg = _config(req.config_path, req.overrides)
    if req.stage not in ("cluster", "bank", "assign", "pair", "split", "stats"):
        raise ConfigError(f"unknown stage {req.stage!r}")
    status = Pipeline(cfg).run_stage(req.stage)
    return schemas.StageResponse(stage=status.stage, state=status.state,
                                 artifacts=status.artifacts)


@app.post("/pipeline", response_model=schemas.PipelineResponse)
def run_pipeline(req: schemas.PipelineRequest) -> schemas.PipelineResponse:
    cfg = _config(req.config_path, req.overrides)
    pipe = Pipeline(cfg)
    statuses = pipe.run_all()
    return schemas.PipelineResponse(
        stages=[schemas.StageResponse(stage=s.stage, state=s.state, artifacts=s.artifacts)
                for s in statuses],
        run_log=str(pipe.out / "run_log.json"),
    )


def _bench_from_splits(path: Path):
    data = json.loads(path.read_text())
    samples = []
    for b in data["bench"]:
        samples.append(pairing.BenchSample(
            sample_id=b["sample_id"],
            gt_image_id=b["gt_image_id"],
            identity_ids=tuple(b["identity_ids"]),
            gt_face_ids=tuple(b["gt_face_ids"]),
            reference_face_ids={k: tuple(v) for k, v in b["reference_face_ids"].items()},
        ))
    return samples


@app.post("/eval", response_model=schemas.EvalResponse)
def run_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    cfg = _config(req.config_path, req.overrides)
    pipe = Pipeline(cfg)
    bench = _bench_from_splits(Path(req.splits_path))
    bench_corpus = pipe.assigned_corpus()
    reference_corpus = pipe.single_corpus()
    generated = store.ingest(Path(req.generated_manifest), Path(req.generated_blob))

    # Generated samples are keyed by the bench GT image id by convention.
    keyed = [
        pairing.BenchSample(
            sample_id=b.gt_image_id,
            gt_image_id=b.gt_image_id,
            identity_ids=b.identity_ids,
            gt_face_ids=b.gt_face_ids,
            reference_face_ids=b.reference_face_ids,
        )
        for b in bench
    ]
    report = metrics.evaluate(
        keyed, bench_corpus, generated,
        face_backends=cfg.backends,
        primary_backend=cfg.primary(),
        reference_corpus=reference_corpus,
    )
    out = Path(req.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_json = out / "eval_report.json"
    report_csv = out / "eval_report.csv"
    report_json.write_text(report.to_json())
    report.write_csv(report_csv)
    return schemas.EvalResponse(
        report_json=str(report_json),
        report_csv=str(report_csv),
        aggregates={k: v for k, v in report.aggregates.items()},
        skipped_count=len(report.skipped),
        summary=report.summary(),
    )


@app.post("/losses/check", response_model=schemas.LossesCheckResponse)
def losses_check(req: schemas.LossesCheckRequest) -> schemas.LossesCheckResponse:
    rows = conformance_table(req.seed)
    return schemas.LossesCheckResponse(
        rows=[schemas.LossesCheckRow(name=n, passed=p, detail=d) for n, p, d in rows],
        all_passed=all(p for _, p, _ in rows),
    )


@app.post("/fixture", response_model=schemas.FixtureResponse)
def make_fixture(req: schemas.FixtureRequest) -> schemas.FixtureResponse:
    out = Path(req.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    single, directions = synthetic.make_single_id_corpus(
        n_identities=req.n_identities,
        members_per_identity=req.members_per_identity,
        dim=req.dim,
        seed=req.seed,
    )
    multi, _ = synthetic.make_multi_id_corpus(
        directions, n_images=req.n_images, seed=req.seed + 1,
    )
    paths = {
        "single_manifest": out / "single.manifest.json",
        "single_blob": out / "single.mide",
        "multi_manifest": out / "multi.manifest.json",
        "multi_blob": out / "multi.mide",
    }
    store.export(single, paths["single_manifest"], paths["single_blob"])
    store.export(multi, paths["multi_manifest"], paths["multi_blob"])
    cfg = RunConfig(
        data_root=str(out),
        output_dir=str(out / "out"),
        backends=["face-a"],
        seed=req.seed,
        bench_identity_count=max(2, req.n_identities // 5),
        single_manifest="single.manifest.json",
        single_blob="single.mide",
        multi_manifest="multi.manifest.json",
        multi_blob="multi.mide",
    )
    config_path = out / "config.json"
    save_config(cfg, config_path)
    return schemas.FixtureResponse(
        config_path=str(config_path),
        single_manifest=str(paths["single_manifest"]),
        single_blob=str(paths["single_blob"]),
        multi_manifest=str(paths["multi_manifest"]),
        multi_blob=str(paths["multi_blob"]),
    )
