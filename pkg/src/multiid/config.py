"""Run configuration: a versioned, file-backed schema whose defaults match
the pipeline's published operating points (0.5 retrieval threshold, 0.5
paired fraction, 0.1/0.1 loss weights)."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigError

CONFIG_VERSION = 1

STAGES = ("cluster", "bank", "assign", "pair", "split", "stats")


class ClusterConfig(BaseModel):
    eps: float = 0.5
    min_pts: int = 4
    centroid_floor: float = 0.0
    keep_secondary: bool = False


class LossWeights(BaseModel):
    lambda_id: float = 0.1
    lambda_cl: float = 0.1


class RunConfig(BaseModel):
    schema_version: int = CONFIG_VERSION
    data_root: Optional[str] = None
    output_dir: str = "out"
    backends: List[str] = Field(default_factory=lambda: ["face-a"])
    primary_backend: Optional[str] = None
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    threshold: float = 0.5
    paired_fraction: float = 0.5
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    seed: int = 0
    worker_count: int = 8
    block_size: int = 8192
    bench_identity_count: int = 10
    # Corpus locations, relative to data_root when not absolute.
    single_manifest: Optional[str] = None
    single_blob: Optional[str] = None
    multi_manifest: Optional[str] = None
    multi_blob: Optional[str] = None

    def resolved_data_root(self) -> Path:
        if self.data_root:
            return Path(self.data_root)
        return Path(os.environ.get("MULTIID_DATA_ROOT", "."))

    def resolve(self, value: Optional[str], field: str) -> Path:
        if value is None:
            raise ConfigError(f"config field {field!r} is required for this stage")
        p = Path(value)
        return p if p.is_absolute() else self.resolved_data_root() / p

    def stage_seed(self, stage: str) -> int:
        """Per-stage seed split from the root seed."""
        if stage not in STAGES and stage not in ("eval", "fixture"):
            raise ConfigError(f"unknown stage {stage!r}")
        index = (STAGES.index(stage) if stage in STAGES else 100 + len(stage))
        ss = np.random.SeedSequence([self.seed, index])
        return int(ss.generate_state(1)[0])

    def primary(self) -> str:
        return self.primary_backend or self.backends[0]


def load_config(path: Path, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config field {field!r}: {first['msg']}") from exc
    if cfg.schema_version != CONFIG_VERSION:
        raise ConfigError(
            f"config schema version {cfg.schema_version}, expected {CONFIG_VERSION}"
        )
    return cfg


def save_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(cfg.model_dump(), indent=2, sort_keys=True))
