"""Pipeline orchestration: cluster -> bank -> assign -> pair -> split -> stats.

Each stage writes its artifact under the output directory and is individually
resumable: a present artifact makes the stage a no-op ("up-to-date"). A
machine-readable run log (inputs, seeds, versions, wall time) is written next
to the artifacts; reports themselves contain no timestamps so identical
config + seed yields byte-identical report files.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import cluster as clustering
from . import pairing, retrieval, store
from .cluster import ClusterParams, ReferenceBank
from .config import STAGES, RunConfig
from .errors import MultiIDError

logger = logging.getLogger(__name__)

PIPELINE_VERSION = "0.1.0"


class StageError(MultiIDError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.code = getattr(cause, "code", "internal-error")
        self.exit_code = getattr(cause, "exit_code", 4)


@dataclass
class StageStatus:
    stage: str
    state: str  # "done" | "up-to-date"
    artifacts: List[str] = field(default_factory=list)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._single: Optional[store.Corpus] = None
        self._multi: Optional[store.Corpus] = None
        self._bank: Optional[ReferenceBank] = None

    # ---- inputs -----------------------------------------------------------

    def single_corpus(self) -> store.Corpus:
        if self._single is None:
            cfg = self.cfg
            self._single = store.ingest(cfg.resolve(cfg.single_manifest, "single_manifest"),
                                        cfg.resolve(cfg.single_blob, "single_blob"))
        return self._single

    def multi_corpus(self) -> store.Corpus:
        if self._multi is None:
            cfg = self.cfg
            self._multi = store.ingest(cfg.resolve(cfg.multi_manifest, "multi_manifest"),
                                       cfg.resolve(cfg.multi_blob, "multi_blob"))
        return self._multi

    def bank(self) -> ReferenceBank:
        if self._bank is None:
            self._bank = clustering.load_bank(self.out / "bank")
        return self._bank

    def assigned_corpus(self) -> store.Corpus:
        return store.ingest(self.out / "assigned.manifest.json", self.out / "assigned.mide")

    # ---- stages -----------------------------------------------------------

    def stage_cluster(self) -> StageStatus:
        path = self.out / "clusters.json"
        if path.exists():
            return StageStatus("cluster", "up-to-date", [str(path)])
        corpus = self.single_corpus()
        params = ClusterParams(self.cfg.cluster.eps, self.cfg.cluster.min_pts)
        report = {}
        backend = self.cfg.primary()
        for identity_id in sorted(corpus.groups):
            face_ids = corpus.groups[identity_id]
            X = np.stack([corpus.embedding(f, backend).values for f in face_ids])
            result = clustering.dbscan(X, params)
            report[identity_id] = {
                "labels": {fid: int(lbl) for fid, lbl in zip(face_ids, result.labels)},
                "cluster_sizes": [len(c) for c in result.clusters],
                "noise_count": len(result.noise),
            }
        _dump(report, path)
        return StageStatus("cluster", "done", [str(path)])

    def stage_bank(self) -> StageStatus:
        bank_dir = self.out / "bank"
        if (bank_dir / "identities.json").exists():
            return StageStatus("bank", "up-to-date", [str(bank_dir)])
        corpus = self.single_corpus()
        params = ClusterParams(self.cfg.cluster.eps, self.cfg.cluster.min_pts)
        bank = clustering.build_bank(
            corpus, self.cfg.primary(), params,
            centroid_floor=self.cfg.cluster.centroid_floor,
            keep_secondary=self.cfg.cluster.keep_secondary,
        )
        clustering.save_bank(bank, bank_dir)
        self._bank = bank
        return StageStatus("bank", "done", [str(bank_dir)])

    def stage_assign(self) -> StageStatus:
        manifest = self.out / "assigned.manifest.json"
        blob = self.out / "assigned.mide"
        results_path = self.out / "assignments.json"
        if manifest.exists() and blob.exists() and results_path.exists():
            return StageStatus("assign", "up-to-date", [str(manifest), str(results_path)])
        corpus = self.multi_corpus()
        results = retrieval.assign_blocked(
            corpus, self.bank(), self.cfg.primary(),
            threshold=self.cfg.threshold,
            block_size=self.cfg.block_size,
            worker_count=self.cfg.worker_count,
        )
        assigned = corpus.with_assignments(retrieval.assignments_as_dict(results))
        store.export(assigned, manifest, blob)
        _dump(
            [
                {
                    "face_id": r.face_id,
                    "best_identity": r.best_identity,
                    "best_similarity": r.best_similarity,
                    "second_best_similarity": r.second_best_similarity,
                    "assigned": r.assigned,
                }
                for r in results
            ],
            results_path,
        )
        return StageStatus("assign", "done", [str(manifest), str(results_path)])

    def stage_pair(self) -> StageStatus:
        pairs_path = self.out / "pairs.json"
        if pairs_path.exists():
            return StageStatus("pair", "up-to-date", [str(pairs_path)])
        corpus = self.assigned_corpus()
        paired, unpaired = pairing.build_pairs(corpus, self.bank(),
                                               rng_seed=self.cfg.stage_seed("pair"))
        _dump(
            {
                "paired": [
                    {
                        "target_image_id": p.target_image_id,
                        "identities": [
                            {
                                "identity_id": pi.identity_id,
                                "target_face_id": pi.target_face_id,
                                "reference_face_id": pi.reference_face_id,
                                "reference_image_id": pi.reference_image_id,
                            }
                            for pi in p.identities
                        ],
                    }
                    for p in paired
                ],
                "unpaired": unpaired,
            },
            pairs_path,
        )
        return StageStatus("pair", "done", [str(pairs_path)])

    def stage_split(self) -> StageStatus:
        path = self.out / "splits.json"
        if path.exists():
            return StageStatus("split", "up-to-date", [str(path)])
        corpus = self.assigned_corpus()
        bench, training = pairing.split_bench(corpus, self.bank(),
                                              self.cfg.bench_identity_count)
        _dump(
            {
                "bench": [
                    {
                        "sample_id": b.sample_id,
                        "gt_image_id": b.gt_image_id,
                        "identity_ids": list(b.identity_ids),
                        "gt_face_ids": list(b.gt_face_ids),
                        "reference_face_ids": {k: list(v)
                                               for k, v in b.reference_face_ids.items()},
                    }
                    for b in bench
                ],
                "training_image_ids": training,
            },
            path,
        )
        return StageStatus("split", "done", [str(path)])

    def stage_stats(self) -> StageStatus:
        json_path = self.out / "stats.json"
        csv_path = self.out / "stats.csv"
        if json_path.exists() and csv_path.exists():
            return StageStatus("stats", "up-to-date", [str(json_path), str(csv_path)])
        corpus = self.assigned_corpus()
        splits = {}
        splits_file = self.out / "splits.json"
        pairs_file = self.out / "pairs.json"
        if pairs_file.exists():
            pairs = json.loads(pairs_file.read_text())
            splits["multi-ID-paired"] = len(pairs["paired"])
            splits["multi-ID-unpaired"] = len(pairs["unpaired"])
        if splits_file.exists():
            sp = json.loads(splits_file.read_text())
            splits["bench"] = len(sp["bench"])
        stats = pairing.corpus_stats(corpus, splits or None)
        json_path.write_text(stats.to_json())
        stats.write_csv(csv_path)
        return StageStatus("stats", "done", [str(json_path), str(csv_path)])

    # ---- driver -----------------------------------------------------------

    def run_stage(self, stage: str) -> StageStatus:
        fn = {
            "cluster": self.stage_cluster,
            "bank": self.stage_bank,
            "assign": self.stage_assign,
            "pair": self.stage_pair,
            "split": self.stage_split,
            "stats": self.stage_stats,
        }[stage]
        try:
            return fn()
        except MultiIDError as exc:
            raise StageError(stage, exc) from exc

    def run_all(self) -> List[StageStatus]:
        t0 = time.monotonic()
        statuses = [self.run_stage(s) for s in STAGES]
        self.write_run_log(statuses, time.monotonic() - t0)
        return statuses

    def write_run_log(self, statuses: List[StageStatus], wall_time: float) -> None:
        log = {
            "pipeline_version": PIPELINE_VERSION,
            "config": self.cfg.model_dump(),
            "stage_seeds": {s: self.cfg.stage_seed(s) for s in STAGES},
            "stages": [{"stage": s.stage, "state": s.state, "artifacts": s.artifacts}
                       for s in statuses],
            "wall_time_seconds": wall_time,
        }
        (self.out / "run_log.json").write_text(json.dumps(log, indent=2, sort_keys=True))
