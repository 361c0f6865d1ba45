"""Benchmark metric suite: optimal face matching, identity similarity to
ground truth and to references, copy-paste score, identity blending,
CLIP-space scores, and report aggregation.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embeddings import Embedding, similarity_matrix
from .errors import DataError, EmptyInputError
from .pairing import BenchSample
from .store import Corpus

REPORT_VERSION = 1


@dataclass(frozen=True)
class MatchedFaces:
    """Optimal generated-to-target assignment by total cosine similarity."""

    pairs: Tuple[Tuple[int, int], ...]       # (gen index, tgt index)
    pair_similarities: Tuple[float, ...]
    unmatched_gen: Tuple[int, ...]
    unmatched_tgt: Tuple[int, ...]

    @property
    def total(self) -> float:
        return float(sum(self.pair_similarities))


def match_faces_matrix(S: np.ndarray) -> MatchedFaces:
    """Optimal bipartite assignment on a precomputed similarity matrix."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise EmptyInputError("matching requires a non-empty similarity matrix")
    rows, cols = linear_sum_assignment(-S)
    order = np.argsort(rows)
    pairs = tuple((int(rows[k]), int(cols[k])) for k in order)
    sims = tuple(float(S[i, j]) for i, j in pairs)
    used_g = {i for i, _ in pairs}
    used_t = {j for _, j in pairs}
    return MatchedFaces(
        pairs=pairs,
        pair_similarities=sims,
        unmatched_gen=tuple(i for i in range(S.shape[0]) if i not in used_g),
        unmatched_tgt=tuple(j for j in range(S.shape[1]) if j not in used_t),
    )


def match_faces(gen: Sequence[Embedding], tgt: Sequence[Embedding]) -> MatchedFaces:
    """Match generated faces to target faces, maximizing total cosine similarity."""
    if len(gen) == 0 or len(tgt) == 0:
        raise EmptyInputError("match_faces requires at least one face per side")
    return match_faces_matrix(similarity_matrix(gen, tgt).values)


def id_similarity(
    matched: MatchedFaces,
    per_backend_sims: Dict[str, Optional[np.ndarray]],
) -> Tuple[float, Dict[str, float], List[str]]:
    """Mean matched-pair ("diagonal") cosine per backend, then the unweighted
    mean over backends. Matching comes from the designated primary backend and
    is reused across channels. Missing channels are flagged and excluded."""
    per_backend: Dict[str, float] = {}
    missing: List[str] = []
    for backend_id, S in per_backend_sims.items():
        if S is None:
            missing.append(backend_id)
            continue
        vals = [float(S[i, j]) for i, j in matched.pairs]
        per_backend[backend_id] = float(np.mean(vals))
    if not per_backend:
        raise EmptyInputError("no backend channel available for id_similarity")
    overall = float(np.mean(list(per_backend.values())))
    return overall, per_backend, missing


def copy_paste(sim_ref: float, sim_gt: float) -> float:
    """Normalized copy-paste score: (sim_ref - sim_gt) / (1 - sim_gt), clipped
    to [-1, 1]. Equal similarities give exactly 0; a verbatim reference copy
    (sim_ref = 1) saturates at 1."""
    for name, v in (("sim_ref", sim_ref), ("sim_gt", sim_gt)):
        if not (-1.0 - 1e-9 <= v <= 1.0 + 1e-9):
            raise DataError(f"{name} out of [-1, 1]: {v}")
    if sim_ref == sim_gt:
        return 0.0
    if sim_gt >= 1.0:
        return -1.0  # generated is already the GT; any lower sim_ref is anti-copy
    return float(np.clip((sim_ref - sim_gt) / (1.0 - sim_gt), -1.0, 1.0))


def blend(S: np.ndarray, matched: MatchedFaces) -> Optional[float]:
    """Mean off-diagonal cross-identity similarity, indices aligned so the
    matching occupies the diagonal. Undefined (None) below two identities."""
    n = len(matched.pairs)
    if n < 2:
        return None
    gen_idx = [i for i, _ in matched.pairs]
    tgt_idx = [j for _, j in matched.pairs]
    total = 0.0
    for a in range(n):
        for b in range(n):
            if a != b:
                total += float(S[gen_idx[a], tgt_idx[b]])
    return total / (n * n - n)


def clip_scores(
    gen_image: Optional[Embedding],
    gt_image: Optional[Embedding],
    prompt: Optional[Embedding],
) -> Tuple[Optional[float], Optional[float]]:
    """(CLIP-I, CLIP-T): cosine of the generated image embedding against the
    GT image embedding and the prompt embedding. Missing inputs give None."""
    from .embeddings import cosine

    clip_i = cosine(gen_image, gt_image) if gen_image is not None and gt_image is not None else None
    clip_t = cosine(gen_image, prompt) if gen_image is not None and prompt is not None else None
    return clip_i, clip_t


@dataclass
class SampleMetrics:
    sample_id: str
    identity_count: int
    sim_gt: float
    sim_ref: float
    sim_ref_mean: float
    copy_paste: float
    copy_paste_raw: float
    blend: Optional[float]
    clip_i: Optional[float]
    clip_t: Optional[float]
    aesthetic: Optional[float]
    sim_gt_per_backend: Dict[str, float] = field(default_factory=dict)
    sim_ref_per_backend: Dict[str, float] = field(default_factory=dict)
    missing_backends: List[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


METRIC_FIELDS = ("sim_gt", "sim_ref", "copy_paste", "copy_paste_raw",
                 "blend", "clip_i", "clip_t", "aesthetic")


@dataclass
class EvalReport:
    samples: List[SampleMetrics]
    skipped: List[str]
    aggregates: Dict[str, float] = field(default_factory=dict)
    subsets: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def finalize(self) -> "EvalReport":
        def agg(items: List[SampleMetrics]) -> Dict[str, float]:
            out = {}
            for name in METRIC_FIELDS:
                vals = [getattr(s, name) for s in items if getattr(s, name) is not None]
                if vals:
                    out[name] = float(np.mean(vals))
            out["sample_count"] = len(items)
            return out

        self.aggregates = agg(self.samples)
        self.subsets = {
            "1": agg([s for s in self.samples if s.identity_count == 1]),
            "2": agg([s for s in self.samples if s.identity_count == 2]),
            "3-4": agg([s for s in self.samples if s.identity_count in (3, 4)]),
        }
        return self

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": REPORT_VERSION,
                "aggregates": self.aggregates,
                "subsets": self.subsets,
                "skipped": sorted(self.skipped),
                "skipped_count": len(self.skipped),
                "samples": [s.to_json_obj() for s in
                            sorted(self.samples, key=lambda s: s.sample_id)],
            },
            indent=2,
            sort_keys=True,
        )

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "identity_count"] + list(METRIC_FIELDS))
            for s in sorted(self.samples, key=lambda s: s.sample_id):
                w.writerow([s.sample_id, s.identity_count]
                           + [getattr(s, name) for name in METRIC_FIELDS])

    def summary(self) -> str:
        lines = [f"evaluated {len(self.samples)} samples ({len(self.skipped)} skipped)"]
        for name in METRIC_FIELDS:
            if name in self.aggregates:
                lines.append(f"  {name:>14s}: {self.aggregates[name]: .4f}")
        return "\n".join(lines)


def _gather(corpus: Corpus, face_ids: Sequence[str], backend_id: str
            ) -> Optional[List[Embedding]]:
    try:
        return [corpus.embedding(fid, backend_id) for fid in face_ids]
    except KeyError:
        return None


def evaluate(
    bench: Sequence[BenchSample],
    bench_corpus: Corpus,
    generated: Corpus,
    face_backends: Sequence[str],
    primary_backend: Optional[str] = None,
    image_embeddings: Optional[Dict[str, Embedding]] = None,
    prompt_embeddings: Optional[Dict[str, Embedding]] = None,
    gen_image_embeddings: Optional[Dict[str, Embedding]] = None,
    reference_corpus: Optional[Corpus] = None,
) -> EvalReport:
    """Score a generated corpus (faces keyed by sample_id as image_id) against
    the benchmark's ground truth and references.

    Matching is computed once on the primary backend and reused for every
    channel. Missing generated samples are skipped, counted, and excluded
    from the aggregates.
    """
    if not bench:
        raise EmptyInputError("empty bench set")
    if primary_backend is None:
        primary_backend = face_backends[0]
    if reference_corpus is None:
        reference_corpus = bench_corpus
    gen_by_image: Dict[str, List] = {}
    for rec in generated.faces.values():
        gen_by_image.setdefault(rec.image_id, []).append(rec)

    samples: List[SampleMetrics] = []
    skipped: List[str] = []
    for bs in bench:
        gen_recs = sorted(gen_by_image.get(bs.sample_id, []), key=lambda r: r.face_id)
        if not gen_recs:
            skipped.append(bs.sample_id)
            continue
        gen_ids = [r.face_id for r in gen_recs]
        gt_ids = list(bs.gt_face_ids)

        gen_primary = [generated.embedding(fid, primary_backend) for fid in gen_ids]
        gt_primary = [bench_corpus.embedding(fid, primary_backend) for fid in gt_ids]
        S_primary = similarity_matrix(gen_primary, gt_primary).values
        matched = match_faces_matrix(S_primary)

        # Per-backend gen x gt similarity matrices sharing the primary matching.
        sims_gt: Dict[str, Optional[np.ndarray]] = {}
        for b in face_backends:
            g = _gather(generated, gen_ids, b)
            t = _gather(bench_corpus, gt_ids, b)
            sims_gt[b] = similarity_matrix(g, t).values if g and t else None
        sim_gt, sim_gt_pb, missing = id_similarity(matched, sims_gt)

        # Sim_Ref: each matched generated face against its identity's references.
        gt_identity = {i: bench_corpus.faces[fid].identity_id for i, fid in enumerate(gt_ids)}
        ref_max_pb: Dict[str, List[float]] = {}
        ref_mean_pb: Dict[str, List[float]] = {}
        for gi, tj in matched.pairs:
            identity = gt_identity.get(tj)
            ref_ids = bs.reference_face_ids.get(identity, ())
            if not ref_ids:
                continue
            for b in face_backends:
                g = _gather(generated, [gen_ids[gi]], b)
                refs = _gather(reference_corpus, ref_ids, b)
                if not g or not refs:
                    continue
                vals = similarity_matrix(g, refs).values[0]
                ref_max_pb.setdefault(b, []).append(float(vals.max()))
                ref_mean_pb.setdefault(b, []).append(float(vals.mean()))
        sim_ref_pb = {b: float(np.mean(v)) for b, v in ref_max_pb.items()}
        sim_ref = float(np.mean(list(sim_ref_pb.values()))) if sim_ref_pb else float("nan")
        sim_ref_mean = (
            float(np.mean([float(np.mean(v)) for v in ref_mean_pb.values()]))
            if ref_mean_pb else float("nan")
        )

        cp = copy_paste(sim_ref, sim_gt) if np.isfinite(sim_ref) else float("nan")
        cp_raw = sim_ref - sim_gt if np.isfinite(sim_ref) else float("nan")
        bld = blend(S_primary, matched)

        gen_img = (gen_image_embeddings or {}).get(bs.sample_id)
        gt_img = (image_embeddings or {}).get(bs.image_embedding_key or bs.sample_id)
        prompt = (prompt_embeddings or {}).get(bs.prompt_embedding_key or bs.sample_id)
        clip_i, clip_t = clip_scores(gen_img, gt_img, prompt)

        qualities = [r.quality for r in gen_recs if r.quality is not None]
        aesthetic = float(np.mean(qualities)) if qualities else None

        samples.append(SampleMetrics(
            sample_id=bs.sample_id,
            identity_count=len(bs.identity_ids),
            sim_gt=sim_gt,
            sim_ref=sim_ref,
            sim_ref_mean=sim_ref_mean,
            copy_paste=cp,
            copy_paste_raw=cp_raw,
            blend=bld,
            clip_i=clip_i,
            clip_t=clip_t,
            aesthetic=aesthetic,
            sim_gt_per_backend=sim_gt_pb,
            sim_ref_per_backend=sim_ref_pb,
            missing_backends=missing,
        ))
    return EvalReport(samples=samples, skipped=skipped).finalize()
