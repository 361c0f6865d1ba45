"""Paired-sample construction, benchmark splitting with leakage exclusion,
training-batch mixing, contrastive negative pools, and corpus statistics.

All randomness is seeded; every function here is deterministic given its
seed and inputs.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cluster import ReferenceBank
from .errors import DataError, EmptyInputError, InsufficientDataError
from .store import Corpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairedIdentity:
    identity_id: str
    target_face_id: str
    reference_face_id: str
    reference_image_id: str


@dataclass(frozen=True)
class PairedSample:
    target_image_id: str
    identities: Tuple[PairedIdentity, ...]


@dataclass(frozen=True)
class BenchSample:
    sample_id: str
    gt_image_id: str
    identity_ids: Tuple[str, ...]                       # 1-4 reference identities
    gt_face_ids: Tuple[str, ...]
    reference_face_ids: Dict[str, Tuple[str, ...]]      # identity -> reference faces
    prompt_handle: Optional[str] = None
    prompt_embedding_key: Optional[str] = None
    image_embedding_key: Optional[str] = None


@dataclass
class NegativePool:
    anchor_identity: Optional[str]
    identity_ids: List[str]          # owner of each embedding
    embeddings: np.ndarray           # (M, D)
    truncated: bool = False

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


def _images_by_id(corpus: Corpus) -> Dict[str, List]:
    images: Dict[str, List] = {}
    for rec in corpus.faces.values():
        images.setdefault(rec.image_id, []).append(rec)
    return images


def build_pairs(corpus: Corpus, bank: ReferenceBank, rng_seed: int = 0
                ) -> Tuple[List[PairedSample], List[str]]:
    """One PairedSample per multi-ID image whose identified faces all have at
    least two bank references; everything else goes to the unpaired split.

    The reference for each identity is chosen uniformly at random (seeded)
    among its bank members, excluding the target image itself.
    """
    rng = np.random.default_rng(rng_seed)
    paired: List[PairedSample] = []
    unpaired: List[str] = []
    images = _images_by_id(corpus)
    for image_id in corpus.image_ids:
        records = images.get(image_id, [])
        identified = [r for r in records if r.identity_id is not None]
        # a single unidentified face disqualifies the whole image: a paired
        # sample needs a reference for every face it shows
        ok = bool(identified) and len(identified) == len(records)
        choices = []
        for rec in sorted(identified, key=lambda r: r.face_id):
            entry = bank.identities.get(rec.identity_id)
            if entry is None or len(entry.member_face_ids) < 2:
                ok = False
                break
            eligible = [(f, im) for f, im in zip(entry.member_face_ids, entry.member_image_ids)
                        if im != image_id]
            if not eligible:
                ok = False
                break
            choices.append((rec, eligible))
        if not ok:
            unpaired.append(image_id)
            continue
        ids = []
        for rec, eligible in choices:
            pick = eligible[int(rng.integers(len(eligible)))]
            ids.append(PairedIdentity(rec.identity_id, rec.face_id, pick[0], pick[1]))
        paired.append(PairedSample(image_id, tuple(ids)))
    return paired, unpaired


def identity_appearance_counts(corpus: Corpus) -> Counter:
    counts: Counter = Counter()
    for rec in corpus.faces.values():
        if rec.identity_id is not None:
            counts[rec.identity_id] += 1
    return counts


def split_bench(
    corpus: Corpus,
    bank: ReferenceBank,
    bench_identity_count: int,
    max_references_per_identity: int = 4,
) -> Tuple[List[BenchSample], List[str]]:
    """Draw bench identities from the long-tail (least frequent) end and strip
    every image containing any of them from the training split.

    Returns (bench samples, training image_ids). Identity sets of the two
    sides never overlap.
    """
    counts = identity_appearance_counts(corpus)
    if bench_identity_count <= 0:
        raise DataError(f"bench_identity_count must be positive, got {bench_identity_count}")
    eligible = [i for i in counts if i in bank.identities]
    if len(eligible) < bench_identity_count:
        raise InsufficientDataError(
            f"need {bench_identity_count} long-tail identities, only {len(eligible)} available"
        )
    # Ascending appearance count, identity_id tiebreak.
    ranked = sorted(eligible, key=lambda i: (counts[i], i))
    bench_ids = set(ranked[:bench_identity_count])

    images = _images_by_id(corpus)
    bench: List[BenchSample] = []
    training: List[str] = []
    for image_id in corpus.image_ids:
        records = images.get(image_id, [])
        present = {r.identity_id for r in records if r.identity_id is not None}
        if present & bench_ids:
            sample_ids = sorted(present & bench_ids)
            gt_faces = sorted(r.face_id for r in records
                              if r.identity_id in bench_ids)
            if not (1 <= len(sample_ids) <= 4):
                continue  # outside the benchmark protocol's identity range
            refs = {}
            for identity_id in sample_ids:
                members = bank.identities[identity_id].member_face_ids
                refs[identity_id] = tuple(members[:max_references_per_identity])
            bench.append(BenchSample(
                sample_id=f"bench-{image_id}",
                gt_image_id=image_id,
                identity_ids=tuple(sample_ids),
                gt_face_ids=tuple(gt_faces),
                reference_face_ids=refs,
            ))
        else:
            training.append(image_id)
    return bench, training


@dataclass(frozen=True)
class BatchItem:
    image_id: str
    paired: bool  # False = reconstruction (reference == target)


@dataclass(frozen=True)
class BatchDescriptor:
    items: Tuple[BatchItem, ...]

    @property
    def paired_fraction(self) -> float:
        if not self.items:
            return 0.0
        return sum(1 for it in self.items if it.paired) / len(self.items)


def sample_training_batch(
    paired_pool: Sequence[str],
    unpaired_pool: Sequence[str],
    batch_size: int,
    paired_fraction: float = 0.5,
    rng: Optional[np.random.Generator] = None,
    rng_seed: Optional[int] = None,
) -> BatchDescriptor:
    """Mix paired and reconstruction items: each slot flips a seeded
    Bernoulli(paired_fraction) coin, then draws from the matching pool."""
    if batch_size <= 0:
        raise DataError(f"batch_size must be positive, got {batch_size}")
    if not paired_pool or not unpaired_pool:
        raise EmptyInputError("both pools must be non-empty")
    if not (0.0 <= paired_fraction <= 1.0):
        raise DataError(f"paired_fraction must be in [0, 1], got {paired_fraction}")
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    items = []
    for _ in range(batch_size):
        take_paired = bool(rng.random() < paired_fraction)
        pool = paired_pool if take_paired else unpaired_pool
        items.append(BatchItem(pool[int(rng.integers(len(pool)))], take_paired))
    return BatchDescriptor(tuple(items))


def build_negative_pool(
    bank: ReferenceBank,
    size: int,
    anchor_identity: Optional[str] = None,
    backend_id: Optional[str] = None,
    rng_seed: int = 0,
) -> NegativePool:
    """Sample contrastive negatives from the bank, excluding every member of
    the anchor identity when it is known. Uniform, without replacement; if the
    eligible pool is smaller than requested, the pool is truncated (flagged),
    never silently duplicated."""
    if len(bank) == 0:
        raise EmptyInputError("reference bank is empty")
    if backend_id is None:
        backend_id = bank.backend_ids[0]
    owners: List[str] = []
    mats: List[np.ndarray] = []
    for identity_id in bank.identity_ids:
        if anchor_identity is not None and identity_id == anchor_identity:
            continue
        entry = bank.identities[identity_id]
        mat = entry.member_matrix.get(backend_id)
        if mat is None or mat.shape[0] == 0:
            continue
        mats.append(mat)
        owners.extend([identity_id] * mat.shape[0])
    if not mats:
        raise EmptyInputError("no eligible negatives in the bank")
    X = np.vstack(mats)
    rng = np.random.default_rng(rng_seed)
    truncated = size > X.shape[0]
    if truncated:
        logger.warning("negative pool truncated: requested %d, eligible %d", size, X.shape[0])
        take = np.arange(X.shape[0])
        rng.shuffle(take)
    else:
        take = rng.choice(X.shape[0], size=size, replace=False)
    return NegativePool(
        anchor_identity=anchor_identity,
        identity_ids=[owners[i] for i in take],
        embeddings=X[take].astype(np.float64),
        truncated=truncated,
    )


@dataclass
class CorpusStats:
    identity_histogram: Dict[str, int] = field(default_factory=dict)
    faces_per_image: Dict[int, int] = field(default_factory=dict)
    split_sizes: Dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "identity_histogram": self.identity_histogram,
                "faces_per_image": {str(k): v for k, v in sorted(self.faces_per_image.items())},
                "split_sizes": self.split_sizes,
            },
            indent=2,
            sort_keys=True,
        )

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kind", "key", "count"])
            for k in sorted(self.identity_histogram):
                w.writerow(["identity", k, self.identity_histogram[k]])
            for k in sorted(self.faces_per_image):
                w.writerow(["faces_per_image", k, self.faces_per_image[k]])
            for k in sorted(self.split_sizes):
                w.writerow(["split", k, self.split_sizes[k]])


def corpus_stats(corpus: Corpus, split_sizes: Optional[Dict[str, int]] = None) -> CorpusStats:
    """Appearance histogram per identity, faces-per-image histogram, split sizes."""
    stats = CorpusStats()
    stats.identity_histogram = dict(sorted(identity_appearance_counts(corpus).items()))
    per_image = Counter(len(v) for v in _images_by_id(corpus).values())
    stats.faces_per_image = dict(sorted(per_image.items()))
    stats.split_sizes = dict(split_sizes or {corpus.split: len(corpus.image_ids)})
    return stats
