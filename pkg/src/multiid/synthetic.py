"""Synthetic corpus generators for tests, benchmarks, and the acceptance
suite. Identities are random unit directions in a high-dimensional space;
members are noisy copies, so same-identity cosine stays high while distinct
identities stay nearly orthogonal.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .store import Corpus, FaceRecord


def unit_rows(X: np.ndarray) -> np.ndarray:
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def identity_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n random unit directions; nearly orthogonal for dim >> log(n)."""
    return unit_rows(rng.normal(size=(n, dim)))


def noisy_members(direction: np.ndarray, count: int, noise: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Unit vectors clustered around a direction; noise is the per-component
    Gaussian sigma before renormalization."""
    return unit_rows(direction[None, :] + noise * rng.normal(size=(count, direction.size)))


def make_single_id_corpus(
    n_identities: int = 20,
    members_per_identity: int = 10,
    dim: int = 64,
    noise: float = 0.05,
    backend_id: str = "face-a",
    extra_backends: Sequence[str] = (),
    seed: int = 0,
    outlier_count: int = 0,
) -> Tuple[Corpus, np.ndarray]:
    """Single-ID corpus with identity query groups; returns (corpus, directions)."""
    rng = np.random.default_rng(seed)
    directions = identity_directions(n_identities, dim, rng)
    faces: List[FaceRecord] = []
    rows: Dict[str, List[np.ndarray]] = {backend_id: []}
    for b in extra_backends:
        rows[b] = []
    groups: Dict[str, List[str]] = {}
    cursor = 0
    for i in range(n_identities):
        identity = f"id{i:05d}"
        members = noisy_members(directions[i], members_per_identity, noise, rng)
        if outlier_count:
            members = np.vstack([members, identity_directions(outlier_count, dim, rng)])
        group = []
        for k in range(members.shape[0]):
            fid = f"{identity}-f{k:04d}"
            rec = FaceRecord(
                face_id=fid,
                image_id=f"{identity}-img{k:04d}",
                bbox=(0.0, 0.0, 100.0, 100.0),
                rows={backend_id: cursor, **{b: cursor for b in extra_backends}},
            )
            rows[backend_id].append(members[k])
            for b in extra_backends:
                rows[b].append(members[k])
            faces.append(rec)
            group.append(fid)
            cursor += 1
        groups[identity] = group
    matrices = {b: np.stack(v).astype(np.float32) for b, v in rows.items()}
    corpus = Corpus("synthetic-single", "single-ID", faces, matrices, groups=groups)
    return corpus, directions


def make_multi_id_corpus(
    directions: np.ndarray,
    n_images: int = 50,
    faces_per_image: Sequence[int] = (1, 2, 3),
    noise: float = 0.05,
    backend_id: str = "face-a",
    seed: int = 1,
    unknown_fraction: float = 0.0,
    identity_weights: Optional[np.ndarray] = None,
) -> Tuple[Corpus, Dict[str, str]]:
    """Multi-ID corpus drawn from known identity directions.

    Returns (corpus, truth) where truth maps face_id to the generating
    identity label ("" for unknown-identity filler faces).
    """
    rng = np.random.default_rng(seed)
    n_ids, dim = directions.shape
    faces: List[FaceRecord] = []
    vecs: List[np.ndarray] = []
    truth: Dict[str, str] = {}
    image_ids = []
    cursor = 0
    for img in range(n_images):
        image_id = f"multi-{img:05d}"
        image_ids.append(image_id)
        k = int(rng.choice(faces_per_image))
        chosen = rng.choice(n_ids, size=min(k, n_ids), replace=False,
                            p=identity_weights)
        for slot, idx in enumerate(chosen):
            fid = f"{image_id}-f{slot}"
            if rng.random() < unknown_fraction:
                v = identity_directions(1, dim, rng)[0]
                truth[fid] = ""
            else:
                v = noisy_members(directions[idx], 1, noise, rng)[0]
                truth[fid] = f"id{int(idx):05d}"
            faces.append(FaceRecord(fid, image_id, (0.0, 0.0, 80.0, 80.0),
                                    rows={backend_id: cursor}))
            vecs.append(v)
            cursor += 1
    matrices = {backend_id: np.stack(vecs).astype(np.float32)}
    corpus = Corpus("synthetic-multi", "multi-ID-unpaired", faces, matrices,
                    image_ids=image_ids)
    return corpus, truth


def vector_at_similarity(direction: np.ndarray, target_cos: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Unit vector with an exact cosine similarity to a unit direction."""
    d = direction.size
    g = rng.normal(size=d)
    g -= direction * (g @ direction)
    g /= np.linalg.norm(g)
    return target_cos * direction + np.sqrt(max(0.0, 1.0 - target_cos ** 2)) * g
