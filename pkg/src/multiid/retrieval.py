"""Identity assignment: match faces against all reference-bank centroids and
assign the argmax identity when its similarity strictly exceeds the threshold.

This is the throughput-critical path; `assign_blocked` shards the face matrix
into dense blocks processed by a worker pool and must produce results
identical to the scalar-per-face semantics of `assign`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cluster import ReferenceBank
from .errors import EmptyInputError
from .store import Corpus

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class AssignmentResult:
    face_id: str
    best_identity: Optional[str]
    best_similarity: float
    second_best_similarity: float
    assigned: bool


def _identity_scores(block: np.ndarray, C: np.ndarray,
                     boundaries: np.ndarray) -> np.ndarray:
    """Per-identity max-over-centroids similarity for a block of faces."""
    S = block @ C.T
    if boundaries.shape[0] == S.shape[1]:  # one centroid per identity
        return S
    return np.maximum.reduceat(S, boundaries, axis=1)


def _prepare(bank: ReferenceBank, backend_id: str):
    C, owners = bank.centroid_matrix(backend_id)
    # Identities are contiguous (centroid_matrix emits them sorted); record
    # where each identity's rows start for max-over-centroids aggregation.
    ids: List[str] = []
    starts: List[int] = []
    for i, owner in enumerate(owners):
        if not ids or owner != ids[-1]:
            ids.append(owner)
            starts.append(i)
    return C.astype(np.float32), ids, np.array(starts, dtype=np.intp)


def _results_for_block(block: np.ndarray, face_ids: Sequence[str], C, ids, starts,
                       threshold: float) -> List[AssignmentResult]:
    norms = np.linalg.norm(block, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scores = _identity_scores(block / norms, C, starts)
    # argmax returns the first (lexicographically smallest) identity on ties
    best_idx = np.argmax(scores, axis=1)
    best = scores[np.arange(scores.shape[0]), best_idx]
    if scores.shape[1] > 1:
        masked = scores.copy()
        masked[np.arange(scores.shape[0]), best_idx] = -np.inf
        second = masked.max(axis=1)
    else:
        second = np.full(scores.shape[0], -np.inf)
    out = []
    for i, face_id in enumerate(face_ids):
        assigned = bool(best[i] > threshold)
        out.append(AssignmentResult(
            face_id=face_id,
            best_identity=ids[int(best_idx[i])] if assigned else None,
            best_similarity=float(best[i]),
            second_best_similarity=float(second[i]),
            assigned=assigned,
        ))
    return out


def assign(
    corpus: Corpus,
    bank: ReferenceBank,
    backend_id: str,
    threshold: float = DEFAULT_THRESHOLD,
    face_ids: Optional[Sequence[str]] = None,
) -> List[AssignmentResult]:
    """Assign every face its argmax-similarity identity (strictly above threshold)."""
    if len(bank) == 0:
        raise EmptyInputError("reference bank is empty")
    C, ids, starts = _prepare(bank, backend_id)
    if face_ids is None:
        face_ids = [r.face_id for r in corpus.faces_for_backend(backend_id)]
    if not face_ids:
        raise EmptyInputError("no faces to assign")
    rows = [corpus.faces[fid].rows[backend_id] for fid in face_ids]
    block = corpus.matrices[backend_id][rows].astype(np.float32)
    return _results_for_block(block, face_ids, C, ids, starts, threshold)


def assign_blocked(
    corpus: Corpus,
    bank: ReferenceBank,
    backend_id: str,
    threshold: float = DEFAULT_THRESHOLD,
    block_size: int = 8192,
    worker_count: int = 8,
    face_ids: Optional[Sequence[str]] = None,
) -> List[AssignmentResult]:
    """Blocked, multi-worker version of `assign` with identical output.

    The block partition is fixed by block_size (not worker count), so results
    are bitwise reproducible for any worker_count.
    """
    if len(bank) == 0:
        raise EmptyInputError("reference bank is empty")
    if block_size <= 0:
        raise EmptyInputError(f"block_size must be positive, got {block_size}")
    C, ids, starts = _prepare(bank, backend_id)
    if face_ids is None:
        face_ids = [r.face_id for r in corpus.faces_for_backend(backend_id)]
    if not face_ids:
        raise EmptyInputError("no faces to assign")
    rows = np.array([corpus.faces[fid].rows[backend_id] for fid in face_ids], dtype=np.intp)
    mat = corpus.matrices[backend_id]

    blocks = [(i, min(i + block_size, len(face_ids))) for i in range(0, len(face_ids), block_size)]

    def work(span):
        lo, hi = span
        block = mat[rows[lo:hi]].astype(np.float32)
        return _results_for_block(block, face_ids[lo:hi], C, ids, starts, threshold)

    if worker_count <= 1 or len(blocks) == 1:
        chunks = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            chunks = list(pool.map(work, blocks))
    out: List[AssignmentResult] = []
    for chunk in chunks:
        out.extend(chunk)
    return out


def assignments_as_dict(results: Sequence[AssignmentResult]) -> Dict[str, Optional[str]]:
    return {r.face_id: r.best_identity for r in results}
