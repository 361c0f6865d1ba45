"""Core vector math: embeddings, cosine similarity, similarity matrices, and
the 5-point similarity-transform estimator used for landmark-based cropping.

All operations are pure and operate on immutable values; they are safe to
call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BackendMismatchError,
    DegenerateLandmarksError,
    EmptyInputError,
    ZeroNormError,
)

NORM_TOLERANCE = 1e-6

# Destination coordinates of the canonical 5-point face crop (112x112 output,
# order: left eye, right eye, nose tip, left mouth corner, right mouth corner).
# Configuration constant, overridable per deployment.
CROP_TEMPLATE_112 = np.array(
    [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ],
    dtype=np.float64,
)
CROP_SIZE = 112


@dataclass(frozen=True)
class Embedding:
    """A real vector in a backend-specific space, e.g. a 512-d face embedding."""

    values: np.ndarray
    backend_id: str
    raw_norm: float = field(default=1.0, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise EmptyInputError(f"embedding must be a non-empty 1-d vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ZeroNormError(f"embedding for backend {self.backend_id!r} has non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def normalize(self) -> "Embedding":
        n = self.norm()
        if n == 0.0:
            raise ZeroNormError(f"cannot normalize zero vector (backend {self.backend_id!r})")
        return Embedding(self.values / n, self.backend_id, raw_norm=n)


def _check_pair(a: Embedding, b: Embedding) -> None:
    if a.backend_id != b.backend_id:
        raise BackendMismatchError(f"backend mismatch: {a.backend_id!r} vs {b.backend_id!r}")
    if a.dim != b.dim:
        raise BackendMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two embeddings from the same backend, in [-1, 1]."""
    _check_pair(a, b)
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine undefined for zero-norm input")
    value = float(np.dot(a.values, b.values) / (na * nb))
    return min(1.0, max(-1.0, value))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities: rows = generated faces, cols = targets."""

    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def transpose(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.values.T.copy())


def similarity_matrix(gen: Sequence[Embedding], tgt: Sequence[Embedding]) -> SimilarityMatrix:
    """Dense cosine-similarity matrix between two embedding sequences."""
    if len(gen) == 0 or len(tgt) == 0:
        raise EmptyInputError("similarity_matrix requires non-empty inputs")
    backend = gen[0].backend_id
    for e in list(gen) + list(tgt):
        if e.backend_id != backend:
            raise BackendMismatchError(f"mixed backends: {backend!r} vs {e.backend_id!r}")
    G = np.stack([e.values for e in gen])
    T = np.stack([e.values for e in tgt])
    gn = np.linalg.norm(G, axis=1, keepdims=True)
    tn = np.linalg.norm(T, axis=1, keepdims=True)
    if np.any(gn == 0) or np.any(tn == 0):
        raise ZeroNormError("zero-norm embedding in similarity_matrix input")
    S = (G / gn) @ (T / tn).T
    return SimilarityMatrix(np.clip(S, -1.0, 1.0))


@dataclass(frozen=True)
class Landmarks5:
    """Five facial keypoints in pixel coordinates.

    Order: left eye, right eye, nose tip, left mouth corner, right mouth corner.
    """

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", p)
        if p.shape != (5, 2):
            raise DegenerateLandmarksError(f"landmarks must be 5x2, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DegenerateLandmarksError("landmarks contain non-finite coordinates")


@dataclass(frozen=True)
class SimilarityTransform:
    """2-d similarity transform: x -> scale * R @ x + t (no reflection)."""

    matrix: np.ndarray       # 2x2, scale * rotation
    translation: np.ndarray  # (2,)
    scale: float
    rotation: float          # radians
    residual: float          # RMS point error after transform

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T + self.translation

    def as_matrix_2x3(self) -> np.ndarray:
        return np.hstack([self.matrix, self.translation.reshape(2, 1)])


def _collinear(points: np.ndarray) -> bool:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s[0] == 0.0 or s[1] / s[0] < 1e-9


def estimate_alignment(src: Landmarks5, dst: Landmarks5) -> SimilarityTransform:
    """Least-squares similarity transform (uniform scale + rotation + translation)
    mapping src landmarks onto dst. The reflection branch is disallowed: the
    returned rotation always has determinant +1.
    """
    sp, dp = src.points, dst.points
    if _collinear(sp):
        raise DegenerateLandmarksError("source landmarks are collinear")
    if _collinear(dp):
        raise DegenerateLandmarksError("destination landmarks are collinear")

    mu_s = sp.mean(axis=0)
    mu_d = dp.mean(axis=0)
    sc = sp - mu_s
    dc = dp - mu_d
    cov = dc.T @ sc / sp.shape[0]
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, d])
    R = U @ D @ Vt
    var_s = float((sc ** 2).sum() / sp.shape[0])
    if var_s == 0.0:
        raise DegenerateLandmarksError("source landmarks are coincident")
    scale = float(np.trace(np.diag(S) @ D) / var_s)
    if scale <= 0.0:
        raise DegenerateLandmarksError("estimated non-positive scale")
    t = mu_d - scale * (R @ mu_s)
    M = scale * R
    mapped = sp @ M.T + t
    residual = float(np.sqrt(np.mean(np.sum((mapped - dp) ** 2, axis=1))))
    rotation = float(np.arctan2(R[1, 0], R[0, 0]))
    return SimilarityTransform(M, t, scale, rotation, residual)
