"""Interchange format and corpus storage.

Embeddings live in a binary blob: magic ``MIDE``, a little-endian u32 version,
a u32 backend-block count, then per backend: length-prefixed UTF-8 backend id,
u32 dimension, u64 row count, and a row-major float32 little-endian matrix.
Face metadata (bboxes, landmarks, identity labels, blob row indices) lives in
a sidecar JSON manifest keyed by face_id.

Ingestion validates and normalizes: rows whose L2 norm is already within
1e-4 of 1 pass through byte-identical, everything else is renormalized, so
export/ingest round trips are stable.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .embeddings import Embedding, Landmarks5
from .errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    DimensionMismatchError,
    DuplicateFaceIdError,
    NonFiniteValueError,
    VersionMismatchError,
)

MAGIC = b"MIDE"
BLOB_VERSION = 1
MANIFEST_VERSION = 1
NORM_PASS_THROUGH = 1e-4

SPLIT_TAGS = ("single-ID", "multi-ID-paired", "multi-ID-unpaired", "bench")


def data_root() -> Path:
    """Default corpus directory, from MULTIID_DATA_ROOT or the cwd."""
    return Path(os.environ.get("MULTIID_DATA_ROOT", "."))


@dataclass
class FaceRecord:
    """One detected face and its per-backend embedding rows."""

    face_id: str
    image_id: str
    bbox: Tuple[float, float, float, float]
    landmarks: Optional[Landmarks5] = None
    rows: Dict[str, int] = field(default_factory=dict)
    quality: Optional[float] = None
    identity_id: Optional[str] = None

    def validate(self) -> None:
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise DataError(f"face {self.face_id!r}: bbox must have positive size, got {self.bbox}")


def write_blob(path: Path, matrices: Dict[str, np.ndarray]) -> None:
    """Write per-backend float32 matrices in the MIDE blob layout."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", BLOB_VERSION))
        f.write(struct.pack("<I", len(matrices)))
        for backend_id, mat in matrices.items():
            mat = np.ascontiguousarray(mat, dtype="<f4")
            bid = backend_id.encode("utf-8")
            f.write(struct.pack("<I", len(bid)))
            f.write(bid)
            f.write(struct.pack("<I", mat.shape[1]))
            f.write(struct.pack("<Q", mat.shape[0]))
            f.write(mat.tobytes())


def read_blob(path: Path) -> Dict[str, np.ndarray]:
    """Read a MIDE blob into per-backend float32 matrices."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}, got {raw[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != BLOB_VERSION:
        raise VersionMismatchError(f"{path}: blob version {version}, expected {BLOB_VERSION}")
    (n_backends,) = struct.unpack_from("<I", raw, off)
    off += 4
    out: Dict[str, np.ndarray] = {}
    for _ in range(n_backends):
        (blen,) = struct.unpack_from("<I", raw, off)
        off += 4
        backend_id = raw[off : off + blen].decode("utf-8")
        off += blen
        (dim,) = struct.unpack_from("<I", raw, off)
        off += 4
        (rows,) = struct.unpack_from("<Q", raw, off)
        off += 8
        nbytes = rows * dim * 4
        if off + nbytes > len(raw):
            raise CountMismatchError(
                f"{path}: backend {backend_id!r} declares {rows} rows x {dim} dims "
                f"but the blob is truncated"
            )
        mat = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=off).reshape(rows, dim)
        off += nbytes
        out[backend_id] = mat.copy()
    return out


class Corpus:
    """An immutable, validated collection of faces and their embeddings."""

    def __init__(
        self,
        corpus_id: str,
        split: str,
        faces: List[FaceRecord],
        matrices: Dict[str, np.ndarray],
        image_ids: Optional[List[str]] = None,
        groups: Optional[Dict[str, List[str]]] = None,
    ):
        self.corpus_id = corpus_id
        self.split = split
        self.faces: Dict[str, FaceRecord] = {}
        for rec in faces:
            if rec.face_id in self.faces:
                raise DuplicateFaceIdError(f"duplicate face_id {rec.face_id!r}")
            rec.validate()
            self.faces[rec.face_id] = rec
        self.matrices = {b: np.asarray(m, dtype=np.float32) for b, m in matrices.items()}
        self.groups = groups or {}
        if image_ids is None:
            seen = dict.fromkeys(r.image_id for r in faces)
            image_ids = list(seen)
        self.image_ids = image_ids
        self._validate()

    def _validate(self) -> None:
        if self.split not in SPLIT_TAGS:
            raise DataError(f"unknown split tag {self.split!r}")
        used = {b: 0 for b in self.matrices}
        for rec in self.faces.values():
            for backend_id, row in rec.rows.items():
                if backend_id not in self.matrices:
                    raise DimensionMismatchError(
                        f"face {rec.face_id!r} references unknown backend {backend_id!r}"
                    )
                mat = self.matrices[backend_id]
                if not (0 <= row < mat.shape[0]):
                    raise CountMismatchError(
                        f"face {rec.face_id!r}: row {row} out of range for backend "
                        f"{backend_id!r} ({mat.shape[0]} rows)"
                    )
                used[backend_id] += 1
        for backend_id, mat in self.matrices.items():
            if used[backend_id] != mat.shape[0]:
                raise CountMismatchError(
                    f"backend {backend_id!r}: blob has {mat.shape[0]} rows but the manifest "
                    f"references {used[backend_id]}"
                )

    @property
    def backends(self) -> Dict[str, int]:
        return {b: int(m.shape[1]) for b, m in self.matrices.items()}

    def face_count(self) -> int:
        return len(self.faces)

    def embedding(self, face_id: str, backend_id: str) -> Embedding:
        rec = self.faces[face_id]
        row = rec.rows[backend_id]
        return Embedding(self.matrices[backend_id][row].astype(np.float64), backend_id)

    def faces_for_backend(self, backend_id: str) -> List[FaceRecord]:
        """Faces carrying an embedding for backend_id, in blob row order."""
        recs = [r for r in self.faces.values() if backend_id in r.rows]
        recs.sort(key=lambda r: r.rows[backend_id])
        return recs

    def with_assignments(self, assignments: Dict[str, Optional[str]]) -> "Corpus":
        faces = []
        for rec in self.faces.values():
            identity = assignments.get(rec.face_id, rec.identity_id)
            faces.append(
                FaceRecord(rec.face_id, rec.image_id, rec.bbox, rec.landmarks,
                           dict(rec.rows), rec.quality, identity)
            )
        return Corpus(self.corpus_id, self.split, faces, self.matrices,
                      list(self.image_ids), dict(self.groups))


def _face_to_json(rec: FaceRecord) -> dict:
    out = {
        "face_id": rec.face_id,
        "image_id": rec.image_id,
        "bbox": list(rec.bbox),
        "rows": rec.rows,
    }
    if rec.landmarks is not None:
        out["landmarks"] = rec.landmarks.points.tolist()
    if rec.quality is not None:
        out["quality"] = rec.quality
    if rec.identity_id is not None:
        out["identity_id"] = rec.identity_id
    return out


def _face_from_json(obj: dict) -> FaceRecord:
    lmk = obj.get("landmarks")
    return FaceRecord(
        face_id=obj["face_id"],
        image_id=obj["image_id"],
        bbox=tuple(obj["bbox"]),
        landmarks=Landmarks5(np.array(lmk, dtype=np.float64)) if lmk is not None else None,
        rows={k: int(v) for k, v in obj["rows"].items()},
        quality=obj.get("quality"),
        identity_id=obj.get("identity_id"),
    )


def export(corpus: Corpus, manifest_path: Path, blob_path: Path) -> None:
    """Write a corpus to the interchange pair (JSON manifest + MIDE blob)."""
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path)
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "corpus_id": corpus.corpus_id,
        "split": corpus.split,
        "backends": [
            {"backend_id": b, "dimension": d} for b, d in sorted(corpus.backends.items())
        ],
        "counts": {"images": len(corpus.image_ids), "faces": corpus.face_count()},
        "image_ids": list(corpus.image_ids),
        "faces": [_face_to_json(r) for r in corpus.faces.values()],
    }
    if corpus.groups:
        manifest["groups"] = corpus.groups
    try:
        write_blob(blob_path, corpus.matrices)
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise DataError(f"export failed for {manifest_path} / {blob_path}: {exc}") from exc


def ingest(manifest_path: Path, blob_path: Path) -> Corpus:
    """Load, validate, and normalize a corpus from the interchange pair."""
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise VersionMismatchError(
            f"{manifest_path}: manifest schema {manifest.get('schema_version')}, "
            f"expected {MANIFEST_VERSION}"
        )
    matrices = read_blob(blob_path)

    declared = {b["backend_id"]: b["dimension"] for b in manifest["backends"]}
    for backend_id, dim in declared.items():
        if backend_id not in matrices:
            raise CountMismatchError(f"manifest declares backend {backend_id!r} missing from blob")
        if matrices[backend_id].shape[1] != dim:
            raise DimensionMismatchError(
                f"backend {backend_id!r}: manifest dimension {dim} != blob "
                f"{matrices[backend_id].shape[1]}"
            )
    for backend_id in matrices:
        if backend_id not in declared:
            raise CountMismatchError(f"blob contains undeclared backend {backend_id!r}")

    faces_json = manifest["faces"]
    seen_ids = set()
    faces = []
    for obj in faces_json:
        rec = _face_from_json(obj)
        if rec.face_id in seen_ids:
            raise DuplicateFaceIdError(f"duplicate face_id {rec.face_id!r} in manifest")
        seen_ids.add(rec.face_id)
        faces.append(rec)

    if manifest["counts"]["faces"] != len(faces):
        raise CountMismatchError(
            f"manifest declares {manifest['counts']['faces']} faces but lists {len(faces)}"
        )

    # Non-finite scan with face attribution, then normalization.
    row_owner = {}
    for rec in faces:
        for backend_id, row in rec.rows.items():
            row_owner[(backend_id, row)] = rec.face_id
    for backend_id, mat in matrices.items():
        bad = np.where(~np.isfinite(mat).all(axis=1))[0]
        if bad.size:
            face_id = row_owner.get((backend_id, int(bad[0])), "<unreferenced>")
            raise NonFiniteValueError(
                f"backend {backend_id!r}: non-finite embedding at row {int(bad[0])} "
                f"(face {face_id!r})"
            )
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        zero = np.where(norms == 0)[0]
        if zero.size:
            face_id = row_owner.get((backend_id, int(zero[0])), "<unreferenced>")
            raise NonFiniteValueError(
                f"backend {backend_id!r}: zero-norm embedding at row {int(zero[0])} "
                f"(face {face_id!r})"
            )
        off = np.abs(norms - 1.0) > NORM_PASS_THROUGH
        if off.any():
            fixed = mat.astype(np.float64)
            fixed[off] = fixed[off] / norms[off, None]
            matrices[backend_id] = fixed.astype(np.float32)

    return Corpus(
        corpus_id=manifest["corpus_id"],
        split=manifest["split"],
        faces=faces,
        matrices=matrices,
        image_ids=manifest.get("image_ids"),
        groups=manifest.get("groups"),
    )
