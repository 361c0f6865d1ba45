"""Identity clustering and reference-bank construction.

Single-ID faces collected for one identity query are clustered with DBSCAN
over cosine distance (1 - cosine similarity); the largest cluster defines the
identity's centroid(s) and member reference set, everything else is dropped
as noise or outliers.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import store
from .embeddings import Embedding
from .errors import DataError, EmptyInputError
from .store import Corpus

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    """DBSCAN parameters over cosine distance.

    Defaults (eps=0.5, min_pts=4) connect typical same-identity faces, whose
    pairwise cosine similarity usually stays above the 0.5 retrieval threshold.
    """

    eps: float = 0.5
    min_pts: int = 4

    def __post_init__(self):
        if not (0.0 < self.eps < 2.0):
            raise DataError(f"eps must be in (0, 2), got {self.eps}")
        if self.min_pts < 1:
            raise DataError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass
class DbscanResult:
    labels: np.ndarray            # per-point cluster id, NOISE for outliers
    clusters: List[List[int]]     # cluster id -> sorted member indices
    noise: List[int]

    def partition(self) -> frozenset:
        """Order-insensitive view for comparing clusterings."""
        groups = [frozenset(c) for c in self.clusters]
        return frozenset(groups)


def _as_matrix(embeddings) -> np.ndarray:
    if isinstance(embeddings, np.ndarray):
        X = np.asarray(embeddings, dtype=np.float64)
    else:
        X = np.stack([e.values if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
                      for e in embeddings])
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("dbscan requires a non-empty 2-d embedding matrix")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("dbscan input contains a zero-norm embedding")
    return X / norms


def dbscan(embeddings, params: ClusterParams = ClusterParams()) -> DbscanResult:
    """DBSCAN over cosine distance d(a, b) = 1 - cos(a, b).

    Deterministic: clusters are numbered by their lowest core-point index, and
    a border point reachable from several clusters joins the cluster of its
    lowest-indexed core neighbor.
    """
    X = _as_matrix(embeddings)
    n = X.shape[0]
    sims = np.clip(X @ X.T, -1.0, 1.0)
    within = (1.0 - sims) <= params.eps
    neighbor_counts = within.sum(axis=1)  # includes self
    core = neighbor_counts >= params.min_pts

    labels = np.full(n, NOISE, dtype=np.int64)
    cluster_id = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        # BFS over density-connected core points.
        stack = [start]
        labels[start] = cluster_id
        while stack:
            p = stack.pop()
            for q in np.where(within[p])[0]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = cluster_id
                    stack.append(int(q))
        cluster_id += 1

    # Border points: lowest-indexed core neighbor decides the cluster.
    for p in range(n):
        if core[p] or labels[p] != NOISE:
            continue
        neigh = np.where(within[p] & core)[0]
        if neigh.size:
            labels[p] = labels[int(neigh[0])]

    clusters = [sorted(np.where(labels == c)[0].tolist()) for c in range(cluster_id)]
    noise = sorted(np.where(labels == NOISE)[0].tolist())
    return DbscanResult(labels, clusters, noise)


@dataclass
class IdentityEntry:
    identity_id: str
    centroids: Dict[str, np.ndarray]            # backend -> (C, D), row 0 = primary
    member_face_ids: List[str]
    member_image_ids: List[str]
    member_matrix: Dict[str, np.ndarray] = field(default_factory=dict)
    secondary_flagged: bool = False


@dataclass
class ReferenceBank:
    """identity -> normalized centroid(s) + member reference faces."""

    backend_ids: List[str]
    identities: Dict[str, IdentityEntry] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def identity_ids(self) -> List[str]:
        return sorted(self.identities)

    def __len__(self) -> int:
        return len(self.identities)

    def centroid_matrix(self, backend_id: str) -> Tuple[np.ndarray, List[str]]:
        """All centroids stacked (grouped per identity, identities in
        lexicographic order) plus the identity id of each row."""
        rows, owners = [], []
        for identity_id in self.identity_ids:
            cents = self.identities[identity_id].centroids[backend_id]
            for c in cents:
                rows.append(c)
                owners.append(identity_id)
        if not rows:
            raise EmptyInputError("reference bank is empty")
        return np.stack(rows), owners


def build_bank(
    corpus: Corpus,
    backend_id: str,
    params: ClusterParams = ClusterParams(),
    groups: Optional[Dict[str, List[str]]] = None,
    centroid_floor: float = 0.0,
    keep_secondary: bool = False,
) -> ReferenceBank:
    """Cluster each identity query group and build the reference bank.

    Per identity: centroid = normalized mean of the largest cluster's member
    embeddings; members whose similarity to the centroid falls below
    ``centroid_floor`` are dropped. Identities with no usable cluster are
    skipped with a warning record.
    """
    if groups is None:
        groups = corpus.groups
    if not groups:
        raise EmptyInputError("corpus has no identity query groups")

    bank = ReferenceBank(backend_ids=sorted(corpus.backends))
    for identity_id in sorted(groups):
        face_ids = groups[identity_id]
        records = [corpus.faces[fid] for fid in face_ids]
        X = np.stack([corpus.embedding(fid, backend_id).values for fid in face_ids])
        result = dbscan(X, params)
        if not result.clusters:
            bank.warnings.append(f"{identity_id}: no cluster survives DBSCAN, identity skipped")
            continue
        sizes = [len(c) for c in result.clusters]
        main = int(np.argmax(sizes))  # ties: lowest cluster id, i.e. lowest core index
        member_idx = result.clusters[main]

        centroid = X[member_idx].mean(axis=0)
        cnorm = np.linalg.norm(centroid)
        if cnorm == 0:
            bank.warnings.append(f"{identity_id}: degenerate centroid, identity skipped")
            continue
        centroid = centroid / cnorm
        keep = [i for i in member_idx if float(X[i] @ centroid) >= centroid_floor]
        if not keep:
            bank.warnings.append(f"{identity_id}: all members below centroid floor, skipped")
            continue

        centroids: Dict[str, List[np.ndarray]] = {backend_id: [centroid]}
        if keep_secondary:
            for cid, members in enumerate(result.clusters):
                if cid == main:
                    continue
                sec = X[members].mean(axis=0)
                sn = np.linalg.norm(sec)
                if sn > 0:
                    centroids[backend_id].append(sec / sn)

        member_faces = [records[i] for i in keep]
        member_matrix: Dict[str, np.ndarray] = {backend_id: X[keep]}
        # Centroids for other backends reuse the member set chosen on the
        # clustering backend.
        for other in corpus.backends:
            if other == backend_id:
                continue
            if not all(other in r.rows for r in member_faces):
                continue
            Y = np.stack([corpus.embedding(r.face_id, other).values for r in member_faces])
            c = Y.mean(axis=0)
            n = np.linalg.norm(c)
            if n > 0:
                centroids[other] = [c / n]
                member_matrix[other] = Y

        bank.identities[identity_id] = IdentityEntry(
            identity_id=identity_id,
            centroids={b: np.stack(cs) for b, cs in centroids.items()},
            member_face_ids=[r.face_id for r in member_faces],
            member_image_ids=[r.image_id for r in member_faces],
            member_matrix=member_matrix,
            secondary_flagged=keep_secondary and len(centroids[backend_id]) > 1,
        )
    if bank.warnings:
        for w in bank.warnings:
            logger.warning("build_bank: %s", w)
    return bank


def save_bank(bank: ReferenceBank, directory: Path) -> None:
    """Serialize: centroids + member embeddings as MIDE blobs, identity table as JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = {"schema_version": 1, "backend_ids": bank.backend_ids, "identities": {}}
    cent_mats: Dict[str, List[np.ndarray]] = {}
    memb_mats: Dict[str, List[np.ndarray]] = {}
    cent_cursor: Dict[str, int] = {}
    memb_cursor: Dict[str, int] = {}
    for identity_id in bank.identity_ids:
        entry = bank.identities[identity_id]
        info = {"member_face_ids": entry.member_face_ids,
                "member_image_ids": entry.member_image_ids,
                "secondary_flagged": entry.secondary_flagged,
                "centroid_rows": {}, "member_rows": {}}
        for b, cents in entry.centroids.items():
            start = cent_cursor.get(b, 0)
            cent_mats.setdefault(b, []).append(cents)
            info["centroid_rows"][b] = [start, start + cents.shape[0]]
            cent_cursor[b] = start + cents.shape[0]
        for b, mat in entry.member_matrix.items():
            start = memb_cursor.get(b, 0)
            memb_mats.setdefault(b, []).append(mat)
            info["member_rows"][b] = [start, start + mat.shape[0]]
            memb_cursor[b] = start + mat.shape[0]
        table["identities"][identity_id] = info
    store.write_blob(directory / "centroids.mide",
                     {b: np.vstack(ms) for b, ms in cent_mats.items()})
    store.write_blob(directory / "members.mide",
                     {b: np.vstack(ms) for b, ms in memb_mats.items()})
    (directory / "identities.json").write_text(json.dumps(table, indent=2, sort_keys=True))


def load_bank(directory: Path) -> ReferenceBank:
    directory = Path(directory)
    table = json.loads((directory / "identities.json").read_text())
    cents = store.read_blob(directory / "centroids.mide")
    membs = store.read_blob(directory / "members.mide")
    bank = ReferenceBank(backend_ids=table["backend_ids"])
    for identity_id, info in table["identities"].items():
        centroids = {b: cents[b][lo:hi].astype(np.float64)
                     for b, (lo, hi) in info["centroid_rows"].items()}
        member_matrix = {b: membs[b][lo:hi].astype(np.float64)
                         for b, (lo, hi) in info["member_rows"].items()}
        bank.identities[identity_id] = IdentityEntry(
            identity_id=identity_id,
            centroids=centroids,
            member_face_ids=info["member_face_ids"],
            member_image_ids=info["member_image_ids"],
            member_matrix=member_matrix,
            secondary_flagged=info["secondary_flagged"],
        )
    return bank
