import numpy as np
import pytest

from multiid.cluster import NOISE, ClusterParams, build_bank, dbscan, load_bank, save_bank
from multiid.errors import DataError, EmptyInputError
from multiid.synthetic import identity_directions, make_single_id_corpus, noisy_members, unit_rows


def naive_dbscan(X, eps, min_pts):
    """Textbook queue-based DBSCAN over cosine distance, explicit loops only.

    Same border-tie rule as the production path: a border point joins the
    cluster of its lowest-indexed core neighbor.
    """
    X = np.asarray(X, dtype=np.float64)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    n = len(X)

    def neighbors(i):
        out = []
        for j in range(n):
            d = 1.0 - min(1.0, max(-1.0, float(np.dot(X[i], X[j]))))
            if d <= eps:
                out.append(j)
        return out

    neigh = [neighbors(i) for i in range(n)]
    core = [len(neigh[i]) >= min_pts for i in range(n)]
    labels = [NOISE] * n
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cid
        queue = [i]
        while queue:
            p = queue.pop(0)
            for q in neigh[p]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = cid
                    queue.append(q)
        cid += 1
    for i in range(n):
        if core[i] or labels[i] != NOISE:
            continue
        for q in sorted(neigh[i]):
            if core[q]:
                labels[i] = labels[q]
                break
    clusters = [sorted([i for i in range(n) if labels[i] == c]) for c in range(cid)]
    return labels, clusters


def as_partition(clusters):
    return frozenset(frozenset(c) for c in clusters)


class TestDbscan:
    def test_single_face_min_pts_one(self):
        res = dbscan(np.array([[1.0, 0.0]]), ClusterParams(eps=0.5, min_pts=1))
        assert len(res.clusters) == 1
        assert res.noise == []

    def test_two_antipodal_faces_split(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        res = dbscan(X, ClusterParams(eps=0.5, min_pts=1))
        assert len(res.clusters) == 2

    def test_cones_with_outliers_match_reference(self, rng):
        dirs = identity_directions(3, 24, rng)
        X = np.vstack([noisy_members(d, 66, 0.05, rng) for d in dirs]
                      + [identity_directions(10, 24, rng)])
        assert X.shape[0] == 208
        params = ClusterParams(eps=0.3, min_pts=4)
        res = dbscan(X, params)
        _, ref_clusters = naive_dbscan(X, params.eps, params.min_pts)
        assert as_partition(res.clusters) == as_partition(ref_clusters)
        assert len(res.clusters) == 3

    def test_matches_reference_on_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(20):
            n = int(rng.integers(5, 80))
            X = rng.normal(size=(n, 6))
            eps = float(rng.uniform(0.05, 0.9))
            min_pts = int(rng.integers(1, 6))
            res = dbscan(X, ClusterParams(eps=eps, min_pts=min_pts))
            labels, ref_clusters = naive_dbscan(X, eps, min_pts)
            assert as_partition(res.clusters) == as_partition(ref_clusters), \
                f"trial {trial}: eps={eps}, min_pts={min_pts}"
            assert [l == NOISE for l in labels] == [l == NOISE for l in res.labels]

    def test_partition_covers_input(self, rng):
        X = rng.normal(size=(50, 8))
        res = dbscan(X, ClusterParams(eps=0.4, min_pts=3))
        members = sorted(i for c in res.clusters for i in c) + res.noise
        assert sorted(members) == list(range(50))

    def test_rescaling_invariance(self, rng):
        X = rng.normal(size=(40, 8))
        res1 = dbscan(X, ClusterParams(eps=0.4, min_pts=3))
        res2 = dbscan(X * 37.5, ClusterParams(eps=0.4, min_pts=3))
        assert as_partition(res1.clusters) == as_partition(res2.clusters)

    def test_determinism(self, rng):
        X = rng.normal(size=(60, 8))
        a = dbscan(X, ClusterParams(eps=0.35, min_pts=3))
        b = dbscan(X, ClusterParams(eps=0.35, min_pts=3))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            dbscan(np.empty((0, 4)))

    def test_param_validation(self):
        with pytest.raises(DataError):
            ClusterParams(eps=2.5)
        with pytest.raises(DataError):
            ClusterParams(min_pts=0)


class TestBuildBank:
    def test_identical_embeddings_centroid(self):
        corpus, dirs = make_single_id_corpus(n_identities=1, members_per_identity=5,
                                             dim=8, noise=0.0, seed=3)
        bank = build_bank(corpus, "face-a", ClusterParams(eps=0.5, min_pts=1))
        centroid = bank.identities["id00000"].centroids["face-a"][0]
        np.testing.assert_allclose(centroid, dirs[0], atol=1e-6)

    def test_orthogonal_pair_normalized_mean(self):
        from multiid.store import Corpus, FaceRecord

        mat = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        faces = [FaceRecord("f1", "i1", (0, 0, 1, 1), rows={"face-a": 0}),
                 FaceRecord("f2", "i2", (0, 0, 1, 1), rows={"face-a": 1})]
        corpus = Corpus("c", "single-ID", faces, {"face-a": mat},
                        groups={"idx": ["f1", "f2"]})
        bank = build_bank(corpus, "face-a", ClusterParams(eps=1.5, min_pts=1))
        expected = np.array([1.0, 1.0]) / np.sqrt(2.0)
        np.testing.assert_allclose(bank.identities["idx"].centroids["face-a"][0],
                                   expected, atol=1e-6)

    def test_noisy_bank_recovers_directions(self):
        corpus, dirs = make_single_id_corpus(n_identities=50, members_per_identity=20,
                                             dim=64, noise=0.04, seed=11)
        bank = build_bank(corpus, "face-a", ClusterParams(eps=0.5, min_pts=4))
        assert len(bank) == 50
        for i, identity_id in enumerate(sorted(bank.identities)):
            centroid = bank.identities[identity_id].centroids["face-a"][0]
            assert float(centroid @ dirs[i]) > 0.99

    def test_unclusterable_identity_skipped_with_warning(self, rng):
        from multiid.store import Corpus, FaceRecord

        X = unit_rows(rng.normal(size=(3, 16))).astype(np.float32)
        faces = [FaceRecord(f"f{i}", f"i{i}", (0, 0, 1, 1), rows={"face-a": i})
                 for i in range(3)]
        corpus = Corpus("c", "single-ID", faces, {"face-a": X},
                        groups={"lonely": ["f0", "f1", "f2"]})
        bank = build_bank(corpus, "face-a", ClusterParams(eps=0.05, min_pts=4))
        assert "lonely" not in bank.identities
        assert any("lonely" in w for w in bank.warnings)

    def test_save_load_round_trip(self, tmp_path):
        corpus, _ = make_single_id_corpus(n_identities=5, members_per_identity=8,
                                          dim=16, seed=5)
        bank = build_bank(corpus, "face-a", ClusterParams(eps=0.5, min_pts=2))
        save_bank(bank, tmp_path / "bank")
        loaded = load_bank(tmp_path / "bank")
        assert loaded.identity_ids == bank.identity_ids
        for identity_id in bank.identity_ids:
            np.testing.assert_allclose(
                loaded.identities[identity_id].centroids["face-a"],
                bank.identities[identity_id].centroids["face-a"], atol=1e-6)
            assert (loaded.identities[identity_id].member_face_ids
                    == bank.identities[identity_id].member_face_ids)
