import numpy as np
import pytest

from multiid.cluster import ClusterParams, build_bank
from multiid.errors import EmptyInputError
from multiid.retrieval import assign, assign_blocked, assignments_as_dict
from multiid.store import Corpus, FaceRecord
from multiid.synthetic import make_single_id_corpus, vector_at_similarity


def corpus_from_matrix(X, backend="face-a", image_prefix="q"):
    X = np.asarray(X, dtype=np.float32)
    faces = [FaceRecord(f"{image_prefix}{i:05d}", f"{image_prefix}img{i:05d}",
                        (0, 0, 1, 1), rows={backend: i})
             for i in range(X.shape[0])]
    return Corpus("queries", "multi-ID-unpaired", faces, {backend: X})


@pytest.fixture
def small_bank():
    corpus, dirs = make_single_id_corpus(n_identities=10, members_per_identity=6,
                                         dim=64, noise=0.0, seed=21)
    bank = build_bank(corpus, "face-a", ClusterParams(eps=0.5, min_pts=1))
    return bank, dirs


class TestAssign:
    def test_face_equal_to_centroid(self, small_bank):
        bank, dirs = small_bank
        queries = corpus_from_matrix(dirs[3][None, :])
        (res,) = assign(queries, bank, "face-a")
        assert res.assigned
        assert res.best_identity == "id00003"
        assert res.best_similarity == pytest.approx(1.0, abs=1e-5)

    def test_threshold_051_assigned_049_rejected(self, small_bank, rng):
        bank, dirs = small_bank
        v_in = vector_at_similarity(dirs[0], 0.51, rng)
        v_out = vector_at_similarity(dirs[0], 0.49, rng)
        queries = corpus_from_matrix(np.stack([v_in, v_out]))
        res = assign(queries, bank, "face-a", threshold=0.5)
        assert res[0].assigned and res[0].best_identity == "id00000"
        assert not res[1].assigned and res[1].best_identity is None

    def test_exactly_at_threshold_not_assigned(self, small_bank):
        # threshold comparison is strict: similarity == threshold does not assign
        bank, dirs = small_bank
        queries = corpus_from_matrix(dirs[0][None, :])
        (res,) = assign(queries, bank, "face-a", threshold=1.0)
        assert res.best_similarity <= 1.0
        assert not res.assigned

    def test_scale_invariance_of_argmax(self, small_bank, rng):
        bank, dirs = small_bank
        v = vector_at_similarity(dirs[5], 0.8, rng)
        for alpha in (1.0, 0.01, 250.0):
            (res,) = assign(corpus_from_matrix(alpha * v[None, :]), bank, "face-a")
            assert res.best_identity == "id00005"

    def test_threshold_monotonicity(self, small_bank, rng):
        bank, dirs = small_bank
        X = np.stack([vector_at_similarity(dirs[i % 10], float(s), rng)
                      for i, s in enumerate(rng.uniform(0.2, 0.95, size=40))])
        queries = corpus_from_matrix(X)
        last_assigned = None
        for threshold in (0.2, 0.4, 0.6, 0.8):
            assigned = {r.face_id for r in assign(queries, bank, "face-a", threshold)
                        if r.assigned}
            if last_assigned is not None:
                assert assigned <= last_assigned
            last_assigned = assigned

    def test_invariants(self, small_bank, rng):
        bank, dirs = small_bank
        X = rng.normal(size=(30, 64))
        for r in assign(corpus_from_matrix(X), bank, "face-a"):
            assert r.best_similarity >= r.second_best_similarity
            assert r.assigned == (r.best_similarity > 0.5)

    def test_empty_bank(self, small_bank):
        from multiid.cluster import ReferenceBank

        queries = corpus_from_matrix(np.eye(4, 64))
        with pytest.raises(EmptyInputError):
            assign(queries, ReferenceBank(backend_ids=["face-a"]), "face-a")


class TestAssignBlocked:
    def test_equals_assign(self, small_bank, rng):
        # decisions must match exactly; similarities may differ by float32
        # accumulation order across differently shaped matmuls
        bank, _ = small_bank
        queries = corpus_from_matrix(rng.normal(size=(500, 64)))
        base = assign(queries, bank, "face-a")
        blocked = assign_blocked(queries, bank, "face-a", block_size=64, worker_count=4)
        assert len(base) == len(blocked)
        for a, b in zip(base, blocked):
            assert (a.face_id, a.best_identity, a.assigned) == \
                (b.face_id, b.best_identity, b.assigned)
            assert a.best_similarity == pytest.approx(b.best_similarity, abs=1e-5)

    def test_worker_count_determinism(self, small_bank, rng):
        bank, _ = small_bank
        queries = corpus_from_matrix(rng.normal(size=(300, 64)))
        one = assign_blocked(queries, bank, "face-a", block_size=50, worker_count=1)
        eight = assign_blocked(queries, bank, "face-a", block_size=50, worker_count=8)
        assert one == eight

    def test_matches_scalar_loop_oracle(self, small_bank, rng):
        bank, _ = small_bank
        X = rng.normal(size=(50, 64))
        queries = corpus_from_matrix(X)
        results = assign_blocked(queries, bank, "face-a", block_size=7, worker_count=3)
        C, owners = bank.centroid_matrix("face-a")
        for row, res in zip(X, results):
            v = row / np.linalg.norm(row)
            sims = {}
            for c, owner in zip(C, owners):
                s = float(np.dot(v.astype(np.float32), c.astype(np.float32)))
                sims[owner] = max(s, sims.get(owner, -2.0))
            top = max(sims.values())
            best = min(k for k, s in sims.items() if s == top)
            assert res.best_similarity == pytest.approx(top, abs=1e-5)
            if res.assigned:
                assert res.best_identity == best

    def test_assignments_dict(self, small_bank):
        bank, dirs = small_bank
        queries = corpus_from_matrix(dirs[:2])
        d = assignments_as_dict(assign_blocked(queries, bank, "face-a"))
        assert d == {"q00000": "id00000", "q00001": "id00001"}
