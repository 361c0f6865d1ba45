import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiid.embeddings import Embedding
from multiid.errors import DataError, EmptyInputError
from multiid.losses import (
    MASK_NEG,
    ContrastiveInstance,
    FlowSample,
    InjectionConfig,
    conformance_table,
    contrastive_loss,
    flow_loss,
    grad_check,
    gt_aligned_embed,
    gt_alignment_transform,
    id_loss,
    inject,
    interpolate,
    total_loss,
)


def emb(v, backend="face-a"):
    return Embedding(np.asarray(v, dtype=np.float64), backend)


class TestFlowLoss:
    def test_zero_at_true_velocity(self, rng):
        x0 = rng.normal(size=8)
        x1 = rng.normal(size=8)
        s = FlowSample(x0, x1, 0.3, x1 - x0)
        assert flow_loss(s) == 0.0

    def test_known_value(self):
        s = FlowSample(np.zeros(3), np.zeros(3), 0.5, np.array([1.0, 2.0, 2.0]))
        assert flow_loss(s) == pytest.approx(9.0, abs=1e-12)
        assert flow_loss(s, reduction="mean") == pytest.approx(3.0, abs=1e-12)

    def test_matches_naive_sum(self, rng):
        x0, x1, pred = rng.normal(size=(3, 16))
        s = FlowSample(x0, x1, 0.7, pred)
        naive = sum((pred[i] - (x1[i] - x0[i])) ** 2 for i in range(16))
        assert flow_loss(s) == pytest.approx(naive, rel=1e-12)

    def test_interpolation_endpoints(self, rng):
        x0, x1 = rng.normal(size=(2, 8))
        np.testing.assert_allclose(interpolate(x0, x1, 0.0), x0)
        np.testing.assert_allclose(interpolate(x0, x1, 1.0), x1)
        np.testing.assert_allclose(interpolate(x0, x1, 0.5), 0.5 * (x0 + x1))

    def test_validation(self):
        with pytest.raises(DataError):
            FlowSample(np.zeros(3), np.zeros(4), 0.5, np.zeros(3))
        with pytest.raises(DataError):
            FlowSample(np.zeros(3), np.zeros(3), 1.5, np.zeros(3))
        with pytest.raises(DataError):
            FlowSample(np.full(3, np.nan), np.zeros(3), 0.5, np.zeros(3))
        with pytest.raises(DataError):
            flow_loss(FlowSample(np.zeros(2), np.zeros(2), 0.5, np.zeros(2)),
                      reduction="max")


class TestIdLoss:
    def test_anchors(self):
        a = emb([1.0, 0.0])
        assert id_loss(a, a) == pytest.approx(0.0, abs=1e-12)
        assert id_loss(a, emb([0.0, 1.0])) == pytest.approx(1.0, abs=1e-12)
        assert id_loss(a, emb([-1.0, 0.0])) == pytest.approx(2.0, abs=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_range_and_symmetry(self, seed):
        r = np.random.default_rng(seed)
        g, t = emb(r.normal(size=8)), emb(r.normal(size=8))
        v = id_loss(g, t)
        assert 0.0 <= v <= 2.0
        assert v == pytest.approx(id_loss(t, g), abs=1e-12)


class TestContrastiveLoss:
    def test_closed_form_single_negative(self):
        inst = ContrastiveInstance(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                                   np.array([[-1.0, 0.0]]), tau=1.0)
        assert contrastive_loss(inst) == pytest.approx(np.log1p(np.exp(-2.0)),
                                                       abs=1e-9)

    def test_uniform_logits_give_log_m_plus_one(self, rng):
        # positive and negatives all at the same cosine: loss = log(M + 1)
        d, M = 16, 7
        g = np.zeros(d)
        g[0] = 1.0
        negs = np.stack([g] * M)
        inst = ContrastiveInstance(g, g, negs, tau=0.31)
        assert contrastive_loss(inst) == pytest.approx(np.log(M + 1), abs=1e-12)

    def test_matches_naive_formula(self, rng):
        for _ in range(20):
            d = int(rng.integers(4, 32))
            M = int(rng.integers(1, 64))
            inst = ContrastiveInstance(rng.normal(size=d), rng.normal(size=d),
                                       rng.normal(size=(M, d)),
                                       tau=float(rng.uniform(0.05, 1.0)))
            g = inst.g / np.linalg.norm(inst.g)
            r = inst.r / np.linalg.norm(inst.r)
            N = inst.negatives / np.linalg.norm(inst.negatives, axis=1,
                                                keepdims=True)
            pos = np.exp(g @ r / inst.tau)
            den = pos + np.sum(np.exp(N @ g / inst.tau))
            assert contrastive_loss(inst) == pytest.approx(-np.log(pos / den),
                                                           rel=1e-9)

    def test_large_negative_pool_naive_sum(self, rng):
        d, M = 64, 4096
        inst = ContrastiveInstance(rng.normal(size=d), rng.normal(size=d),
                                   rng.normal(size=(M, d)), tau=0.07)
        g = inst.g / np.linalg.norm(inst.g)
        r = inst.r / np.linalg.norm(inst.r)
        acc = np.exp(float(g @ r) / inst.tau)
        for row in inst.negatives:
            n = row / np.linalg.norm(row)
            acc += np.exp(float(n @ g) / inst.tau)
        naive = -(float(g @ r) / inst.tau - np.log(acc))
        assert contrastive_loss(inst) == pytest.approx(naive, abs=1e-6)

    def test_monotone_in_positive_similarity(self, rng):
        d = 8
        negs = rng.normal(size=(16, d))
        r = np.zeros(d)
        r[0] = 1.0
        losses = []
        for c in (0.2, 0.5, 0.8, 0.99):
            g = c * r + np.sqrt(1 - c * c) * np.eye(d)[1]
            losses.append(contrastive_loss(ContrastiveInstance(g, r, negs)))
        assert losses == sorted(losses, reverse=True)

    def test_negative_permutation_invariance(self, rng):
        d = 8
        inst = ContrastiveInstance(rng.normal(size=d), rng.normal(size=d),
                                   rng.normal(size=(10, d)))
        perm = rng.permutation(10)
        shuffled = ContrastiveInstance(inst.g, inst.r, inst.negatives[perm],
                                       inst.tau)
        assert contrastive_loss(inst) == pytest.approx(
            contrastive_loss(shuffled), abs=1e-12)

    def test_stability_at_extreme_temperature(self, rng):
        inst = ContrastiveInstance(rng.normal(size=8), rng.normal(size=8),
                                   rng.normal(size=(32, 8)), tau=1e-4)
        assert np.isfinite(contrastive_loss(inst))

    def test_negatives_only_variant_can_go_negative(self):
        inst = ContrastiveInstance(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                                   np.array([[-1.0, 0.0]]), tau=0.05)
        assert contrastive_loss(inst, include_positive=False) < 0.0
        assert contrastive_loss(inst, include_positive=True) >= 0.0

    def test_validation(self):
        with pytest.raises(EmptyInputError):
            ContrastiveInstance(np.ones(4), np.ones(4), np.empty((0, 4)))
        with pytest.raises(DataError):
            ContrastiveInstance(np.ones(4), np.ones(4), np.ones((2, 5)))
        with pytest.raises(DataError):
            ContrastiveInstance(np.ones(4), np.ones(4), np.ones((2, 4)), tau=0.0)


class TestGradients:
    def test_flow_grad(self, rng):
        for reduction in ("sum", "mean"):
            s = FlowSample(rng.normal(size=12), rng.normal(size=12), 0.4,
                           rng.normal(size=12))
            assert grad_check("flow", {"sample": s, "reduction": reduction}) < 1e-6

    def test_id_grad(self, rng):
        for _ in range(10):
            err = grad_check("id", {"g": rng.normal(size=10),
                                    "t": rng.normal(size=10)})
            assert err < 1e-4

    def test_contrastive_grad(self, rng):
        for _ in range(10):
            inst = ContrastiveInstance(rng.normal(size=8), rng.normal(size=8),
                                       rng.normal(size=(12, 8)),
                                       tau=float(rng.uniform(0.05, 0.5)))
            assert grad_check("contrastive", {"instance": inst}) < 1e-4

    def test_unknown_loss(self):
        with pytest.raises(DataError):
            grad_check("unknown", {})


class TestTotalLoss:
    def test_weighted_sum(self):
        assert total_loss(1.0, 1.0, 1.0) == pytest.approx(1.2, abs=1e-12)
        assert total_loss(2.0, 3.0, 4.0, lambda_id=0.5, lambda_cl=0.25) == \
            pytest.approx(4.5, abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            total_loss(float("nan"), 0.0, 0.0)
        with pytest.raises(DataError):
            total_loss(0.0, float("inf"), 0.0)


def naive_inject(cfg):
    """Triple-loop attention oracle; no vectorized shortcuts."""
    H, E = cfg.hidden, cfg.face
    Q = H @ cfg.w_q
    K = E @ cfg.w_k
    V = E @ cfg.w_v
    d = cfg.w_q.shape[1]
    out = H.copy()
    for i in range(H.shape[0]):
        logits = []
        for j in range(E.shape[0]):
            z = float(Q[i] @ K[j]) / np.sqrt(d)
            if cfg.mask is not None:
                z += float(cfg.mask[i, j])
            logits.append(z)
        m = max(logits)
        if m <= MASK_NEG / 2:
            continue
        w = [np.exp(z - m) if z > MASK_NEG / 2 else 0.0 for z in logits]
        total = sum(w)
        for j in range(E.shape[0]):
            out[i] = out[i] + cfg.lambda_id * (w[j] / total) * V[j]
    return out


class TestInjection:
    def make_cfg(self, rng, n_h=5, n_e=3, d_model=8, d=4, mask=None,
                 lambda_id=1.0):
        return InjectionConfig(
            hidden=rng.normal(size=(n_h, d_model)),
            face=rng.normal(size=(n_e, d_model)),
            w_q=rng.normal(size=(d_model, d)),
            w_k=rng.normal(size=(d_model, d)),
            w_v=rng.normal(size=(d_model, d_model)),
            mask=mask,
            lambda_id=lambda_id,
        )

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            mask = None
            if rng.random() < 0.5:
                mask = np.where(rng.random(size=(5, 3)) < 0.3, MASK_NEG, 0.0)
            cfg = self.make_cfg(rng, mask=mask,
                                lambda_id=float(rng.uniform(0, 2)))
            np.testing.assert_allclose(inject(cfg), naive_inject(cfg),
                                       rtol=0, atol=1e-9)

    def test_lambda_zero_is_bitwise_identity(self, rng):
        cfg = self.make_cfg(rng, lambda_id=0.0)
        out = inject(cfg)
        assert np.array_equal(out, cfg.hidden)
        assert out is not cfg.hidden

    def test_masked_positions_get_zero_weight(self, rng):
        mask = np.zeros((5, 3))
        mask[:, 2] = MASK_NEG
        cfg = self.make_cfg(rng, mask=mask)
        # zeroing the masked face token's value row must not change anything
        V_alt = cfg.face.copy()
        V_alt[2] = 1e6
        cfg_alt = InjectionConfig(cfg.hidden, V_alt, cfg.w_q, cfg.w_k, cfg.w_v,
                                  mask, cfg.lambda_id)
        # token 2 still influences K, so compare through the oracle instead
        np.testing.assert_allclose(inject(cfg), naive_inject(cfg), atol=1e-9)
        np.testing.assert_allclose(inject(cfg_alt), naive_inject(cfg_alt),
                                   atol=1e-6)

    def test_fully_masked_row_is_passthrough(self, rng):
        mask = np.zeros((5, 3))
        mask[1, :] = MASK_NEG
        cfg = self.make_cfg(rng, mask=mask)
        out = inject(cfg)
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out[1], cfg.hidden[1])
        assert not np.allclose(out[0], cfg.hidden[0])

    def test_attention_rows_are_convex_weights(self, rng):
        # update must lie in the convex hull of value rows when unmasked
        cfg = self.make_cfg(rng, n_e=1)
        V = cfg.face @ cfg.w_v
        out = inject(cfg)
        np.testing.assert_allclose(out - cfg.hidden,
                                   np.tile(V[0], (5, 1)), atol=1e-9)

    def test_shape_validation(self, rng):
        with pytest.raises(DataError):
            InjectionConfig(rng.normal(size=(4, 8)), rng.normal(size=(2, 7)),
                            rng.normal(size=(8, 4)), rng.normal(size=(8, 4)),
                            rng.normal(size=(8, 4)))
        with pytest.raises(DataError):
            self.make_cfg(rng, mask=np.zeros((2, 2)))


class TestGtAlignedEmbed:
    def test_transform_ignores_generated_image(self, rng):
        from multiid.embeddings import CROP_TEMPLATE_112, Landmarks5

        lm = Landmarks5(CROP_TEMPLATE_112 + rng.normal(scale=2.0, size=(5, 2)))
        t1 = gt_alignment_transform(lm)
        t2 = gt_alignment_transform(lm)
        np.testing.assert_array_equal(t1.matrix, t2.matrix)
        np.testing.assert_array_equal(t1.translation, t2.translation)

    def test_provider_contract(self, rng):
        from multiid.embeddings import CROP_TEMPLATE_112, Landmarks5

        lm = Landmarks5(CROP_TEMPLATE_112)
        seen = {}

        def provider(handle, transform):
            seen["handle"] = handle
            seen["transform"] = transform
            return emb(rng.normal(size=8))

        out = gt_aligned_embed("image-7", lm, provider)
        assert isinstance(out, Embedding)
        assert seen["handle"] == "image-7"
        assert seen["transform"].residual < 1e-9

    def test_gt_landmarks_beat_detection_on_generated(self, rng):
        # the point of the GT-aligned path: detector noise on the generated
        # image perturbs the crop, GT landmarks do not
        from multiid.embeddings import CROP_TEMPLATE_112, Landmarks5, cosine
        from multiid.synthetic import vector_at_similarity

        true_dir = rng.normal(size=32)
        true_dir /= np.linalg.norm(true_dir)

        def embed_with_jitter(transform):
            # crop error grows with landmark residual plus transform deviation
            wobble = float(np.linalg.norm(transform.matrix - np.eye(2)))
            c = max(-1.0, 1.0 - 2.0 * wobble)
            return emb(vector_at_similarity(true_dir, c, rng))

        gt_lm = Landmarks5(CROP_TEMPLATE_112)
        gt_emb = gt_aligned_embed(
            None, gt_lm, lambda h, t: embed_with_jitter(t))

        noisy = Landmarks5(CROP_TEMPLATE_112 + rng.normal(scale=6.0, size=(5, 2)))
        det_emb = embed_with_jitter(gt_alignment_transform(noisy))

        assert cosine(gt_emb, emb(true_dir)) >= cosine(det_emb, emb(true_dir))

    def test_bad_provider(self):
        from multiid.embeddings import CROP_TEMPLATE_112, Landmarks5

        with pytest.raises(DataError):
            gt_aligned_embed(None, Landmarks5(CROP_TEMPLATE_112),
                             lambda h, t: "not an embedding")


def test_conformance_table_all_pass():
    rows = conformance_table(rng_seed=0)
    assert rows
    for name, ok, detail in rows:
        assert ok, f"{name}: {detail}"
