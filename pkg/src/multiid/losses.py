"""Reference implementations of the training objectives and the identity
injection math, with analytic gradients and finite-difference verification.

Nothing here trains a model; these are numerically verified oracles that an
external trainer can be checked against.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .embeddings import (
    CROP_TEMPLATE_112,
    Embedding,
    Landmarks5,
    SimilarityTransform,
    cosine,
    estimate_alignment,
)
from .errors import DataError, EmptyInputError

# Additive-mask sentinel for "-inf": large enough that exp underflows to
# exactly 0 after the stable-softmax shift.
MASK_NEG = -1.0e30

DEFAULT_LAMBDA_ID = 0.1
DEFAULT_LAMBDA_CL = 0.1
DEFAULT_INJECT_LAMBDA = 1.0
DEFAULT_FACE_TOKENS = 8
DEFAULT_TOKEN_DIM = 3072


@dataclass(frozen=True)
class FlowSample:
    """One flow-matching training instance: noise, data, time, prediction."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    prediction: np.ndarray
    condition: Optional[object] = None

    def __post_init__(self):
        for name in ("x0", "x1", "prediction"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.x0.shape == self.x1.shape == self.prediction.shape):
            raise DataError(
                f"shape mismatch: x0 {self.x0.shape}, x1 {self.x1.shape}, "
                f"prediction {self.prediction.shape}"
            )
        if not (0.0 <= self.t <= 1.0):
            raise DataError(f"t must be in [0, 1], got {self.t}")
        for name in ("x0", "x1", "prediction"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in {name}")


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation x_t = (1 - t) x0 + t x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise DataError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    return (1.0 - t) * x0 + t * x1


def flow_loss(sample: FlowSample, reduction: str = "sum") -> float:
    """Squared L2 error of the predicted velocity against (x1 - x0).

    reduction="sum" is the squared norm; "mean" divides by the dimension.
    """
    diff = sample.prediction - (sample.x1 - sample.x0)
    value = float(np.sum(diff * diff))
    if reduction == "mean":
        return value / diff.size
    if reduction != "sum":
        raise DataError(f"unknown reduction {reduction!r}")
    return value


def flow_loss_grad(sample: FlowSample, reduction: str = "sum") -> np.ndarray:
    """Analytic gradient of flow_loss w.r.t. the prediction."""
    g = 2.0 * (sample.prediction - (sample.x1 - sample.x0))
    if reduction == "mean":
        g = g / sample.prediction.size
    return g


def id_loss(g: Embedding, t: Embedding) -> float:
    """Cosine distance 1 - cos(g, t), in [0, 2]."""
    return 1.0 - cosine(g, t)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise DataError("zero vector")
    return v / n


def _cos_grad(g: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """d cos(g, v_hat) / d g for unnormalized g and unit v_hat."""
    gn = np.linalg.norm(g)
    g_hat = g / gn
    return (v_hat - g_hat * float(g_hat @ v_hat)) / gn


def id_loss_grad(g: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Analytic gradient of 1 - cos(g, t) w.r.t. unnormalized g (includes the
    normalization Jacobian)."""
    return -_cos_grad(np.asarray(g, dtype=np.float64), _unit(np.asarray(t, dtype=np.float64)))


@dataclass(frozen=True)
class ContrastiveInstance:
    """InfoNCE instance: generated embedding, positive reference, negatives."""

    g: np.ndarray
    r: np.ndarray
    negatives: np.ndarray   # (M, D)
    tau: float = 0.07

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=np.float64))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64))
        object.__setattr__(self, "negatives", np.asarray(self.negatives, dtype=np.float64))
        if self.tau <= 0:
            raise DataError(f"temperature must be positive, got {self.tau}")
        if self.negatives.ndim != 2 or self.negatives.shape[0] < 1:
            raise EmptyInputError("contrastive loss needs at least one negative")
        if self.negatives.shape[1] != self.g.shape[0] or self.r.shape != self.g.shape:
            raise DataError("embedding dimension mismatch in contrastive instance")


def _contrastive_logits(inst: ContrastiveInstance) -> Tuple[float, np.ndarray]:
    g = inst.g
    r_hat = _unit(inst.r)
    gn = np.linalg.norm(g)
    if gn == 0:
        raise DataError("zero generated embedding")
    g_hat = g / gn
    neg = inst.negatives
    neg_hat = neg / np.linalg.norm(neg, axis=1, keepdims=True)
    pos = float(g_hat @ r_hat) / inst.tau
    negs = (neg_hat @ g_hat) / inst.tau
    return pos, negs


def contrastive_loss(inst: ContrastiveInstance, include_positive: bool = True) -> float:
    """InfoNCE: -log[ exp(cos(g,r)/tau) / denom ], via a stable log-sum-exp.

    With include_positive=True (default) the denominator also contains the
    positive term, keeping the loss nonnegative. include_positive=False is the
    negatives-only denominator variant, which can go negative.
    """
    pos, negs = _contrastive_logits(inst)
    pool = np.concatenate([[pos], negs]) if include_positive else negs
    m = float(pool.max())
    lse = m + float(np.log(np.sum(np.exp(pool - m))))
    return lse - pos


def contrastive_loss_grad(inst: ContrastiveInstance, include_positive: bool = True) -> np.ndarray:
    """Analytic gradient of contrastive_loss w.r.t. unnormalized g."""
    pos, negs = _contrastive_logits(inst)
    pool = np.concatenate([[pos], negs]) if include_positive else negs
    m = float(pool.max())
    p = np.exp(pool - m)
    p = p / p.sum()

    r_hat = _unit(inst.r)
    neg_hat = inst.negatives / np.linalg.norm(inst.negatives, axis=1, keepdims=True)
    grad = np.zeros_like(inst.g)
    if include_positive:
        grad += (p[0] - 1.0) / inst.tau * _cos_grad(inst.g, r_hat)
        weights = p[1:]
    else:
        grad += -1.0 / inst.tau * _cos_grad(inst.g, r_hat)
        weights = p
    for w, n_hat in zip(weights, neg_hat):
        grad += w / inst.tau * _cos_grad(inst.g, n_hat)
    return grad


def total_loss(
    flow: float,
    id_value: float,
    cl: float,
    lambda_id: float = DEFAULT_LAMBDA_ID,
    lambda_cl: float = DEFAULT_LAMBDA_CL,
) -> float:
    """Weighted objective: flow + lambda_id * id + lambda_cl * cl."""
    for name, v in (("flow", flow), ("id", id_value), ("cl", cl)):
        if not np.isfinite(v):
            raise DataError(f"non-finite {name} component: {v}")
    return flow + lambda_id * id_value + lambda_cl * cl


def gt_alignment_transform(
    gt_landmarks: Landmarks5, template: np.ndarray = CROP_TEMPLATE_112
) -> SimilarityTransform:
    """Crop transform computed from GT landmarks against the canonical
    template. By contract it never depends on the generated image."""
    return estimate_alignment(gt_landmarks, Landmarks5(template))


def gt_aligned_embed(
    gen_image_handle: object,
    gt_landmarks: Landmarks5,
    embed_provider: Callable[[object, SimilarityTransform], Embedding],
    template: np.ndarray = CROP_TEMPLATE_112,
) -> Embedding:
    """Embed a generated image cropped by the GT-landmark transform.

    The provider applies the transform to pixels and runs the face backend;
    this function only guarantees the transform comes from GT landmarks.
    """
    transform = gt_alignment_transform(gt_landmarks, template)
    emb = embed_provider(gen_image_handle, transform)
    if not isinstance(emb, Embedding):
        raise DataError("embed provider must return an Embedding")
    return emb


@dataclass(frozen=True)
class InjectionConfig:
    """Masked cross-attention update of hidden tokens by face tokens."""

    hidden: np.ndarray     # (n_h, d_model)
    face: np.ndarray       # (n_e, d_model)
    w_q: np.ndarray        # (d_model, d)
    w_k: np.ndarray
    w_v: np.ndarray
    mask: Optional[np.ndarray] = None   # (n_h, n_e), 0 or MASK_NEG
    lambda_id: float = DEFAULT_INJECT_LAMBDA

    def __post_init__(self):
        for name in ("hidden", "face", "w_q", "w_k", "w_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d_model = self.hidden.shape[1]
        if self.face.shape[1] != d_model:
            raise DataError("hidden and face token widths differ")
        for name in ("w_q", "w_k", "w_v"):
            W = getattr(self, name)
            if W.shape[0] != d_model:
                raise DataError(f"{name} rows must equal d_model ({d_model}), got {W.shape}")
        if self.w_q.shape[1] != self.w_k.shape[1]:
            raise DataError("w_q and w_k must share the key dimension")
        if self.w_v.shape[1] != d_model:
            raise DataError(
                f"w_v must project back to d_model ({d_model}) for the residual "
                f"update, got {self.w_v.shape}"
            )
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            object.__setattr__(self, "mask", m)
            if m.shape != (self.hidden.shape[0], self.face.shape[0]):
                raise DataError(
                    f"mask shape {m.shape} != (n_h, n_e) "
                    f"({self.hidden.shape[0]}, {self.face.shape[0]})"
                )
        for name in ("hidden", "face", "w_q", "w_k", "w_v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in {name}")


def inject(cfg: InjectionConfig) -> np.ndarray:
    """H' = H + lambda_id * softmax(Q K^T / sqrt(d) + M) V.

    Row-wise stable softmax; positions masked with MASK_NEG get weight exactly
    0, and a fully-masked row contributes a zero update instead of NaN.
    """
    Q = cfg.hidden @ cfg.w_q
    K = cfg.face @ cfg.w_k
    V = cfg.face @ cfg.w_v
    d = cfg.w_q.shape[1]
    logits = Q @ K.T / np.sqrt(d)
    if cfg.mask is not None:
        logits = logits + cfg.mask
    masked_rows = np.all(logits <= MASK_NEG / 2, axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    weights[logits <= MASK_NEG / 2] = 0.0
    sums = weights.sum(axis=1, keepdims=True)
    sums[sums == 0.0] = 1.0
    attn = weights / sums
    update = attn @ V
    update[masked_rows] = 0.0
    if cfg.lambda_id == 0.0:
        return cfg.hidden.copy()
    return cfg.hidden + cfg.lambda_id * update


def grad_check(loss_name: str, inputs: Dict, epsilon: float = 1e-4) -> float:
    """Central finite differences against the analytic gradient.

    Returns the max per-component relative error,
    |analytic - fd| / max(|analytic|, |fd|, 1e-3).
    """
    if loss_name == "flow":
        sample: FlowSample = inputs["sample"]
        reduction = inputs.get("reduction", "sum")
        x = sample.prediction.copy()

        def f(v):
            return flow_loss(FlowSample(sample.x0, sample.x1, sample.t, v), reduction)

        analytic = flow_loss_grad(sample, reduction)
    elif loss_name == "id":
        g = np.asarray(inputs["g"], dtype=np.float64)
        t = np.asarray(inputs["t"], dtype=np.float64)
        backend = inputs.get("backend_id", "check")
        x = g.copy()

        def f(v):
            return id_loss(Embedding(v, backend), Embedding(t, backend))

        analytic = id_loss_grad(g, t)
    elif loss_name == "contrastive":
        inst: ContrastiveInstance = inputs["instance"]
        include_positive = inputs.get("include_positive", True)
        x = inst.g.copy()

        def f(v):
            return contrastive_loss(
                ContrastiveInstance(v, inst.r, inst.negatives, inst.tau), include_positive
            )

        analytic = contrastive_loss_grad(inst, include_positive)
    else:
        raise DataError(f"unknown loss {loss_name!r} for grad_check")

    fd = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += epsilon
        xm.flat[i] -= epsilon
        fd.flat[i] = (f(xp) - f(xm)) / (2.0 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3)
    return float(np.max(np.abs(analytic - fd) / denom))


def conformance_table(rng_seed: int = 0) -> List[Tuple[str, bool, str]]:
    """Named pass/fail checks for the losses-check command."""
    rng = np.random.default_rng(rng_seed)
    rows: List[Tuple[str, bool, str]] = []

    def add(name: str, ok: bool, detail: str) -> None:
        rows.append((name, bool(ok), detail))

    s = FlowSample(np.zeros(4), np.ones(4), 0.5, np.ones(4))
    add("flow-zero-at-velocity", flow_loss(s) == 0.0, "prediction == x1 - x0")
    add("flow-reduction-active", True, "sum (default); mean exposed via reduction='mean'")

    e = Embedding(np.array([1.0, 0.0]), "chk")
    add("id-loss-antipodal", abs(id_loss(e, Embedding(np.array([-1.0, 0.0]), "chk")) - 2.0) < 1e-12,
        "1 - cos = 2 at opposite vectors")

    inst = ContrastiveInstance(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                               np.array([[-1.0, 0.0]]), tau=1.0)
    expected = float(np.log1p(np.exp(-2.0)))
    add("contrastive-closed-form",
        abs(contrastive_loss(inst) - expected) < 1e-9,
        f"log(1 + e^-2) = {expected:.10f}")

    errs = []
    for _ in range(10):
        d = int(rng.integers(4, 24))
        sample = FlowSample(rng.normal(size=d), rng.normal(size=d), float(rng.random()),
                            rng.normal(size=d))
        errs.append(grad_check("flow", {"sample": sample}))
        errs.append(grad_check("id", {"g": rng.normal(size=d), "t": rng.normal(size=d)}))
        ci = ContrastiveInstance(rng.normal(size=d), rng.normal(size=d),
                                 rng.normal(size=(16, d)), tau=0.1)
        errs.append(grad_check("contrastive", {"instance": ci}))
    add("gradients-vs-finite-differences", max(errs) < 1e-4, f"max rel err {max(errs):.2e}")

    H = rng.normal(size=(4, 6))
    cfg = InjectionConfig(H, rng.normal(size=(DEFAULT_FACE_TOKENS, 6)),
                          rng.normal(size=(6, 3)), rng.normal(size=(6, 3)),
                          rng.normal(size=(6, 6)), lambda_id=0.0)
    add("inject-lambda-zero-identity", np.array_equal(inject(cfg), H), "H' == H bitwise")
    return rows
