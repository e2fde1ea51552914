"""Self-supervised objectives over two-view embedding batches.

All losses return a ``LossOutput`` carrying the scalar value and analytic
gradients with respect to every input, in ambient coordinates. The
gradients are exact derivatives of the implemented forward expressions,
including the defensive norm divisions, so central finite differences on
the raw inputs must agree with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .embedding import EmbeddingBatch, SimilarityParams
from .errors import BatchTooSmallError, DimensionMismatchError, InvalidParamError

SimilarityKind = Literal["aprot", "acont"]


@dataclass(frozen=True)
class KernelParam:
    """Sharpness of the pairwise Gaussian potential exp(-t * d^2)."""

    t: float = 2.0

    def __post_init__(self) -> None:
        if not self.t > 0:
            raise InvalidParamError(f"kernel sharpness must be positive, got {self.t}")


@dataclass(frozen=True)
class CelWeights:
    """Weight of the uniformity term in the combined objective."""

    uniformity_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.uniformity_weight < 0:
            raise InvalidParamError(
                f"uniformity weight must be nonnegative, got {self.uniformity_weight}"
            )


@dataclass
class LossOutput:
    """Scalar loss plus named gradients.

    Keys present depend on the loss: two-view losses carry "view1"/"view2"
    and always "scale"/"bias" (zero when the loss has no learnable
    parameters), classifier losses carry "embeddings"/"weights".
    """

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def grad_view1(self) -> np.ndarray:
        return self.grads["view1"]

    @property
    def grad_view2(self) -> np.ndarray:
        return self.grads["view2"]

    @property
    def grad_embeddings(self) -> np.ndarray:
        return self.grads["embeddings"]

    @property
    def grad_weights(self) -> np.ndarray:
        return self.grads["weights"]

    @property
    def grad_scale(self) -> float:
        return float(self.grads["scale"])

    @property
    def grad_bias(self) -> float:
        return float(self.grads["bias"])


def gaussian_potential(a: np.ndarray, b: np.ndarray, kernel: KernelParam) -> float:
    """Pairwise Gaussian (RBF) potential exp(-t * ||a - b||^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-kernel.t * np.dot(d, d)))


def pairwise_uniformity(points: np.ndarray, kernel: KernelParam) -> tuple[float, np.ndarray]:
    """Log of the mean pairwise Gaussian potential over one point set.

    Points are taken as given and are expected on the unit sphere (the
    encoder emits normalized embeddings); the [-4t, 0] value range holds
    only there. The mean runs over the C(N, 2) unordered pairs, each
    counted once. Returns (value, gradient) with the gradient taken in
    ambient coordinates; restricted to the sphere it is the constrained
    gradient once the caller projects out the radial component.
    Minimizing this drives the points toward the uniform distribution.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError("points must be a 2-d (N, m) array")
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmallError("need at least 2 points")
    t = kernel.t

    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    logits = -t * d2
    np.fill_diagonal(logits, -np.inf)

    # logsumexp over the strict upper triangle = log of the single-count sum.
    iu = np.triu_indices(n, k=1)
    upper = logits[iu]
    peak = float(np.max(upper))
    log_sum = peak + float(np.log(np.sum(np.exp(upper - peak))))
    n_pairs = n * (n - 1) // 2
    value = log_sum - float(np.log(n_pairs))

    # p[i, j] = potential(i, j) / single-count sum, symmetric, zero diagonal
    p = np.exp(logits - log_sum)
    row = p.sum(axis=1)
    grad = -2.0 * t * (row[:, None] * x - p @ x)
    return value, grad


def uniformity_loss(batch: EmbeddingBatch, kernel: KernelParam) -> LossOutput:
    """Batch uniformity loss, half per view.

    Each view contributes half the log of its mean within-view pair
    potential; cross-view pairs do not enter. No learnable parameters, so
    the scale/bias gradients are identically zero.
    """
    v1, g1 = pairwise_uniformity(batch.view1, kernel)
    v2, g2 = pairwise_uniformity(batch.view2, kernel)
    return LossOutput(
        value=0.5 * v1 + 0.5 * v2,
        grads={
            "view1": 0.5 * g1,
            "view2": 0.5 * g2,
            "scale": np.float64(0.0),
            "bias": np.float64(0.0),
        },
    )


class _CosineMatrix:
    """Cross-view cosine matrix with the machinery to push gradients back.

    cos[i, j] = <a_i, b_j> / (||a_i|| ||b_j||), clamped to [-1, 1]. The
    clamp mask zeroes gradients where it binds (only at exactly parallel
    pairs under floating point).
    """

    def __init__(self, a: np.ndarray, b: np.ndarray) -> None:
        self.na = np.linalg.norm(a, axis=1)
        self.nb = np.linalg.norm(b, axis=1)
        self.ua = a / self.na[:, None]
        self.ub = b / self.nb[:, None]
        raw = self.ua @ self.ub.T
        self.mask = np.abs(raw) < 1.0
        self.cos = np.clip(raw, -1.0, 1.0)

    def backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of sum(g * cos) with respect to the raw inputs."""
        g = g * self.mask
        ga = (g @ self.ub - (g * self.cos).sum(axis=1)[:, None] * self.ua)
        ga /= self.na[:, None]
        gb = (g.T @ self.ua - (g * self.cos).sum(axis=0)[:, None] * self.ub)
        gb /= self.nb[:, None]
        return ga, gb


def _log_softmax_rows(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (log-normalizer, softmax), computed with max subtraction."""
    peak = s.max(axis=1, keepdims=True)
    z = np.exp(s - peak)
    denom = z.sum(axis=1, keepdims=True)
    lse = (peak + np.log(denom)).ravel()
    return lse, z / denom


def aprot_loss(batch: EmbeddingBatch, params: SimilarityParams) -> LossOutput:
    """Angular prototypical loss.

    Each view-1 embedding is classified against all K view-2 embeddings
    through the affine cosine similarity; the correct class is its own
    positive pair. Mean cross-entropy over the K anchors.
    """
    k = batch.size
    cm = _CosineMatrix(batch.view1, batch.view2)
    s = params.scale * cm.cos + params.bias
    lse, p = _log_softmax_rows(s)
    value = float(np.mean(lse - np.diag(s)))

    g_s = (p - np.eye(k)) / k
    g1, g2 = cm.backward(params.scale * g_s)
    return LossOutput(
        value=value,
        grads={
            "view1": g1,
            "view2": g2,
            "scale": np.float64(np.sum(g_s * cm.cos)),
            "bias": np.float64(np.sum(g_s)),
        },
    )


def acont_loss(batch: EmbeddingBatch, params: SimilarityParams) -> LossOutput:
    """Angular contrastive loss.

    Symmetric two-direction cross-entropy over the cross-view similarity
    matrix: anchors in view 1 normalize over view-2 candidates (rows) and
    anchors in view 2 normalize over view-1 candidates (columns), each
    direction weighted one half.
    """
    k = batch.size
    cm = _CosineMatrix(batch.view1, batch.view2)
    s = params.scale * cm.cos + params.bias

    lse_r, p_row = _log_softmax_rows(s)
    lse_c, p_col_t = _log_softmax_rows(s.T)
    diag = np.diag(s)
    value = float(0.5 * np.mean(lse_r - diag) + 0.5 * np.mean(lse_c - diag))

    eye = np.eye(k)
    g_s = ((p_row - eye) + (p_col_t.T - eye)) / (2.0 * k)
    g1, g2 = cm.backward(params.scale * g_s)
    return LossOutput(
        value=value,
        grads={
            "view1": g1,
            "view2": g2,
            "scale": np.float64(np.sum(g_s * cm.cos)),
            "bias": np.float64(np.sum(g_s)),
        },
    )


def similarity_loss(
    batch: EmbeddingBatch, params: SimilarityParams, kind: SimilarityKind
) -> LossOutput:
    if kind == "aprot":
        return aprot_loss(batch, params)
    if kind == "acont":
        return acont_loss(batch, params)
    raise InvalidParamError(f"unknown similarity kind: {kind!r}")


def combine_losses(unif: LossOutput, sim: LossOutput, weights: CelWeights) -> LossOutput:
    """weight * uniformity + similarity, gradients combined the same way.

    A zero weight drops the uniformity gradients entirely instead of
    multiplying them by zero, so a weight-0 run is bit-identical to a
    similarity-only run.
    """
    w = weights.uniformity_weight
    value = w * unif.value + sim.value if w != 0.0 else sim.value
    if w == 0.0:
        grads = dict(sim.grads)
    else:
        grads = {
            "view1": w * unif.grads["view1"] + sim.grads["view1"],
            "view2": w * unif.grads["view2"] + sim.grads["view2"],
            "scale": sim.grads["scale"],
            "bias": sim.grads["bias"],
        }
    return LossOutput(value=value, grads=grads)


def total_loss(
    batch: EmbeddingBatch,
    kernel: KernelParam,
    params: SimilarityParams,
    weights: CelWeights,
    similarity_kind: SimilarityKind = "aprot",
) -> LossOutput:
    """Combined objective: uniformity weighted in with the similarity loss."""
    unif = uniformity_loss(batch, kernel)
    sim = similarity_loss(batch, params, similarity_kind)
    return combine_losses(unif, sim, weights)
