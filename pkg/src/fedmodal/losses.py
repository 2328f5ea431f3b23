"""Loss functions and their analytic gradients.

Cross-entropy (fused with softmax) drives the supervised groups; the
batch contrastive loss over cosine similarities drives the multimodal
group. Both return gradients ready to feed into ``nn.backward``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyBatchError, ShapeError

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class OneHotBatch:
    """Targets as a [B, C] 0/1 matrix with exactly one 1 per row."""

    labels: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.float64)
        if y.ndim != 2:
            raise ShapeError(f"one-hot targets must be 2-D, got shape {y.shape}")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ShapeError("one-hot entries must be 0 or 1")
        if not (y.sum(axis=1) == 1.0).all():
            raise ShapeError("each one-hot row must sum to exactly 1")
        object.__setattr__(self, "labels", y)


def one_hot(class_ids, class_count: int) -> OneHotBatch:
    """Encode integer class ids as a OneHotBatch."""
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= class_count:
        raise ShapeError(f"class ids must lie in [0, {class_count})")
    y = np.zeros((len(ids), class_count))
    y[np.arange(len(ids)), ids] = 1.0
    return OneHotBatch(y)


@dataclass(frozen=True)
class ContrastiveBatch:
    """Paired embedding batches (one row per sample and view) plus temperature."""

    z_img: np.ndarray
    z_aud: np.ndarray
    temperature: float = 0.5

    def __post_init__(self):
        zi = np.asarray(self.z_img, dtype=np.float64)
        za = np.asarray(self.z_aud, dtype=np.float64)
        if zi.ndim != 2 or za.ndim != 2:
            raise ShapeError("embeddings must be [B, D] arrays")
        if zi.shape != za.shape:
            raise ShapeError(f"view shapes differ: {zi.shape} vs {za.shape}")
        if zi.shape[0] < 1:
            raise EmptyBatchError("contrastive batch is empty")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        object.__setattr__(self, "z_img", zi)
        object.__setattr__(self, "z_aud", za)


def cross_entropy(probs: np.ndarray, targets: OneHotBatch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch of softmax outputs.

    Returns the loss and its gradient with respect to the *pre-softmax
    logits* (the usual fused form ``(p - y) / B``), with the log clamped
    at ``LOG_CLAMP`` so saturated rows stay finite.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = targets.labels
    if p.shape != y.shape:
        raise ShapeError(f"probs shape {p.shape} != targets shape {y.shape}")
    batch = p.shape[0]
    loss = float(-(y * np.log(np.maximum(p, LOG_CLAMP))).sum() / batch)
    grad_logits = (p - y) / batch
    return loss, grad_logits


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    When both vectors are zero the similarity is defined as 0 and a
    degenerate-embedding warning is logged.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 and nv == 0.0:
        log.warning("cosine_similarity of two zero vectors: returning 0 (degenerate embeddings)")
        return 0.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _interleave(z_img: np.ndarray, z_aud: np.ndarray) -> np.ndarray:
    b, d = z_img.shape
    views = np.empty((2 * b, d))
    views[0::2] = z_img
    views[1::2] = z_aud
    return views


def _normalize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return v / safe[:, None], norms


def ntxent_loss(batch: ContrastiveBatch) -> tuple[float, np.ndarray, np.ndarray]:
    """Normalized-temperature cross-entropy over all in-batch view pairs.

    The 2B views are interleaved (img_1, aud_1, img_2, aud_2, ...); each
    view is an anchor whose positive is its partner view and whose
    denominator runs over all other 2B-1 views. Both directions of every
    pair are averaged, so the total is (1/2B) * sum of per-anchor losses.
    Returns the loss and its gradients with respect to both embedding
    batches (differentiated through the cosine normalization).
    """
    z_img, z_aud, tau = batch.z_img, batch.z_aud, batch.temperature
    b, d = z_img.shape
    if b == 1:
        # The only other view is the positive: numerator equals denominator.
        return 0.0, np.zeros_like(z_img), np.zeros_like(z_aud)

    views = _interleave(z_img, z_aud)
    unit, norms = _normalize_rows(views)
    n = 2 * b
    sims = unit @ unit.T
    logits = sims / tau
    np.fill_diagonal(logits, -np.inf)

    pos = np.arange(n) ^ 1  # partner index: 0<->1, 2<->3, ...
    shift = logits.max(axis=1, keepdims=True)
    expm = np.exp(logits - shift)
    denom = expm.sum(axis=1)
    per_anchor = -(logits[np.arange(n), pos] - shift[:, 0] - np.log(denom))
    loss = float(per_anchor.sum() / n)

    # d loss / d sims: softmax weights minus the positive indicator, per anchor row.
    attn = expm / denom[:, None]
    grad_sims = attn / (tau * n)
    grad_sims[np.arange(n), pos] -= 1.0 / (tau * n)
    np.fill_diagonal(grad_sims, 0.0)

    # sims = unit @ unit.T, then back through the row normalization.
    grad_unit = (grad_sims + grad_sims.T) @ unit
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)[:, None]
    grad_views = np.where(norms[:, None] > 0.0, (grad_unit - radial * unit) / safe, 0.0)

    return loss, grad_views[0::2].copy(), grad_views[1::2].copy()
