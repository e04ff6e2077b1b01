"""Emotion-aware contrastive objective, decoding cross-entropy, and the
per-stage combination ``total = contrastive + lambda * ce``.

The contrastive loss sums over all ordered pairs (i, j) of a batch,
including self-pairs (which contribute exactly zero):

    L = sum_ij [ w1 * y_ij * (1 - S_ij) + w2 * (1 - y_ij) * max(0, S_ij - m) ]

with S the cosine similarity matrix and y_ij = 1 iff labels match. Same-label
pairs are pulled toward similarity 1; different-label pairs are pushed below
the margin m. The subgradient at the hinge kink is taken as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "cosine_similarity",
    "contrastive_loss",
    "contrastive_loss_reference",
    "ce_loss",
    "stage_loss",
]


@dataclass(frozen=True)
class LossConfig:
    """Weights of the objective: ``w1`` (pull), ``w2`` (push), ``margin``,
    and ``ce_weight`` (the lambda mixing the decoding cross-entropy).

    ``mean_over_pairs`` divides the contrastive sum by b^2; default off, so
    the loss is the raw double sum.
    """

    w1: float = 1.0
    w2: float = 1.0
    margin: float = 0.2
    ce_weight: float = 1.0
    mean_over_pairs: bool = False

    def __post_init__(self) -> None:
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError(f"w1 and w2 must be positive, got {self.w1}, {self.w2}")
        if not -1.0 <= self.margin <= 1.0:
            raise ValueError(f"margin must be in [-1, 1], got {self.margin}")
        if self.ce_weight < 0:
            raise ValueError(f"ce_weight must be >= 0, got {self.ce_weight}")

    def to_dict(self) -> dict:
        return {
            "w1": self.w1,
            "w2": self.w2,
            "margin": self.margin,
            "ce_weight": self.ce_weight,
            "mean_over_pairs": self.mean_over_pairs,
        }


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """dot(a, b) / (|a| |b|), clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-300 or nb < 1e-300:
        raise ValueError("cosine_similarity is undefined for zero vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def contrastive_loss(
    embeddings: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    validate: bool = True,
) -> tuple[float, np.ndarray]:
    """Vectorized loss over all ordered pairs; returns (loss, d_embeddings).

    ``embeddings`` is (b, d); rows are expected to be unit vectors (checked to
    1e-6 when ``validate``). Cosines are computed from internally normalized
    rows, so the gradient is exact for any nonzero rows; with ``validate=False``
    slightly off-unit rows (e.g. finite-difference probes) are accepted.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValueError(f"expected a (b, d) embedding matrix, got {emb.shape}")
    labels = np.asarray(labels)
    if labels.shape != (emb.shape[0],):
        raise ValueError("labels must have one entry per embedding row")
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms < 1e-300):
        raise ValueError("contrastive_loss is undefined for zero rows")
    if validate and np.any(np.abs(norms - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(
            f"embedding row {worst} is not unit-norm (|v|={norms[worst]:.8f})"
        )

    unit = emb / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    same = labels[:, None] == labels[None, :]

    pull = cfg.w1 * (1.0 - sim)
    hinge = sim - cfg.margin
    push = cfg.w2 * np.maximum(0.0, hinge)
    loss = float(np.where(same, pull, push).sum())

    # d loss / d sim: -w1 on same-label pairs, w2 on active hinges.
    g_sim = np.where(same, -cfg.w1, np.where(hinge > 0.0, cfg.w2, 0.0))
    scale = 1.0
    if cfg.mean_over_pairs:
        scale = 1.0 / (emb.shape[0] ** 2)
        loss *= scale
    d_unit = (g_sim + g_sim.T) @ unit * scale
    # Back through row normalization (radial components drop out).
    d_emb = (d_unit - unit * (d_unit * unit).sum(axis=1, keepdims=True)) / norms[:, None]
    return loss, d_emb


def contrastive_loss_reference(
    embeddings: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> float:
    """Plain O(b^2) double loop over ordered pairs; the readable reference the
    vectorized implementation is tested against."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    b = emb.shape[0]
    total = 0.0
    for i in range(b):
        for j in range(b):
            s = cosine_similarity(emb[i], emb[j]) if i != j else 1.0
            if labels[i] == labels[j]:
                total += cfg.w1 * (1.0 - s)
            else:
                total += cfg.w2 * max(0.0, s - cfg.margin)
    if cfg.mean_over_pairs:
        total /= b * b
    return total


def ce_loss(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """-log softmax(logits)[target]; returns (loss, d_logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError(f"expected a 1-D logit vector, got shape {logits.shape}")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} out of range for {logits.shape[0]} logits")
    shifted = logits - logits.max()
    log_z = float(np.log(np.exp(shifted).sum()))
    loss = log_z - float(shifted[target])
    d_logits = np.exp(shifted - log_z)
    d_logits[target] -= 1.0
    return loss, d_logits


def stage_loss(contrastive: float, ce: float, cfg: LossConfig) -> float:
    """Per-stage total: contrastive + ce_weight * ce."""
    if not (np.isfinite(contrastive) and np.isfinite(ce)):
        raise ValueError(f"stage_loss requires finite inputs, got {contrastive}, {ce}")
    return contrastive + cfg.ce_weight * ce
