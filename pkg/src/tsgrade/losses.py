"""Training objectives for localization and windowed grading.

Localization combines a hard target (binary cross-entropy with a neutral
zone around the annotated frame, so near misses are not punished) and a soft
one (cosine alignment of the softmax-normalized scores with a Gaussian bump
at the annotation). Grading applies cross-entropy over proposal windows: the
window nearest the annotation carries the video grade, every other window is
pushed toward the background class.

All losses are scalar tape tensors, so gradients flow to whatever produced
the inputs.
"""

from __future__ import annotations

import numpy as np

from tsgrade import autodiff as ad
from tsgrade.autodiff import Tensor

PROB_EPS = 1e-7


def gaussian_reference(t_total: int, center: int, delta: float) -> np.ndarray:
    """Unit-amplitude Gaussian bump over frame indices, centered on ``center``."""
    if delta <= 0:
        raise ValueError(f"gaussian_reference: delta must be positive, got {delta}")
    j = np.arange(t_total, dtype=np.float64)
    return np.exp(-0.5 * ((j - center) / delta) ** 2)


def neutral_zone_mask(t_total: int, center: int, delta: float) -> np.ndarray:
    """1.0 outside the closed interval [center - 3*delta, center + 3*delta]."""
    j = np.arange(t_total)
    return ((j < center - 3 * delta) | (j > center + 3 * delta)).astype(np.float64)


def bce_loss(probs: Tensor, t: int, delta: float) -> Tensor:
    """Frame-wise binary cross-entropy with a neutral zone of width 3*delta.

    The positive term hits only the annotated frame; negative terms cover
    frames outside the zone and are averaged with the fixed normalizer T - 1
    regardless of how many frames the zone swallows.
    """
    t_total = probs.data.shape[0]
    if not 0 <= t < t_total:
        raise ValueError(f"bce_loss: timestamp {t} out of range for {t_total} frames")
    clamped = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    positive = ad.neg(ad.tsum(ad.log(clamped[t])))
    mask = neutral_zone_mask(t_total, t, delta)
    if t_total > 1 and mask.any():
        negatives = ad.tsum(ad.mul(ad.log(1.0 - clamped), mask))
        return positive - negatives * (1.0 / (t_total - 1))
    return positive


def cosine_loss(scores: Tensor, t: int, delta: float) -> Tensor:
    """One minus the cosine between softmax scores and a Gaussian reference."""
    t_total = scores.data.shape[0]
    soft = ad.softmax(scores, axis=0)
    ref = Tensor(gaussian_reference(t_total, t, delta))
    cos = ad.div(ad.dot(soft, ref), ad.mul(ad.l2_norm(soft), ad.l2_norm(ref)))
    return 1.0 - cos


def localization_loss(scores: Tensor, probs: Tensor, t: int, delta: float,
                      alpha: float = 1.0, use_bce: bool = True,
                      use_cos: bool = True) -> Tensor:
    """Weighted sum of the hard and soft localization terms.

    The component flags exist for ablations; at least one must be on.
    """
    if alpha < 0:
        raise ValueError(f"localization_loss: alpha must be >= 0, got {alpha}")
    if not (use_bce or use_cos):
        raise ValueError("localization_loss: at least one component must be enabled")
    total = None
    if use_bce:
        total = bce_loss(probs, t, delta)
    if use_cos:
        cos = cosine_loss(scores, t, delta) * alpha
        total = cos if total is None else total + cos
    return total


def cross_entropy(logits: Tensor, klass: int) -> Tensor:
    """Negative log-softmax of one class of a 1-D logit vector."""
    n = logits.data.shape[0]
    if not 0 <= klass < n:
        raise ValueError(f"cross_entropy: class {klass} out of range for {n} logits")
    return ad.neg(ad.tsum(ad.log_softmax(logits, axis=0)[klass]))


def positive_proposal_index(peak_indices: list[int], t: int) -> int:
    """Proposal whose peak is nearest the annotation; ties take the smaller peak."""
    if not peak_indices:
        raise ValueError("positive_proposal_index: empty proposal set")
    best = 0
    for i, mu in enumerate(peak_indices):
        if (abs(mu - t), mu) < (abs(peak_indices[best] - t), peak_indices[best]):
            best = i
    return best


def grading_loss(proposal_logits: list[Tensor], peak_indices: list[int], t: int,
                 grade: int, include_background: bool = True) -> Tensor:
    """Cross-entropy over proposals with background-aware negatives.

    ``proposal_logits`` holds one (C+1)-logit vector per window, index 0
    being the background class; ``grade`` is 1-based. The proposal nearest
    the annotation is the positive and carries the video grade; the others
    average a background cross-entropy, or are ignored entirely when
    ``include_background`` is off.
    """
    m = len(proposal_logits)
    if m == 0:
        raise ValueError("grading_loss: empty proposal set")
    if m != len(peak_indices):
        raise ValueError(f"grading_loss: {m} logit vectors but {len(peak_indices)} peaks")
    n_classes = proposal_logits[0].data.shape[0]
    if not 1 <= grade <= n_classes - 1:
        raise ValueError(f"grading_loss: grade {grade} out of range 1..{n_classes - 1}")
    pos = positive_proposal_index(peak_indices, t)
    loss = cross_entropy(proposal_logits[pos], grade)
    if include_background and m > 1:
        negatives = None
        for i, logits in enumerate(proposal_logits):
            if i == pos:
                continue
            term = cross_entropy(logits, 0)
            negatives = term if negatives is None else negatives + term
        loss = loss + negatives * (1.0 / (m - 1))
    return loss


def total_loss(grading: Tensor, localization: Tensor, beta: float = 1.0) -> Tensor:
    """Joint objective: grading plus beta times localization."""
    if beta < 0:
        raise ValueError(f"total_loss: beta must be >= 0, got {beta}")
    return grading + localization * beta
