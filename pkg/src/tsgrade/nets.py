"""Localization and grading networks plus the consensus rule.

Both networks are stacks of dilated temporal convolutions with residual
connections, mapping a (T, D) feature sequence to per-frame outputs: a
single relevance score per frame for localization, and C+1 class logits per
frame (index 0 = background) for grading. tanh is used as the activation;
it is smooth, which keeps finite-difference gradient checks exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tsgrade import autodiff as ad
from tsgrade.autodiff import ParamStore, Tensor
from tsgrade.windows import WindowProposal


@dataclass(frozen=True)
class LMConfig:
    """Localization network: dilated conv stack with a 1-channel head."""
    feature_dim: int
    width: int = 64
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    kernel: int = 3
    dropout: float = 0.0

    def __post_init__(self):
        if self.feature_dim < 1 or self.width < 1:
            raise ValueError("LMConfig: feature_dim and width must be positive")


@dataclass(frozen=True)
class GMConfig:
    """Grading network: dilated conv stack with a per-frame class head."""
    feature_dim: int
    n_grades: int
    width: int = 64
    dilations: tuple[int, ...] = (1, 2)
    kernel: int = 3
    dropout: float = 0.2
    pool_k: int = 8
    with_background: bool = True

    def __post_init__(self):
        if self.n_grades < 2:
            raise ValueError(f"GMConfig: need at least 2 grades, got {self.n_grades}")
        if self.pool_k < 1:
            raise ValueError(f"GMConfig: pool_k must be >= 1, got {self.pool_k}")
        if self.feature_dim < 1 or self.width < 1:
            raise ValueError("GMConfig: feature_dim and width must be positive")

    @property
    def n_logits(self) -> int:
        return self.n_grades + (1 if self.with_background else 0)


@dataclass
class LocalizationOutput:
    """Frame scores, their sigmoid probabilities, and the argmax frame."""
    scores: Tensor
    probs: Tensor
    predicted: int = field(init=False)

    def __post_init__(self):
        self.predicted = int(np.argmax(self.scores.data))


@dataclass
class ProposalLogits:
    """Grading outputs for one window: per-frame logits and their top-K pool."""
    window: WindowProposal
    frame_logits: Tensor
    pooled: Tensor


def _init_stack(store: ParamStore, prefix: str, rng: np.random.Generator,
                in_dim: int, width: int, dilations: tuple[int, ...], kernel: int,
                head_dim: int, head_bias: float) -> None:
    def glorot(fan_in, shape):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    store.add(f"{prefix}/in/w", glorot(in_dim, (in_dim, width)))
    store.add(f"{prefix}/in/b", np.zeros(width))
    for i, _ in enumerate(dilations):
        store.add(f"{prefix}/block{i}/conv/w", glorot(kernel * width, (kernel, width, width)))
        store.add(f"{prefix}/block{i}/conv/b", np.zeros(width))
        store.add(f"{prefix}/block{i}/point/w", glorot(width, (width, width)))
        store.add(f"{prefix}/block{i}/point/b", np.zeros(width))
    store.add(f"{prefix}/head/w", glorot(width, (width, head_dim)))
    store.add(f"{prefix}/head/b", np.full(head_dim, head_bias))


def init_localization_params(store: ParamStore, cfg: LMConfig,
                             rng: np.random.Generator, prefix: str = "lm") -> None:
    # negative head bias keeps initial probabilities below the peak
    # threshold, so early training starts from the fallback window
    _init_stack(store, prefix, rng, cfg.feature_dim, cfg.width, cfg.dilations,
                cfg.kernel, 1, head_bias=-2.0)


def init_grading_params(store: ParamStore, cfg: GMConfig,
                        rng: np.random.Generator, prefix: str = "gm") -> None:
    _init_stack(store, prefix, rng, cfg.feature_dim, cfg.width, cfg.dilations,
                cfg.kernel, cfg.n_logits, head_bias=0.0)


def _stack_forward(store: ParamStore, prefix: str, x: Tensor,
                   dilations: tuple[int, ...], drop_rate: float,
                   rng: np.random.Generator | None) -> Tensor:
    h = ad.matmul(x, store[f"{prefix}/in/w"]) + store[f"{prefix}/in/b"]
    for i, dil in enumerate(dilations):
        z = ad.conv1d(h, store[f"{prefix}/block{i}/conv/w"], dilation=dil)
        z = ad.tanh(z + store[f"{prefix}/block{i}/conv/b"])
        z = ad.matmul(z, store[f"{prefix}/block{i}/point/w"]) + store[f"{prefix}/block{i}/point/b"]
        h = h + ad.dropout(z, drop_rate, rng)
    return ad.matmul(h, store[f"{prefix}/head/w"]) + store[f"{prefix}/head/b"]


def _check_features(x: Tensor, feature_dim: int, who: str) -> None:
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ValueError(f"{who}: need a non-empty (T, D) input, got shape {tuple(x.data.shape)}")
    if x.data.shape[1] != feature_dim:
        raise ValueError(
            f"{who}: input has {x.data.shape[1]} feature channels, model expects {feature_dim}"
        )


def localization_forward(store: ParamStore, cfg: LMConfig, x: Tensor,
                         rng: np.random.Generator | None = None,
                         prefix: str = "lm") -> LocalizationOutput:
    """Score every frame; ``rng`` enables train-mode dropout."""
    _check_features(x, cfg.feature_dim, "localization_forward")
    out = _stack_forward(store, prefix, x, cfg.dilations, cfg.dropout, rng)
    scores = ad.reshape(out, (x.data.shape[0],))
    return LocalizationOutput(scores, ad.sigmoid(scores))


def grading_forward(store: ParamStore, cfg: GMConfig, x: Tensor,
                    rng: np.random.Generator | None = None,
                    prefix: str = "gm") -> Tensor:
    """Per-frame class logits, shape (T, C+1) with background at index 0."""
    _check_features(x, cfg.feature_dim, "grading_forward")
    return _stack_forward(store, prefix, x, cfg.dilations, cfg.dropout, rng)


def reweight(x: Tensor, probs: Tensor) -> Tensor:
    """Amplify frames by their relevance while keeping the original signal.

    Computes x * p[:, None] + x. Gradients reach both the features and the
    probabilities, which is what couples the grading objective back to the
    localization network.
    """
    if x.data.ndim != 2 or probs.data.ndim != 1 or x.data.shape[0] != probs.data.shape[0]:
        raise ValueError(
            f"reweight: features {tuple(x.data.shape)} and probabilities "
            f"{tuple(probs.data.shape)} do not align"
        )
    col = ad.reshape(probs, (probs.data.shape[0], 1))
    return ad.mul(x, col) + x


def topk_pool(frame_logits: Tensor, k: int) -> Tensor:
    """Per class, the mean of the k largest frame logits (all frames if T < k)."""
    return ad.topk_mean(frame_logits, k)


CONSENSUS_STRATEGIES = ("highest_peak", "average", "majority_vote", "highest_confidence")


def consensus(proposals: list[tuple[WindowProposal, np.ndarray]],
              strategy: str = "highest_peak") -> int:
    """Reduce per-window logits to a single 1-based grade.

    The background logit never participates. Strategies:

    - ``highest_peak``: best class of the window with the tallest peak.
    - ``average``: best class of the mean logits across windows.
    - ``majority_vote``: most frequent per-window best class; ties resolve
      to the tied class with the highest mean logit.
    - ``highest_confidence``: class achieving the single largest logit in
      any window.
    """
    if not proposals:
        raise ValueError("consensus: empty proposal list")
    if strategy not in CONSENSUS_STRATEGIES:
        raise ValueError(
            f"consensus: unknown strategy {strategy!r}, expected one of {CONSENSUS_STRATEGIES}"
        )
    logits = np.stack([np.asarray(l, dtype=np.float64) for _, l in proposals])
    classes = logits[:, 1:]
    if classes.shape[1] < 1:
        raise ValueError("consensus: logits carry no non-background classes")

    if strategy == "highest_peak":
        best = int(np.argmax([w.peak_height for w, _ in proposals]))
        return int(np.argmax(classes[best])) + 1
    if strategy == "average":
        return int(np.argmax(classes.mean(axis=0))) + 1
    if strategy == "highest_confidence":
        _, klass = np.unravel_index(int(np.argmax(classes)), classes.shape)
        return int(klass) + 1
    votes = np.argmax(classes, axis=1)
    counts = np.bincount(votes, minlength=classes.shape[1])
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.size == 1:
        return int(tied[0]) + 1
    means = classes.mean(axis=0)
    return int(tied[np.argmax(means[tied])]) + 1
