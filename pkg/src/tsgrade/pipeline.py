"""Per-video forward passes for every operating mode.

Modes:

- ``stc``: score frames, trim dynamic windows around score peaks, classify
  each window (the full pipeline).
- ``fixed_window``: same, but constant-width windows centered on the peaks.
- ``no_wpm``: no slicing; the whole reweighted sequence goes to the grader
  as a single window.
- ``full``: grader alone on the whole sequence, no localization at all.
- ``trimmed``: grader alone on a window centered at the annotated timestamp
  (uses ground truth at train and test time; an upper-bound reference).

``full`` and ``trimmed`` have no negative windows, so their grading head has
no background class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tsgrade import autodiff as ad
from tsgrade.autodiff import ParamStore, Tensor
from tsgrade.nets import (
    GMConfig,
    LMConfig,
    LocalizationOutput,
    ProposalLogits,
    consensus,
    grading_forward,
    init_grading_params,
    init_localization_params,
    localization_forward,
    reweight,
    topk_pool,
)
from tsgrade.synth import SynthVideo
from tsgrade.windows import WindowProposal, fixed_windows, propose_windows

MODES = ("stc", "full", "trimmed", "fixed_window", "no_wpm")
LOCALIZED_MODES = ("stc", "fixed_window", "no_wpm")
WINDOWED_MODES = ("stc", "fixed_window")


def mode_has_lm(mode: str) -> bool:
    return mode in LOCALIZED_MODES


def trimmed_bounds(t: int, width: int, t_total: int) -> tuple[int, int]:
    """Symmetric window around the annotation, clamped at the edges."""
    left = max(0, t - width // 2)
    right = min(t_total, left + width)
    left = max(0, min(left, right - 1))
    return left, right


@dataclass
class VideoForward:
    """Everything one forward pass produces for one video."""
    localization: LocalizationOutput | None
    proposals: list[ProposalLogits]

    def peak_indices(self) -> list[int]:
        return [p.window.peak for p in self.proposals]


class Pipeline:
    """Parameter store plus configs; runs mode-dependent forwards."""

    def __init__(self, store: ParamStore, mode: str, lm_cfg: LMConfig | None,
                 gm_cfg: GMConfig, n_std: float, threshold: float,
                 window_width: int, max_proposals: int):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
        if mode_has_lm(mode) and lm_cfg is None:
            raise ValueError(f"mode {mode!r} needs a localization config")
        self.store = store
        self.mode = mode
        self.lm_cfg = lm_cfg
        self.gm_cfg = gm_cfg
        self.n_std = n_std
        self.threshold = threshold
        self.window_width = window_width
        self.max_proposals = max_proposals

    @classmethod
    def build(cls, feature_dim: int, n_grades: int, mode: str, seed: int, *,
              lm_width: int = 64, lm_dilations: tuple[int, ...] = (1, 2, 4, 8, 16),
              lm_dropout: float = 0.0, gm_width: int = 64,
              gm_dilations: tuple[int, ...] = (1, 2), gm_dropout: float = 0.2,
              kernel: int = 3, pool_k: int = 8, n_std: float = 2.0,
              threshold: float = 0.5, window_width: int = 60,
              max_proposals: int = 8) -> "Pipeline":
        store = ParamStore()
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
        lm_cfg = None
        if mode_has_lm(mode):
            lm_cfg = LMConfig(feature_dim, lm_width, lm_dilations, kernel, lm_dropout)
            init_localization_params(store, lm_cfg, rng)
        gm_cfg = GMConfig(feature_dim, n_grades, gm_width, gm_dilations, kernel,
                          gm_dropout, pool_k, with_background=mode_has_lm(mode))
        init_grading_params(store, gm_cfg, rng)
        return cls(store, mode, lm_cfg, gm_cfg, n_std, threshold, window_width,
                   max_proposals)

    # -- window generation --------------------------------------------------

    def _windows(self, probs: np.ndarray) -> list[WindowProposal]:
        if self.mode == "fixed_window":
            return fixed_windows(probs, self.window_width, self.threshold,
                                 max_peaks=self.max_proposals)
        return propose_windows(probs, self.n_std, self.threshold,
                               max_peaks=self.max_proposals)

    # -- forwards -------------------------------------------------------------

    def _grade_window(self, x_win: Tensor, window: WindowProposal,
                      rng: np.random.Generator | None) -> ProposalLogits:
        frame_logits = grading_forward(self.store, self.gm_cfg, x_win, rng)
        return ProposalLogits(window, frame_logits, topk_pool(frame_logits, self.gm_cfg.pool_k))

    def forward(self, video: SynthVideo, rng: np.random.Generator | None = None,
                lm_only: bool = False) -> VideoForward:
        """Run the mode's forward; ``rng`` enables train-mode dropout."""
        x = Tensor(video.features)
        t_total = video.n_frames

        if self.mode in ("full", "trimmed"):
            if self.mode == "trimmed":
                left, right = trimmed_bounds(video.timestamp, self.window_width, t_total)
            else:
                left, right = 0, t_total
            window = WindowProposal(video.timestamp if self.mode == "trimmed" else 0,
                                    0.0, 0.0, left, right, 0.0)
            return VideoForward(None, [self._grade_window(x[left:right], window, rng)])

        loc = localization_forward(self.store, self.lm_cfg, x, rng)
        if lm_only:
            return VideoForward(loc, [])

        if self.mode == "no_wpm":
            window = WindowProposal(loc.predicted, 0.0, 0.0, 0, t_total,
                                    float(loc.probs.data[loc.predicted]))
            x_tilde = reweight(x, loc.probs)
            return VideoForward(loc, [self._grade_window(x_tilde, window, rng)])

        proposals = []
        for window in self._windows(loc.probs.data):
            x_win = x[window.left:window.right]
            p_win = loc.probs[window.left:window.right]
            x_tilde = reweight(x_win, p_win)
            proposals.append(self._grade_window(x_tilde, window, rng))
        return VideoForward(loc, proposals)

    # -- inference ------------------------------------------------------------

    def predict(self, video: SynthVideo,
                consensus_strategy: str = "highest_peak") -> dict:
        """Eval-mode prediction: grade, predicted timestamp, and windows."""
        fwd = self.forward(video, rng=None)
        if self.gm_cfg.with_background:
            pairs = [(p.window, p.pooled.data) for p in fwd.proposals]
            grade = consensus(pairs, consensus_strategy)
        else:
            grade = int(np.argmax(fwd.proposals[0].pooled.data)) + 1
        return {
            "grade": grade,
            "timestamp": None if fwd.localization is None else fwd.localization.predicted,
            "windows": [(p.window.left, p.window.right) for p in fwd.proposals],
            "true_grade": video.grade,
            "true_timestamp": video.timestamp,
        }
