"""Adam optimizer, training schemes, evaluation, and baseline modes.

Three schemes control when the two networks learn:

- ``two_stage``: the localizer alone trains for ``e_frozen`` epochs on the
  localization objective, then everything trains jointly on the combined
  objective.
- ``end_to_end``: joint training from epoch 0.
- ``separate``: localizer-only warmup as above, then the localizer freezes
  and only the grader trains on the grading objective.

Batch size is one video (sequences have variable length); the visit order
reshuffles every epoch from the run seed, and dropout masks derive from
(seed, epoch, video), so a run is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import numpy as np

from tsgrade import autodiff as ad
from tsgrade.autodiff import ParamStore, ShapeError, backward
from tsgrade.losses import (
    bce_loss,
    cosine_loss,
    cross_entropy,
    grading_loss,
    total_loss,
)
from tsgrade.metrics import EvalReport, build_report
from tsgrade.pipeline import MODES, Pipeline, mode_has_lm, WINDOWED_MODES
from tsgrade.synth import SynthDataset, SynthVideo

SCHEMES = ("two_stage", "end_to_end", "separate")


class Adam:
    """Bias-corrected Adam over the trainable entries of a parameter store."""

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self) -> None:
        """One update; parameters without an accumulated gradient see zeros."""
        for name, tensor in self.store.trainable_items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if grad.shape != tensor.data.shape:
                raise ShapeError(
                    f"adam: gradient shape {grad.shape} does not match parameter "
                    f"{name!r} shape {tensor.data.shape}"
                )
            m = self._m.setdefault(name, np.zeros_like(tensor.data))
            v = self._v.setdefault(name, np.zeros_like(tensor.data))
            if m.shape != tensor.data.shape:
                raise ShapeError(
                    f"adam: stale state for {name!r}: moment shape {m.shape} vs "
                    f"parameter shape {tensor.data.shape}"
                )
            t = self._t.get(name, 0) + 1
            self._t[name] = t
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    lr: float = 1e-3
    e_frozen: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 20.0
    n_std: float = 2.0
    threshold: float = 0.5
    pool_k: int = 8
    scheme: str = "two_stage"
    mode: str = "stc"
    window_width: int = 60
    consensus: str = "highest_peak"
    seed: int = 0
    lm_width: int = 64
    lm_dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    lm_dropout: float = 0.0
    gm_width: int = 64
    gm_dilations: tuple[int, ...] = (1, 2)
    gm_dropout: float = 0.2
    kernel: int = 3
    max_proposals: int = 8
    loss_bce: bool = True
    loss_cos: bool = True
    loss_bg: bool = True
    eval_every: int = 1
    select_best: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"TrainConfig: unknown scheme {self.scheme!r}, expected {SCHEMES}")
        if self.mode not in MODES:
            raise ValueError(f"TrainConfig: unknown mode {self.mode!r}, expected {MODES}")
        if not 0 <= self.e_frozen <= self.epochs:
            raise ValueError(
                f"TrainConfig: e_frozen {self.e_frozen} outside 0..epochs ({self.epochs})"
            )
        if self.mode in ("trimmed", "fixed_window") and self.window_width < 1:
            raise ValueError(f"TrainConfig: mode {self.mode!r} needs window_width > 0")
        if not mode_has_lm(self.mode) and self.scheme != "end_to_end":
            raise ValueError(
                f"TrainConfig: mode {self.mode!r} has no localization stage, so scheme "
                f"{self.scheme!r} is meaningless; use scheme='end_to_end'"
            )
        if not (self.loss_bce or self.loss_cos):
            raise ValueError("TrainConfig: enable at least one localization loss term")
        if self.alpha < 0 or self.beta < 0 or self.lr < 0:
            raise ValueError("TrainConfig: alpha, beta, lr must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRow:
    """One line of the training log."""
    epoch: int
    stage: str
    loss_total: float
    loss_bce: float
    loss_cos: float
    loss_grading: float
    val_accuracy: float | None = None
    val_mae: float | None = None


@dataclass
class TrainResult:
    pipeline: Pipeline
    config: TrainConfig
    rows: list[EpochRow]
    report: EvalReport
    best_state: dict | None = None
    best_epoch: int | None = None


def _stage_of(epoch: int, cfg: TrainConfig) -> str:
    if not mode_has_lm(cfg.mode):
        return "supervised"
    if cfg.scheme == "end_to_end":
        return "joint"
    if epoch < cfg.e_frozen:
        return "warmup"
    return "joint" if cfg.scheme == "two_stage" else "grading_only"


def _apply_stage(store: ParamStore, stage: str, has_lm: bool) -> None:
    if not has_lm:
        return
    if stage == "warmup":
        store.set_trainable("lm", True)
        store.set_trainable("gm", False)
    elif stage == "joint":
        store.set_trainable("lm", True)
        store.set_trainable("gm", True)
    elif stage == "grading_only":
        store.set_trainable("lm", False)
        store.set_trainable("gm", True)


def _localization_terms(loc, video: SynthVideo, cfg: TrainConfig):
    parts = {}
    combined = None
    if cfg.loss_bce:
        parts["bce"] = bce_loss(loc.probs, video.timestamp, cfg.delta)
        combined = parts["bce"]
    if cfg.loss_cos:
        parts["cos"] = cosine_loss(loc.scores, video.timestamp, cfg.delta)
        weighted = parts["cos"] * cfg.alpha
        combined = weighted if combined is None else combined + weighted
    return combined, parts


def _video_loss(pipeline: Pipeline, video: SynthVideo, stage: str, cfg: TrainConfig,
                rng: np.random.Generator | None):
    """Returns (loss tensor, logged component values)."""
    if stage == "supervised":
        fwd = pipeline.forward(video, rng)
        loss = cross_entropy(fwd.proposals[0].pooled, video.grade - 1)
        return loss, {"grading": loss.item(), "bce": 0.0, "cos": 0.0}

    if stage == "warmup":
        fwd = pipeline.forward(video, rng, lm_only=True)
        loss, parts = _localization_terms(fwd.localization, video, cfg)
        vals = {k: v.item() for k, v in parts.items()}
        return loss, {"grading": 0.0, "bce": vals.get("bce", 0.0), "cos": vals.get("cos", 0.0)}

    fwd = pipeline.forward(video, rng)
    grading = grading_loss(
        [p.pooled for p in fwd.proposals],
        fwd.peak_indices(),
        video.timestamp,
        video.grade,
        include_background=cfg.loss_bg,
    )
    loc_combined, parts = _localization_terms(fwd.localization, video, cfg)
    vals = {k: v.item() for k, v in parts.items()}
    logged = {"grading": grading.item(), "bce": vals.get("bce", 0.0), "cos": vals.get("cos", 0.0)}
    if stage == "grading_only":
        return grading, logged
    return total_loss(grading, loc_combined, cfg.beta), logged


def build_pipeline(ds: SynthDataset, cfg: TrainConfig) -> Pipeline:
    return Pipeline.build(
        ds.config.feature_dim, ds.config.n_grades, cfg.mode, cfg.seed,
        lm_width=cfg.lm_width, lm_dilations=cfg.lm_dilations, lm_dropout=cfg.lm_dropout,
        gm_width=cfg.gm_width, gm_dilations=cfg.gm_dilations, gm_dropout=cfg.gm_dropout,
        kernel=cfg.kernel, pool_k=cfg.pool_k, n_std=cfg.n_std, threshold=cfg.threshold,
        window_width=cfg.window_width, max_proposals=cfg.max_proposals,
    )


def evaluate(pipeline: Pipeline, videos: list[SynthVideo],
             consensus_strategy: str = "highest_peak",
             average: str = "macro") -> EvalReport:
    """Eval-mode pass over a video list; window IoU for slicing modes only."""
    if not videos:
        raise ValueError("evaluate: empty video list")
    records = [pipeline.predict(v, consensus_strategy) for v in videos]
    preds = [r["grade"] for r in records]
    labels = [r["true_grade"] for r in records]
    has_ts = all(r["timestamp"] is not None for r in records)
    windowed = pipeline.mode in WINDOWED_MODES
    return build_report(
        preds, labels, pipeline.gm_cfg.n_grades,
        predicted_ts=[r["timestamp"] for r in records] if has_ts else None,
        true_ts=[r["true_timestamp"] for r in records] if has_ts else None,
        per_video_windows=[r["windows"] for r in records] if windowed else None,
        segments=[v.segment for v in videos] if windowed else None,
        per_video=records,
        average=average,
    )


def train(ds: SynthDataset, cfg: TrainConfig, quiet: bool = True,
          progress=None) -> TrainResult:
    """Run the configured scheme over the training split.

    Deterministic in (dataset, config): visit order, dropout masks, and
    initialization all derive from ``cfg.seed``.
    """
    if not ds.train:
        raise ValueError("train: dataset has no training videos")
    pipeline = build_pipeline(ds, cfg)
    store = pipeline.store
    adam = Adam(store, cfg.lr)
    has_lm = mode_has_lm(cfg.mode)

    rows: list[EpochRow] = []
    best_state: dict | None = None
    best_epoch: int | None = None
    best_acc = -1.0
    prev_stage = None
    for epoch in range(cfg.epochs):
        stage = _stage_of(epoch, cfg)
        if stage != prev_stage:
            _apply_stage(store, stage, has_lm)
            prev_stage = stage
        order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, epoch)))
        order = order_rng.permutation(len(ds.train))
        sums = {"total": 0.0, "bce": 0.0, "cos": 0.0, "grading": 0.0}
        for vi in order:
            video = ds.train[int(vi)]
            drop_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, epoch, int(vi))))
            store.zero_grad()
            loss, logged = _video_loss(pipeline, video, stage, cfg, drop_rng)
            backward(loss)
            adam.step()
            sums["total"] += loss.item()
            for k in ("bce", "cos", "grading"):
                sums[k] += logged[k]
        n = len(ds.train)
        row = EpochRow(epoch, stage, sums["total"] / n, sums["bce"] / n,
                       sums["cos"] / n, sums["grading"] / n)
        want_eval = ds.test and cfg.eval_every > 0 and (
            (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        )
        if want_eval:
            report = evaluate(pipeline, ds.test, cfg.consensus)
            row.val_accuracy = report.accuracy
            row.val_mae = report.mae
            if cfg.select_best and report.accuracy > best_acc:
                best_acc = report.accuracy
                best_epoch = epoch
                best_state = store.state_arrays()
        rows.append(row)
        if progress is not None:
            progress(row)

    if cfg.select_best and best_state is not None:
        store.load_arrays(best_state)
    final = evaluate(pipeline, ds.test or ds.train, cfg.consensus)
    return TrainResult(pipeline, cfg, rows, final, best_state, best_epoch)


def run_baseline(ds: SynthDataset, mode: str, cfg: TrainConfig) -> EvalReport:
    """Train and evaluate one mode; scheme auto-adjusts for grader-only modes."""
    overrides = {"mode": mode}
    if not mode_has_lm(mode):
        overrides["scheme"] = "end_to_end"
    return train(ds, replace(cfg, **overrides)).report
