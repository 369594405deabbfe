"""Evaluation metrics: grade classification, timestamp error, window quality.

Precision/recall/F1 are macro-averaged by default (each class weighs
equally, matching per-class confusion reporting); micro averaging is
available behind a flag. Grades are 1-based everywhere.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# Headline numbers of the full-scale study this pipeline is sized against.
# Logged in reports for scale context only; they are not targets here.
REFERENCE_FULL_SCALE = {"accuracy": 62.11, "f1": 61.42, "mae_frames": 89.94}


def classification_metrics(predictions, labels, n_grades: int,
                           average: str = "macro") -> dict:
    """Accuracy, averaged precision/recall/F1, grade distance, confusion matrix.

    Classes that never occur in either predictions or labels contribute 0 to
    the macro averages and trigger a warning.
    """
    preds = np.asarray(list(predictions), dtype=np.int64)
    labs = np.asarray(list(labels), dtype=np.int64)
    if preds.size == 0:
        raise ValueError("classification_metrics: empty input")
    if preds.shape != labs.shape:
        raise ValueError(
            f"classification_metrics: {preds.size} predictions vs {labs.size} labels"
        )
    if average not in ("macro", "micro"):
        raise ValueError(f"classification_metrics: unknown average {average!r}")
    for arr, what in ((preds, "prediction"), (labs, "label")):
        bad = (arr < 1) | (arr > n_grades)
        if bad.any():
            raise ValueError(
                f"classification_metrics: {what} {arr[bad][0]} outside 1..{n_grades}"
            )

    confusion = np.zeros((n_grades, n_grades), dtype=np.int64)
    np.add.at(confusion, (labs - 1, preds - 1), 1)

    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    accuracy = float(tp.sum() / preds.size)

    absent = (support == 0) & (predicted == 0)
    if absent.any():
        missing = [int(i) + 1 for i in np.flatnonzero(absent)]
        warnings.warn(
            f"classes {missing} absent from both predictions and labels; "
            "they contribute 0 to macro averages",
            stacklevel=2,
        )

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)

    if average == "macro":
        p, r, f = float(precision.mean()), float(recall.mean()), float(f1.mean())
    else:
        p = r = f = accuracy  # single-label multiclass: micro P = R = F1 = accuracy

    return {
        "accuracy": accuracy,
        "precision": p,
        "recall": r,
        "f1": f,
        "average_distance": float(np.abs(preds - labs).mean()),
        "confusion": confusion,
        "per_class_precision": precision,
        "per_class_recall": recall,
        "per_class_f1": f1,
        "support": confusion.sum(axis=1),
    }


def localization_mae(predicted_ts, true_ts) -> float:
    """Mean absolute frame error between predicted and annotated timestamps."""
    pred = np.asarray(list(predicted_ts), dtype=np.float64)
    true = np.asarray(list(true_ts), dtype=np.float64)
    if pred.size == 0:
        raise ValueError("localization_mae: empty input")
    if pred.shape != true.shape:
        raise ValueError(f"localization_mae: {pred.size} predictions vs {true.size} targets")
    return float(np.abs(pred - true).mean())


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Intersection over union of two half-open frame intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def best_window_iou(windows: list[tuple[int, int]], segment: tuple[int, int]) -> float:
    """Best overlap any proposed window achieves against the oracle segment."""
    if not windows:
        raise ValueError("best_window_iou: no windows for video")
    return max(interval_iou(w, segment) for w in windows)


def mean_window_iou(per_video_windows, segments) -> float:
    vals = [best_window_iou(w, s) for w, s in zip(per_video_windows, segments, strict=True)]
    if not vals:
        raise ValueError("mean_window_iou: empty input")
    return float(np.mean(vals))


@dataclass
class EvalReport:
    """Aggregated evaluation results plus per-video records."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    average_distance: float
    mae: float | None
    confusion: np.ndarray
    n_videos: int
    mean_iou: float | None = None
    per_video: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "average_distance": self.average_distance,
            "mae": self.mae,
            "mean_iou": self.mean_iou,
            "n_videos": self.n_videos,
            "confusion": self.confusion.tolist(),
            "per_video": self.per_video,
            "reference_full_scale": REFERENCE_FULL_SCALE,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"videos            {self.n_videos}",
            f"accuracy          {self.accuracy:.4f}",
            f"precision (macro) {self.precision:.4f}",
            f"recall (macro)    {self.recall:.4f}",
            f"f1 (macro)        {self.f1:.4f}",
            f"average distance  {self.average_distance:.4f}",
            f"mae (frames)      {'n/a' if self.mae is None else format(self.mae, '.2f')}",
            f"mean window iou   {'n/a' if self.mean_iou is None else format(self.mean_iou, '.4f')}",
            "",
            "confusion matrix (rows = true grade, cols = predicted):",
        ]
        for i, row in enumerate(self.confusion):
            lines.append(f"  grade {i + 1}: " + " ".join(f"{v:4d}" for v in row))
        ref = REFERENCE_FULL_SCALE
        lines.append("")
        lines.append(
            "context: full-scale reference values are accuracy "
            f"{ref['accuracy']}, F1 {ref['f1']}, MAE {ref['mae_frames']} frames "
            "(scale comparison only, not targets)"
        )
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        c = self.confusion.shape[0]
        lines = ["true\\pred," + ",".join(str(j + 1) for j in range(c))]
        for i, row in enumerate(self.confusion):
            lines.append(f"{i + 1}," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def build_report(predictions, labels, n_grades: int, predicted_ts=None, true_ts=None,
                 per_video_windows=None, segments=None, per_video=None,
                 average: str = "macro") -> EvalReport:
    stats = classification_metrics(predictions, labels, n_grades, average=average)
    mae = None
    if predicted_ts is not None and true_ts is not None:
        mae = localization_mae(predicted_ts, true_ts)
    miou = None
    if per_video_windows is not None and segments is not None:
        miou = mean_window_iou(per_video_windows, segments)
    return EvalReport(
        accuracy=stats["accuracy"],
        precision=stats["precision"],
        recall=stats["recall"],
        f1=stats["f1"],
        average_distance=stats["average_distance"],
        mae=mae,
        confusion=stats["confusion"],
        n_videos=len(list(labels)),
        mean_iou=miou,
        per_video=per_video or [],
    )
