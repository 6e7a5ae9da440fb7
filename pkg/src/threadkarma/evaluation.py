"""Karma quantization and the seven-subtask F1 protocol.

Raw karma maps to 8 levels: anything below 1 is level 0, the rest is
split by recursively taking the (lower) median of the remaining values,
a head/tail-break scheme suited to the Zipfian karma distribution.
Scoring runs 7 binary subtasks ("is the comment at level j or higher"),
averaged either uniformly (macro) or with weights proportional to the
level index (weighted; used for tuning and early stopping).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

N_LEVELS = 8
N_SUBTASKS = 7
TIME_BUCKET_WIDTH = 20
# weights 1..7 normalized by their sum
_WEIGHT_NORM = sum(range(1, N_SUBTASKS + 1))


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class KarmaQuantizer:
    """Thresholds for levels 1..7; level 0 is karma below 1 by definition."""

    thresholds: tuple

    def level(self, karma) -> int:
        if karma < 1:
            return 0
        for j, theta in enumerate(self.thresholds, start=1):
            if karma <= theta:
                return j
        return N_LEVELS - 1

    def levels(self, karma_values) -> np.ndarray:
        return np.array([self.level(k) for k in karma_values], dtype=np.int64)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"thresholds": list(self.thresholds)}, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "KarmaQuantizer":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(thresholds=tuple(obj["thresholds"]))


def fit_quantizer(training_karma: Iterable[int]) -> KarmaQuantizer:
    """Derive the 7 thresholds from training karma.

    Each step takes the lower median of the values still above the
    previous threshold. If the remainder empties early the trailing
    thresholds repeat, collapsing the unused levels.
    """
    remaining = sorted(k for k in training_karma if k >= 1)
    if not remaining:
        raise EvaluationError("cannot fit quantizer: no training karma >= 1")
    thresholds = []
    for _ in range(N_SUBTASKS):
        if remaining:
            theta = remaining[(len(remaining) - 1) // 2]
        else:
            theta = thresholds[-1]
        thresholds.append(theta)
        remaining = [k for k in remaining if k > theta]
    return KarmaQuantizer(thresholds=tuple(thresholds))


def _subtask_counts(labels: np.ndarray, predictions: np.ndarray, j: int) -> tuple:
    true_pos = labels >= j
    pred_pos = predictions >= j
    tp = int(np.sum(true_pos & pred_pos))
    fp = int(np.sum(~true_pos & pred_pos))
    fn = int(np.sum(true_pos & ~pred_pos))
    return tp, fp, fn


def binary_f1(labels, predictions, j: int) -> float:
    """F1 of the "level >= j" subtask. Defined as 0 when precision and
    recall are both undefined or zero."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise EvaluationError(
            f"misaligned lengths: {labels.shape} labels vs {predictions.shape} predictions"
        )
    if not 1 <= j <= N_SUBTASKS:
        raise EvaluationError(f"subtask index {j} outside 1..{N_SUBTASKS}")
    tp, fp, fn = _subtask_counts(labels, predictions, j)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(labels, predictions) -> float:
    """Unweighted mean of the seven subtask F1 scores."""
    return sum(binary_f1(labels, predictions, j) for j in range(1, N_SUBTASKS + 1)) / N_SUBTASKS


def weighted_f1(labels, predictions) -> float:
    """Level-index-weighted mean, emphasizing high-karma subtasks."""
    return sum(
        j * binary_f1(labels, predictions, j) for j in range(1, N_SUBTASKS + 1)
    ) / _WEIGHT_NORM


@dataclass(frozen=True)
class CommentPrediction:
    """Model output for one comment; pruned comments carry no distribution
    and score as level 0."""

    comment_id: str
    probs: Optional[np.ndarray]
    pruned: bool = False

    @property
    def predicted_level(self) -> int:
        if self.pruned or self.probs is None:
            return 0
        return int(np.argmax(self.probs))


@dataclass
class EvalReport:
    f1_by_level: dict
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray
    level_counts: np.ndarray
    time_buckets: list
    undefined_subtasks: tuple
    n_comments: int
    n_pruned: int

    def to_json_obj(self) -> dict:
        return {
            "n_comments": self.n_comments,
            "n_pruned": self.n_pruned,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "f1_by_level": {str(j): v for j, v in sorted(self.f1_by_level.items())},
            "level_counts": self.level_counts.tolist(),
            "undefined_subtasks": list(self.undefined_subtasks),
            "confusion": self.confusion.tolist(),
            "time_buckets": [
                {"bucket_start": b, "macro_f1": f, "n": n} for b, f, n in self.time_buckets
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n"

    def time_curve_csv(self) -> str:
        lines = ["bucket_start,macro_f1,n"]
        for b, f, n in self.time_buckets:
            lines.append(f"{b},{f!r},{n}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        header = "true_level," + ",".join(f"pred_{j}" for j in range(N_LEVELS))
        lines = [header]
        for j in range(N_LEVELS):
            lines.append(f"{j}," + ",".join(str(int(v)) for v in self.confusion[j]))
        return "\n".join(lines) + "\n"


def evaluate(
    predictions: Iterable[CommentPrediction],
    true_levels: Mapping[str, int],
    n_previous: Mapping[str, int],
) -> EvalReport:
    """Score a full prediction set against quantized labels.

    ``true_levels`` and ``n_previous`` are keyed by comment id and must
    cover exactly the predicted comments. Pruned comments enter as
    predicted level 0. Time buckets group comments by
    floor(n_previous / 20) and report the bucket-local macro F1.
    """
    preds = {p.comment_id: p for p in predictions}
    missing = sorted(set(true_levels) - set(preds))
    extra = sorted(set(preds) - set(true_levels))
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing predictions for: " + ", ".join(missing[:10]))
        if extra:
            parts.append("predictions without labels: " + ", ".join(extra[:10]))
        raise EvaluationError("; ".join(parts))

    ids = sorted(preds)
    y_true = np.array([true_levels[i] for i in ids], dtype=np.int64)
    y_pred = np.array([preds[i].predicted_level for i in ids], dtype=np.int64)
    buckets = np.array([n_previous[i] // TIME_BUCKET_WIDTH for i in ids], dtype=np.int64)

    f1_by_level = {j: binary_f1(y_true, y_pred, j) for j in range(1, N_SUBTASKS + 1)}
    undefined = tuple(
        j
        for j in range(1, N_SUBTASKS + 1)
        if _subtask_counts(y_true, y_pred, j) == (0, 0, 0)
    )

    confusion = np.zeros((N_LEVELS, N_LEVELS), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    level_counts = confusion.sum(axis=1)

    time_rows = []
    if len(ids):
        for b in range(int(buckets.max()) + 1):
            mask = buckets == b
            n = int(mask.sum())
            f = macro_f1(y_true[mask], y_pred[mask]) if n else 0.0
            time_rows.append((b * TIME_BUCKET_WIDTH, f, n))

    return EvalReport(
        f1_by_level=f1_by_level,
        macro_f1=sum(f1_by_level.values()) / N_SUBTASKS,
        weighted_f1=sum(j * v for j, v in f1_by_level.items()) / _WEIGHT_NORM,
        confusion=confusion,
        level_counts=level_counts,
        time_buckets=time_rows,
        undefined_subtasks=undefined,
        n_comments=len(ids),
        n_pruned=sum(1 for p in preds.values() if p.pruned),
    )
