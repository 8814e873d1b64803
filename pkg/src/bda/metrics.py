"""Pixel-level scoring: building F1, harmonic damage F1, weighted overall score."""

import json
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

CLASS_NAMES = ("background", "no-damage", "minor-damage", "major-damage", "destroyed")
NUM_CLASSES = len(CLASS_NAMES)
DAMAGE_CLASSES = (1, 2, 3, 4)
BUILDING_WEIGHT = 0.3
DAMAGE_WEIGHT = 0.7


def f1_binary(tp, fp, fn):
    """2TP / (2TP + FP + FN); 0 when nothing is positive anywhere."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def f1_harmonic(values):
    values = [float(v) for v in values]
    if not values:
        raise ValueError("harmonic mean of an empty list")
    if any(v <= 0.0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def overall_score(f1_b, f1_d):
    return BUILDING_WEIGHT * f1_b + DAMAGE_WEIGHT * f1_d


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = truth, columns = prediction

    @classmethod
    def zeros(cls, n=NUM_CLASSES):
        return cls(np.zeros((n, n), dtype=np.int64))

    @classmethod
    def from_maps(cls, pred, truth, n=NUM_CLASSES):
        pred = np.asarray(pred).reshape(-1).astype(np.int64)
        truth = np.asarray(truth).reshape(-1).astype(np.int64)
        return cls(np.bincount(truth * n + pred, minlength=n * n).reshape(n, n))

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def row_percent(self):
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.where(rows > 0, 100.0 * self.counts / np.maximum(rows, 1), 0.0)

    def class_f1(self, c):
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        return f1_binary(tp, fp, fn)

    def present(self, c):
        return self.counts[c, :].sum() > 0 or self.counts[:, c].sum() > 0


@dataclass
class MetricsReport:
    f1_b: float
    per_class_f1: list  # C1..C4; None for a class absent from truth and prediction
    f1_d: float
    f1_s: float
    confusion: ConfusionMatrix

    def to_dict(self):
        return {
            "f1_s": self.f1_s,
            "f1_b": self.f1_b,
            "f1_d": self.f1_d,
            "per_class_f1": dict(zip(CLASS_NAMES[1:], self.per_class_f1)),
            "classes": list(CLASS_NAMES),
            "confusion_counts": self.confusion.counts.tolist(),
            "confusion_row_percent": np.round(self.confusion.row_percent(), 4).tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            f1_b=d["f1_b"],
            per_class_f1=[d["per_class_f1"][k] for k in CLASS_NAMES[1:]],
            f1_d=d["f1_d"],
            f1_s=d["f1_s"],
            confusion=ConfusionMatrix(np.asarray(d["confusion_counts"], dtype=np.int64)),
        )


def report_from_counts(confusion, tp, fp, fn):
    """Compose a report from aggregated counts (micro-averaging)."""
    f1_b = f1_binary(tp, fp, fn)
    per_class, scored = [], []
    for c in DAMAGE_CLASSES:
        if confusion.present(c):
            f = confusion.class_f1(c)
            per_class.append(f)
            scored.append(f)
        else:
            log.info("class %s absent from truth and prediction; left out of the harmonic mean", CLASS_NAMES[c])
            per_class.append(None)
    f1_d = f1_harmonic(scored) if scored else 0.0
    return MetricsReport(f1_b, per_class, f1_d, overall_score(f1_b, f1_d), confusion)


def _check_maps(*maps):
    shape = np.shape(maps[0])
    for m in maps[1:]:
        if np.shape(m) != shape:
            raise ValueError(f"map extents differ: {shape} vs {np.shape(m)}")


class ScoreAccumulator:
    """Sums confusion and building counts over images, then scores once."""

    def __init__(self):
        self.confusion = ConfusionMatrix.zeros()
        self.tp = self.fp = self.fn = 0

    def add(self, pred, truth, building_pred, building_truth):
        _check_maps(pred, truth, building_pred, building_truth)
        for name, m in (("prediction", pred), ("truth", truth)):
            m = np.asarray(m)
            if m.size and (m.min() < 0 or m.max() >= NUM_CLASSES):
                raise ValueError(f"{name} class ids must lie in 0..{NUM_CLASSES - 1}")
        self.confusion = self.confusion + ConfusionMatrix.from_maps(pred, truth)
        bp = np.asarray(building_pred).astype(bool)
        bt = np.asarray(building_truth).astype(bool)
        self.tp += int(np.count_nonzero(bp & bt))
        self.fp += int(np.count_nonzero(bp & ~bt))
        self.fn += int(np.count_nonzero(~bp & bt))
        return self

    def report(self):
        return report_from_counts(self.confusion, self.tp, self.fp, self.fn)


def score_predictions(pred, truth, building_pred, building_truth):
    return ScoreAccumulator().add(pred, truth, building_pred, building_truth).report()
