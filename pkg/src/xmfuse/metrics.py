"""Segmentation-style evaluation: confusion matrices, IoU, and pseudo-label quality."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass

import numpy as np

from .core import IGNORE, EmptyInput, InvalidInput, PseudoLabelSet, ShapeError


def _as_predictions(preds) -> np.ndarray:
    if isinstance(preds, PseudoLabelSet):
        return preds.labels
    p = np.asarray(preds)
    if p.ndim == 2:
        return np.argmax(p, axis=1).astype(np.int64)
    return p.astype(np.int64).reshape(-1)


def confusion_matrix(preds, truth, n_classes: int) -> np.ndarray:
    """Counts with rows = ground truth, columns = prediction.

    Predictions equal to ``IGNORE`` are dropped (they are neither a hit nor a
    false positive for any class).
    """
    y = np.asarray(truth, dtype=np.int64).reshape(-1)
    p = _as_predictions(preds)
    if p.shape != y.shape:
        raise ShapeError(f"{p.size} predictions for {y.size} ground-truth labels")
    keep = p != IGNORE
    flat = n_classes * y[keep] + p[keep]
    return np.bincount(flat, minlength=n_classes**2).reshape(n_classes, n_classes)


def iou_from_confusion(cm: np.ndarray, missed=None) -> tuple[np.ndarray, float]:
    """IoU per class; ``missed`` adds per-class false negatives that have no predicted column."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    if missed is not None:
        union = union + np.asarray(missed)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    present = union > 0
    mean = float(iou[present].mean()) if present.any() else float("nan")
    return iou, mean


def miou(preds, truth, n_classes: int | None = None) -> tuple[np.ndarray, float]:
    """Per-class IoU and their mean.

    ``preds`` may be labels, a :class:`PseudoLabelSet` or an ``(N, K)``
    probability matrix (argmaxed).  Classes absent from both prediction and
    truth get ``nan`` and are left out of the mean.
    """
    y = np.asarray(truth, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise EmptyInput("cannot score an empty prediction")
    if np.any(y < 0):
        raise InvalidInput("ground truth must not contain IGNORE")
    if n_classes is None:
        p = np.asarray(preds.labels if isinstance(preds, PseudoLabelSet) else preds)
        n_classes = p.shape[1] if p.ndim == 2 else int(max(y.max(), p.max()) + 1)
    cm = confusion_matrix(preds, y, n_classes)
    # an IGNORE prediction is a miss for its true class
    missed = np.bincount(y[_as_predictions(preds) == IGNORE], minlength=n_classes)
    return iou_from_confusion(cm, missed)


def ensemble_2d3d(probs2d, probs3d) -> np.ndarray:
    a = np.asarray(probs2d, dtype=np.float64)
    b = np.asarray(probs3d, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return (a + b) / 2.0


@dataclass(frozen=True)
class PseudoLabelReport:
    correct_pct: float
    incorrect_pct: float
    ignore_pct: float

    def as_row(self) -> tuple[float, float, float]:
        return (self.correct_pct, self.incorrect_pct, self.ignore_pct)


def pseudo_label_report(labels: PseudoLabelSet, truth) -> PseudoLabelReport:
    y = np.asarray(truth, dtype=np.int64).reshape(-1)
    if y.size != len(labels):
        raise ShapeError(f"{len(labels)} labels for {y.size} ground-truth entries")
    if y.size == 0:
        raise EmptyInput("empty label set")
    acc = labels.accepted
    n = y.size
    correct = int(np.sum(acc & (labels.labels == y)))
    ignored = int(np.sum(~acc))
    incorrect = n - correct - ignored
    return PseudoLabelReport(100.0 * correct / n, 100.0 * incorrect / n, 100.0 * ignored / n)


# -- text / CSV layouts -------------------------------------------------------

def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(  # noqa: E731
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header), *map(fmt, rows)])


def format_report_table(reports: dict[str, PseudoLabelReport]) -> str:
    """Method / Correct / Incorrect / Ignore, percentages to two decimals."""
    rows = [[name, *(f"{v:.2f}" for v in r.as_row())] for name, r in reports.items()]
    return _table(["Method", "Correct", "Incorrect", "Ignore"], rows)


def parse_report_table(text: str) -> dict[str, PseudoLabelReport]:
    out = {}
    for line in text.strip().splitlines()[1:]:
        name, *vals = line.split()
        out[name] = PseudoLabelReport(*(float(v) for v in vals))
    return out


def format_switch_table(source: float, target: float, ratio: float, mode: str) -> str:
    """Source / Target agreement (percent), ratio and chosen mode."""
    rows = [
        ["Source Agreement", f"{100 * source:.2f}"],
        ["Target Agreement", f"{100 * target:.2f}"],
        ["Ratio", f"{ratio:.2f}"],
        ["Mode", mode.upper()],
    ]
    return _table(["", "Value"], rows)


def format_iou_table(results: dict[str, tuple[np.ndarray, float]]) -> str:
    """One column per prediction stream (e.g. 2D, 3D, 2D+3D); per-class rows then mIoU."""
    names = list(results)
    k = len(next(iter(results.values()))[0])
    fmt = lambda v: "-" if np.isnan(v) else f"{100 * v:.2f}"  # noqa: E731
    rows = [[f"class {c}", *(fmt(results[n][0][c]) for n in names)] for c in range(k)]
    rows.append(["mIoU", *(fmt(results[n][1]) for n in names)])
    return _table(["", *names], rows)


def reports_to_csv(reports: dict[str, PseudoLabelReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "correct", "incorrect", "ignore"])
    for name, r in reports.items():
        w.writerow([name, *(f"{v:.2f}" for v in r.as_row())])
    return buf.getvalue()


def iou_to_csv(results: dict[str, tuple[np.ndarray, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(results)
    w.writerow(["class", *names])
    k = len(next(iter(results.values()))[0])
    for c in range(k):
        w.writerow([c, *(f"{results[n][0][c]:.6f}" for n in names)])
    w.writerow(["mean", *(f"{results[n][1]:.6f}" for n in names)])
    return buf.getvalue()
