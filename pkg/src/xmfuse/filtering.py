"""Median-confidence filtering and cross-modal agreement fusion."""

from __future__ import annotations

import numpy as np

from .core import (
    IGNORE,
    EmptyInput,
    Provenance,
    PseudoLabelSet,
    ShapeError,
    argmax_with_confidence,
)


def compute_medians(probs, conditioned: bool = False) -> np.ndarray:
    """Per-class median of the class-probability column over *all* samples.

    The median is not conditioned on the predicted class unless
    ``conditioned`` is set, in which case class ``k`` uses only the rows whose
    argmax is ``k`` (threshold 0 for a class nobody predicts).  For even N the
    median is the mean of the two central order statistics.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected an (N, K) matrix, got shape {p.shape}")
    if p.shape[0] == 0:
        raise EmptyInput("cannot take medians of an empty matrix")
    if not conditioned:
        return np.median(p, axis=0)
    labels, conf = argmax_with_confidence(p)
    return np.array([np.median(conf[labels == k]) if np.any(labels == k) else 0.0
                     for k in range(p.shape[1])])


def median_filter(probs, thresholds) -> PseudoLabelSet:
    """Keep ``argmax`` where its confidence is ``>=`` that class's threshold."""
    p = np.asarray(probs, dtype=np.float64)
    m = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if p.ndim != 2 or m.size != p.shape[1]:
        raise ShapeError(f"{m.size} thresholds for a matrix of shape {p.shape}")
    labels, conf = argmax_with_confidence(p)
    keep = conf >= m[labels]
    return PseudoLabelSet.from_labels(np.where(keep, labels, IGNORE), Provenance.MEDIAN_PASS)


def filter_modality(probs, conditioned: bool = False) -> PseudoLabelSet:
    """Median filter against the medians of the same matrix."""
    return median_filter(probs, compute_medians(probs, conditioned))


def _check_pair(a: PseudoLabelSet, b: PseudoLabelSet):
    if len(a) != len(b):
        raise ShapeError(f"label sets differ in length: {len(a)} vs {len(b)}")


def agreement_fuse(labels2d: PseudoLabelSet, labels3d: PseudoLabelSet) -> PseudoLabelSet:
    # an IGNORE on either side is never an agreement
    _check_pair(labels2d, labels3d)
    a, b = labels2d.labels, labels3d.labels
    agree = (a == b) & (a != IGNORE)
    return PseudoLabelSet.from_labels(np.where(agree, a, IGNORE), Provenance.AGREEMENT)


def target_agreement_rate(labels2d: PseudoLabelSet, labels3d: PseudoLabelSet) -> float:
    """Fraction of samples accepted by :func:`agreement_fuse`."""
    _check_pair(labels2d, labels3d)
    if len(labels2d) == 0:
        raise EmptyInput("agreement rate of an empty target set")
    return float(np.mean(agreement_fuse(labels2d, labels3d).accepted))


def af_labels(probs2d, probs3d) -> tuple[PseudoLabelSet, PseudoLabelSet, PseudoLabelSet]:
    """Full agreement-filtering path: returns ``(fused, filtered2d, filtered3d)``."""
    l2 = filter_modality(probs2d)
    l3 = filter_modality(probs3d)
    return agreement_fuse(l2, l3), l2, l3
