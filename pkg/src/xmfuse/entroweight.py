"""Entropy-weighted fusion and Gaussian likelihood-ratio recovery of rejected labels.

The recovery step re-admits samples that the fused median filter rejected when
two per-modality likelihood-ratio tests, each run with diagonal-covariance
class Gaussians fitted on the accepted fused labels, agree on one of the two
candidate classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    InvalidInput,
    Provenance,
    PseudoLabelSet,
    ShapeError,
    as_logits,
    entropy,
    softmax,
)
from .filtering import compute_medians, median_filter

SIGMA_FLOOR = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ClassStats:
    """Per-class, per-dimension mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    testable: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]


@dataclass(frozen=True)
class HypothesisConfig:
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInput(f"tau must be positive, got {self.tau}")


def _pair(logits2d, logits3d) -> tuple[np.ndarray, np.ndarray]:
    z2, z3 = as_logits(logits2d), as_logits(logits3d)
    if z2.shape != z3.shape:
        raise ShapeError(f"logit shapes differ: {z2.shape} vs {z3.shape}")
    return z2, z3


def entropy_weights(logits2d, logits3d) -> tuple[np.ndarray, np.ndarray]:
    z2, z3 = _pair(logits2d, logits3d)
    h2 = entropy(softmax(z2))
    h3 = entropy(softmax(z3))
    e2, e3 = np.exp(-h2), np.exp(-h3)
    w2 = e2 / (e2 + e3)
    return w2, 1.0 - w2


def ew_fuse(logits2d, logits3d) -> tuple[np.ndarray, PseudoLabelSet]:
    """Entropy-weighted convex combination of the two softmax outputs, median filtered."""
    z2, z3 = _pair(logits2d, logits3d)
    w2, w3 = entropy_weights(z2, z3)
    fused = w2[:, None] * softmax(z2) + w3[:, None] * softmax(z3)
    filtered = median_filter(fused, compute_medians(fused))
    return fused, PseudoLabelSet.from_labels(filtered.labels, Provenance.EW_FUSED)


def fit_class_stats(features, labels: PseudoLabelSet, n_classes: int,
                    sigma_floor: float = SIGMA_FLOOR) -> ClassStats:
    """Class-wise mean/std over accepted samples; classes with fewer than 2 are untestable."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise ShapeError(f"features {x.shape} do not match {len(labels)} labels")
    mean = np.zeros((n_classes, x.shape[1]))
    std = np.ones((n_classes, x.shape[1]))
    testable = np.zeros(n_classes, dtype=bool)
    for k in range(n_classes):
        xk = x[labels.labels == k]
        if xk.shape[0] < 2:
            continue
        mean[k] = xk.mean(axis=0)
        std[k] = np.maximum(xk.std(axis=0), sigma_floor)
        testable[k] = True
    return ClassStats(mean, std, testable)


def log_likelihood(feature, stats: ClassStats, class_k: int) -> float | None:
    """Diagonal-Gaussian log density of ``feature`` under class ``class_k``.

    Returns ``None`` (no decision) when the class has no usable statistics.
    """
    if not stats.testable[class_k]:
        return None
    x = np.asarray(feature, dtype=np.float64)
    mu, sd = stats.mean[class_k], stats.std[class_k]
    return float(np.sum(-np.log(sd) - _LOG_SQRT_2PI - (x - mu) ** 2 / (2.0 * sd**2)))


def _log_likelihoods(features: np.ndarray, stats: ClassStats, classes: np.ndarray) -> np.ndarray:
    mu, sd = stats.mean[classes], stats.std[classes]
    return np.sum(-np.log(sd) - _LOG_SQRT_2PI - (features - mu) ** 2 / (2.0 * sd**2), axis=1)


def likelihood_ratio_recover(features2d, features3d, stats2d: ClassStats, stats3d: ClassStats,
                             logits2d, logits3d, rejected: PseudoLabelSet,
                             cfg: HypothesisConfig = HypothesisConfig()) -> PseudoLabelSet:
    """Recover EW-rejected samples whose per-modality argmaxes disagree.

    In the 2D space the 2D argmax is the null hypothesis; in the 3D space the 3D
    argmax is.  Tests run in the log domain against ``ln(tau)``.
    """
    z2, z3 = _pair(logits2d, logits3d)
    f2 = np.asarray(features2d, dtype=np.float64)
    f3 = np.asarray(features3d, dtype=np.float64)
    n = len(rejected)
    if z2.shape[0] != n or f2.shape[0] != n or f3.shape[0] != n:
        raise ShapeError("features, logits and labels must share the sample count")

    k2 = np.argmax(z2, axis=1)
    k3 = np.argmax(z3, axis=1)
    labels = rejected.labels.copy()
    prov = rejected.provenance.copy()

    cand = ~rejected.accepted & (k2 != k3)
    cand &= stats2d.testable[k2] & stats2d.testable[k3]
    cand &= stats3d.testable[k2] & stats3d.testable[k3]
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        return PseudoLabelSet(labels, prov)

    a, b = k2[idx], k3[idx]
    log_r2 = _log_likelihoods(f2[idx], stats2d, a) - _log_likelihoods(f2[idx], stats2d, b)
    log_r3 = _log_likelihoods(f3[idx], stats3d, b) - _log_likelihoods(f3[idx], stats3d, a)
    log_tau = math.log(cfg.tau)

    to_3d = (log_r2 <= log_tau) & (log_r3 > log_tau)
    to_2d = (log_r2 > log_tau) & (log_r3 <= log_tau)
    labels[idx[to_3d]] = b[to_3d]
    prov[idx[to_3d]] = Provenance.EW_RECOVERED_3D
    labels[idx[to_2d]] = a[to_2d]
    prov[idx[to_2d]] = Provenance.EW_RECOVERED_2D
    return PseudoLabelSet(labels, prov)


def ew_labels(logits2d, logits3d, features2d, features3d,
              cfg: HypothesisConfig = HypothesisConfig()) -> PseudoLabelSet:
    """Full entropy-weighting path: fuse, filter, fit stats once, recover."""
    z2, z3 = _pair(logits2d, logits3d)
    _, fused_labels = ew_fuse(z2, z3)
    k = z2.shape[1]
    stats2d = fit_class_stats(features2d, fused_labels, k)
    stats3d = fit_class_stats(features3d, fused_labels, k)
    return likelihood_ratio_recover(features2d, features3d, stats2d, stats3d,
                                    z2, z3, fused_labels, cfg)

