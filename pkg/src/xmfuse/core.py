"""Probability primitives and the pseudo-label container shared by every stage.

Matrices are plain ``numpy`` arrays: probability and logit matrices are
``(N, K)``, feature matrices ``(N, D)``.  All arithmetic runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

IGNORE = -1
EPS = 1e-12


class XmfuseError(Exception):
    """Base class for library errors."""


class InvalidInput(XmfuseError, ValueError):
    pass


class ShapeError(XmfuseError, ValueError):
    pass


class EmptyInput(XmfuseError, ValueError):
    pass


class Provenance(IntEnum):
    """Which fusion step produced a label."""

    IGNORED = 0
    MEDIAN_PASS = 1
    AGREEMENT = 2
    EW_FUSED = 3
    EW_RECOVERED_2D = 4
    EW_RECOVERED_3D = 5


@dataclass
class PseudoLabelSet:
    """Per-sample labels in ``{0..K-1}`` or ``IGNORE`` with a provenance tag each."""

    labels: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.provenance = np.asarray(self.provenance, dtype=np.int8).reshape(-1)
        if self.labels.shape != self.provenance.shape:
            raise ShapeError(
                f"labels ({self.labels.size}) and provenance ({self.provenance.size}) differ in length"
            )
        if np.any(self.labels < IGNORE):
            raise InvalidInput("labels must be >= 0 or IGNORE (-1)")
        ignored = self.labels == IGNORE
        if np.any(ignored != (self.provenance == Provenance.IGNORED)):
            raise InvalidInput("provenance IGNORED must coincide with label IGNORE")

    @classmethod
    def from_labels(cls, labels, tag: Provenance) -> "PseudoLabelSet":
        """Wrap raw labels, tagging accepted ones with ``tag``."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        prov = np.where(labels == IGNORE, Provenance.IGNORED, tag).astype(np.int8)
        return cls(labels, prov)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def accepted(self) -> np.ndarray:
        return self.labels != IGNORE

    def count(self, tag: Provenance) -> int:
        return int(np.sum(self.provenance == tag))


def as_logits(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (N, K) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("logits contain NaN or Inf")
    return x


def as_probs(probs, atol: float = 1e-6) -> np.ndarray:
    """Validate an ``(N, K)`` row-stochastic matrix and return it as float64."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected an (N, K) matrix, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInput("probabilities contain NaN or Inf")
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidInput("probabilities must lie in [0, 1]")
    if p.shape[0] and not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise InvalidInput("probability rows must sum to 1")
    return p


def softmax(logits) -> np.ndarray:
    z = as_logits(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = as_logits(logits)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_prob_vector(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise InvalidInput("probabilities must be non-negative")
    return p


def entropy(p) -> float | np.ndarray:
    """Shannon entropy in nats of a probability vector, or of each row of a matrix.

    ``0 * log 0`` is taken as 0.
    """
    p = _check_prob_vector(p)
    if not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-6):
        raise InvalidInput("probability rows must sum to 1")
    h = -np.sum(p * np.log(np.maximum(p, EPS)), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def kl_divergence(p, q) -> float | np.ndarray:
    """``sum_k p_k ln(p_k / q_k)`` per vector (or per row), with ``q`` floored at ``EPS``."""
    p = _check_prob_vector(p)
    q = _check_prob_vector(q)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")
    terms = np.where(p > 0, p * (np.log(np.maximum(p, EPS)) - np.log(np.maximum(q, EPS))), 0.0)
    d = np.maximum(terms.sum(axis=-1), 0.0)
    return float(d) if d.ndim == 0 else d


def argmax_with_confidence(probs) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax (ties go to the lowest index) and the probability there."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected an (N, K) matrix, got shape {p.shape}")
    # np.argmax returns the first maximal index
    labels = np.argmax(p, axis=1)
    return labels.astype(np.int64), p[np.arange(p.shape[0]), labels]
