"""Choose between agreement filtering and entropy weighting.

The expected cross-modal agreement on source data is lower-bounded by the
product of the two models' source Top-1 accuracies.  Dividing the agreement
actually measured on the target by that bound gives a domain-gap proxy: near
one means the target looks like the source (entropy weighting), small means a
large gap (agreement filtering).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

from .core import InvalidInput, PseudoLabelSet
from .filtering import target_agreement_rate

DEFAULT_THRESHOLD = 0.5


class FusionMode(str, Enum):
    AF = "af"
    EW = "ew"


class DegenerateSource(UserWarning):
    """Source agreement is zero, so the ratio is undefined; AF is forced."""


@dataclass(frozen=True)
class SourceMeta:
    top1_2d: float
    top1_3d: float

    def __post_init__(self):
        for name in ("top1_2d", "top1_3d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInput(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SwitchDecision:
    source_agreement: float
    target_agreement: float
    ratio: float
    mode: FusionMode
    threshold: float = DEFAULT_THRESHOLD
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


def source_agreement(meta: SourceMeta) -> float:
    return meta.top1_2d * meta.top1_3d


def decide_from_rates(source: float, target: float,
                      threshold: float = DEFAULT_THRESHOLD) -> SwitchDecision:
    """Switch on ``target / source``; ratios at or below ``threshold`` pick AF."""
    if source <= 0:
        warnings.warn("source agreement is zero; forcing agreement filtering", DegenerateSource)
        return SwitchDecision(source, target, math.inf, FusionMode.AF, threshold, degenerate=True)
    ratio = target / source
    mode = FusionMode.AF if ratio <= threshold else FusionMode.EW
    return SwitchDecision(source, target, ratio, mode, threshold)


def decide(meta: SourceMeta, labels2d: PseudoLabelSet, labels3d: PseudoLabelSet,
           threshold: float = DEFAULT_THRESHOLD) -> SwitchDecision:
    """Decision from source meta-data and the median-filtered per-modality labels."""
    return decide_from_rates(source_agreement(meta),
                             target_agreement_rate(labels2d, labels3d), threshold)
