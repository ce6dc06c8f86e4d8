"""Label generation with automatic switching, then adaptation."""

from __future__ import annotations

from dataclasses import dataclass

from .adapt import DualHeadModel, TrainConfig, estimate_class_distribution, train
from .core import PseudoLabelSet, softmax
from .entroweight import HypothesisConfig, ew_labels
from .filtering import af_labels
from .switch import DEFAULT_THRESHOLD, FusionMode, SourceMeta, SwitchDecision, decide


@dataclass
class FusionResult:
    labels: PseudoLabelSet
    decision: SwitchDecision
    mode: FusionMode


def fuse(logits2d, logits3d, feats2d, feats3d, meta: SourceMeta, mode: str = "auto",
         tau: float = 1.0, threshold: float = DEFAULT_THRESHOLD) -> FusionResult:
    """Produce fused pseudo-labels.

    The switch decision is always computed (it only needs the per-modality
    median-filtered labels); ``mode`` ``"af"`` or ``"ew"`` overrides it.
    """
    af, l2, l3 = af_labels(softmax(logits2d), softmax(logits3d))
    decision = decide(meta, l2, l3, threshold)
    chosen = decision.mode if mode == "auto" else FusionMode(mode)
    if chosen is FusionMode.AF:
        labels = af
    else:
        labels = ew_labels(logits2d, logits3d, feats2d, feats3d, HypothesisConfig(tau))
    return FusionResult(labels, decision, chosen)


def adapt_models(model2d: DualHeadModel, model3d: DualHeadModel, feats2d, feats3d,
                 labels: PseudoLabelSet, cfg: TrainConfig):
    """Estimate the class distribution from the unadapted models, then train."""
    dist = estimate_class_distribution(model2d.probs(feats2d), model3d.probs(feats3d))
    return train(model2d, model3d, feats2d, feats3d, labels, dist, cfg)


def ensemble_predictions(model2d: DualHeadModel, model3d: DualHeadModel, feats2d, feats3d):
    p2, p3 = model2d.probs(feats2d), model3d.probs(feats3d)
    return p2, p3, (p2 + p3) / 2.0


def default_adapt_config(seed: int = 0, lambda_xm: float = 0.1) -> TrainConfig:
    return TrainConfig(lambda_xm=lambda_xm, learning_rate=1e-2, iterations=2000, batch_size=64,
                       seed=seed, optimizer="adam")

