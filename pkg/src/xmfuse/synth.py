"""Seeded paired two-modality Gaussian-cluster problems with a tunable domain gap.

Each modality has its own class means.  The target domain translates every
class mean by ``gap`` along a seeded per-class unit direction (towards some
other class's mean) and may reweight class frequencies.  Target samples are paired: one class draw per sample,
shared by both modalities.  The two source sets are unpaired.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .adapt import DualHeadModel, TrainConfig, fit_head
from .core import InvalidInput, XmfuseError
from .switch import SourceMeta

HOLDOUT_FRACTION = 0.2

# independent RNG streams, so changing one part never perturbs another
(_STREAM_MEANS, _STREAM_SHIFT, _STREAM_PRIOR, _STREAM_SOURCE, _STREAM_TARGET,
 _STREAM_CORRUPT) = range(6)


class ConfigError(XmfuseError, ValueError):
    pass


@dataclass
class SynthConfig:
    n_classes: int = 5
    dim2d: int = 6
    dim3d: int = 6
    n_source: int = 2000
    n_target: int = 2000
    gap: float = 1.0
    class_skew: float | None = None
    seed: int = 0
    separation2d: float = 6.0
    separation3d: float = 6.0
    noise: float = 1.0
    gap2d: float | None = None
    gap3d: float | None = None
    logit_noise2d: float = 0.0
    logit_noise3d: float = 0.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.dim2d < 1 or self.dim3d < 1:
            raise ConfigError("feature dims must be >= 1")
        if min(self.n_source, self.n_target) < 2 * self.n_classes:
            raise ConfigError("n_source and n_target must be at least 2 * n_classes")
        if any(g is not None and g < 0 for g in (self.gap, self.gap2d, self.gap3d)):
            raise ConfigError("gap must be non-negative")
        if self.class_skew is not None and not self.class_skew > 0:
            raise ConfigError("class_skew must be positive (or null for uniform)")
        if not self.noise > 0:
            raise ConfigError("noise must be positive")
        if self.logit_noise2d < 0 or self.logit_noise3d < 0:
            raise ConfigError("logit noise must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("synth config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def modality_gaps(self) -> tuple[float, float]:
        """``gap`` unless overridden per modality (e.g. to corrupt only one)."""
        g2 = self.gap if self.gap2d is None else self.gap2d
        g3 = self.gap if self.gap3d is None else self.gap3d
        return g2, g3


@dataclass
class SynthScenario:
    config: SynthConfig
    source2d: tuple[np.ndarray, np.ndarray]
    source3d: tuple[np.ndarray, np.ndarray]
    target2d: np.ndarray
    target3d: np.ndarray
    truth: np.ndarray
    means2d: np.ndarray
    means3d: np.ndarray
    target_means2d: np.ndarray
    target_means3d: np.ndarray
    meta: SourceMeta | None = None


def _rng(seed: int, stream: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, sub])


def class_means(n_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centres with pairwise distance ``separation`` when ``dim >= n_classes``.

    Scaled one-hot vertices under a random rotation; for ``dim < n_classes``
    random Gaussian centres with the same expected pairwise distance.
    """
    if dim >= n_classes:
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q *= np.sign(np.diag(r))
        vertices = np.eye(n_classes, dim) * (separation / np.sqrt(2.0))
        return vertices @ q.T
    return rng.standard_normal((n_classes, dim)) * (separation / np.sqrt(2.0 * dim))


def shift_directions(means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Seeded unit direction per class, pointing from its mean to another class's mean.

    The other class is drawn uniformly among the rest, independently per
    modality, so a large gap makes the two modalities err differently.
    """
    k = means.shape[0]
    towards = (np.arange(k) + rng.integers(1, k, size=k)) % k
    u = means[towards] - means
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def generate(cfg: SynthConfig) -> SynthScenario:
    k = cfg.n_classes
    means2d = class_means(k, cfg.dim2d, cfg.separation2d, _rng(cfg.seed, _STREAM_MEANS, 2))
    means3d = class_means(k, cfg.dim3d, cfg.separation3d, _rng(cfg.seed, _STREAM_MEANS, 3))
    gap2d, gap3d = cfg.modality_gaps()
    t_means2d = means2d + gap2d * shift_directions(means2d, _rng(cfg.seed, _STREAM_SHIFT, 2))
    t_means3d = means3d + gap3d * shift_directions(means3d, _rng(cfg.seed, _STREAM_SHIFT, 3))

    if cfg.class_skew is None:
        prior = np.full(k, 1.0 / k)
    else:
        prior = _rng(cfg.seed, _STREAM_PRIOR).dirichlet(np.full(k, cfg.class_skew))

    def draw(means, labels, rng):
        return means[labels] + cfg.noise * rng.standard_normal((labels.size, means.shape[1]))

    rs2, rs3 = _rng(cfg.seed, _STREAM_SOURCE, 2), _rng(cfg.seed, _STREAM_SOURCE, 3)
    y2 = rs2.integers(0, k, cfg.n_source)
    y3 = rs3.integers(0, k, cfg.n_source)
    src2 = (draw(means2d, y2, rs2), y2)
    src3 = (draw(means3d, y3, rs3), y3)

    rt = _rng(cfg.seed, _STREAM_TARGET)
    truth = rt.choice(k, size=cfg.n_target, p=prior)
    tgt2 = draw(t_means2d, truth, _rng(cfg.seed, _STREAM_TARGET, 2))
    tgt3 = draw(t_means3d, truth, _rng(cfg.seed, _STREAM_TARGET, 3))
    return SynthScenario(cfg, src2, src3, tgt2, tgt3, truth.astype(np.int64),
                         means2d, means3d, t_means2d, t_means3d)


def source_train_config(seed: int) -> TrainConfig:
    return TrainConfig(lambda_xm=0.0, learning_rate=0.05, iterations=1500, batch_size=64,
                       seed=seed, optimizer="adam", milestones=[0.8, 0.9], weight_mode="uniform")


def _fit_and_score(features, labels, n_classes, cfg):
    n_hold = max(1, int(round(HOLDOUT_FRACTION * labels.size)))
    split = labels.size - n_hold
    model = fit_head(features[:split], labels[:split], n_classes, cfg)
    pred = np.argmax(model.logits(features[split:]), axis=1)
    return model, float(np.mean(pred == labels[split:]))


def fit_source_heads(scenario: SynthScenario,
                     cfg: TrainConfig | None = None) -> tuple[DualHeadModel, DualHeadModel, SourceMeta]:
    """Train each modality's head on its own source split and measure held-out Top-1.

    The target domain is never touched.  ``scenario.meta`` is filled in.
    """
    k = scenario.config.n_classes
    cfg = cfg or source_train_config(scenario.config.seed)
    if cfg.lambda_xm != 0:
        raise InvalidInput("source heads are trained without the cross-modal term")
    m2, acc2 = _fit_and_score(*scenario.source2d, k, cfg)
    m3, acc3 = _fit_and_score(*scenario.source3d, k, cfg)
    scenario.meta = SourceMeta(acc2, acc3)
    return m2, m3, scenario.meta


def target_logits(scenario: SynthScenario, model2d: DualHeadModel,
                  model3d: DualHeadModel) -> tuple[np.ndarray, np.ndarray]:
    """Source-model outputs on the target, with optional seeded logit corruption.

    Corruption stands in for a faulty model: its noise is independent of the
    features, so the corrupted modality's predictions stop tracking them.
    """
    cfg = scenario.config
    out = []
    for sub, model, feats, noise in ((2, model2d, scenario.target2d, cfg.logit_noise2d),
                                     (3, model3d, scenario.target3d, cfg.logit_noise3d)):
        z = model.logits(feats)
        if noise > 0:
            z = z + noise * _rng(cfg.seed, _STREAM_CORRUPT, sub).standard_normal(z.shape)
        out.append(z)
    return out[0], out[1]
