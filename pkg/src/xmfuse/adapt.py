"""Target adaptation of dual-head linear classifiers on fixed features.

Each modality has a main head (trained on the fused pseudo-labels with a
class-weighted cross-entropy) and a translation head that imitates the other
modality's main prediction through a KL term.  Gradients are derived by hand;
the main predictions act as constant targets inside the KL terms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import (
    EPS,
    EmptyInput,
    IGNORE,
    InvalidInput,
    PseudoLabelSet,
    ShapeError,
    XmfuseError,
    as_probs,
    kl_divergence,
    log_softmax,
    softmax,
)

log = logging.getLogger(__name__)

WEIGHT_EPS = 1e-6
PARAM_NAMES = ("weight", "bias", "xlate_weight", "xlate_bias")


class DivergedError(XmfuseError, RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class DualHeadModel:
    """Linear main head ``g`` plus a translation head over the same features."""

    weight: np.ndarray
    bias: np.ndarray
    xlate_weight: np.ndarray
    xlate_bias: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        k, d = self.weight.shape
        if self.bias.shape != (k,) or self.xlate_weight.shape != (k, d) or self.xlate_bias.shape != (k,):
            raise ShapeError("inconsistent head shapes")

    @classmethod
    def from_head(cls, weight, bias) -> "DualHeadModel":
        """Build a model whose translation head starts as a copy of the main head."""
        w = np.array(weight, dtype=np.float64)
        b = np.array(bias, dtype=np.float64)
        return cls(w, b, w.copy(), b.copy())

    @classmethod
    def zeros(cls, dim: int, n_classes: int) -> "DualHeadModel":
        return cls.from_head(np.zeros((n_classes, dim)), np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight.T + self.bias

    def xlate_logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.xlate_weight.T + self.xlate_bias

    def probs(self, features) -> np.ndarray:
        return softmax(self.logits(features))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "DualHeadModel":
        return DualHeadModel(*(getattr(self, n).copy() for n in PARAM_NAMES))


@dataclass
class TrainConfig:
    lambda_xm: float = 0.1
    learning_rate: float = 1e-3
    iterations: int = 500
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.1
    milestones: list[float] = field(default_factory=lambda: [0.8, 0.9])
    weight_mode: str = "inverse"

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidInput("iterations must be >= 0")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.lambda_xm < 0:
            raise InvalidInput("lambda_xm must be non-negative")
        if not self.learning_rate > 0:
            raise InvalidInput("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInput(f"unknown optimizer {self.optimizer!r}")
        if self.weight_mode not in ("inverse", "uniform"):
            raise InvalidInput(f"unknown weight mode {self.weight_mode!r}")
        self.milestones = [float(m) for m in self.milestones]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def lr_at(self, step: int) -> float:
        """MultiStep schedule: multiply by ``lr_decay`` past each milestone fraction."""
        passed = sum(step >= m * self.iterations for m in self.milestones)
        return self.learning_rate * self.lr_decay**passed


# -- class distribution and weights ------------------------------------------

def estimate_class_distribution(probs2d, probs3d) -> np.ndarray:
    """Average of the two modalities' mean predicted distributions over the target."""
    p2, p3 = as_probs(probs2d), as_probs(probs3d)
    if p2.shape[1] != p3.shape[1]:
        raise ShapeError(f"class counts differ: {p2.shape[1]} vs {p3.shape[1]}")
    return 0.5 * (p2.mean(axis=0) + p3.mean(axis=0))


def class_weights(dist, mode: str = "inverse") -> np.ndarray:
    """Inverse-frequency weights normalised so that ``sum_k w_k p_k == 1``."""
    p = np.asarray(dist, dtype=np.float64)
    if mode == "uniform":
        return np.ones_like(p)
    if mode != "inverse":
        raise InvalidInput(f"unknown weight mode {mode!r}")
    w = 1.0 / (p + WEIGHT_EPS)
    return w / np.dot(w, p)


# -- losses -------------------------------------------------------------------

def weighted_ce(probs, labels: PseudoLabelSet, weights) -> float:
    p = np.asarray(probs, dtype=np.float64)
    mask = labels.accepted
    if not mask.any():
        return 0.0
    y = labels.labels[mask]
    w = np.asarray(weights, dtype=np.float64)[y]
    nll = -np.log(np.maximum(p[mask, y], EPS))
    return float(np.dot(w, nll) / w.sum())


def loss_pl(probs2d, probs3d, labels: PseudoLabelSet, weights) -> float:
    p2, p3 = np.asarray(probs2d), np.asarray(probs3d)
    if p2.shape != p3.shape or p2.shape[0] != len(labels):
        raise ShapeError("probability matrices and labels disagree in shape")
    return weighted_ce(p2, labels, weights) + weighted_ce(p3, labels, weights)


def loss_xm(p2d, p3d_to_2d, p3d, p2d_to_3d) -> float:
    """Mean over samples of ``KL(P2D || P3D->2D) + KL(P3D || P2D->3D)``."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (p2d, p3d_to_2d, p3d, p2d_to_3d)]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ShapeError("all four probability matrices must share a shape")
    if arrays[0].shape[0] == 0:
        return 0.0
    a, b, c, d = arrays
    return float(np.mean(kl_divergence(a, b) + kl_divergence(c, d)))


def _ce_from_logits(z: np.ndarray, y: np.ndarray, mask: np.ndarray, w: np.ndarray):
    """Weighted CE over labeled rows and its gradient w.r.t. the logits."""
    lp = log_softmax(z)
    grad = np.zeros_like(z)
    if not mask.any():
        return 0.0, grad
    rows = np.flatnonzero(mask)
    wy = w[y[rows]]
    s = wy.sum()
    loss = float(-np.dot(wy, lp[rows, y[rows]]) / s)
    g = np.exp(lp[rows])
    g[np.arange(rows.size), y[rows]] -= 1.0
    grad[rows] = g * (wy / s)[:, None]
    return loss, grad


def _kl_from_logits(target: np.ndarray, z: np.ndarray):
    """Mean ``KL(target || softmax(z))`` with ``target`` held constant, and its logit gradient."""
    lq = log_softmax(z)
    n = z.shape[0]
    terms = np.where(target > 0, target * (np.log(np.maximum(target, EPS)) - lq), 0.0)
    loss = float(terms.sum() / n)
    return loss, (np.exp(lq) - target) / n


def _linear_grads(dz: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return dz.T @ x, dz.sum(axis=0)


def total_loss_and_grads(model2d: DualHeadModel, model3d: DualHeadModel, feats2d, feats3d,
                         labels: np.ndarray, weights, lambda_xm: float):
    """``L_tot = L_pl + lambda * L_xM`` on one batch.

    Returns ``((loss_pl, loss_xm, loss_tot), grads2d, grads3d)`` where each
    ``grads`` dict is keyed like :meth:`DualHeadModel.params`.
    """
    x2 = np.asarray(feats2d, dtype=np.float64)
    x3 = np.asarray(feats3d, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    mask = y != IGNORE

    z2, z3 = model2d.logits(x2), model3d.logits(x3)
    ce2, dz2 = _ce_from_logits(z2, y, mask, w)
    ce3, dz3 = _ce_from_logits(z3, y, mask, w)

    # 3D translation head imitates the 2D main output and vice versa
    p2, p3 = softmax(z2), softmax(z3)
    kl_a, dz3x = _kl_from_logits(p2, model3d.xlate_logits(x3))
    kl_b, dz2x = _kl_from_logits(p3, model2d.xlate_logits(x2))

    lpl = ce2 + ce3
    lxm = kl_a + kl_b
    g2w, g2b = _linear_grads(dz2, x2)
    g3w, g3b = _linear_grads(dz3, x3)
    g2xw, g2xb = _linear_grads(lambda_xm * dz2x, x2)
    g3xw, g3xb = _linear_grads(lambda_xm * dz3x, x3)
    grads2d = dict(weight=g2w, bias=g2b, xlate_weight=g2xw, xlate_bias=g2xb)
    grads3d = dict(weight=g3w, bias=g3b, xlate_weight=g3xw, xlate_bias=g3xb)
    return (lpl, lxm, lpl + lambda_xm * lxm), grads2d, grads3d


# -- optimisation -------------------------------------------------------------

class SGD:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def step(self, key, param: np.ndarray, grad: np.ndarray, lr: float):
        param -= lr * grad


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state: dict = {}

    def step(self, key, param: np.ndarray, grad: np.ndarray, lr: float):
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        m, v, t = self.state.get(key, (np.zeros_like(param), np.zeros_like(param), 0))
        t += 1
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        self.state[key] = (m, v, t)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.cfg.adam_eps)


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg) if cfg.optimizer == "adam" else SGD(cfg)


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless minibatch indices: shuffled without replacement, reshuffled per epoch."""
    bs = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            yield order[start:start + bs]


def train(model2d: DualHeadModel, model3d: DualHeadModel, feats2d, feats3d,
          labels: PseudoLabelSet, dist, cfg: TrainConfig):
    """Minibatch descent on ``L_tot``.

    Returns ``(model2d, model3d, trace)`` with fresh model copies and a
    ``(iterations, 3)`` array of ``(loss_pl, loss_xm, loss_tot)`` per step.
    """
    x2 = np.asarray(feats2d, dtype=np.float64)
    x3 = np.asarray(feats3d, dtype=np.float64)
    n = len(labels)
    if x2.shape != (n, model2d.dim) or x3.shape != (n, model3d.dim):
        raise ShapeError("feature matrices do not match the models or the label count")
    if model2d.n_classes != model3d.n_classes:
        raise ShapeError("models disagree on the number of classes")

    m2, m3 = model2d.copy(), model3d.copy()
    trace = np.zeros((cfg.iterations, 3))
    if cfg.iterations == 0:
        return m2, m3, trace
    if n == 0:
        raise EmptyInput("cannot train on an empty target set")

    weights = class_weights(dist, cfg.weight_mode)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    batches = iter_batches(n, cfg.batch_size, rng)
    y = labels.labels

    for step in range(cfg.iterations):
        idx = next(batches)
        try:
            losses, g2, g3 = total_loss_and_grads(m2, m3, x2[idx], x3[idx], y[idx],
                                                  weights, cfg.lambda_xm)
        except InvalidInput as exc:
            raise DivergedError(step, "logit") from exc
        if not np.all(np.isfinite(losses)):
            raise DivergedError(step)
        for g in (g2, g3):
            if not all(np.all(np.isfinite(a)) for a in g.values()):
                raise DivergedError(step, "gradient")
        trace[step] = losses
        lr = cfg.lr_at(step)
        for tag, model, grads in (("2d", m2, g2), ("3d", m3, g3)):
            for name in PARAM_NAMES:
                opt.step((tag, name), getattr(model, name), grads[name], lr)
        if step % 100 == 0:
            log.debug("step %d loss_pl=%.5f loss_xm=%.5f", step, losses[0], losses[1])

    if not all(np.all(np.isfinite(a)) for m in (m2, m3) for a in m.params().values()):
        raise DivergedError(cfg.iterations - 1, "parameter")
    return m2, m3, trace


def fit_head(features, labels, n_classes: int, cfg: TrainConfig) -> DualHeadModel:
    """Supervised fit of a single modality's main head (plain cross-entropy).

    Used to produce source models; the translation head is a copy of the result.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if y.shape != (n,):
        raise ShapeError("labels must have one entry per feature row")
    model = DualHeadModel.zeros(x.shape[1], n_classes)
    w = np.ones(n_classes)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    batches = iter_batches(n, cfg.batch_size, rng)
    for step in range(cfg.iterations):
        idx = next(batches)
        try:
            loss, dz = _ce_from_logits(model.logits(x[idx]), y[idx], y[idx] != IGNORE, w)
        except InvalidInput as exc:
            raise DivergedError(step, "logit") from exc
        if not np.isfinite(loss):
            raise DivergedError(step)
        gw, gb = _linear_grads(dz, x[idx])
        lr = cfg.lr_at(step)
        opt.step("weight", model.weight, gw, lr)
        opt.step("bias", model.bias, gb, lr)
    return DualHeadModel.from_head(model.weight, model.bias)


def write_trace_csv(trace: np.ndarray, path: str | Path):
    lines = ["step,loss_pl,loss_xm,loss_tot"]
    lines += [f"{i},{a:.10g},{b:.10g},{c:.10g}" for i, (a, b, c) in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n")
