"""Run manifests: a JSON document naming a scenario's tensor files and parameters.

File paths are relative to the manifest's directory.  Model heads are stored
as separate weight/bias tensors; translation heads are optional and default to
a copy of the main head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import DualHeadModel
from .core import InvalidInput, PseudoLabelSet, Provenance, ShapeError
from .switch import SourceMeta
from .synth import SynthScenario
from .tensorio import read_tensor, write_tensor

MANIFEST_NAME = "manifest.json"
FORMAT = "xmfuse-manifest/1"


class ManifestError(InvalidInput):
    pass


@dataclass
class Manifest:
    root: Path
    files: dict[str, str]
    meta: SourceMeta
    n_classes: int
    params: dict = field(default_factory=dict)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ManifestError(f"manifest not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed manifest {path}: {exc}") from exc
        try:
            meta = SourceMeta(**doc["source_meta"])
            return cls(path.parent, dict(doc["files"]), meta, int(doc["n_classes"]),
                       dict(doc.get("params", {})), int(doc.get("seed", 0)),
                       dict(doc.get("extra", {})))
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest {path} is missing or mistypes a field: {exc}") from exc

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_NAME
        doc = {
            "format": FORMAT,
            "n_classes": self.n_classes,
            "files": self.files,
            "source_meta": {"top1_2d": self.meta.top1_2d, "top1_3d": self.meta.top1_3d},
            "params": self.params,
            "seed": self.seed,
            "extra": self.extra,
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path

    def has(self, role: str) -> bool:
        return role in self.files

    def tensor(self, role: str) -> np.ndarray:
        if role not in self.files:
            raise ManifestError(f"manifest has no {role!r} file")
        return read_tensor(self.root / self.files[role])

    def load_target(self) -> dict[str, np.ndarray]:
        """Read and shape-check the target tensors (truth is optional)."""
        data = {r: self.tensor(r).astype(np.float64)
                for r in ("feats2d", "feats3d", "logits2d", "logits3d")}
        n = data["feats2d"].shape[0]
        for role, arr in data.items():
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ShapeError(f"{role} has shape {arr.shape}, expected {n} rows")
        for role in ("logits2d", "logits3d"):
            if data[role].shape[1] != self.n_classes:
                raise ShapeError(f"{role} has {data[role].shape[1]} classes, manifest says {self.n_classes}")
        if self.has("truth"):
            truth = self.tensor("truth").astype(np.int64)
            if truth.shape != (n,):
                raise ShapeError(f"truth has shape {truth.shape}, expected ({n},)")
            data["truth"] = truth
        return data

    def load_models(self, models_dir: str | Path | None = None) -> tuple[DualHeadModel, DualHeadModel]:
        """Source models named in the manifest, or ``<tag>_<part>.smt`` files in ``models_dir``."""
        models = []
        for tag in ("model2d", "model3d"):
            if models_dir is None:
                root = self.root
                names = {k[len(tag) + 1:]: v for k, v in self.files.items() if k.startswith(tag + "_")}
            else:
                root = Path(models_dir)
                names = {p: f"{tag}_{p}.smt" for p in ("weight", "bias", "xlate_weight", "xlate_bias")}
            models.append(read_model(root, names))
        m2, m3 = models
        d2 = self.tensor("feats2d").shape[1]
        d3 = self.tensor("feats3d").shape[1]
        if (m2.dim, m3.dim) != (d2, d3) or m2.n_classes != self.n_classes or m3.n_classes != self.n_classes:
            raise ShapeError("model shapes do not match the manifest's features/classes")
        return m2, m3


def read_model(root: Path, names: dict[str, str]) -> DualHeadModel:
    """``names`` maps ``weight``/``bias`` (and optionally ``xlate_*``) to file names."""
    try:
        w = read_tensor(root / names["weight"])
        b = read_tensor(root / names["bias"])
    except KeyError as exc:
        raise ManifestError(f"model files incomplete: missing {exc}") from exc
    if "xlate_weight" in names and (root / names["xlate_weight"]).exists():
        return DualHeadModel(w, b, read_tensor(root / names["xlate_weight"]),
                             read_tensor(root / names["xlate_bias"]))
    return DualHeadModel.from_head(w, b)


def write_model(root: Path, tag: str, model: DualHeadModel, xlate: bool = True) -> dict[str, str]:
    files = {}
    parts = ("weight", "bias", "xlate_weight", "xlate_bias") if xlate else ("weight", "bias")
    for part in parts:
        name = f"{tag}_{part}.smt"
        write_tensor(root / name, getattr(model, part).astype(np.float32))
        files[f"{tag}_{part}"] = name
    return files


def write_labels(path: str | Path, labels: PseudoLabelSet):
    write_tensor(path, labels.labels.astype(np.int32))


def read_labels(path: str | Path, n: int | None = None) -> PseudoLabelSet:
    raw = read_tensor(path)
    if raw.ndim != 1:
        raise ShapeError(f"label tensor must be rank 1, got shape {raw.shape}")
    if n is not None and raw.size != n:
        raise ShapeError(f"{raw.size} labels for {n} target samples")
    # provenance is not stored; accepted labels are tagged as plain median passes
    return PseudoLabelSet.from_labels(raw.astype(np.int64), Provenance.MEDIAN_PASS)


def write_scenario(out_dir: str | Path, scenario: SynthScenario, model2d: DualHeadModel,
                   model3d: DualHeadModel, logits2d, logits3d, params: dict | None = None) -> Manifest:
    """Write the target-side artifacts of a scenario (never the source data)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "feats2d": scenario.target2d,
        "feats3d": scenario.target3d,
        "logits2d": logits2d,
        "logits3d": logits3d,
    }
    files = {}
    for role, arr in arrays.items():
        files[role] = f"{role}.smt"
        write_tensor(out / files[role], np.asarray(arr).astype(np.float32))
    files["truth"] = "truth.smt"
    write_tensor(out / files["truth"], scenario.truth.astype(np.int32))
    files.update(write_model(out, "model2d", model2d, xlate=False))
    files.update(write_model(out, "model3d", model3d, xlate=False))
    m = Manifest(out, files, scenario.meta, scenario.config.n_classes, dict(params or {}),
                 scenario.config.seed, {"synth_config": scenario.config.to_dict()})
    m.save()
    return m

