"""Command-line entry point: ``xmfuse {synth,fuse,switch,adapt,eval,run}``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import metrics
from .adapt import DivergedError, TrainConfig, write_trace_csv
from .core import InvalidInput, ShapeError
from .manifest import Manifest, ManifestError, read_labels, write_labels, write_model, write_scenario
from .pipeline import adapt_models, default_adapt_config, ensemble_predictions, fuse
from .switch import DEFAULT_THRESHOLD
from .synth import ConfigError, SynthConfig, fit_source_heads, generate, target_logits
from .tensorio import TensorFormatError

log = logging.getLogger("xmfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _param(args, manifest: Manifest, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return manifest.params.get(name, default)


def _parse_taus(text: str | None, fallback: float) -> list[float]:
    if text is None:
        return [float(fallback)]
    try:
        taus = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise CliError(f"bad --tau value {text!r}", EXIT_CONFIG) from exc
    if not taus or any(t <= 0 for t in taus):
        raise CliError("--tau values must be positive", EXIT_CONFIG)
    return taus


def _tau_name(tau: float) -> str:
    return f"labels_tau{tau:g}.smt"


def _load_train_config(args, manifest: Manifest) -> TrainConfig:
    overrides = {}
    if args.lambda_xm is not None:
        overrides["lambda_xm"] = args.lambda_xm
    if args.weight_mode is not None:
        overrides["weight_mode"] = args.weight_mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read train config {args.config}: {exc}", EXIT_CONFIG) from exc
        if not isinstance(data, dict):
            raise CliError("train config must be a JSON object", EXIT_CONFIG)
        data.update(overrides)
        return TrainConfig.from_dict(data)
    base = default_adapt_config(seed=manifest.seed,
                                lambda_xm=float(manifest.params.get("lambda_xm", 0.1)))
    for k, v in overrides.items():
        setattr(base, k, v)
    return TrainConfig.from_dict(vars(base))


def _pseudo_report_text(name: str, labels, truth) -> str:
    report = metrics.pseudo_label_report(labels, truth)
    return metrics.format_report_table({name: report})


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    scenario = generate(cfg)
    m2, m3, meta = fit_source_heads(scenario)
    z2, z3 = target_logits(scenario, m2, m3)
    manifest = write_scenario(args.out, scenario, m2, m3, z2, z3)
    print(f"wrote scenario to {manifest.root} (source Top-1 2D {meta.top1_2d:.4f}, 3D {meta.top1_3d:.4f})")
    return EXIT_OK


def _run_fuse(manifest: Manifest, data: dict, mode: str, tau: float, threshold: float):
    return fuse(data["logits2d"], data["logits3d"], data["feats2d"], data["feats3d"],
                manifest.meta, mode=mode, tau=tau, threshold=threshold)


def cmd_switch(args) -> int:
    manifest = Manifest.load(args.manifest)
    data = manifest.load_target()
    threshold = _param(args, manifest, "switch_threshold", DEFAULT_THRESHOLD)
    res = _run_fuse(manifest, data, "af", 1.0, threshold)
    d = res.decision
    print(metrics.format_switch_table(d.source_agreement, d.target_agreement, d.ratio, d.mode.value))
    if args.json:
        print(json.dumps(d.to_dict()))
    return EXIT_OK


def cmd_fuse(args) -> int:
    manifest = Manifest.load(args.manifest)
    data = manifest.load_target()
    threshold = _param(args, manifest, "switch_threshold", DEFAULT_THRESHOLD)
    taus = _parse_taus(args.tau, manifest.params.get("tau", 1.0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    summary = []
    for tau in taus:
        res = _run_fuse(manifest, data, args.mode, tau, threshold)
        name = "labels.smt" if len(taus) == 1 else _tau_name(tau)
        write_labels(out / name, res.labels)
        entry = {"tau": tau, "labels": name, "mode": res.mode.value,
                 "accepted": int(res.labels.accepted.sum()), "decision": res.decision.to_dict()}
        if "truth" in data:
            r = metrics.pseudo_label_report(res.labels, data["truth"])
            entry["report"] = dict(zip(("correct", "incorrect", "ignore"), r.as_row()))
        summary.append(entry)

    d = res.decision
    table = metrics.format_switch_table(d.source_agreement, d.target_agreement, d.ratio, d.mode.value)
    (out / "switch.txt").write_text(table + "\n")
    (out / "fuse.json").write_text(json.dumps({"mode_requested": args.mode, "results": summary},
                                              indent=2) + "\n")
    print(table)
    print(f"fusion mode used: {summary[-1]['mode'].upper()}")
    for entry in summary:
        line = f"tau={entry['tau']:g}: {entry['accepted']} / {len(res.labels)} accepted -> {entry['labels']}"
        if "report" in entry:
            rep = entry["report"]
            line += (f"  correct {rep['correct']:.2f}  incorrect {rep['incorrect']:.2f}"
                     f"  ignore {rep['ignore']:.2f}")
        print(line)
    return EXIT_OK


def cmd_adapt(args) -> int:
    manifest = Manifest.load(args.manifest)
    data = manifest.load_target()
    n = data["feats2d"].shape[0]
    labels = read_labels(args.labels, n)
    cfg = _load_train_config(args, manifest)
    m2, m3 = manifest.load_models()
    a2, a3, trace = adapt_models(m2, m3, data["feats2d"], data["feats3d"], labels, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_model(out, "model2d", a2)
    write_model(out, "model3d", a3)
    write_trace_csv(trace, out / "loss_trace.csv")
    (out / "train_config.json").write_text(cfg.to_json() + "\n")
    last = trace[-1] if len(trace) else (0.0, 0.0, 0.0)
    print(f"adapted {cfg.iterations} steps; final loss_pl {last[0]:.5f} loss_xm {last[1]:.5f}"
          f" -> {out}")
    return EXIT_OK


def evaluate(manifest: Manifest, data: dict, models_dir=None) -> dict:
    if "truth" not in data:
        raise CliError("manifest has no ground-truth tensor; cannot evaluate", EXIT_CONFIG)
    m2, m3 = manifest.load_models(models_dir)
    p2, p3, pe = ensemble_predictions(m2, m3, data["feats2d"], data["feats3d"])
    k = manifest.n_classes
    return {name: metrics.miou(p, data["truth"], k) for name, p in (("2D", p2), ("3D", p3), ("2D+3D", pe))}


def cmd_eval(args) -> int:
    manifest = Manifest.load(args.manifest)
    data = manifest.load_target()
    results = evaluate(manifest, data, args.models)
    print(metrics.format_iou_table(results))
    reports = {}
    if args.labels:
        labels = read_labels(args.labels, data["feats2d"].shape[0])
        reports["labels"] = metrics.pseudo_label_report(labels, data["truth"])
        print()
        print(metrics.format_report_table(reports))
    if args.csv:
        out = Path(args.csv)
        out.mkdir(parents=True, exist_ok=True)
        (out / "iou.csv").write_text(metrics.iou_to_csv(results))
        if reports:
            (out / "pseudo_labels.csv").write_text(metrics.reports_to_csv(reports))
    return EXIT_OK


def cmd_run(args) -> int:
    """Label generation with switching, adaptation, and before/after evaluation."""
    manifest = Manifest.load(args.manifest)
    data = manifest.load_target()
    threshold = _param(args, manifest, "switch_threshold", DEFAULT_THRESHOLD)
    tau = _parse_taus(args.tau, manifest.params.get("tau", 1.0))
    if len(tau) != 1:
        raise CliError("run takes a single --tau", EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    res = _run_fuse(manifest, data, args.mode, tau[0], threshold)
    write_labels(out / "labels.smt", res.labels)
    d = res.decision
    print(metrics.format_switch_table(d.source_agreement, d.target_agreement, d.ratio, d.mode.value))
    print(f"fusion mode used: {res.mode.value.upper()}\n")

    cfg = _load_train_config(args, manifest)
    m2, m3 = manifest.load_models()
    a2, a3, trace = adapt_models(m2, m3, data["feats2d"], data["feats3d"], res.labels, cfg)
    write_model(out, "model2d", a2)
    write_model(out, "model3d", a3)
    write_trace_csv(trace, out / "loss_trace.csv")
    (out / "train_config.json").write_text(cfg.to_json() + "\n")

    summary = {"decision": d.to_dict(), "mode": res.mode.value}
    if "truth" in data:
        before = evaluate(manifest, data)
        after = evaluate(manifest, data, out)
        print("no adaptation")
        print(metrics.format_iou_table(before))
        print("\nadapted")
        print(metrics.format_iou_table(after))
        print()
        rep = metrics.pseudo_label_report(res.labels, data["truth"])
        print(metrics.format_report_table({res.mode.value.upper(): rep}))
        summary["miou_before"] = {k: v[1] for k, v in before.items()}
        summary["miou_after"] = {k: v[1] for k, v in after.items()}
        summary["pseudo_labels"] = dict(zip(("correct", "incorrect", "ignore"), rep.as_row()))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired scenario with source models")
    s.add_argument("config", nargs="?", help="synth config JSON (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    def fusion_flags(sp, tau_list: bool):
        sp.add_argument("--mode", choices=("af", "ew", "auto"), default="auto")
        sp.add_argument("--tau", default=None,
                        help="likelihood-ratio threshold" + (" (comma list for a sweep)" if tau_list else ""))
        sp.add_argument("--switch-threshold", dest="switch_threshold", type=float, default=None)

    def train_flags(sp):
        sp.add_argument("--config", help="train config JSON")
        sp.add_argument("--lambda-xm", dest="lambda_xm", type=float, default=None)
        sp.add_argument("--weight-mode", dest="weight_mode", choices=("inverse", "uniform"), default=None)
        sp.add_argument("--seed", type=int, default=None)

    f = sub.add_parser("fuse", help="produce fused pseudo-labels")
    f.add_argument("manifest")
    f.add_argument("--out", required=True)
    fusion_flags(f, tau_list=True)
    f.set_defaults(func=cmd_fuse)

    w = sub.add_parser("switch", help="dry-run the AF/EW switching decision")
    w.add_argument("manifest")
    w.add_argument("--switch-threshold", dest="switch_threshold", type=float, default=None)
    w.add_argument("--json", action="store_true")
    w.set_defaults(func=cmd_switch)

    a = sub.add_parser("adapt", help="adapt the source models on fixed pseudo-labels")
    a.add_argument("manifest")
    a.add_argument("labels")
    a.add_argument("--out", required=True)
    train_flags(a)
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", help="per-class IoU / mIoU and pseudo-label accuracy")
    e.add_argument("manifest")
    e.add_argument("--models", help="directory of adapted model files (default: source models)")
    e.add_argument("--labels", help="pseudo-label tensor to score")
    e.add_argument("--csv", help="directory for CSV reports")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="fuse, adapt and evaluate in one go")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    fusion_flags(r, tau_list=False)
    train_flags(r)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergedError as exc:
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, TensorFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ManifestError, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
