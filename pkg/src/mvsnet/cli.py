"""Command-line entry point: ``mvsnet {synth,validate,folds,train,report,params}``.

Exit codes: 0 ok, 2 configuration or schema error, 3 I/O failure,
4 numerical failure during training.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import AugmentationPolicy
from .dataset import VIEW_ORDER, load_manifest, make_folds, missing_view_types, summarize
from .errors import MVSError, NonFiniteLoss, SchemaViolation, UnknownBackbone
from .evaluation import (
    METRIC_HEADERS,
    METRIC_ORDER,
    evaluate,
    read_predictions_csv,
    write_radar_csv,
)
from .model import (
    BackboneSpec,
    ParameterCount,
    body_parameter_count,
    head_parameter_count,
    hidden_width,
)
from .synthetic import SynthSpec, generate_cohort
from .training import TASKS, VARIANTS, TrainConfig, TrainingCurve, cross_validate, write_run_reports

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mvsnet")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    task: str = "binary"
    variant: str = "multi-view"
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    dataset: str = "manifest.json"
    output: str = "run"
    seed: int = 0
    k: int = 5

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        def build(kind, sub, name):
            sub = dict(sub or {})
            allowed = {f.name for f in fields(kind)}
            unknown = set(sub) - allowed
            if unknown:
                raise ConfigError(f"{name}: unknown fields {sorted(unknown)}")
            try:
                return kind(**sub)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None

        top = {f.name for f in fields(cls)}
        unknown = set(doc) - top
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        cfg = cls(
            task=doc.get("task", "binary"),
            variant=doc.get("variant", "multi-view"),
            backbone=build(BackboneSpec, doc.get("backbone"), "backbone"),
            train=build(TrainConfig, doc.get("train"), "train"),
            augmentation=build(AugmentationPolicy, doc.get("augmentation"), "augmentation"),
            dataset=doc.get("dataset", "manifest.json"),
            output=doc.get("output", "run"),
            seed=int(doc.get("seed", 0)),
            k=int(doc.get("k", 5)),
        )
        cfg.check()
        return cfg

    def check(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        try:
            self.backbone.resolved()
        except (UnknownBackbone, ValueError) as exc:
            raise ConfigError(f"backbone: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "backbone": asdict(self.backbone),
            "train": asdict(self.train),
            "augmentation": asdict(self.augmentation),
            "dataset": self.dataset,
            "output": self.output,
            "seed": self.seed,
            "k": self.k,
        }


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except FileNotFoundError:
        print(f"error: spec file not found: {args.spec}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid synth spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = generate_cohort(spec, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(manifest)} subjects to {Path(args.out) / 'manifest.json'}")
    print(summarize(manifest).format())
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    actions = excluded = 0
    unreadable = []
    for s in manifest.subjects:
        absent = missing_view_types(s.views)
        if absent:
            excluded += 1
            print(f"{s.subject_id}: EXCLUDED ({'; '.join(f'no contralateral {v}' for v in absent)})")
            continue
        for key in VIEW_ORDER:
            if key not in s.views:
                actions += 1
                print(f"{s.subject_id}: {key.value} <- mirror({key.contralateral.value})")
        if args.check_files:
            unreadable += [f"{s.subject_id}:{k.value}" for k, p in s.views.items() if not Path(p).is_file()]
    print(summarize(manifest).format())
    print(f"subjects: {len(manifest)}, completions: {actions}, exclusions: {excluded}")
    if unreadable:
        print(f"missing image files: {len(unreadable)} (first: {unreadable[0]})", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_folds(args) -> int:
    manifest = load_manifest(args.manifest)
    plan = make_folds(manifest, args.k, _master_seed(args.seed))
    by_id = manifest.by_id()
    for i in range(plan.k):
        ids = plan.test_ids(i)
        per_class = {}
        for sid in ids:
            per_class[str(by_id[sid].label)] = per_class.get(str(by_id[sid].label), 0) + 1
        print(f"fold {i}: {len(ids)} test subjects {per_class}")
    if args.out:
        plan.save(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _master_seed(flag, default=0):
    # precedence: command-line flag, then MVS_SEED, then the file/default value
    if flag is not None:
        return int(flag)
    env = os.environ.get("MVS_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MVS_SEED must be an integer, got {env!r}") from None
    return int(default)


def load_run_config(path, overrides: argparse.Namespace | None = None) -> tuple[RunConfig, Path]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if overrides is not None:
        for name in ("task", "variant", "output", "dataset"):
            if getattr(overrides, name, None) is not None:
                doc[name] = getattr(overrides, name)
        if getattr(overrides, "backbone", None):
            doc.setdefault("backbone", {})["name"] = overrides.backbone
        for name in ("max_epochs", "learning_rate", "batch_size"):
            if getattr(overrides, name, None) is not None:
                doc.setdefault("train", {})[name] = getattr(overrides, name)
    doc["seed"] = _master_seed(getattr(overrides, "seed", None), doc.get("seed", 0))
    cfg = RunConfig.from_dict(doc)
    cfg.train.seed = cfg.seed
    return cfg, path.parent


def cmd_train(args) -> int:
    cfg, base = load_run_config(args.config, args)
    manifest = load_manifest(base / cfg.dataset)
    out_dir = base / cfg.output
    try:
        result = cross_validate(
            manifest, cfg.task, cfg.variant, cfg.backbone, cfg.train, cfg.augmentation,
            k=cfg.k, out_dir=out_dir, jobs=args.jobs, threads=1 if args.jobs == 1 else None,
            run_info={"config": cfg.to_dict()},
        )
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(result.report.format_table(f"{cfg.variant} / {cfg.task} / {cfg.backbone.name}"))
    print(f"predictions: {len(result.predictions)}; run directory: {out_dir}")
    return EXIT_OK


def _load_run(run_dir: Path):
    run_json = run_dir / "run.json"
    pred_files = sorted((run_dir / "folds").glob("*/predictions.csv"), key=lambda p: int(p.parent.name)) \
        if (run_dir / "folds").is_dir() else []
    if not run_json.is_file() or not pred_files:
        raise FileNotFoundError(f"{run_dir} is not a completed run (needs run.json and folds/*/predictions.csv)")
    info = json.loads(run_json.read_text())
    preds = [p for f in pred_files for p in read_predictions_csv(f, fold=int(f.parent.name))]
    return info, preds


def _write_curves(run_dir: Path) -> Path | None:
    rows = []
    for f in sorted((run_dir / "folds").glob("*/curve.csv"), key=lambda p: int(p.parent.name)):
        for r in TrainingCurve.read_csv(f).records:
            rows.append([int(f.parent.name), r.epoch, r.loss, r.accuracy])
    if not rows:
        return None
    path = run_dir / "curves.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "epoch", "loss", "accuracy"])
        w.writerows(rows)
    return path


def _plot(run_dir: Path, report) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(4, 4))
    for scope, curve in report.curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{scope} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(run_dir / "roc.png", dpi=120)
    plt.close(fig)


def cmd_report(args) -> int:
    reports = {}
    for d in args.runs:
        run_dir = Path(d)
        try:
            info, preds = _load_run(run_dir)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        task = info.get("task", "binary")
        report = evaluate(preds, task, info.get("train", {}).get("cutoff", 0.5))
        write_run_reports(report, run_dir)
        _write_curves(run_dir)
        table = report.format_table(f"{run_dir}: {info.get('variant')} / {task} ({len(preds)} units)")
        (run_dir / "report.txt").write_text(table + "\n")
        print(table)
        if args.plot:
            _plot(run_dir, report)
        name = info.get("variant", run_dir.name)
        if name in reports:
            name = f"{name}:{run_dir.name}"
        reports[name] = report
    if len(reports) > 1:
        out = Path(args.out or args.runs[0])
        out.mkdir(parents=True, exist_ok=True)
        write_radar_csv(reports, out / "radar.csv")
        print(f"wrote {out / 'radar.csv'}")
    return EXIT_OK


def params_table(backbone: str | None, d_view: int | None, views: int, classes: int) -> dict:
    if backbone:
        spec = BackboneSpec(backbone, d_view).resolved()
        d_view = spec.d_view
        body = body_parameter_count(backbone, d_view)
    elif d_view:
        body = ParameterCount(0, 0)
    else:
        raise ConfigError("give --backbone and/or --d-view")
    head = head_parameter_count(d_view, views, classes)
    total = ParameterCount(body.trainable + head, body.non_trainable)
    return {
        "backbone": backbone or "-",
        "d_view": d_view,
        "views": views,
        "classes": classes,
        "hidden_width": hidden_width(d_view, views),
        "head": head,
        "trainable": total.trainable,
        "non_trainable": total.non_trainable,
        "total": total.total,
    }


def cmd_params(args) -> int:
    row = params_table(args.backbone, args.d_view, args.views, args.classes)
    width = max(len(k) for k in row)
    for k, v in row.items():
        print(f"{k:<{width}}  {v:,}" if isinstance(v, int) else f"{k:<{width}}  {v}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvsnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic four-view cohort")
    s.add_argument("spec", help="JSON file with SynthSpec fields")
    s.add_argument("out", help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("validate", help="check a manifest and list completions/exclusions")
    s.add_argument("manifest")
    s.add_argument("--check-files", action="store_true", help="also check that image files exist")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("folds", help="write a patient-wise stratified fold plan")
    s.add_argument("manifest")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_folds)

    s = sub.add_parser("train", help="run k-fold cross-validation from a run config")
    s.add_argument("config", help="JSON run config; paths inside are relative to it")
    s.add_argument("--jobs", type=int, default=1, help="folds trained in parallel (1 = reproducible)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--task", choices=TASKS, default=None)
    s.add_argument("--variant", choices=VARIANTS, default=None)
    s.add_argument("--backbone", default=None)
    s.add_argument("--output", default=None)
    s.add_argument("--dataset", default=None)
    s.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    s.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    s.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", help="tables, confusion/ROC/curve data for finished runs")
    s.add_argument("runs", nargs="+", help="run directories; two or more also produce radar.csv")
    s.add_argument("--out", default=None, help="where radar.csv goes (default: first run)")
    s.add_argument("--plot", action="store_true", help="also render roc.png (needs matplotlib)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("params", help="closed-form parameter counts")
    s.add_argument("--backbone", default=None)
    s.add_argument("--d-view", dest="d_view", type=int, default=None)
    s.add_argument("--views", type=int, default=4)
    s.add_argument("--classes", type=int, default=2)
    s.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaViolation, UnknownBackbone) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MVSError as exc:
        code = EXIT_IO if isinstance(exc, OSError) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
