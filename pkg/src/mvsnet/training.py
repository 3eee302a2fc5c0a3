"""Fold training with early stopping and best-accuracy checkpointing, and the
patient-wise cross-validation driver for the multi-view and single-view variants.
"""
from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationPolicy, augment_to_target
from .dataset import (
    ClassLabel,
    DatasetManifest,
    ExcludedSubject,
    FoldPlan,
    complete_or_exclude,
    load_image,
    load_original_views,
    make_folds,
)
from .errors import NonFiniteLoss
from .evaluation import (
    EvaluationReport,
    PredictionRecord,
    accumulate,
    confusion_binary,
    confusion_multiclass,
    evaluate,
    write_confusion_csv,
    write_metrics_json,
    write_predictions_csv,
    write_roc_csv,
)
from .model import BackboneSpec, HeadConfig, MVSNet, batch_tensor, build, build_single_view, save_checkpoint

log = logging.getLogger(__name__)

TASKS = ("binary", "multiclass")
VARIANTS = ("multi-view", "single-view")


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-5
    max_epochs: int = 300
    early_stop_patience: int = 5
    min_delta: float = 0.0
    monitor: str = "loss"
    checkpoint_metric: str = "accuracy"
    augment_target_per_class: int | None = 1000
    cutoff: float = 0.5
    dropout_rate: float = 0.4
    shared_backbone: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate < 0 or self.max_epochs < 1:
            raise ValueError("batch_size, max_epochs must be positive and learning_rate non-negative")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.monitor not in ("loss", "accuracy") or self.checkpoint_metric not in ("loss", "accuracy"):
            raise ValueError("monitor and checkpoint_metric must be 'loss' or 'accuracy'")
        if self.augment_target_per_class is not None and self.augment_target_per_class < 1:
            raise ValueError("augment_target_per_class must be positive or null")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    seconds: float


@dataclass
class TrainingCurve:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "accuracy", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.accuracy), f"{r.seconds:.3f}"])
        return path

    @classmethod
    def read_csv(cls, path) -> "TrainingCurve":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["loss"]), float(r["accuracy"]), float(r["seconds"]))
                    for r in rows])


@dataclass
class FoldResult:
    fold: int
    curve: TrainingCurve
    best_epoch: int
    stopped_early: bool
    checkpoint: Path | None = None
    predictions: list[PredictionRecord] = field(default_factory=list)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without improvement beyond ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = 0.0, mode: str = "min"):
        self.patience = patience
        self.min_delta = min_delta
        self.sign = 1.0 if mode == "min" else -1.0
        self.best = None
        self.wait = 0

    def step(self, value: float) -> bool:
        v = self.sign * value
        if self.best is None or v < self.best - self.min_delta:
            self.best = v
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def label_key(task: str):
    if task == "binary":
        return lambda u: u.label.binary
    if task == "multiclass":
        return lambda u: int(u.label)
    raise ValueError(f"task must be one of {TASKS}")


def task_classes(task: str) -> list[int]:
    return [0, 1] if task == "binary" else [int(c) for c in ClassLabel]


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


def _better(metric: str, value: float, best: float | None) -> bool:
    if best is None:
        return True
    return value > best if metric == "accuracy" else value < best


def train_fold(model: MVSNet, units: Sequence, config: TrainConfig, task: str = "binary",
               fold: int = 0) -> FoldResult:
    """Train in place with Adam and one-hot categorical cross-entropy.

    The model ends up holding the weights from the epoch with the best
    ``checkpoint_metric`` (earliest epoch on ties).
    """
    key = label_key(task)
    units = list(units)
    if model.num_classes != len(task_classes(task)):
        raise ValueError(f"model has {model.num_classes} outputs but task {task!r} has {len(task_classes(task))}")
    targets = torch.tensor([key(u) for u in units], dtype=torch.long)
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    stopper = EarlyStopping(config.early_stop_patience, config.min_delta,
                            "min" if config.monitor == "loss" else "max")
    curve = TrainingCurve()
    best_value = best_state = None
    best_epoch = 0
    stopped = False

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        t0 = time.perf_counter()
        order = rng.permutation(len(units))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(units), config.batch_size):
            idx = order[start:start + config.batch_size]
            x = batch_tensor([units[i] for i in idx], model.num_views)
            y = targets[idx]
            logits = model(x)
            onehot = F.one_hot(y, model.num_classes).to(logits.dtype)
            loss = -(onehot * F.log_softmax(logits, dim=1)).sum(dim=1).mean()
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"fold {fold}, epoch {epoch}, batch at {start}: loss is {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.argmax(dim=1) == y).sum())
        rec = EpochRecord(epoch, loss_sum / len(units), correct / len(units), time.perf_counter() - t0)
        curve.append(rec)
        log.info("fold %d epoch %d loss %.4f acc %.4f (%.1fs)", fold, epoch, rec.loss, rec.accuracy, rec.seconds)

        value = getattr(rec, config.checkpoint_metric)
        if _better(config.checkpoint_metric, value, best_value):
            best_value, best_epoch = value, epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if stopper.step(getattr(rec, config.monitor)):
            stopped = epoch < config.max_epochs
            break

    model.load_state_dict(best_state)
    return FoldResult(fold, curve, best_epoch, stopped)


def predict(model: MVSNet, units: Sequence, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities, float64 rows renormalised to sum to one."""
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(units), batch_size):
            x = batch_tensor(units[start:start + batch_size], model.num_views)
            out.append(model.predict_proba(x).double().numpy())
    probs = np.concatenate(out) if out else np.zeros((0, model.num_classes))
    return probs / probs.sum(axis=1, keepdims=True)


# -- cross-validation -----------------------------------------------------------------


@dataclass
class CVResult:
    task: str
    variant: str
    plan: FoldPlan
    folds: list[FoldResult]
    report: EvaluationReport
    excluded: list[ExcludedSubject]

    @property
    def predictions(self) -> list[PredictionRecord]:
        return [p for f in self.folds for p in f.predictions]


def load_units(manifest: DatasetManifest, variant: str, loader=load_image):
    """Multi-view: completed image sets plus exclusions. Single-view: every bound image."""
    if variant == "multi-view":
        units, excluded = [], []
        for record in manifest.subjects:
            r = complete_or_exclude(record, loader)
            (excluded if isinstance(r, ExcludedSubject) else units).append(r)
        return units, excluded
    if variant == "single-view":
        return [u for record in manifest.subjects for u in load_original_views(record, loader)], []
    raise ValueError(f"variant must be one of {VARIANTS}")


def _new_model(variant, backbone, task, config) -> MVSNet:
    c = len(task_classes(task))
    if variant == "multi-view":
        return build(backbone, HeadConfig(4, c, config.dropout_rate), shared=config.shared_backbone)
    return build_single_view(backbone, c, config.dropout_rate)


def _run_fold(fold, units, plan, task, variant, backbone, config, policy, out_dir) -> FoldResult:
    key = label_key(task)
    test_ids = set(plan.test_ids(fold))
    train_units = [u for u in units if u.subject_id not in test_ids]
    test_units = [u for u in units if u.subject_id in test_ids]
    fold_seed = derive_seed(config.seed, fold)
    augmented = augment_to_target(train_units, policy, config.augment_target_per_class,
                                  seed=derive_seed(config.seed, fold, 1), key=key, classes=task_classes(task))
    leaked = {u.subject_id for u in augmented} & test_ids
    if leaked:
        raise AssertionError(f"test subjects in training data: {sorted(leaked)[:5]}")

    torch.manual_seed(fold_seed)
    model = _new_model(variant, backbone, task, config)
    result = train_fold(model, augmented, replace(config, seed=fold_seed), task, fold)
    probs = predict(model, test_units)
    result.predictions = [PredictionRecord(u.unit_id, fold, key(u), tuple(p)) for u, p in zip(test_units, probs)]
    if out_dir is not None:
        fold_dir = Path(out_dir) / "folds" / str(fold)
        fold_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_checkpoint(model, fold_dir / "checkpoint.pt", seed=fold_seed)
        result.curve.write_csv(fold_dir / "curve.csv")
        write_predictions_csv(result.predictions, fold_dir / "predictions.csv", model.num_classes)
    return result


_POOL_ARGS: tuple = ()


def _pool_fold(fold: int) -> FoldResult:
    torch.set_num_threads(1)
    return _run_fold(fold, *_POOL_ARGS)


def cross_validate(manifest: DatasetManifest, task: str, variant: str, backbone: BackboneSpec,
                   config: TrainConfig, policy: AugmentationPolicy | None = None, k: int = 5,
                   out_dir=None, jobs: int = 1, threads: int | None = 1,
                   run_info: dict | None = None) -> CVResult:
    """Patient-wise stratified k-fold training and pooled evaluation.

    Every fold gets a freshly built model; only its training subjects are
    augmented and trained on, and its untouched test units are predicted
    once. With ``out_dir`` the run directory (``run.json``, ``folds/<i>/``,
    ``metrics.json``, ``confusion.csv``, ``roc_<scope>.csv``) is written.
    Bitwise reproducibility holds for ``jobs=1, threads=1``.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    policy = policy or AugmentationPolicy()
    backbone = backbone.resolved()
    if threads is not None:
        torch.set_num_threads(threads)

    units, excluded = load_units(manifest, variant)
    with_units = {u.subject_id for u in units}
    plan = make_folds([s for s in manifest.subjects if s.subject_id in with_units], k, config.seed)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        info = {
            "task": task,
            "variant": variant,
            "k": k,
            "backbone": asdict(backbone),
            "train": asdict(config),
            "augmentation": asdict(policy),
            "fold_seeds": [derive_seed(config.seed, i) for i in range(k)],
            "excluded": [{"id": e.subject_id, "label": str(e.label), "reason": e.reason} for e in excluded],
        }
        info.update(run_info or {})
        (out_dir / "run.json").write_text(json.dumps(info, indent=2, default=str) + "\n")
        plan.save(out_dir / "folds.json")

    args = (units, plan, task, variant, backbone, config, policy, out_dir)
    if jobs > 1:
        global _POOL_ARGS
        _POOL_ARGS = args
        try:
            with mp.get_context("fork").Pool(min(jobs, k)) as pool:
                folds = pool.map(_pool_fold, range(k))
        finally:
            _POOL_ARGS = ()
    else:
        folds = [_run_fold(i, *args) for i in range(k)]

    preds = [p for f in folds for p in f.predictions]
    report = evaluate(preds, task, config.cutoff)
    per_fold = [confusion_binary(f.predictions, config.cutoff) if task == "binary"
                else confusion_multiclass(f.predictions, 3) for f in folds]
    assert accumulate(per_fold) == report.confusion

    if out_dir is not None:
        write_run_reports(report, out_dir)
    return CVResult(task, variant, plan, folds, report, excluded)


def write_run_reports(report: EvaluationReport, out_dir) -> None:
    out_dir = Path(out_dir)
    write_metrics_json(report, out_dir / "metrics.json")
    write_confusion_csv(report, out_dir / "confusion.csv")
    for scope, curve in report.curves.items():
        write_roc_csv(curve, out_dir / f"roc_{scope}.csv")
