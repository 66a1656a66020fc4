"""Training loop, validation, checkpoint selection and run reports."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..data.split import patient_split
from ..data.study import FourViewStudy, validate_study
from ..data.transforms import augment, preprocess, study_rng
from ..errors import ConfigurationError
from ..heads import BiradsIndex, ClassWeights, active_tasks, compute_class_weights, model_loss
from ..model import ModelConfig, MultiViewModel
from ..tensor import Tensor, no_grad, ops
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .metrics import auc, macro_f1, predict
from .optim import AdamW, clip_parameter_gradients
from .schedule import PlateauSchedule

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "auc_label", "f1_label", "auc_birads", "f1_birads", "monitored")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class EvalResult:
    auc: dict[str, Optional[float]]
    f1: dict[str, Optional[float]]
    monitored: Optional[float]
    rows: list[dict]  # per-study attention and predictions


@dataclass
class MetricsReport:
    history: list[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_monitored: Optional[float] = None
    best_eval: Optional[EvalResult] = None
    checkpoint: Optional[Path] = None
    seconds: float = 0.0


def targets_for(studies: Sequence[FourViewStudy], index: BiradsIndex) -> dict[str, np.ndarray]:
    return {
        "label_l": np.array([s.labels.label_l for s in studies], dtype=np.int64),
        "label_r": np.array([s.labels.label_r for s in studies], dtype=np.int64),
        "birads_l": np.array([index.to_index(s.labels.birads_l) for s in studies], dtype=np.int64),
        "birads_r": np.array([index.to_index(s.labels.birads_r) for s in studies], dtype=np.int64),
    }


def class_weights_for(studies: Sequence[FourViewStudy], index: BiradsIndex, task: str) -> ClassWeights:
    t = targets_for(studies, index)
    tasks = active_tasks(task)
    label = (compute_class_weights(np.concatenate([t["label_l"], t["label_r"]]), 2)
             if "label" in tasks else np.ones(2))
    birads = (compute_class_weights(np.concatenate([t["birads_l"], t["birads_r"]]), len(index))
              if "birads" in tasks else np.ones(len(index)))
    return ClassWeights(label=label, birads=birads)


def make_batch(studies: Sequence[FourViewStudy], size: int, dtype, seed: int | None = None,
               epoch: int = 0) -> np.ndarray:
    views = []
    for s in studies:
        if seed is not None:
            s = augment(s, study_rng(seed, epoch, s.study_id))
        views.append(preprocess(s, size))
    return np.stack(views).astype(dtype)


def monitored_metric(aucs: dict[str, Optional[float]], task: str) -> Optional[float]:
    """Arithmetic mean of the active tasks' AUCs that are defined."""
    vals = [aucs[t] for t in active_tasks(task) if aucs.get(t) is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(model: MultiViewModel, studies: Sequence[FourViewStudy], index: BiradsIndex,
             batch_size: int = 16) -> EvalResult:
    """Per-side softmax scores for valid sides feed AUC and macro-F1 per active task."""
    task = model.cfg.task
    size = model.cfg.backbone.image_size
    was_training = model.training
    model.eval()
    probs = {name: [] for name in ("label_l", "label_r", "birads_l", "birads_r")}
    alphas = []
    try:
        with no_grad():
            for start in range(0, len(studies), batch_size):
                chunk = studies[start:start + batch_size]
                out = model(Tensor(make_batch(chunk, size, model.dtype)))
                alphas.append(out.alpha.data.astype(np.float64))
                for name, logits in out.logits.items():
                    probs[name].append(ops.softmax(logits, axis=-1).data.astype(np.float64))
    finally:
        model.train(was_training)
    alpha = np.concatenate(alphas) if alphas else np.zeros((0, 4))
    targets = targets_for(studies, index)
    aucs: dict[str, Optional[float]] = {}
    f1s: dict[str, Optional[float]] = {}
    preds: dict[str, np.ndarray] = {}
    for t in active_tasks(task):
        k = 2 if t == "label" else len(index)
        scores, labels = [], []
        for side in "lr":
            p = np.concatenate(probs[f"{t}_{side}"]) if probs[f"{t}_{side}"] else np.zeros((0, k))
            preds[f"{t}_{side}"] = predict(p) if len(p) else np.zeros(0, int)
            y = targets[f"{t}_{side}"]
            valid = y >= 0
            scores.append(p[valid])
            labels.append(y[valid])
        s, y = np.concatenate(scores), np.concatenate(labels)
        aucs[t] = auc(s, y) if len(y) else None
        f1s[t] = macro_f1(predict(s), y, k) if len(y) else None
    rows = []
    for i, st in enumerate(studies):
        row = {"study_id": st.study_id, "alpha_lcc": alpha[i, 0], "alpha_lmlo": alpha[i, 1],
               "alpha_rcc": alpha[i, 2], "alpha_rmlo": alpha[i, 3]}
        for t in active_tasks(task):
            for side, ok in (("l", st.left_present), ("r", st.right_present)):
                pred = int(preds[f"{t}_{side}"][i]) if ok else -1
                row[f"pred_{t}_{side}"] = index.to_grade(pred) if t == "birads" else pred
        rows.append(row)
    return EvalResult(auc=aucs, f1=f1s, monitored=monitored_metric(aucs, task), rows=rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def save_model(path: Path | str, model: MultiViewModel, cfg: TrainConfig | None = None) -> None:
    config = {"model": model.cfg.to_dict()}
    if cfg is not None:
        config["train"] = cfg.to_dict()
    save_checkpoint(path, model.state_dict(), config)


def load_model(path: Path | str) -> tuple[MultiViewModel, dict]:
    tensors, config = load_checkpoint(path)
    mcfg = ModelConfig.from_dict(config["model"])
    dtype = next(iter(tensors.values())).dtype if tensors else np.float32
    model = MultiViewModel(mcfg, np.random.default_rng(0), dtype=dtype)
    model.load_state_dict(tensors)
    return model, config


def train(cfg: TrainConfig, studies: Sequence[FourViewStudy], out_dir: Path | str | None = None,
          log=None) -> tuple[MetricsReport, MultiViewModel]:
    """Deterministic given ``cfg.seed``: init, shuffling, augmentation and dropout are all seeded."""
    t0 = time.perf_counter()
    index = BiradsIndex(cfg.birads_classes)
    for s in studies:
        validate_study(s, cfg.birads_classes)
    train_set, val_set = patient_split(list(studies), cfg.val_fraction, seed=cfg.seed)
    if not train_set or not val_set:
        raise ConfigurationError(f"split left {len(train_set)} training and {len(val_set)} validation studies")
    weights = class_weights_for(train_set, index, cfg.task) if cfg.class_weighting else None
    model = MultiViewModel(cfg.model_config(), np.random.default_rng(cfg.seed), dtype=np.float32)
    model.train()
    params = list(model.named_parameters())
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr, cfg.plateau_factor, cfg.patience)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = MetricsReport()
    size = cfg.image_size
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_set[i] for i in order[start:start + cfg.batch_size]]
            x = make_batch(chunk, size, np.float32, seed=cfg.seed if cfg.augment else None, epoch=epoch)
            model.fusion.dropout.reseed([cfg.seed, epoch, b])
            model.zero_grad()
            result = model(Tensor(x))
            loss = model_loss(result.logits, targets_for(chunk, index), cfg.task, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}, batch {b}")
            loss.backward()
            clip_parameter_gradients([p for _, p in params], cfg.clip_norm)
            opt.lr = sched.lr
            opt.step()
            losses.append(value)
        ev = evaluate(model, val_set, index)
        row = {"epoch": epoch, "lr": sched.lr, "train_loss": float(np.mean(losses)),
               "auc_label": ev.auc.get("label"), "f1_label": ev.f1.get("label"),
               "auc_birads": ev.auc.get("birads"), "f1_birads": ev.f1.get("birads"), "monitored": ev.monitored}
        report.history.append(row)
        improved = ev.monitored is not None and (report.best_monitored is None
                                                 or ev.monitored > report.best_monitored)
        if improved:
            report.best_epoch, report.best_monitored, report.best_eval = epoch, ev.monitored, ev
            if out is not None:
                report.checkpoint = out / "best.vsmk"
                save_model(report.checkpoint, model, cfg)
        sched.step(ev.monitored)
        if log is not None:
            log(" ".join(f"{k}={_fmt(v)[:8]}" for k, v in row.items()))
        if cfg.target_auc is not None and all(
                (ev.auc.get(t) or 0.0) >= cfg.target_auc for t in active_tasks(cfg.task)):
            break
    if out is not None:
        write_csv(out / "metrics.csv", report.history, METRIC_COLUMNS)
        if report.best_eval is not None:
            rows = report.best_eval.rows
            write_csv(out / "attention.csv", rows, list(rows[0]) if rows else ["study_id"])
    report.seconds = time.perf_counter() - t0
    return report, model
