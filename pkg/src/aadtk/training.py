"""Adam optimization, the training loop with early stopping, and the
subject-wise cross-validation harness for both tasks."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import model as mm
from . import tensor as tt
from .data import RecordingManifest, make_aad_samples, make_fold_splits, make_mmm_samples
from .model import ModelConfig, ModelParams
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int, what: str):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "early_stop_patience", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0     # 1-based; earliest epoch attaining the minimum val loss
    stop_reason: str = ""   # "early_stop" or "max_epochs"
    test_accuracy: Optional[float] = None
    wall_clock_s: float = 0.0

    def epochs_run(self) -> int:
        return len(self.train_loss)


def save_report(path, report: TrainReport) -> None:
    Path(path).write_text(json.dumps(asdict(report), indent=1))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: list
    v: list


def init_adam(tensors: Sequence[Tensor]) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(t.data) for t in tensors],
        v=[np.zeros_like(t.data) for t in tensors],
    )


def adam_step(
    tensors: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, cfg: TrainConfig
) -> None:
    """One in-place Adam update with bias correction."""
    if len(tensors) != len(grads) or len(tensors) != len(state.m):
        raise tt.ShapeError(
            f"param/grad/state counts differ: {len(tensors)}/{len(grads)}/{len(state.m)}"
        )
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for t, g, m, v in zip(tensors, grads, state.m, state.v):
        if g.shape != t.data.shape:
            raise tt.ShapeError(f"gradient shape {g.shape} != param shape {t.data.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        t.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


# ---------------------------------------------------------------------------
# sample stacking and batch evaluation


@dataclass
class SampleArrays:
    """A sample list stacked into dense batch-ready arrays."""

    eeg: np.ndarray  # (N, C, T) float32
    s1: np.ndarray   # (N, F, T)
    s2: np.ndarray   # (N, F, T)
    y: np.ndarray    # (N,) int64

    @property
    def n(self) -> int:
        return self.eeg.shape[0]


def stack_samples(samples) -> SampleArrays:
    if isinstance(samples, SampleArrays):
        return samples
    if not samples:
        raise ValueError("empty sample set")
    return SampleArrays(
        eeg=np.stack([s.eeg.data for s in samples]).astype(np.float32, copy=False),
        s1=np.stack([s.s1.data for s in samples]).astype(np.float32, copy=False),
        s2=np.stack([s.s2.data for s in samples]).astype(np.float32, copy=False),
        y=np.asarray([s.y for s in samples], dtype=np.int64),
    )


def _loss_and_accuracy(
    params: ModelParams, arrays: SampleArrays, batch_size: int
) -> tuple:
    tau = params.config.temperature
    loss_sum = 0.0
    correct = 0
    for a in range(0, arrays.n, batch_size):
        b = min(a + batch_size, arrays.n)
        scores = mm.stream_scores(
            Tensor(arrays.eeg[a:b]),
            [Tensor(arrays.s1[a:b]), Tensor(arrays.s2[a:b])],
            params,
        )
        loss_sum += mm.loss(scores, arrays.y[a:b], tau).item() * (b - a)
        yhat = np.where(scores.data[:, 0] >= scores.data[:, 1], 1, 2)
        correct += int((yhat == arrays.y[a:b]).sum())
    return loss_sum / arrays.n, correct / arrays.n


def evaluate(params: ModelParams, samples, batch_size: int = 128) -> float:
    """Fraction of samples whose predicted stream index equals the label."""
    arrays = stack_samples(samples)
    _, acc = _loss_and_accuracy(params, arrays, batch_size)
    return acc


# ---------------------------------------------------------------------------
# training loop


def train(
    params: ModelParams,
    train_samples,
    val_samples,
    cfg: TrainConfig,
    log_prefix: str = "",
) -> tuple:
    """Minibatch training with per-epoch seeded shuffles and early stopping
    on validation loss. Returns (best-checkpoint params, TrainReport).

    The last partial minibatch is kept. The checkpoint is the epoch with
    the lowest validation loss, ties to the earliest.
    """
    t0 = time.perf_counter()
    tr = stack_samples(train_samples)
    va = stack_samples(val_samples)
    tau = params.config.temperature
    tensors = params.tensors()
    state = init_adam(tensors)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    best = params.copy()
    best_val = np.inf
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(tr.n)
        loss_sum = 0.0
        for a in range(0, tr.n, cfg.batch_size):
            idx = perm[a : a + cfg.batch_size]
            tape = tt.Tape()
            scores = mm.stream_scores(
                Tensor(tr.eeg[idx]),
                [Tensor(tr.s1[idx]), Tensor(tr.s2[idx])],
                params,
                tape,
            )
            batch_loss = mm.loss(scores, tr.y[idx], tau, tape)
            lv = batch_loss.item()
            if not np.isfinite(lv):
                raise TrainingDiverged(epoch, "training loss")
            params.zero_grad()
            tt.backward(batch_loss, tape)
            adam_step(tensors, [t.grad for t in tensors], state, cfg)
            loss_sum += lv * idx.size
        train_loss = loss_sum / tr.n
        val_loss, val_acc = _loss_and_accuracy(params, va, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "validation loss")
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        log.info(
            "%sepoch %d: train %.4f, val %.4f, val acc %.3f",
            log_prefix, epoch, train_loss, val_loss, val_acc,
        )
        if val_loss < best_val:
            best_val = val_loss
            report.best_epoch = epoch
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.early_stop_patience:
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"
    report.wall_clock_s = time.perf_counter() - t0
    return best, report


# ---------------------------------------------------------------------------
# cross-validation harness


@dataclass
class FoldResult:
    fold_index: int
    accuracy: float
    report: TrainReport


@dataclass
class CrossValReport:
    task: str
    window_s: float
    fold_results: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (fold_index, message)

    @property
    def accuracies(self) -> list:
        return [r.accuracy for r in self.fold_results]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies)) if self.fold_results else float("nan")

    @property
    def sd_accuracy(self) -> float:
        # sample standard deviation, n-1 denominator
        if len(self.fold_results) < 2:
            return float("nan")
        return float(np.std(self.accuracies, ddof=1))


TASKS = ("aad", "mmm-att", "mmm-unatt")


def _build_samples(
    manifest: RecordingManifest, subjects, window_s: float, task: str, seed: int
):
    if task == "aad":
        return make_aad_samples(manifest, subjects, window_s, seed=seed)
    if task == "mmm-att":
        return make_mmm_samples(manifest, subjects, window_s, "attended", seed=seed)
    if task == "mmm-unatt":
        return make_mmm_samples(manifest, subjects, window_s, "unattended", seed=seed)
    raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")


def run_fold(
    manifest: RecordingManifest,
    fold,
    window_s: float,
    task: str,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
) -> tuple:
    """Train on one fold and test on its held-out subjects.
    Returns (best params, TrainReport with test_accuracy filled in)."""
    train_samples = _build_samples(manifest, fold.train_subjects, window_s, task, cfg.seed)
    val_samples = _build_samples(manifest, fold.val_subjects, window_s, task, cfg.seed)
    test_samples = _build_samples(manifest, fold.test_subjects, window_s, task, cfg.seed)
    params = mm.init_params(model_cfg, seed=[cfg.seed, fold.fold_index])
    best, report = train(params, train_samples, val_samples, cfg,
                         log_prefix=f"fold {fold.fold_index} ")
    report.test_accuracy = evaluate(best, test_samples, cfg.batch_size)
    return best, report


def cross_validate(
    manifest: RecordingManifest,
    window_s: float,
    task: str,
    cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    out_dir=None,
    on_fold: Optional[Callable] = None,
) -> CrossValReport:
    """Subject-wise 7-fold cross-validation of the chosen task.

    A failing fold is recorded and the run continues; callers decide how
    to surface partial failure. Accuracy is averaged over samples within
    a fold; mean and sd (n-1) are across folds.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    model_cfg = model_cfg or ModelConfig()
    folds = make_fold_splits(manifest.subjects(), cfg.seed)
    out = CrossValReport(task=task, window_s=window_s)
    for fold in folds:
        try:
            best, report = run_fold(manifest, fold, window_s, task, cfg, model_cfg)
        except Exception as e:  # noqa: BLE001 - per-fold isolation is the contract
            log.error("fold %d failed: %s", fold.fold_index, e)
            out.failures.append((fold.fold_index, str(e)))
            continue
        out.fold_results.append(FoldResult(fold.fold_index, report.test_accuracy, report))
        log.info("fold %d: test accuracy %.4f", fold.fold_index, report.test_accuracy)
        if out_dir is not None:
            fold_dir = Path(out_dir) / f"fold{fold.fold_index}"
            mm.save_params(fold_dir / "params", best)
            save_report(fold_dir / "report.json", report)
        if on_fold is not None:
            on_fold(fold, best, report)
    return out


def train_mmm(
    manifest: RecordingManifest,
    window_s: float,
    stream_type: str,
    cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    fold=None,
) -> tuple:
    """Train one match-mismatch model (attended or unattended stream) on a
    single fold; the two stream types share no parameters or state."""
    task = {"attended": "mmm-att", "unattended": "mmm-unatt"}.get(stream_type)
    if task is None:
        raise ValueError(f"stream_type must be 'attended' or 'unattended', got {stream_type!r}")
    model_cfg = model_cfg or ModelConfig()
    if fold is None:
        fold = make_fold_splits(manifest.subjects(), cfg.seed)[0]
    return run_fold(manifest, fold, window_s, task, cfg, model_cfg)


def write_crossval_csv(path, reports: Sequence[CrossValReport]) -> None:
    """One row per fold: task, window_s, fold, accuracy."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "window_s", "fold", "accuracy"])
        for rep in reports:
            for r in rep.fold_results:
                w.writerow([rep.task, rep.window_s, r.fold_index, f"{r.accuracy:.6f}"])
