"""Losses, Adam, the training loop, and the transfer/fine-tune workflow.

Heads emit logits; both losses run in fused logit form for stability.
Training is deterministic given (seed, dataset, config): one generator
seeded from the config drives epoch shuffling and dropout in a fixed
order, and gradients accumulate in a fixed layer order.

Transfer copies a trained trunk into a fresh model, freezes it, and
trains new head layers only; fine-tuning then unfreezes everything and
continues at a small constant learning rate with fresh optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gridfault.dataset import Dataset, LOC_INVALID, PHASE_INVALID
from gridfault.nn.layers import RunCtx
from gridfault.nn.model import Model, ModelSpec, build_model
from gridfault.nn.param import Parameter


@dataclass(frozen=True)
class TrainConfig:
    task: str
    epochs: int
    batch_size: int = 250
    lr: float = 0.01
    lr_drop_epoch: int = 120
    lr_after_drop: float = 0.001
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr <= 0 or self.lr_after_drop <= 0:
            raise ValueError("learning rates must be positive")


@dataclass(frozen=True)
class TransferPlan:
    source_task: str = "event"
    trigger_accuracy: float = 0.95
    fine_tune_lr: float = 0.001
    targets: tuple[str, ...] = ("type", "phase", "location")
    head_epochs: int = 50
    fine_tune_epochs: int = 50

    def __post_init__(self):
        if not 0.0 < self.trigger_accuracy <= 1.0:
            raise ValueError("trigger accuracy must be in (0, 1]")


class TransferError(RuntimeError):
    pass


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: initial lr until the drop epoch, then the small one."""
    return cfg.lr if epoch < cfg.lr_drop_epoch else cfg.lr_after_drop


# --- losses -----------------------------------------------------------------

def binary_cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    """Plain-probability BCE, mean over the batch."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Stable BCE on logits; returns (mean loss, dloss/dz)."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(loss.mean()), (sig - y) / z.size


def categorical_cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Plain-probability multi-class CE, mean over rows."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    return float(np.mean(-(onehot * np.log(probs)).sum(axis=-1)))


def softmax_ce_with_logits(
    logits: np.ndarray, classes: np.ndarray
) -> tuple[float, np.ndarray]:
    """Fused softmax + CE on integer class labels; gradient is p - onehot.

    Rows whose label is negative are treated as invalid and excluded
    from the mean; a batch with no valid rows is an error.
    """
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes)
    valid = classes >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("batch contains no valid labels for this task")
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(len(classes))
    picked = np.where(valid, z[rows, np.where(valid, classes, 0)], 0.0)
    loss = float(((lse - picked) * valid).sum() / n_valid)
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    grad = probs
    grad[rows[valid], classes[valid]] -= 1.0
    grad[~valid] = 0.0
    return loss, grad / n_valid


# --- optimizer ----------------------------------------------------------------

class Adam:
    """Bias-corrected Adam; frozen parameters are skipped entirely."""

    def __init__(self, params: dict[str, Parameter],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.frozen:
                continue
            g = p.grad
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / (1.0 - b1 ** self.t)
            vhat = self.v[name] / (1.0 - b2 ** self.t)
            p.value = p.value - lr * mhat / (np.sqrt(vhat) + self.eps)


# --- task plumbing -------------------------------------------------------------

def task_labels(dataset: Dataset, task: str) -> np.ndarray:
    """Integer labels for a task; -1 marks samples where it is undefined."""
    if task == "event":
        return dataset.y_event.astype(np.int64)
    if task == "type":
        return dataset.y_type.astype(np.int64)
    if task == "phase":
        y = dataset.y_phase.astype(np.int64)
        return np.where(y == PHASE_INVALID, -1, y)
    if task == "location":
        y = dataset.y_loc.astype(np.int64)
        return np.where(y == LOC_INVALID, -1, y)
    raise ValueError(f"unknown task {task!r}")


def task_subset(dataset: Dataset, task: str) -> Dataset:
    """Samples with a defined label for the task (all, for event/type)."""
    labels = task_labels(dataset, task)
    return dataset.subset(np.flatnonzero(labels >= 0))


def predict_scores(model: Model, dataset: Dataset, task: str,
                   batch_size: int = 512) -> np.ndarray:
    """Full-pass inference scores: sigmoid probs (event) or softmax rows."""
    outs = []
    x = dataset.features
    for i in range(0, len(dataset), batch_size):
        logits, _ = model.forward(x[i : i + batch_size].astype(np.float64), task)
        if task == "event":
            outs.append(0.5 * (1.0 + np.tanh(0.5 * logits)))
        else:
            z = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(z)
            outs.append(e / e.sum(axis=-1, keepdims=True))
    return np.concatenate(outs, axis=0)


def predicted_classes(scores: np.ndarray) -> np.ndarray:
    if scores.ndim == 1:
        return (scores >= 0.5).astype(np.int64)
    return scores.argmax(axis=-1)


def dataset_accuracy(model: Model, dataset: Dataset, task: str) -> float:
    sub = task_subset(dataset, task)
    if len(sub) == 0:
        raise ValueError(f"dataset has no labelled samples for task {task!r}")
    pred = predicted_classes(predict_scores(model, sub, task))
    return float((pred == task_labels(sub, task)).mean())


# --- training loop --------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "lr", "loss", "accuracy", "eval_accuracy")


def history_to_csv(history: list[dict]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        vals = []
        for c in HISTORY_COLUMNS:
            v = row.get(c)
            vals.append("" if v is None else (f"{v}" if isinstance(v, int) else f"{v:.12g}"))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          eval_dataset: Dataset | None = None) -> list[dict]:
    """Minibatch training with seeded shuffling and the step lr schedule.

    Returns per-epoch history rows (epoch, lr, loss, accuracy and, when
    an eval dataset is given, its accuracy after the epoch).
    """
    sub = task_subset(dataset, cfg.task)
    n = len(sub)
    if n == 0:
        raise ValueError(f"empty dataset for task {cfg.task!r}")
    labels = task_labels(sub, cfg.task)
    feats = sub.features
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 29]))
    adam = Adam(model.parameters())
    history = []
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        perm = rng.permutation(n)
        ctx = RunCtx(training=True, rng=rng, dropout_rate=cfg.dropout)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x = feats[idx].astype(np.float64)
            y = labels[idx]
            logits, tape = model.forward(x, cfg.task, ctx)
            if cfg.task == "event":
                loss, dlogits = bce_with_logits(logits, y.astype(np.float64))
                correct += int(((logits >= 0.0).astype(np.int64) == y).sum())
            else:
                loss, dlogits = softmax_ce_with_logits(logits, y)
                correct += int((logits.argmax(axis=-1) == y).sum())
            loss_sum += loss * len(idx)
            model.zero_grad()
            model.backward(dlogits, tape)
            adam.step(lr)
        row = {
            "epoch": epoch,
            "lr": lr,
            "loss": loss_sum / n,
            "accuracy": correct / n,
            "eval_accuracy": (
                dataset_accuracy(model, eval_dataset, cfg.task)
                if eval_dataset is not None else None
            ),
        }
        history.append(row)
    return history


def transfer(source: Model, plan: TransferPlan, target_task: str,
             dataset: Dataset, cfg: TrainConfig) -> tuple[Model, list[dict]]:
    """Clone the source trunk (frozen) under a fresh head and train the head.

    The source must have reached the plan's trigger accuracy on its own
    training set; transferring an undertrained trunk is refused.
    """
    source_acc = dataset_accuracy(source, dataset, plan.source_task)
    if source_acc < plan.trigger_accuracy:
        raise TransferError(
            f"source {plan.source_task} accuracy {source_acc:.4f} is below "
            f"the transfer trigger {plan.trigger_accuracy:.2f}"
        )
    spec = replace(source.spec, heads=(target_task,))
    model = build_model(spec, adjacency=source.adjacency,
                        seed=derive_head_seed(cfg.seed, target_task))
    src_trunk = source.trunk_parameters()
    for name, p in model.trunk_parameters().items():
        p.value = src_trunk[name].value.copy()
        p.frozen = True
    head_cfg = replace(cfg, task=target_task, epochs=plan.head_epochs)
    history = train(model, dataset, head_cfg)
    return model, history


def derive_head_seed(seed: int, task: str) -> int:
    return seed * 31 + {"event": 1, "type": 2, "phase": 3, "location": 4}[task]


def fine_tune(model: Model, dataset: Dataset, cfg: TrainConfig,
              lr: float = 0.001, epochs: int | None = None) -> list[dict]:
    """Unfreeze everything and train all layers at one small constant lr."""
    model.unfreeze_all()
    ft_cfg = replace(
        cfg,
        lr=lr,
        lr_after_drop=lr,
        epochs=cfg.epochs if epochs is None else epochs,
    )
    if ft_cfg.epochs == 0:
        return []
    return train(model, dataset, ft_cfg)
