"""Accuracy, confusion matrices, ROC/AUC, report files, robustness sweeps.

Reports serialize to JSON (metrics, confusion counts, per-class margins)
plus CSV for curve points and sweep tables; given the same checkpoint
and dataset files the bytes are identical run to run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gridfault import dataset as dsmod
from gridfault import training as trmod
from gridfault.dataset import Dataset, DatasetOptions, ScenarioGrid, TYPE_NAMES
from gridfault.grid import NetworkGraph
from gridfault.nn.model import Model, ModelSpec, build_model

EVENT_CLASS_NAMES = ("NF", "Fault")
PHASE_CLASS_NAMES = ("A/AB", "B/BC", "C/CA")


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches; argmax rows or 0.5-thresholded scores."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or labels.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if predictions.ndim == 2:
        pred = predictions.argmax(axis=-1)
    elif np.issubdtype(predictions.dtype, np.floating):
        pred = (predictions >= 0.5).astype(np.int64)
    else:
        pred = predictions
    if pred.shape != labels.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {labels.shape}")
    return float((pred == labels).mean())


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with true classes on rows, predictions on columns."""

    counts: np.ndarray  # (C, C) int64
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def recall(self) -> list[float | None]:
        """Per-class TPR; None for classes absent from the evaluated set."""
        out = []
        for i in range(len(self.class_names)):
            row = self.counts[i].sum()
            out.append(float(self.counts[i, i] / row) if row else None)
        return out

    def precision(self) -> list[float | None]:
        out = []
        for j in range(len(self.class_names)):
            col = self.counts[:, j].sum()
            out.append(float(self.counts[j, j] / col) if col else None)
        return out

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "counts": self.counts.tolist(),
            "recall": self.recall(),
            "precision": self.precision(),
        }


def confusion(pred_classes, labels, class_names) -> ConfusionMatrix:
    pred = np.asarray(pred_classes, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    c = len(class_names)
    if pred.max(initial=0) >= c or true.max(initial=0) >= c:
        raise ValueError(f"class index outside the {c} given names")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts, tuple(class_names))


@dataclass(frozen=True)
class ROCResult:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> ROCResult:
    """ROC curve over grouped score thresholds; AUC by trapezoid rule.

    Equal scores collapse into one threshold so ties contribute half, and
    the curve runs from (0,0) to (1,1).  Both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # group equal scores
    boundaries = np.flatnonzero(np.diff(s)) + 1
    tp_cum = np.cumsum(y == 1)
    fp_cum = np.cumsum(y == 0)
    idx = np.append(boundaries - 1, len(s) - 1)
    thresholds = s[idx]
    tpr = np.concatenate([[0.0], tp_cum[idx] / n_pos])
    fpr = np.concatenate([[0.0], fp_cum[idx] / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return ROCResult(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def roc_to_csv(roc: ROCResult) -> str:
    lines = ["threshold,fpr,tpr"]
    lines.append(f",{0.0:.12g},{0.0:.12g}")
    for t, f, r in zip(roc.thresholds, roc.fpr[1:], roc.tpr[1:]):
        lines.append(f"{t:.12g},{f:.12g},{r:.12g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Report:
    task: str
    accuracy_value: float
    n_samples: int
    confusion_matrix: ConfusionMatrix
    roc: ROCResult | None = None

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "accuracy": self.accuracy_value,
            "n_samples": self.n_samples,
            "confusion": self.confusion_matrix.to_dict(),
        }
        if self.roc is not None:
            d["auc"] = self.roc.auc
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def task_class_names(task: str, n_buses: int) -> tuple[str, ...]:
    if task == "event":
        return EVENT_CLASS_NAMES
    if task == "type":
        return TYPE_NAMES
    if task == "phase":
        return PHASE_CLASS_NAMES
    return tuple(str(i + 1) for i in range(n_buses))


def evaluate(model: Model, dataset: Dataset, task: str) -> Report:
    """Deterministic full-pass evaluation of one task (dropout off)."""
    sub = trmod.task_subset(dataset, task)
    if len(sub) == 0:
        raise ValueError(f"dataset carries no labels for task {task!r}")
    labels = trmod.task_labels(sub, task)
    scores = trmod.predict_scores(model, sub, task)
    pred = trmod.predicted_classes(scores)
    names = task_class_names(task, dataset.n_buses)
    cm = confusion(pred, labels, names)
    roc = roc_auc(scores, labels) if task == "event" else None
    return Report(
        task=task,
        accuracy_value=accuracy(pred, labels),
        n_samples=len(sub),
        confusion_matrix=cm,
        roc=roc,
    )


def report_filename(system: str, task: str, arch: str) -> str:
    return f"report_{system}_{task}_{arch}.json"


def write_report(report: Report, system: str, arch: str, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    jpath = out_dir / report_filename(system, report.task, arch)
    jpath.write_text(report.to_json())
    paths.append(jpath)
    if report.roc is not None:
        cpath = out_dir / f"roc_{system}_{report.task}_{arch}.csv"
        cpath.write_text(roc_to_csv(report.roc))
        paths.append(cpath)
    return paths


# --- robustness sweeps -------------------------------------------------------

def sweep_rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return "\n"
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if isinstance(v, float):
                cells.append(f"{v:.12g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def robustness_sweep(
    network: NetworkGraph,
    grid: ScenarioGrid,
    base_opts: DatasetOptions,
    split_counts: dict[str, int],
    split_seed: int,
    spec: ModelSpec,
    train_cfg: "trmod.TrainConfig",
    axis: str,
    values: list,
    tasks: tuple[str, ...] = ("event",),
    model_seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Retrain and evaluate per axis value; returns one row per (value, task).

    Axes: ``snr`` (noise level in dB, inf for clean) and ``measured``
    (tuple of 0-based measured bus indices) regenerate the dataset and
    retrain from scratch, mirroring noise injection before training and
    testing; ``batch`` retrains on the base dataset at each batch size
    and reports wall-clock seconds relative to the first value.
    """
    import math as _math
    import time as _time

    rows: list[dict] = []
    base_seconds: float | None = None
    for value in values:
        opts = base_opts
        label = value
        if axis == "snr":
            snr = None if value in (None, "inf") or (
                isinstance(value, float) and _math.isinf(value)) else float(value)
            opts = replace(base_opts, snr_db=snr)
            label = "inf" if snr is None else snr
        elif axis == "measured":
            opts = replace(base_opts, measured=tuple(value))
            label = "+".join(str(b + 1) for b in value)
        elif axis == "batch":
            pass
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")

        full = dsmod.build_dataset(network, grid, opts, threads=threads)
        train_set, test_set = dsmod.split(
            full,
            split_counts["train_fault"], split_counts["test_fault"],
            split_counts["train_nf"], split_counts["test_nf"],
            seed=split_seed,
        )
        cfg = train_cfg if axis != "batch" else replace(train_cfg, batch_size=int(value))
        for task in tasks:
            model = build_model(replace(spec, heads=(task,)),
                                adjacency=full.adjacency, seed=model_seed)
            t0 = _time.perf_counter()
            trmod.train(model, train_set, replace(cfg, task=task))
            seconds = _time.perf_counter() - t0
            acc = trmod.dataset_accuracy(model, test_set, task)
            row = {"axis": axis, "value": label, "task": task, "accuracy": acc}
            if axis == "batch":
                if base_seconds is None:
                    base_seconds = seconds
                row["seconds"] = seconds
                row["relative_time"] = seconds / base_seconds
            rows.append(row)
    return rows
