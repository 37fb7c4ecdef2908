"""Command-line entry point: generate, train, transfer, evaluate, sweep.

One JSON experiment config drives everything; CLI flags override config
fields, the effective config is echoed into the output directory, and
all randomness comes from seeds stored in the config, so a rerun with
the same config reproduces every output byte for byte.

Bus references in configs (grid fault buses, measured buses) use the
bus *names* from the network file, matching one-line-diagram numbering;
indices are internal.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from gridfault import dataset as dsmod
from gridfault import evalreport as evmod
from gridfault import training as trmod
from gridfault.grid import NetworkGraph, resolve_network
from gridfault.nn.model import (
    ARCHITECTURES,
    ModelSpec,
    build_model,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)

BUNDLED_CONFIGS = ("potsdam-desk", "potsdam-full", "ieee123-desk", "ieee123-full")

DEFAULT_CONFIG = {
    "network": "potsdam13",
    "grid": {
        "categories": list(dsmod.FAULT_CATEGORIES),
        "resistances": [0.1, 1.0, 10.0],
        "buses": [],  # names; empty = every bus in the network
        "load_scenarios": 10,
        "load_changes": 700,
    },
    "dataset": {
        "window": 20,
        "selection": "fault_spanning",
        "measured_buses": "network-default",  # names, "all", or "network-default"
        "snr_db": None,
        "seed": 11,
        "split": {"train_fault": 3432, "test_fault": 858,
                  "train_nf": 560, "test_nf": 140},
        "split_seed": 3,
    },
    "model": {"arch": "rgcn", "cell": "lstm", "pooling": "mean", "seed": 1},
    "train": {
        "task": "event",
        "epochs": 120,
        "batch_size": 250,
        "lr": 0.01,
        "lr_drop_epoch": 120,
        "lr_after_drop": 0.001,
        "dropout": 0.1,
        "seed": 7,
    },
    "transfer": {
        "trigger_accuracy": 0.95,
        "targets": ["type", "phase", "location"],
        "head_epochs": 50,
        "fine_tune_epochs": 50,
        "fine_tune_lr": 0.001,
    },
    "out": "runs/out",
    "threads": 1,
}


class CliError(RuntimeError):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(spec: str) -> dict:
    """Read a config by bundled preset name or file path, over defaults."""
    if spec in BUNDLED_CONFIGS:
        text = (resources.files("gridfault") / "configs" / f"{spec}.json").read_text()
    else:
        p = Path(spec)
        if not p.exists():
            raise CliError(f"config {spec!r} is neither a file nor one of {BUNDLED_CONFIGS}")
        text = p.read_text()
    return _deep_merge(DEFAULT_CONFIG, json.loads(text))


def _bus_indices(network: NetworkGraph, names) -> tuple[int, ...]:
    return tuple(network.bus_index(str(n)) for n in names)


def _measured(network: NetworkGraph, value) -> tuple[int, ...] | None:
    if value in (None, "all"):
        return None
    if value == "network-default":
        return network.measured_buses or None
    return _bus_indices(network, value)


def _grid(network: NetworkGraph, cfg: dict) -> dsmod.ScenarioGrid:
    g = cfg["grid"]
    buses = g["buses"] or [b.name for b in network.buses]
    return dsmod.ScenarioGrid(
        categories=tuple(g["categories"]),
        resistances=tuple(float(r) for r in g["resistances"]),
        buses=_bus_indices(network, buses),
        n_load_scenarios=int(g["load_scenarios"]),
        n_load_changes=int(g["load_changes"]),
    )


def _dataset_options(network: NetworkGraph, cfg: dict) -> dsmod.DatasetOptions:
    d = cfg["dataset"]
    return dsmod.DatasetOptions(
        window=int(d["window"]),
        selection=d["selection"],
        measured=_measured(network, d["measured_buses"]),
        snr_db=None if d["snr_db"] in (None, "inf") else float(d["snr_db"]),
        seed=int(d["seed"]),
    )


def _model_spec(network: NetworkGraph, cfg: dict, heads=None) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec(
        arch=m["arch"],
        n_buses=network.n_buses,
        heads=tuple(heads) if heads else ("event", "type", "phase", "location"),
        window=int(cfg["dataset"]["window"]),
        cell=m.get("cell", "lstm"),
        pooling=m.get("pooling", "mean"),
    )


def _train_config(cfg: dict, task: str | None = None) -> trmod.TrainConfig:
    t = dict(cfg["train"])
    task = task or t["task"]
    # task-specific overrides (tasks differ in usable learning rates)
    t = _deep_merge(t, t.get("per_task", {}).get(task, {}))
    return trmod.TrainConfig(
        task=task,
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        lr=float(t["lr"]),
        lr_drop_epoch=int(t["lr_drop_epoch"]),
        lr_after_drop=float(t["lr_after_drop"]),
        dropout=float(t["dropout"]),
        seed=int(t["seed"]),
    )


def _transfer_plan(cfg: dict) -> trmod.TransferPlan:
    t = cfg["transfer"]
    return trmod.TransferPlan(
        trigger_accuracy=float(t["trigger_accuracy"]),
        fine_tune_lr=float(t["fine_tune_lr"]),
        targets=tuple(t["targets"]),
        head_epochs=int(t["head_epochs"]),
        fine_tune_epochs=int(t["fine_tune_epochs"]),
    )


def _echo_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n"
    )


def _dataset_paths(out: Path) -> tuple[Path, Path]:
    return out / "train.gfds", out / "test.gfds"


def cmd_generate(cfg: dict) -> int:
    network = resolve_network(cfg["network"])
    grid = _grid(network, cfg)
    opts = _dataset_options(network, cfg)
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    full = dsmod.build_dataset(network, grid, opts, threads=int(cfg["threads"]))
    sp = cfg["dataset"]["split"]
    train_set, test_set = dsmod.split(
        full, int(sp["train_fault"]), int(sp["test_fault"]),
        int(sp["train_nf"]), int(sp["test_nf"]),
        seed=int(cfg["dataset"]["split_seed"]),
    )
    train_path, test_path = _dataset_paths(out)
    dsmod.save(train_set, train_path)
    dsmod.save(test_set, test_path)
    print(f"generated {len(full)} samples "
          f"({grid.n_fault_cases} fault cases, {grid.n_load_changes} load changes)")
    for name, d in (("train", train_set), ("test", test_set)):
        counts = d.class_counts()
        per_type = " ".join(f"{k}={counts[k]}" for k in dsmod.TYPE_NAMES)
        print(f"{name}: {len(d)} samples ({counts['fault']} fault / "
              f"{counts['non_fault']} non-fault; {per_type})")
    return 0


def _load_datasets(cfg: dict) -> tuple[dsmod.Dataset, dsmod.Dataset]:
    train_path, test_path = _dataset_paths(Path(cfg["out"]))
    if not train_path.exists() or not test_path.exists():
        raise CliError(f"dataset files missing under {cfg['out']!r}; run generate first")
    return dsmod.load(train_path), dsmod.load(test_path)


def _ckpt_path(out: Path, task: str, arch: str, stage: str = "") -> Path:
    suffix = f"_{stage}" if stage else ""
    return out / f"{task}_{arch}{suffix}.gfck"


def cmd_train(cfg: dict) -> int:
    network = resolve_network(cfg["network"])
    train_set, test_set = _load_datasets(cfg)
    task = cfg["train"]["task"]
    spec = _model_spec(network, cfg, heads=(task,))
    model = build_model(spec, adjacency=train_set.adjacency,
                        seed=int(cfg["model"]["seed"]))
    tcfg = _train_config(cfg, task)
    history = trmod.train(model, train_set, tcfg, eval_dataset=test_set)
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    arch = spec.arch
    save_checkpoint(model, _ckpt_path(out, task, arch))
    (out / f"history_{task}_{arch}.csv").write_text(trmod.history_to_csv(history))
    final = history[-1]
    print(f"trained {arch} {task}: train acc {final['accuracy']:.4f}, "
          f"test acc {final['eval_accuracy']:.4f}")
    return 0


def cmd_transfer(cfg: dict) -> int:
    network = resolve_network(cfg["network"])
    train_set, test_set = _load_datasets(cfg)
    arch = cfg["model"]["arch"]
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    src_path = _ckpt_path(out, "event", arch)
    if not src_path.exists():
        raise CliError(f"source checkpoint {src_path} missing; train the event task first")
    source = load_checkpoint(src_path, adjacency=train_set.adjacency)
    plan = _transfer_plan(cfg)
    src_trunk = {n: p.value.copy() for n, p in source.trunk_parameters().items()}
    for task in plan.targets:
        tcfg = _train_config(cfg, task)
        model, history = trmod.transfer(source, plan, task, train_set, tcfg)
        for name, p in model.trunk_parameters().items():
            if not np.array_equal(p.value, src_trunk[name]):
                raise CliError(f"frozen trunk drifted in {name}; transfer is broken")
        heads_path = _ckpt_path(out, task, arch, "heads")
        save_checkpoint(model, heads_path)
        (out / f"history_{task}_{arch}_heads.csv").write_text(
            trmod.history_to_csv(history))
        acc_frozen = trmod.dataset_accuracy(model, test_set, task)
        ft_history = trmod.fine_tune(model, train_set, replace(tcfg, task=task),
                                     lr=plan.fine_tune_lr,
                                     epochs=plan.fine_tune_epochs)
        save_checkpoint(model, _ckpt_path(out, task, arch, "finetuned"))
        if ft_history:
            (out / f"history_{task}_{arch}_finetuned.csv").write_text(
                trmod.history_to_csv(ft_history))
        acc_ft = trmod.dataset_accuracy(model, test_set, task)
        print(f"transferred {task}: trunk frozen+verified, "
              f"test acc heads {acc_frozen:.4f} -> fine-tuned {acc_ft:.4f}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    network = resolve_network(cfg["network"])
    _, test_set = _load_datasets(cfg)
    arch = cfg["model"]["arch"]
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    system = network.name
    written = []
    for task in ("event", "type", "phase", "location"):
        path = _ckpt_path(out, task, arch, "finetuned")
        if not path.exists():
            path = _ckpt_path(out, task, arch)
        if not path.exists():
            continue
        model = load_checkpoint(path, adjacency=test_set.adjacency)
        report = evmod.evaluate(model, test_set, task)
        written += evmod.write_report(report, system, arch, out)
        print(f"{task}: accuracy {report.accuracy_value:.4f}"
              + (f", AUC {report.roc.auc:.5f}" if report.roc else ""))
    if not written:
        raise CliError(f"no checkpoints found under {out}")
    return 0


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise CliError("sweep must look like snr=inf,30,25,20 or measured=1+5+9 or batch=50,250")
    axis, _, raw = text.partition("=")
    axis = axis.strip()
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if axis == "snr":
        values = [float("inf") if p in ("inf", "none") else float(p) for p in parts]
    elif axis == "measured":
        values = [tuple(q.strip() for q in p.split("+")) for p in parts]
    elif axis == "batch":
        values = [int(p) for p in parts]
    else:
        raise CliError(f"unknown sweep axis {axis!r}")
    return axis, values


def cmd_sweep(cfg: dict, sweep_arg: str, tasks: tuple[str, ...]) -> int:
    network = resolve_network(cfg["network"])
    axis, values = _parse_sweep(sweep_arg)
    if axis == "measured":
        values = [_bus_indices(network, v) for v in values]
    grid = _grid(network, cfg)
    opts = _dataset_options(network, cfg)
    sp = cfg["dataset"]["split"]
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    rows = evmod.robustness_sweep(
        network, grid, opts,
        {k: int(v) for k, v in sp.items()},
        int(cfg["dataset"]["split_seed"]),
        _model_spec(network, cfg),
        _train_config(cfg),
        axis, values, tasks=tasks,
        model_seed=int(cfg["model"]["seed"]),
        threads=int(cfg["threads"]),
    )
    csv_path = out / f"sweep_{axis}.csv"
    csv_path.write_text(evmod.sweep_rows_to_csv(rows))
    for r in rows:
        extra = f" ({r['seconds']:.1f}s)" if "seconds" in r else ""
        print(f"{axis}={r['value']} {r['task']}: accuracy {r['accuracy']:.4f}{extra}")
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridfault",
        description="Synthetic fault diagnostics on distribution feeders: "
                    "dataset generation, graph-network training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default="potsdam-desk",
                       help=f"config file or preset name {BUNDLED_CONFIGS}")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="training seed override")
        p.add_argument("--threads", type=int, help="worker threads for generation")

    g = sub.add_parser("generate", help="build and save train/test datasets")
    common(g)
    g.add_argument("--snr", help="noise SNR in dB, or inf")
    g.add_argument("--measured", help="comma-separated measured bus names, or all")

    t = sub.add_parser("train", help="train one task from saved datasets")
    common(t)
    t.add_argument("--arch", choices=ARCHITECTURES, help="architecture override")
    t.add_argument("--task", choices=("event", "type", "phase", "location"))
    t.add_argument("--epochs", type=int)

    x = sub.add_parser("transfer", help="transfer the event trunk to other tasks")
    common(x)
    x.add_argument("--arch", choices=ARCHITECTURES)

    e = sub.add_parser("evaluate", help="write report files for all checkpoints")
    common(e)
    e.add_argument("--arch", choices=ARCHITECTURES)

    s = sub.add_parser("sweep", help="retrain/evaluate across one robustness axis")
    common(s)
    s.add_argument("--sweep", required=True,
                   help="axis=values, e.g. snr=inf,30,25,20 or measured=1+5+9 or batch=50,250")
    s.add_argument("--arch", choices=ARCHITECTURES)
    s.add_argument("--tasks", default="event",
                   help="comma-separated tasks to sweep (default event)")
    return parser


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if getattr(args, "arch", None):
        cfg["model"]["arch"] = args.arch
    if getattr(args, "task", None):
        cfg["train"]["task"] = args.task
    if getattr(args, "epochs", None):
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "snr", None):
        cfg["dataset"]["snr_db"] = None if args.snr == "inf" else float(args.snr)
    if getattr(args, "measured", None):
        cfg["dataset"]["measured_buses"] = (
            "all" if args.measured == "all" else args.measured.split(",")
        )
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "transfer":
            return cmd_transfer(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "sweep":
            tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
            return cmd_sweep(cfg, args.sweep, tasks)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
