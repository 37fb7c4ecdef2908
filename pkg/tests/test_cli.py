import json
from pathlib import Path

import pytest

from gridfault import cli


def tiny_config(tmp_path, **overrides):
    """Small-but-real experiment config that runs in seconds."""
    cfg = {
        "network": "potsdam13",
        "grid": {
            "categories": ["AG", "BC", "ABCG"],
            "resistances": [0.1, 10.0],
            "buses": ["2", "7", "11"],
            "load_scenarios": 2,
            "load_changes": 8,
        },
        "dataset": {
            "seed": 5,
            "split": {"train_fault": 26, "test_fault": 8, "train_nf": 5, "test_nf": 3},
            "split_seed": 1,
        },
        "model": {"arch": "rgcn", "seed": 3},
        "train": {"task": "event", "epochs": 3, "batch_size": 16, "lr": 0.001,
                  "lr_drop_epoch": 99, "seed": 2},
        "transfer": {"trigger_accuracy": 0.5, "targets": ["type"],
                     "head_epochs": 2, "fine_tune_epochs": 2},
        "out": str(tmp_path / "run"),
    }
    for key, value in overrides.items():
        cfg[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_help_exits_zero():
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0


def test_unknown_arch_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--arch", "transformer"])
    assert e.value.code == 2


def test_missing_config_is_runtime_error(capsys):
    rc = cli.main(["generate", "--config", "/definitely/not/here.json"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_generate_writes_datasets_and_counts(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "12 fault cases" not in out  # 3 cats * 2 R * 3 buses * 2 scen = 36
    assert "36 fault cases" in out
    run = tmp_path / "run"
    assert (run / "train.gfds").exists()
    assert (run / "test.gfds").exists()
    assert (run / "effective_config.json").exists()


def test_generate_is_byte_reproducible(tmp_path):
    cfg = tiny_config(tmp_path)
    cli.main(["generate", "--config", str(cfg)])
    first = (tmp_path / "run" / "train.gfds").read_bytes()
    cli.main(["generate", "--config", str(cfg)])
    assert (tmp_path / "run" / "train.gfds").read_bytes() == first


def test_train_transfer_evaluate_pipeline(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    assert cli.main(["train", "--config", str(cfg)]) == 0
    run = tmp_path / "run"
    assert (run / "event_rgcn.gfck").exists()
    history = (run / "history_event_rgcn.csv").read_text().splitlines()
    assert history[0] == "epoch,lr,loss,accuracy,eval_accuracy"
    assert len(history) == 1 + 3  # header + epochs

    assert cli.main(["transfer", "--config", str(cfg)]) == 0
    assert (run / "type_rgcn_heads.gfck").exists()
    assert (run / "type_rgcn_finetuned.gfck").exists()

    assert cli.main(["evaluate", "--config", str(cfg)]) == 0
    assert (run / "report_potsdam13_event_rgcn.json").exists()
    assert (run / "report_potsdam13_type_rgcn.json").exists()
    assert (run / "roc_potsdam13_event_rgcn.csv").exists()


def test_train_without_datasets_fails_cleanly(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    rc = cli.main(["train", "--config", str(cfg)])
    assert rc == 1
    assert "generate" in capsys.readouterr().err


def test_transfer_requires_source_checkpoint(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    cli.main(["generate", "--config", str(cfg)])
    rc = cli.main(["transfer", "--config", str(cfg)])
    assert rc == 1
    assert "event" in capsys.readouterr().err


def test_sweep_batch_axis_writes_table(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cli.main(["sweep", "--config", str(cfg), "--sweep", "batch=8,16"]) == 0
    table = (tmp_path / "run" / "sweep_batch.csv").read_text().splitlines()
    assert table[0] == "axis,value,task,accuracy,seconds,relative_time"
    assert len(table) == 3


def test_sweep_snr_axis(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cli.main(["sweep", "--config", str(cfg), "--sweep", "snr=inf,20"]) == 0
    rows = (tmp_path / "run" / "sweep_snr.csv").read_text().splitlines()
    assert rows[1].startswith("snr,inf,event,")
    assert rows[2].startswith("snr,20,event,")


def test_measured_override_changes_dataset(tmp_path):
    cfg = tiny_config(tmp_path)
    cli.main(["generate", "--config", str(cfg)])
    base = (tmp_path / "run" / "train.gfds").read_bytes()
    cli.main(["generate", "--config", str(cfg), "--measured", "1,5,9"])
    masked = (tmp_path / "run" / "train.gfds").read_bytes()
    assert base != masked


def test_bundled_presets_load():
    for name in cli.BUNDLED_CONFIGS:
        cfg = cli.load_config(name)
        assert cfg["network"] in ("potsdam13", "ieee123-main46")
        assert cfg["dataset"]["split"]["train_fault"] > 0
