import csv
import json
import math
import shutil

import numpy as np
import pytest
import torch
import yaml

from dfbk import training
from dfbk._validation import CheckpointError, TrainingError, ValidationError
from dfbk.cli import main
from dfbk.config import ExperimentConfig, dump_config, load_config
from dfbk.data import save_png
from dfbk.pipeline import cmd_evaluate, format_table, pair_prediction_files
from dfbk.training import Trainer, cosine_lr, load_checkpoint, read_loss_log


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 2000, 5e-5, 2e-5) == pytest.approx(5e-5)
    assert cosine_lr(1000, 2000, 5e-5, 2e-5) == pytest.approx(3.5e-5)
    assert cosine_lr(2000, 2000, 5e-5, 2e-5) == pytest.approx(2e-5)
    assert cosine_lr(5000, 2000, 5e-5, 2e-5) == pytest.approx(2e-5)


def test_config_round_trip_and_unknown_keys(small_config_file):
    cfg = load_config(small_config_file)
    assert cfg.model.context_dim == 16 and cfg.model.num_timesteps == 4
    again = ExperimentConfig.from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    with pytest.raises(ValidationError, match="optim.stepz"):
        ExperimentConfig.from_dict({"optim": {"stepz": 3}})
    with pytest.raises(ValidationError, match="colour"):
        ExperimentConfig.from_dict({"colour": 1})
    flagged = cfg.with_flags(use_dfb=False, seed=4)
    assert not flagged.model.use_dfb and flagged.model.use_kg and flagged.seed == 4


def test_train_writes_run_directory(small_config_file, tmp_path, capsys):
    assert main(["train", "--config", str(small_config_file)]) == 0
    run = tmp_path / "run"
    assert capsys.readouterr().out.strip() == str(run)
    assert load_config(run / "config.yaml") == load_config(small_config_file)
    losses, lrs = read_loss_log(run / "loss.csv")
    assert len(losses) == 6 and np.all(np.isfinite(losses))
    assert lrs[0] == pytest.approx(5e-5)
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == [
        "step_000003.pt", "step_000006.pt"
    ]
    assert load_checkpoint(run / "model.pt")["step"] == 6
    metrics = json.loads((run / "val_metrics.json").read_text())
    assert metrics["count"] == 4
    assert math.isfinite(metrics["psnr_mean"]) and math.isfinite(metrics["identity_psnr_mean"])


def test_flags_train_plain_backbone(small_config_file, tmp_path):
    out = tmp_path / "plain"
    assert main(["train", "--config", str(small_config_file), "--no-dfb", "--no-kg",
                 "--out", str(out)]) == 0
    state = load_checkpoint(out / "model.pt")["model"]
    assert not any(k.startswith(("dfb.", "kg.")) for k in state)
    assert not load_config(out / "config.yaml").model.use_kg


def test_resume_continues_identically(small_config_file, tmp_path):
    full, cut = tmp_path / "full", tmp_path / "cut"
    main(["train", "--config", str(small_config_file), "--out", str(full)])
    main(["train", "--config", str(small_config_file), "--out", str(cut)])
    # simulate a crash after the step-3 checkpoint
    (cut / "model.pt").unlink()
    (cut / "checkpoints" / "step_000006.pt").unlink()
    assert main(["train", "--config", str(small_config_file), "--out", str(cut), "--resume"]) == 0
    assert (cut / "loss.csv").read_bytes() == (full / "loss.csv").read_bytes()
    a, b = load_checkpoint(full / "model.pt"), load_checkpoint(cut / "model.pt")
    for name, value in a["model"].items():
        assert torch.equal(value, b["model"][name]), name


def test_resume_rejects_changed_config(small_config_file, tmp_path):
    out = tmp_path / "r"
    main(["train", "--config", str(small_config_file), "--out", str(out)])
    cfg = load_config(small_config_file).with_flags(out_dir=out)
    raw = cfg.to_dict()
    raw["optim"]["learning_rate"] = 1e-3
    with pytest.raises(CheckpointError):
        Trainer(ExperimentConfig.from_dict(raw)).run(resume=True)


def test_nonfinite_loss_aborts(small_config_file, monkeypatch):
    cfg = load_config(small_config_file)
    raw = cfg.to_dict()
    raw["optim"]["steps"] = 30
    trainer = Trainer(ExperimentConfig.from_dict(raw))

    def bad_loss(model, x0, *args, **kwargs):
        return model(x0, x0, 1, torch.zeros(x0.shape[0], 2, 16)).sum() * float("nan")

    monkeypatch.setattr(training, "weighted_loss", bad_loss)
    with pytest.raises(TrainingError, match="10 consecutive"):
        trainer.train()
    assert trainer.step == 10


def test_translate_and_evaluate(small_config_file, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--config", str(small_config_file)])
    out = tmp_path / "tr"
    assert main(["translate", "--checkpoint", str(run / "model.pt"), "--out", str(out)]) == 0
    with open(out / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    for row in rows:
        assert (out / row["pred_file"]).exists() and (out / row["heatmap_file"]).exists()
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(out), "--truth", str(out / "inputs")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["count"] == 4
    assert json.loads((out / "metrics.json").read_text()) == summary
    assert len((out / "metrics.csv").read_text().splitlines()) == 5

    # a directory without targets gets no heatmaps; with the same prompts
    # and seed its predictions match a translation of the full directory
    bare = tmp_path / "bare"
    bare.mkdir()
    for src in (out / "inputs").glob("*_src.png"):
        shutil.copy(src, bare / src.name)
    shutil.copy(out / "inputs" / "prompts.txt", bare / "prompts.txt")
    paired, unpaired = tmp_path / "tr2", tmp_path / "tr3"
    for src_dir, dst in ((out / "inputs", paired), (bare, unpaired)):
        assert main(["translate", "--checkpoint", str(run / "model.pt"), "--input", str(src_dir),
                     "--out", str(dst)]) == 0
    assert len(list(paired.glob("*_heatmap.png"))) == 4
    assert len(list(unpaired.glob("*_pred.png"))) == 4 and not list(unpaired.glob("*_heatmap.png"))
    for pred in unpaired.glob("*_pred.png"):
        assert pred.read_bytes() == (paired / pred.name).read_bytes()


def test_evaluate_unpaired_exits_nonzero(tmp_path, capsys):
    pred, truth = tmp_path / "p", tmp_path / "t"
    pred.mkdir()
    truth.mkdir()
    save_png(pred / "a_pred.png", np.zeros((16, 16)))
    save_png(truth / "a_tgt.png", np.zeros((16, 16)))
    save_png(truth / "b_tgt.png", np.zeros((16, 16)))
    assert main(["evaluate", "--pred", str(pred), "--truth", str(truth)]) == 2
    assert "b" in capsys.readouterr().err


def test_self_evaluation(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        img = rng.random((16, 16))
        save_png(tmp_path / f"s{i}_pred.png", img)
        save_png(tmp_path / f"s{i}_tgt.png", img)
    report = cmd_evaluate(tmp_path, tmp_path)
    assert report.count == 3
    assert all(p == math.inf for p in report.psnr) and all(s == 1.0 for s in report.ssim)
    assert report.summary()["psnr_mean"] == 100.0
    ids, _, _ = pair_prediction_files(tmp_path, tmp_path)
    assert ids == ["s0", "s1", "s2"]


def test_missing_checkpoint_is_reported(tmp_path, capsys):
    assert main(["translate", "--checkpoint", str(tmp_path / "nope.pt")]) == 2
    assert "cannot read checkpoint" in capsys.readouterr().err


def test_format_table():
    table = format_table([("None", 20.0, 0.5), ("+DFB, KG", 21.234, 0.6789)])
    assert table.splitlines()[3] == "| +DFB, KG | 21.23 | 0.679 |"


def test_ablate_cli(small_config_file, tmp_path, capsys):
    assert main(["ablate", "--config", str(small_config_file)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("|")[1].strip() for line in lines[2:]] == ["None", "+DFB", "+KG", "+DFB, KG"]
    with open(tmp_path / "run" / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(math.isfinite(float(r["psnr_db"])) and math.isfinite(float(r["ssim"])) for r in rows)
