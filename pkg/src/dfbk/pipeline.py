"""Train / translate / evaluate / ablate workflows behind the CLI."""

import csv
import logging
import os
from pathlib import Path

from ._validation import IngestionError
from .data import export_paired_dir, load_paired_dir, load_png, save_png
from .metrics import diff_heatmap, evaluate_pairs
from .training import Trainer, load_model, load_splits, translate_samples

log = logging.getLogger(__name__)

ABLATION_ROWS = (
    ("None", "none", False, False),
    ("+DFB", "dfb", True, False),
    ("+KG", "kg", False, True),
    ("+DFB, KG", "dfb_kg", True, True),
)


def num_workers():
    """Evaluation worker cap from ``DFBK_NUM_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DFBK_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def cmd_train(config, resume=False):
    return Trainer(config).run(resume=resume)


def cmd_translate(checkpoint, out_dir, input_dir=None, seed=None, heatmaps=True):
    """Translate a paired directory, or the checkpoint config's validation split.

    Writes ``<id>_pred.png`` and ``manifest.csv`` under ``out_dir``. When no
    input directory is given the validation split is exported to
    ``out_dir/inputs`` so it can serve as the ground truth for evaluation.
    """
    model, config = load_model(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if input_dir is None:
        samples = load_splits(config)[1]
        export_paired_dir(samples, out_dir / "inputs")
    else:
        samples = load_paired_dir(input_dir, require_target=False)
    preds = translate_samples(model, samples, config, seed=seed)
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "pred_file", "heatmap_file"])
        for sample, pred in zip(samples, preds):
            name = f"{sample.id}_pred.png"
            save_png(out_dir / name, pred)
            heatmap = ""
            if heatmaps and sample.x0 is not None:
                heatmap = f"{sample.id}_heatmap.png"
                diff_heatmap(pred, sample.x0, out_dir / heatmap)
            writer.writerow([sample.id, name, heatmap])
    log.info("translated %d images into %s", len(samples), out_dir)
    return out_dir


def pair_prediction_files(pred_dir, truth_dir):
    """Match ``<id>_pred.png`` to ``<id>_tgt.png``; unpaired ids raise."""
    preds = {p.name[: -len("_pred.png")]: p for p in Path(pred_dir).glob("*_pred.png")}
    truths = {p.name[: -len("_tgt.png")]: p for p in Path(truth_dir).glob("*_tgt.png")}
    missing = sorted(preds.keys() ^ truths.keys())
    if missing:
        raise IngestionError(f"unpaired ids between {pred_dir} and {truth_dir}: {', '.join(missing)}")
    if not preds:
        raise IngestionError(f"no '<id>_pred.png' files in {pred_dir}")
    ids = sorted(preds)
    return ids, [preds[i] for i in ids], [truths[i] for i in ids]


def cmd_evaluate(pred_dir, truth_dir, out_dir=None):
    """Score predictions, writing ``metrics.csv`` and ``metrics.json``."""
    ids, pred_files, truth_files = pair_prediction_files(pred_dir, truth_dir)
    preds = [load_png(p) for p in pred_files]
    truths = [load_png(t) for t in truth_files]
    report = evaluate_pairs(ids, preds, truths, workers=num_workers())
    out_dir = Path(out_dir if out_dir is not None else pred_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "metrics.csv")
    report.write_json(out_dir / "metrics.json")
    return report


def format_table(rows):
    lines = ["| Method | PSNR | SSIM |", "|:--|--:|--:|"]
    lines += [f"| {name} | {p:.2f} | {s:.3f} |" for name, p, s in rows]
    return "\n".join(lines) + "\n"


def cmd_ablate(config, out_dir=None):
    """Train and score the none / +DFB / +KG / +DFB, KG variants.

    All runs share the seed and therefore the data split. Returns the rows
    ``(method, psnr_mean, ssim_mean)``; the table is written to
    ``ablation.md`` and ``ablation.csv``.
    """
    out_dir = Path(out_dir if out_dir is not None else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, name, use_dfb, use_kg in ABLATION_ROWS:
        run_dir = out_dir / name
        variant = config.with_flags(use_dfb=use_dfb, use_kg=use_kg, out_dir=run_dir)
        log.info("ablation run %s -> %s", label, run_dir)
        cmd_train(variant)
        pred_dir = cmd_translate(run_dir / "model.pt", run_dir / "translate", heatmaps=False)
        summary = cmd_evaluate(pred_dir, pred_dir / "inputs").summary()
        rows.append((label, summary["psnr_mean"], summary["ssim_mean"]))
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "psnr_db", "ssim"])
        writer.writerows([name, repr(p), repr(s)] for name, p, s in rows)
    (out_dir / "ablation.md").write_text(format_table(rows))
    return rows

