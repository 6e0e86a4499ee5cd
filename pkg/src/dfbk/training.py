"""Training loop, checkpoints and batched translation."""

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch
import yaml

from ._validation import CheckpointError, TrainingError
from .backbone import Denoiser, ModelConfig
from .config import ExperimentConfig, dump_config, save_config
from .data import load_paired_dir, make_splits, split, stack_images
from .diffusion import forward_sample, loss_weight, translate
from .knowledge import EmbeddingProvider
from .metrics import evaluate_pairs

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dfbk-checkpoint-1"
MAX_NONFINITE_STEPS = 10


def cosine_lr(step, total, base, final):
    """Cosine decay from ``base`` at step 0 to ``final`` at ``total``."""
    progress = min(step / max(total, 1), 1.0)
    return final + 0.5 * (base - final) * (1.0 + math.cos(math.pi * progress))


def weighted_loss(model, x0, y0, context, t, noise, schedule, weight_mode="unit"):
    """``mean_b w_t ||f(x_t, y0, t, c) - x0||^2`` with per-pixel mean squares."""
    x_t = forward_sample(x0, y0, t, schedule, noise=noise)
    pred = model(x_t, y0, t, context)
    weights = torch.tensor(
        [loss_weight(int(s), schedule, weight_mode) for s in t], dtype=x0.dtype
    )
    per_sample = ((pred - x0) ** 2).flatten(1).mean(1)
    return (weights * per_sample).mean()


def parameter_gradients(model, x0, y0, context, t, noise, schedule, weight_mode="unit"):
    """Named gradients of :func:`weighted_loss` for every parameter."""
    model.zero_grad(set_to_none=True)
    loss = weighted_loss(model, x0, y0, context, t, noise, schedule, weight_mode)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()} at t={t.tolist()}")
    loss.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


def save_checkpoint(path, model, config, step, optimizer=None, generator=None, extra=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": dump_config(config),
        "step": step,
        "model": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if generator is not None:
        payload["generator"] = generator.get_state()
    if extra:
        payload.update(extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    payload["config"] = ExperimentConfig.from_dict(yaml.safe_load(payload["config"]))
    return payload


def load_model(path, expect=None):
    """Rebuild the denoiser stored in a checkpoint.

    ``expect`` is an optional :class:`ModelConfig`; a mismatch raises
    :class:`CheckpointError`.
    """
    payload = load_checkpoint(path)
    config = payload["config"]
    if expect is not None and expect.to_dict() != config.model.to_dict():
        raise CheckpointError(f"checkpoint {path} model config does not match the requested one")
    model = Denoiser(ModelConfig(**config.model.to_dict()))
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not fit its own config: {exc}") from exc
    model.eval()
    return model, config


def load_splits(config):
    if config.data_path:
        samples = load_paired_dir(config.data_path)
        return split(samples, config.seed, 1.0 - config.val_fraction)
    return make_splits(config.data)


def embeddings_for(samples, config):
    provider = EmbeddingProvider(
        config.knowledge.n_tokens, config.knowledge.dim, config.knowledge.files
    )
    return torch.from_numpy(provider.batch([s.prompt for s in samples]))


def translate_samples(model, samples, config, seed=None, batch_size=16):
    """Translate ``y0`` of every sample; returns an ``(n, C, H, W)`` array.

    Batches are processed in order from one generator seeded with
    ``seed`` (default: the config seed), so output is reproducible.
    """
    schedule = config.diffusion.schedule()
    generator = torch.Generator().manual_seed(config.seed if seed is None else seed)
    y0 = torch.from_numpy(stack_images(samples, "y0"))
    context = embeddings_for(samples, config)
    model.eval()
    outputs = []
    for start in range(0, len(samples), batch_size):
        sl = slice(start, start + batch_size)
        outputs.append(translate(y0[sl], model, context[sl], schedule, generator))
    return torch.cat(outputs).numpy()


def _latest_checkpoint(ckpt_dir):
    found = sorted(Path(ckpt_dir).glob("step_*.pt"))
    return found[-1] if found else None


class Trainer:
    """Runs the optimization described by an :class:`ExperimentConfig`.

    Every random draw during training (batch indices, timesteps, noise)
    comes from one generator whose state is checkpointed, so resuming
    continues the exact same trajectory.
    """

    def __init__(self, config, out_dir=None, train_set=None, val_set=None):
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.out_dir)
        self.schedule = config.diffusion.schedule()
        if train_set is None:
            train_set, val_set = load_splits(config)
        self.train_set, self.val_set = list(train_set), list(val_set or [])
        if not self.train_set:
            raise TrainingError("training split is empty")
        self.x0 = torch.from_numpy(stack_images(self.train_set, "x0"))
        self.y0 = torch.from_numpy(stack_images(self.train_set, "y0"))
        self.context = embeddings_for(self.train_set, config)

        torch.manual_seed(config.seed)
        self.model = Denoiser(ModelConfig(**config.model.to_dict()))
        opt = config.optim
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=opt.learning_rate, betas=tuple(opt.betas)
        )
        self.generator = torch.Generator().manual_seed(config.seed)
        self.step = 0
        self.nonfinite = 0

    @property
    def ckpt_dir(self):
        return self.out_dir / "checkpoints"

    @property
    def loss_log(self):
        return self.out_dir / "loss.csv"

    def _restore(self):
        path = _latest_checkpoint(self.ckpt_dir)
        if path is None:
            return False
        payload = load_checkpoint(path)
        if payload["config"].to_dict() != self.config.to_dict():
            raise CheckpointError(f"{path} was written with a different config")
        self.model.load_state_dict(payload["model"])
        self.optimizer.load_state_dict(payload["optimizer"])
        self.generator.set_state(payload["generator"])
        self.step = payload["step"]
        self.nonfinite = payload.get("nonfinite", 0)
        with open(self.loss_log, newline="") as fh:
            rows = [r for r in csv.reader(fh)]
        kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= self.step]
        with open(self.loss_log, "w", newline="") as fh:
            csv.writer(fh).writerows(kept)
        log.info("resumed from %s at step %d", path, self.step)
        return True

    def _checkpoint(self):
        save_checkpoint(
            self.ckpt_dir / f"step_{self.step:06d}.pt",
            self.model,
            self.config,
            self.step,
            self.optimizer,
            self.generator,
            {"nonfinite": self.nonfinite},
        )

    def train_step(self):
        opt = self.config.optim
        g = self.generator
        n = self.x0.shape[0]
        idx = torch.randint(n, (opt.batch_size,), generator=g)
        t = torch.randint(1, self.schedule.num_timesteps + 1, (opt.batch_size,), generator=g)
        x0, y0 = self.x0[idx], self.y0[idx]
        noise = torch.randn(x0.shape, generator=g)
        lr = cosine_lr(self.step, opt.steps, opt.learning_rate, opt.final_learning_rate)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = weighted_loss(
            self.model, x0, y0, self.context[idx], t, noise, self.schedule, opt.weight_mode
        )
        self.step += 1
        value = loss.item()
        if not math.isfinite(value):
            self.nonfinite += 1
            log.warning("non-finite loss at step %d (t=%s)", self.step, t.tolist())
            if self.nonfinite >= MAX_NONFINITE_STEPS:
                raise TrainingError(
                    f"loss was non-finite for {self.nonfinite} consecutive steps "
                    f"(last at step {self.step}, lr={lr:.3g}); try a lower learning rate"
                )
            return value, lr
        self.nonfinite = 0
        loss.backward()
        self.optimizer.step()
        return value, lr

    def train(self, on_step=None):
        """Optimize in memory up to ``optim.steps``; ``on_step(step, loss, lr)``
        is called after every step."""
        while self.step < self.config.optim.steps:
            loss, lr = self.train_step()
            if on_step is not None:
                on_step(self.step, loss, lr)
        return self.model

    def run(self, resume=False):
        """Train with on-disk loss log and checkpoints under ``out_dir``."""
        opt = self.config.optim
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.ckpt_dir.mkdir(exist_ok=True)
        save_config(self.config, self.out_dir / "config.yaml")
        if not (resume and self._restore()):
            with open(self.loss_log, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "loss", "lr"])
        with open(self.loss_log, "a", newline="") as fh:
            writer = csv.writer(fh)

            def on_step(step, loss, lr):
                writer.writerow([step, repr(loss), repr(lr)])
                if step % 100 == 0:
                    log.info("step %d loss %.5f lr %.3g", step, loss, lr)
                if opt.checkpoint_every and step % opt.checkpoint_every == 0:
                    fh.flush()
                    self._checkpoint()

            self.train(on_step)
        save_checkpoint(self.out_dir / "model.pt", self.model, self.config, self.step)
        if self.val_set:
            self.write_validation()
        return self.out_dir

    def write_validation(self):
        preds = translate_samples(self.model, self.val_set, self.config)
        truths = stack_images(self.val_set, "x0")
        report = evaluate_pairs([s.id for s in self.val_set], preds, truths)
        baseline = evaluate_pairs(
            [s.id for s in self.val_set], stack_images(self.val_set, "y0"), truths
        )
        summary = report.summary()
        summary["identity_psnr_mean"] = baseline.summary()["psnr_mean"]
        summary["identity_ssim_mean"] = baseline.summary()["ssim_mean"]
        with open(self.out_dir / "val_metrics.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary


def read_loss_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["loss"]) for r in rows]), np.array([float(r["lr"]) for r in rows])
