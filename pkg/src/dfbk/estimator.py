"""scikit-learn style wrapper: ``fit(source, target)``, ``predict(source)``."""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ShapeError, ValidationError, check_image_batch
from .backbone import ModelConfig
from .config import DiffusionConfig, ExperimentConfig, KnowledgeConfig, OptimConfig
from .data import DatasetSpec, PairedSample
from .knowledge import default_prompt
from .metrics import psnr
from .training import Trainer, translate_samples


class DFBKTranslator(BaseEstimator):
    """Paired image-to-image translator.

    ``X`` holds source-modality images and ``y`` the matching targets, both
    shaped ``(n, H, W)`` or ``(n, C, H, W)`` with values in ``[0, 1]``.
    Hyperparameters mirror :class:`~dfbk.config.ExperimentConfig`.

    Attributes
    ----------
    model_ : Denoiser
        Trained network.
    config_ : ExperimentConfig
        Configuration actually used for training.
    loss_curve_ : ndarray
        Training loss per step.
    """

    def __init__(
        self,
        base_channels=32,
        channel_multipliers=(1, 2, 4),
        num_res_blocks=2,
        head_dim=32,
        use_dfb=True,
        use_kg=True,
        T=4,
        eta1=0.04,
        etaT=0.9999,
        kappa=2.0,
        learning_rate=5e-5,
        final_learning_rate=2e-5,
        steps=2000,
        batch_size=8,
        weight_mode="unit",
        n_tokens=8,
        embed_dim=256,
        prompt=None,
        random_state=0,
    ):
        self.base_channels = base_channels
        self.channel_multipliers = channel_multipliers
        self.num_res_blocks = num_res_blocks
        self.head_dim = head_dim
        self.use_dfb = use_dfb
        self.use_kg = use_kg
        self.T = T
        self.eta1 = eta1
        self.etaT = etaT
        self.kappa = kappa
        self.learning_rate = learning_rate
        self.final_learning_rate = final_learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.weight_mode = weight_mode
        self.n_tokens = n_tokens
        self.embed_dim = embed_dim
        self.prompt = prompt
        self.random_state = random_state

    def _make_config(self, image_channels, image_size):
        return ExperimentConfig(
            seed=int(self.random_state),
            out_dir="",
            data=DatasetSpec(n_train=1, n_val=0, image_size=image_size),
            model=ModelConfig(
                image_channels=image_channels,
                base_channels=self.base_channels,
                channel_multipliers=list(self.channel_multipliers),
                num_res_blocks=self.num_res_blocks,
                head_dim=self.head_dim,
                use_dfb=self.use_dfb,
                use_kg=self.use_kg,
            ),
            diffusion=DiffusionConfig(self.T, self.eta1, self.etaT, self.kappa),
            optim=OptimConfig(
                learning_rate=self.learning_rate,
                final_learning_rate=self.final_learning_rate,
                steps=self.steps,
                batch_size=self.batch_size,
                checkpoint_every=0,
                weight_mode=self.weight_mode,
            ),
            knowledge=KnowledgeConfig(n_tokens=self.n_tokens, dim=self.embed_dim),
        )

    def _samples(self, X, y=None, prompts=None):
        if prompts is None:
            prompts = [self.prompt or default_prompt("source", "target")] * len(X)
        elif isinstance(prompts, str):
            prompts = [prompts] * len(X)
        if len(prompts) != len(X):
            raise ShapeError(f"got {len(prompts)} prompts for {len(X)} images")
        targets = y if y is not None else [None] * len(X)
        return [
            PairedSample(
                x0=None if tgt is None else tgt.astype(np.float32),
                y0=src.astype(np.float32),
                anatomy_mask=None,
                prompt=p,
                id=f"s{i:06d}",
            )
            for i, (src, tgt, p) in enumerate(zip(X, targets, prompts))
        ]

    def fit(self, X, y, prompts=None):
        X = check_image_batch(X, "X")
        y = check_image_batch(y, "y")
        if X.shape != y.shape:
            raise ShapeError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        if X.shape[-1] != X.shape[-2]:
            raise ShapeError("images must be square")
        config = self._make_config(X.shape[1], X.shape[-1])
        trainer = Trainer(config, train_set=self._samples(X, y, prompts))
        losses = []
        trainer.train(lambda step, loss, lr: losses.append(loss))
        self.model_ = trainer.model.eval()
        self.config_ = config
        self.loss_curve_ = np.asarray(losses)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.image_shape_ = X.shape[1:]
        return self

    def predict(self, X, prompts=None):
        check_is_fitted(self, "model_")
        squeeze = np.ndim(X) == 3
        X = check_image_batch(X, "X")
        if X.shape[1:] != self.image_shape_:
            raise ShapeError(f"expected images shaped {self.image_shape_}, got {X.shape[1:]}")
        with torch.no_grad():
            out = translate_samples(self.model_, self._samples(X, prompts=prompts), self.config_)
        return out[:, 0] if squeeze else out

    def score(self, X, y, prompts=None):
        """Mean PSNR (dB, capped at 100) of ``predict(X)`` against ``y``."""
        y = check_image_batch(y, "y")
        pred = check_image_batch(self.predict(X, prompts), "prediction")
        if pred.shape != y.shape:
            raise ValidationError(f"prediction {pred.shape} and y {y.shape} differ")
        return float(np.mean([min(psnr(p, t), 100.0) for p, t in zip(pred, y)]))
