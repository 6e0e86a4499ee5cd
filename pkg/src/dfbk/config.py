"""Experiment configuration, read from and written to YAML."""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ._validation import ValidationError
from .backbone import ModelConfig
from .data import DatasetSpec
from .diffusion import make_schedule


@dataclass
class DiffusionConfig:
    T: int = 4
    eta1: float = 0.04
    etaT: float = 0.9999
    kappa: float = 2.0

    def schedule(self):
        return make_schedule(self.T, self.eta1, self.etaT, self.kappa)


@dataclass
class OptimConfig:
    learning_rate: float = 5e-5
    final_learning_rate: float = 2e-5
    steps: int = 2000
    batch_size: int = 8
    checkpoint_every: int = 500
    weight_mode: str = "unit"
    betas: list = field(default_factory=lambda: [0.9, 0.999])


@dataclass
class KnowledgeConfig:
    n_tokens: int = 8
    dim: int = 256
    # prompt -> embedding file; prompts not listed use the synthetic provider
    files: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/dfbk"
    data: DatasetSpec = field(default_factory=DatasetSpec)
    # paired PNG directory; overrides the phantom generator when set
    data_path: str = None
    val_fraction: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)

    def __post_init__(self):
        self.model.num_timesteps = self.diffusion.T
        self.model.context_dim = self.knowledge.dim
        if self.optim.steps < 1 or self.optim.batch_size < 1:
            raise ValidationError("optim.steps and optim.batch_size must be positive")
        self.model.check_image_size(self.data.image_size)
        self.diffusion.schedule()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw or {})
        nested = {
            "data": DatasetSpec,
            "model": ModelConfig,
            "diffusion": DiffusionConfig,
            "optim": OptimConfig,
            "knowledge": KnowledgeConfig,
        }
        _reject_unknown(cls, raw, "")
        kwargs = {}
        for key, value in raw.items():
            if key in nested:
                _reject_unknown(nested[key], value or {}, f"{key}.")
                kwargs[key] = nested[key](**(value or {}))
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def with_flags(self, use_dfb=None, use_kg=None, seed=None, out_dir=None):
        raw = self.to_dict()
        if use_dfb is not None:
            raw["model"]["use_dfb"] = use_dfb
        if use_kg is not None:
            raw["model"]["use_kg"] = use_kg
        if seed is not None:
            raw["seed"] = seed
        if out_dir is not None:
            raw["out_dir"] = str(out_dir)
        return ExperimentConfig.from_dict(raw)


def _reject_unknown(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ValidationError(f"config section {prefix.rstrip('.') or 'root'} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def save_config(config, path):
    Path(path).write_text(dump_config(config))
