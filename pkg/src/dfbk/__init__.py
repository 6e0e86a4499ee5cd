"""Residual-shifting diffusion translator with wavelet-domain frequency
balancing and text-embedding knowledge guidance."""

from .backbone import Denoiser, ModelConfig
from .blocks import DFBBlock, KGBlock, dfbk_dispatch
from .config import ExperimentConfig, load_config
from .diffusion import DiffusionSchedule, make_schedule, translate
from .estimator import DFBKTranslator
from .metrics import psnr, ssim
from .wavelet import WaveletBands, dwt, iwt

__all__ = [
    "DFBBlock",
    "DFBKTranslator",
    "Denoiser",
    "DiffusionSchedule",
    "ExperimentConfig",
    "KGBlock",
    "ModelConfig",
    "WaveletBands",
    "dfbk_dispatch",
    "dwt",
    "iwt",
    "load_config",
    "make_schedule",
    "psnr",
    "ssim",
    "translate",
]

__version__ = "0.1.0"
