"""Exception types and shared input checks."""

import numpy as np
import torch


class DFBKError(Exception):
    """Base class for package errors."""


class ShapeError(DFBKError, ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ValidationError(DFBKError, ValueError):
    """Raised for out-of-range arguments or non-finite inputs."""


class EmbeddingFormatError(DFBKError, ValueError):
    """Raised when an embedding file is malformed."""


class IngestionError(DFBKError, ValueError):
    """Raised when a paired image directory cannot be ingested."""


class TrainingError(DFBKError, RuntimeError):
    """Raised when training diverges."""


class CheckpointError(DFBKError, RuntimeError):
    """Raised when a checkpoint does not match the requested configuration."""


def check_finite(x, name="input"):
    if isinstance(x, torch.Tensor):
        ok = bool(torch.isfinite(x).all())
    else:
        ok = bool(np.isfinite(np.asarray(x)).all())
    if not ok:
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_same_shape(a, b, names=("a", "b")):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(
            f"{names[0]} and {names[1]} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def check_timestep(t, num_timesteps):
    ts = torch.as_tensor(t)
    if ts.numel() == 0 or bool((ts < 1).any()) or bool((ts > num_timesteps).any()):
        raise ValidationError(f"timestep must lie in 1..{num_timesteps}, got {t!r}")


def check_image_batch(X, name="X"):
    """Coerce an image batch to float64 array of shape (n, C, H, W).

    Accepts (n, H, W) grayscale batches or (n, C, H, W). Values must be
    finite and spatial dims even.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ShapeError(f"{name} must have shape (n, H, W) or (n, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    if X.shape[-1] % 2 or X.shape[-2] % 2:
        raise ShapeError(f"{name} spatial dims must be even, got {X.shape[-2:]}")
    check_finite(X, name)
    return X
