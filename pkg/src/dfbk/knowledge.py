"""Text-embedding provider for knowledge guidance.

Embeddings are ``(L, D)`` float32 arrays with unit-norm rows. They come
either from a deterministic prompt-seeded generator or from a binary file
written by an external text encoder.

File layout (little-endian)::

    b"DFBKEMB1" | uint32 L | uint32 D | L*D float32, row-major
"""

import hashlib
import struct
import warnings
from pathlib import Path

import numpy as np

from ._validation import EmbeddingFormatError, ShapeError, ValidationError

MAGIC = b"DFBKEMB1"
HEADER = struct.Struct("<8sII")
NORM_TOL = 1e-6
DEFAULT_TOKENS = 8
DEFAULT_DIM = 256
PROMPT_TEMPLATE = "translate {source} brain slice to {target}"


def default_prompt(source, target):
    return PROMPT_TEMPLATE.format(source=source, target=target)


def _row_seed(prompt, row):
    digest = hashlib.blake2b(f"{prompt}\x00{row}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _unit_rows(values):
    norms = np.linalg.norm(values.astype(np.float64), axis=1, keepdims=True)
    return (values / norms).astype(np.float32)


def synthetic_embedding(prompt, n_tokens=DEFAULT_TOKENS, dim=DEFAULT_DIM):
    """Deterministic stand-in for a text encoder.

    Row ``i`` is a standard-normal draw from a PCG64 stream seeded with a
    64-bit BLAKE2b hash of ``(prompt, i)``, then scaled to unit length.
    """
    if not isinstance(prompt, str) or not prompt:
        raise ValidationError("prompt must be a nonempty string")
    if n_tokens < 1 or dim < 1:
        raise ValidationError(f"need n_tokens, dim >= 1, got {n_tokens}, {dim}")
    rows = [
        np.random.Generator(np.random.PCG64(_row_seed(prompt, i))).standard_normal(dim)
        for i in range(n_tokens)
    ]
    return _unit_rows(np.stack(rows))


def validate_embedding(values, n_tokens=None, dim=None):
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ShapeError(f"embedding must be a nonempty (L, D) matrix, got {values.shape}")
    if n_tokens is not None and values.shape[0] != n_tokens:
        raise ShapeError(f"expected {n_tokens} tokens, got {values.shape[0]}")
    if dim is not None and values.shape[1] != dim:
        raise ShapeError(f"expected embedding dim {dim}, got {values.shape[1]}")
    if not np.isfinite(values).all():
        raise ValidationError("embedding contains non-finite values")
    return values


def save_embeddings(path, values):
    values = validate_embedding(values)
    data = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, *data.shape))
        fh.write(data.tobytes())


def load_embeddings(path):
    """Read an embedding file; rows that are not unit-norm are rescaled."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise EmbeddingFormatError(
            f"{path}: file truncated at byte {len(raw)} inside the {HEADER.size}-byte header"
        )
    magic, n_tokens, dim = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if n_tokens < 1 or dim < 1:
        raise EmbeddingFormatError(f"{path}: empty shape ({n_tokens}, {dim}) at byte offset 8")
    expected = HEADER.size + 4 * n_tokens * dim
    if len(raw) < expected:
        raise EmbeddingFormatError(
            f"{path}: file truncated at byte offset {len(raw)}, expected {expected} bytes"
        )
    if len(raw) > expected:
        raise EmbeddingFormatError(f"{path}: trailing data after byte offset {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(n_tokens, dim)
    values = values.astype(np.float32)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        raise EmbeddingFormatError(
            f"{path}: non-finite value in row {row} at byte offset {HEADER.size + 4 * row * dim}"
        )
    norms = np.linalg.norm(values.astype(np.float64), axis=1)
    if (norms == 0).any():
        row = int(np.argmax(norms == 0))
        raise EmbeddingFormatError(
            f"{path}: zero row {row} at byte offset {HEADER.size + 4 * row * dim}"
        )
    if np.abs(norms - 1.0).max() > NORM_TOL:
        warnings.warn(f"{path}: renormalizing embedding rows to unit length", stacklevel=2)
        values = _unit_rows(values)
    return values


class EmbeddingProvider:
    """Maps prompts to context matrices, from files when registered else synthetic."""

    def __init__(self, n_tokens=DEFAULT_TOKENS, dim=DEFAULT_DIM, files=None):
        self.n_tokens = n_tokens
        self.dim = dim
        self.files = dict(files or {})
        self._cache = {}

    def __call__(self, prompt):
        if prompt not in self._cache:
            if prompt in self.files:
                values = load_embeddings(self.files[prompt])
                validate_embedding(values, self.n_tokens, self.dim)
            else:
                values = synthetic_embedding(prompt, self.n_tokens, self.dim)
            self._cache[prompt] = values
        return self._cache[prompt]

    def batch(self, prompts):
        return np.stack([self(p) for p in prompts])
