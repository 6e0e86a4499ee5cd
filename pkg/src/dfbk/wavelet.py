"""Single-level orthonormal 2D Haar transform.

Tensors are channel-first, ``(..., C, H, W)``; the transform acts on the
last two axes. With ``a, b`` the top row and ``c, d`` the bottom row of a
2x2 block::

    ll = (a + b + c + d) / 2      lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2      hh = (a - b - c + d) / 2

``lh`` is low-pass along x and high-pass along y (vertical detail), ``hl``
the reverse. The coefficient matrix is symmetric and orthogonal, so the
inverse uses the same sums.
"""

from typing import NamedTuple

import torch

from ._validation import ShapeError, check_finite


class WaveletBands(NamedTuple):
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def dwt(z):
    z = torch.as_tensor(z)
    if z.dim() < 2:
        raise ShapeError(f"dwt needs at least 2 dims, got shape {tuple(z.shape)}")
    h, w = z.shape[-2:]
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"dwt needs even spatial dims >= 2, got {h}x{w}")
    check_finite(z, "dwt input")
    a = z[..., 0::2, 0::2]
    b = z[..., 0::2, 1::2]
    c = z[..., 1::2, 0::2]
    d = z[..., 1::2, 1::2]
    return WaveletBands(
        (a + b + c + d) / 2,
        (a + b - c - d) / 2,
        (a - b + c - d) / 2,
        (a - b - c + d) / 2,
    )


def iwt(bands):
    ll, lh, hl, hh = (torch.as_tensor(x) for x in bands)
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError(
            "wavelet bands must share a shape, got "
            f"{[tuple(x.shape) for x in (ll, lh, hl, hh)]}"
        )
    h, w = ll.shape[-2:]
    a = (ll + lh + hl + hh) / 2
    b = (ll + lh - hl - hh) / 2
    c = (ll - lh + hl - hh) / 2
    d = (ll - lh - hl + hh) / 2
    top = torch.stack([a, b], dim=-1)
    bottom = torch.stack([c, d], dim=-1)
    return torch.stack([top, bottom], dim=-3).reshape(ll.shape[:-2] + (2 * h, 2 * w))


def concat_high(bands):
    """Stack the three detail bands along channels as ``[lh | hl | hh]``."""
    _, lh, hl, hh = bands
    if not (lh.shape == hl.shape == hh.shape):
        raise ShapeError("high bands must share a shape")
    return torch.cat([lh, hl, hh], dim=-3)


def split_high(z_high):
    channels = z_high.shape[-3]
    if channels % 3:
        raise ShapeError(f"channel count {channels} is not divisible by 3")
    return tuple(torch.chunk(z_high, 3, dim=-3))
