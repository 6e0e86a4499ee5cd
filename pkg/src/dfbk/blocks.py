"""Dynamic Frequency Balance (DFB) and Knowledge Guidance (KG) blocks.

Both blocks split a feature map with the Haar transform, attend over the
low band and the channel-stacked high bands separately, and add the
inverse-transformed result back onto the input. Output projections start
at zero, so a freshly built block is an exact identity.
"""

import torch
from torch import nn

from ._validation import ShapeError
from .attention import CrossAttention, DiffCrossAttention, DiffSelfAttention, SelfAttention
from .wavelet import concat_high, dwt, iwt, split_high


def to_tokens(z):
    """``(B, C, H, W)`` -> ``(B, H*W, C)`` with row-major positions."""
    b, c, h, w = z.shape
    return z.reshape(b, c, h * w).transpose(1, 2)


def from_tokens(tokens, h, w):
    b, n, c = tokens.shape
    return tokens.transpose(1, 2).reshape(b, c, h, w)


def _check_feature(z, channels):
    if z.dim() != 4:
        raise ShapeError(f"feature map must be (B, C, H, W), got {tuple(z.shape)}")
    if z.shape[1] != channels:
        raise ShapeError(f"feature has {z.shape[1]} channels, block expects {channels}")


class _FrequencyBlock(nn.Module):
    def __init__(self, channels, use_low, use_high, norm, residual):
        super().__init__()
        self.channels = channels
        self.use_low = use_low
        self.use_high = use_high
        self.residual = residual
        self.norm_low = nn.LayerNorm(channels) if norm else nn.Identity()
        self.norm_high = nn.LayerNorm(3 * channels) if norm else nn.Identity()

    def _recombine(self, z, ll, low, high):
        h, w = ll.shape[-2:]
        zeros = torch.zeros_like(ll)
        low = from_tokens(low, h, w) if low is not None else zeros
        high = split_high(from_tokens(high, h, w)) if high is not None else (zeros,) * 3
        update = iwt((low, *high))
        return z + update if self.residual else update


class DFBBlock(_FrequencyBlock):
    """Self-attention on the low band, differential attention on the high bands."""

    def __init__(
        self,
        channels,
        head_dim=32,
        lambda_init=0.8,
        lambda_std=0.1,
        norm=True,
        zero_init_out=True,
        use_low=True,
        use_high=True,
        residual=True,
    ):
        super().__init__(channels, use_low, use_high, norm, residual)
        self.low_attn = SelfAttention(channels, head_dim, zero_init_out=zero_init_out)
        self.high_attn = DiffSelfAttention(
            3 * channels, head_dim, lambda_init, lambda_std, zero_init_out=zero_init_out
        )

    def forward(self, z):
        _check_feature(z, self.channels)
        bands = dwt(z)
        low = high = None
        if self.use_low:
            low = self.low_attn(self.norm_low(to_tokens(bands.ll)))
        if self.use_high:
            high = self.high_attn(self.norm_high(to_tokens(concat_high(bands))))
        return self._recombine(z, bands.ll, low, high)


class KGBlock(_FrequencyBlock):
    """Cross-attention from the low band and differential cross-attention
    from the high bands into a text-embedding context ``(B, L, D)``."""

    def __init__(
        self,
        channels,
        context_dim,
        head_dim=32,
        lambda_init=0.8,
        lambda_std=0.1,
        norm=True,
        zero_init_out=True,
        use_low=True,
        use_high=True,
        residual=True,
    ):
        super().__init__(channels, use_low, use_high, norm, residual)
        self.context_dim = context_dim
        self.low_cross = CrossAttention(channels, context_dim, head_dim, zero_init_out=zero_init_out)
        self.high_cross = DiffCrossAttention(
            3 * channels, context_dim, head_dim, lambda_init, lambda_std, zero_init_out=zero_init_out
        )

    def forward(self, z, context):
        _check_feature(z, self.channels)
        bands = dwt(z)
        low = high = None
        if self.use_low:
            low = self.low_cross(self.norm_low(to_tokens(bands.ll)), context)
        if self.use_high:
            high = self.high_cross(self.norm_high(to_tokens(concat_high(bands))), context)
        return self._recombine(z, bands.ll, low, high)


def dfbk_dispatch(z, context, dfb_block=None, kg_block=None, use_dfb=True, use_kg=True):
    """Return ``(z_s, z_k)``: the DFB and KG recombination features.

    A disabled branch passes ``z`` through unchanged; with both flags off
    this is the identity pair ``(z, z)``.
    """
    z_s = dfb_block(z) if use_dfb else z
    z_k = kg_block(z, context) if use_kg else z
    return z_s, z_k
