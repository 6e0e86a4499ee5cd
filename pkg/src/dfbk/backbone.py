"""Residual encoder-decoder denoiser ``f(x_t, y0, t, c) -> x0``.

DFB blocks sit on encoder skip features before they are concatenated into
the decoder; KG sits at the bottleneck (optionally also after the deepest
decoder level). Frequency blocks are constructed after every backbone
layer so that enabling them never perturbs the backbone's random init.
"""

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ._validation import ShapeError, ValidationError, check_timestep
from .attention import SelfAttention
from .blocks import DFBBlock, KGBlock, from_tokens, to_tokens


@dataclass
class ModelConfig:
    image_channels: int = 1
    base_channels: int = 32
    channel_multipliers: list = field(default_factory=lambda: [1, 2, 4])
    num_res_blocks: int = 2
    head_dim: int = 32
    num_timesteps: int = 4
    context_dim: int = 256
    use_dfb: bool = True
    use_kg: bool = True
    dfb_levels: list = None
    kg_deepest_decoder: bool = False
    dfb_low: bool = True
    dfb_high: bool = True
    kg_low: bool = True
    kg_high: bool = True
    lambda_init: float = 0.8
    lambda_std: float = 0.1
    zero_init_blocks: bool = True
    bottleneck_attention: bool = True

    def __post_init__(self):
        self.channel_multipliers = list(self.channel_multipliers)
        if self.dfb_levels is None:
            self.dfb_levels = list(range(len(self.channel_multipliers)))
        self.dfb_levels = sorted(int(i) for i in self.dfb_levels)
        n = len(self.channel_multipliers)
        if n < 1 or any(m < 1 for m in self.channel_multipliers):
            raise ValidationError("channel_multipliers must be a nonempty list of positive ints")
        if any(not 0 <= i < n for i in self.dfb_levels):
            raise ValidationError(f"dfb_levels must index 0..{n - 1}")
        for mult in self.channel_multipliers:
            ch = self.base_channels * mult
            if ch % self.head_dim:
                raise ValidationError(
                    f"channels {ch} at some level are not a multiple of head_dim {self.head_dim}"
                )

    @property
    def level_channels(self):
        return [self.base_channels * m for m in self.channel_multipliers]

    @property
    def time_embed_dim(self):
        return 4 * self.base_channels

    def check_image_size(self, size):
        """Every DFB/KG site must be even and at least 4 pixels wide."""
        n = len(self.channel_multipliers)
        for level in range(n):
            s = size / 2**level
            if s != int(s) or int(s) % 2:
                raise ShapeError(f"image size {size} yields odd feature size at level {level}")
            if int(s) < 4 and (level in self.dfb_levels and self.use_dfb):
                raise ShapeError(f"DFB site at level {level} is smaller than 4 pixels")
        bottom = size // 2 ** (n - 1)
        if self.use_kg and bottom < 4:
            raise ShapeError(f"bottleneck size {bottom} is smaller than 4 pixels")

    def to_dict(self):
        return asdict(self)


def _groups(channels):
    # at least two channels per group, otherwise the norm cancels the
    # per-channel time-embedding shift and conditioning on t is lost
    for g in (8, 4, 2):
        if channels % g == 0 and channels // g >= 2:
            return g
    return 1


def timestep_embedding(t, dim, max_period=10000):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class GlobalAttention(nn.Module):
    """Pre-norm residual self-attention over all spatial positions."""

    def __init__(self, channels, head_dim):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.attn = SelfAttention(channels, head_dim)

    def forward(self, x):
        h, w = x.shape[-2:]
        return x + from_tokens(self.attn(to_tokens(self.norm(x))), h, w)


class Denoiser(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config if config is not None else ModelConfig()
        self.config = cfg
        base, emb_dim = cfg.base_channels, cfg.time_embed_dim
        chans = cfg.level_channels
        n_levels = len(chans)

        self.time_mlp = nn.Sequential(
            nn.Linear(base, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.conv_in = nn.Conv2d(2 * cfg.image_channels, base, 3, padding=1)

        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        ch = base
        for level, out_ch in enumerate(chans):
            blocks = nn.ModuleList()
            for _ in range(cfg.num_res_blocks):
                blocks.append(ResBlock(ch, out_ch, emb_dim))
                ch = out_ch
            self.down.append(blocks)
            if level < n_levels - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid1 = ResBlock(ch, ch, emb_dim)
        self.mid_attn = GlobalAttention(ch, cfg.head_dim) if cfg.bottleneck_attention else None
        self.mid2 = ResBlock(ch, ch, emb_dim)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for level in reversed(range(n_levels)):
            skip_ch = chans[level]
            blocks = nn.ModuleList()
            for i in range(cfg.num_res_blocks):
                blocks.append(ResBlock(ch + skip_ch if i == 0 else skip_ch, skip_ch, emb_dim))
                ch = skip_ch
            self.up.append(blocks)
            if level > 0:
                self.upsample.append(nn.Conv2d(ch, chans[level - 1], 3, padding=1))
                ch = chans[level - 1]

        self.norm_out = nn.GroupNorm(_groups(ch), ch)
        self.conv_out = nn.Conv2d(ch, cfg.image_channels, 3, padding=1)

        block_kw = dict(
            head_dim=cfg.head_dim,
            lambda_init=cfg.lambda_init,
            lambda_std=cfg.lambda_std,
            zero_init_out=cfg.zero_init_blocks,
        )
        self.dfb = nn.ModuleDict()
        if cfg.use_dfb:
            for level in cfg.dfb_levels:
                self.dfb[str(level)] = DFBBlock(
                    chans[level], use_low=cfg.dfb_low, use_high=cfg.dfb_high, **block_kw
                )
        self.kg = nn.ModuleDict()
        if cfg.use_kg:
            kg_kw = dict(use_low=cfg.kg_low, use_high=cfg.kg_high, **block_kw)
            self.kg["bottleneck"] = KGBlock(chans[-1], cfg.context_dim, **kg_kw)
            if cfg.kg_deepest_decoder:
                self.kg["decoder"] = KGBlock(chans[-1], cfg.context_dim, **kg_kw)

    def forward(self, x_t, y0, t, context=None):
        cfg = self.config
        if x_t.shape != y0.shape:
            raise ShapeError(f"x_t {tuple(x_t.shape)} and y0 {tuple(y0.shape)} differ")
        if x_t.dim() != 4 or x_t.shape[1] != cfg.image_channels:
            raise ShapeError(
                f"expected (B, {cfg.image_channels}, H, W) input, got {tuple(x_t.shape)}"
            )
        if x_t.shape[-1] != x_t.shape[-2]:
            raise ShapeError("only square images are supported")
        cfg.check_image_size(x_t.shape[-1])
        batch = x_t.shape[0]
        t = torch.as_tensor(t, device=x_t.device).reshape(-1)
        if t.numel() == 1:
            t = t.expand(batch)
        check_timestep(t, cfg.num_timesteps)
        if cfg.use_kg:
            if context is None:
                raise ValidationError("KG is enabled but no context embedding was given")
            context = torch.as_tensor(context, dtype=x_t.dtype, device=x_t.device)
            if context.dim() == 2:
                context = context.expand(batch, *context.shape)
            if context.shape[1] < 1:
                raise ValidationError("context embedding has no tokens")

        emb = self.time_mlp(timestep_embedding(t, cfg.base_channels).to(x_t.dtype))
        h = self.conv_in(torch.cat([x_t, y0], dim=1))
        skips = []
        for level, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, emb)
            skip = h
            if str(level) in self.dfb:
                skip = self.dfb[str(level)](skip)
            skips.append(skip)
            if level < len(self.downsample):
                h = self.downsample[level](h)

        h = self.mid1(h, emb)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        if "bottleneck" in self.kg:
            h = self.kg["bottleneck"](h, context)
        h = self.mid2(h, emb)

        for i, blocks in enumerate(self.up):
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, emb)
            if i == 0 and "decoder" in self.kg:
                h = self.kg["decoder"](h, context)
            if i < len(self.upsample):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsample[i](h)

        return self.conv_out(F.silu(self.norm_out(h)))
