"""Softmax and differential attention kernels over token sequences.

Tokens are ``(B, N, dim)``. Each module splits ``dim`` into heads of width
``head_dim``; a differential module shares one scalar lambda across its
heads.
"""

import math

import torch
from torch import nn

from ._validation import ShapeError, ValidationError

LAMBDA_EXP_CLAMP = 20.0


def lambda_value(lambda_q1, lambda_k1, lambda_q2, lambda_k2, lambda_init=0.8):
    """Reparameterized differential weight ``exp(q1.k1) - exp(q2.k2) + init``.

    Dot products are clamped to +-20 before exponentiation.
    """
    shapes = {tuple(v.shape) for v in (lambda_q1, lambda_k1, lambda_q2, lambda_k2)}
    if len(shapes) != 1:
        raise ShapeError(f"lambda vectors must share a length, got {sorted(shapes)}")
    dot1 = torch.clamp((lambda_q1 * lambda_k1).sum(-1), -LAMBDA_EXP_CLAMP, LAMBDA_EXP_CLAMP)
    dot2 = torch.clamp((lambda_q2 * lambda_k2).sum(-1), -LAMBDA_EXP_CLAMP, LAMBDA_EXP_CLAMP)
    return torch.exp(dot1) - torch.exp(dot2) + lambda_init


class LambdaParams(nn.Module):
    """Learnable vectors behind the differential weight.

    ``init_std=0`` starts exactly at ``lambda_init`` but is a stationary point
    of the reparameterization, so training uses a small random init.
    """

    def __init__(self, head_dim, lambda_init=0.8, init_std=0.1):
        super().__init__()
        self.lambda_init = float(lambda_init)
        self.lambda_q1 = nn.Parameter(torch.randn(head_dim) * init_std)
        self.lambda_k1 = nn.Parameter(torch.randn(head_dim) * init_std)
        self.lambda_q2 = nn.Parameter(torch.randn(head_dim) * init_std)
        self.lambda_k2 = nn.Parameter(torch.randn(head_dim) * init_std)

    def forward(self):
        return lambda_value(
            self.lambda_q1, self.lambda_k1, self.lambda_q2, self.lambda_k2, self.lambda_init
        )

    def extra_repr(self):
        return f"head_dim={self.lambda_q1.numel()}, lambda_init={self.lambda_init}"


def attention_weights(q, k):
    """Row-stochastic map ``softmax(q k^T / sqrt(d))`` over the last two axes."""
    d = q.shape[-1]
    return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)


def _split_heads(x, num_heads):
    b, n, dim = x.shape
    return x.reshape(b, n, num_heads, dim // num_heads).transpose(1, 2)


def _merge_heads(x):
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def _check_tokens(x, dim, name="tokens"):
    if x.dim() != 3:
        raise ShapeError(f"{name} must be (batch, length, dim), got {tuple(x.shape)}")
    if x.shape[1] == 0:
        raise ValidationError(f"{name} sequence is empty")
    if x.shape[-1] != dim:
        raise ShapeError(f"{name} dim {x.shape[-1]} does not match configured {dim}")


class _AttentionBase(nn.Module):
    def __init__(self, dim, head_dim, zero_init_out):
        super().__init__()
        if dim < 1 or head_dim < 1 or dim % head_dim:
            raise ShapeError(f"dim {dim} is not a positive multiple of head_dim {head_dim}")
        self.dim = dim
        self.head_dim = head_dim
        self.num_heads = dim // head_dim
        self.out = nn.Linear(dim, dim)
        if zero_init_out:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def extra_repr(self):
        return f"dim={self.dim}, num_heads={self.num_heads}, head_dim={self.head_dim}"


class SelfAttention(_AttentionBase):
    def __init__(self, dim, head_dim=32, zero_init_out=False):
        super().__init__(dim, head_dim, zero_init_out)
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)

    def forward(self, x, return_weights=False):
        _check_tokens(x, self.dim)
        h = self.num_heads
        attn = attention_weights(_split_heads(self.q(x), h), _split_heads(self.k(x), h))
        out = self.out(_merge_heads(attn @ _split_heads(self.v(x), h)))
        return (out, attn) if return_weights else out


class DiffSelfAttention(_AttentionBase):
    """``(softmax(Q1 K1^T/sqrt d) - lambda softmax(Q2 K2^T/sqrt d)) V``."""

    def __init__(self, dim, head_dim=32, lambda_init=0.8, lambda_std=0.1, zero_init_out=False):
        super().__init__(dim, head_dim, zero_init_out)
        self.q1 = nn.Linear(dim, dim, bias=False)
        self.k1 = nn.Linear(dim, dim, bias=False)
        self.q2 = nn.Linear(dim, dim, bias=False)
        self.k2 = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.lam = LambdaParams(head_dim, lambda_init, lambda_std)

    def forward(self, x, return_weights=False):
        _check_tokens(x, self.dim)
        h = self.num_heads
        lam = self.lam()
        attn = attention_weights(_split_heads(self.q1(x), h), _split_heads(self.k1(x), h)) - (
            lam * attention_weights(_split_heads(self.q2(x), h), _split_heads(self.k2(x), h))
        )
        out = self.out(_merge_heads(attn @ _split_heads(self.v(x), h)))
        return (out, attn) if return_weights else out


class CrossAttention(_AttentionBase):
    """Queries from tokens, keys and values from a context sequence."""

    def __init__(self, dim, context_dim, head_dim=32, zero_init_out=False):
        super().__init__(dim, head_dim, zero_init_out)
        self.context_dim = context_dim
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(context_dim, dim, bias=False)
        self.v = nn.Linear(context_dim, dim, bias=False)

    def forward(self, x, context, return_weights=False):
        _check_tokens(x, self.dim)
        _check_tokens(context, self.context_dim, "context")
        h = self.num_heads
        attn = attention_weights(_split_heads(self.q(x), h), _split_heads(self.k(context), h))
        out = self.out(_merge_heads(attn @ _split_heads(self.v(context), h)))
        return (out, attn) if return_weights else out


class DiffCrossAttention(_AttentionBase):
    def __init__(
        self, dim, context_dim, head_dim=32, lambda_init=0.8, lambda_std=0.1, zero_init_out=False
    ):
        super().__init__(dim, head_dim, zero_init_out)
        self.context_dim = context_dim
        self.q1 = nn.Linear(dim, dim, bias=False)
        self.q2 = nn.Linear(dim, dim, bias=False)
        self.k1 = nn.Linear(context_dim, dim, bias=False)
        self.k2 = nn.Linear(context_dim, dim, bias=False)
        self.v = nn.Linear(context_dim, dim, bias=False)
        self.lam = LambdaParams(head_dim, lambda_init, lambda_std)

    def forward(self, x, context, return_weights=False):
        _check_tokens(x, self.dim)
        _check_tokens(context, self.context_dim, "context")
        h = self.num_heads
        lam = self.lam()
        attn = attention_weights(
            _split_heads(self.q1(x), h), _split_heads(self.k1(context), h)
        ) - lam * attention_weights(_split_heads(self.q2(x), h), _split_heads(self.k2(context), h))
        out = self.out(_merge_heads(attn @ _split_heads(self.v(context), h)))
        return (out, attn) if return_weights else out
