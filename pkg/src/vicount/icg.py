"""Context encoder: joint two-frame self-attention with cross-frame map decomposition.

Tokens of both frames are stacked and run through pre-norm multi-head
self-attention layers.  Each head's full attention map splits into four
blocks by frame membership; the current-over-previous block, averaged across
heads, is the cross-frame affinity profile that gets concatenated back onto
every token (zero-padded to a fixed width) and projected to the model
dimension, one projection per frame role.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import CapacityError, ConfigError, ValidationError
from .featurizer import init_linear_


@dataclass(frozen=True)
class IcgConfig:
    model_dim: int = 64
    heads: int = 4
    layers: int = 2
    n_max: int = 64
    avg_layers: str = "final"  # "final" | "all"
    context_targets: str = "both"  # "both" | "curr"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} must be divisible by heads {self.heads}"
            )
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.avg_layers not in ("final", "all"):
            raise ConfigError(f"avg_layers must be 'final' or 'all', got {self.avg_layers!r}")
        if self.context_targets not in ("both", "curr"):
            raise ConfigError(
                f"context_targets must be 'both' or 'curr', got {self.context_targets!r}"
            )


@dataclass(frozen=True)
class AttentionBlocks:
    prev: torch.Tensor  # (..., m, m)
    cls: torch.Tensor  # (..., m, n)
    match: torch.Tensor  # (..., n, m)
    curr: torch.Tensor  # (..., n, n)


def concat_frames(f_prev: torch.Tensor, f_curr: torch.Tensor) -> torch.Tensor:
    """Stack previous-frame tokens above current-frame tokens."""
    if f_prev.shape[-1] != f_curr.shape[-1]:
        raise ValidationError(
            f"model dimensions differ: {f_prev.shape[-1]} vs {f_curr.shape[-1]}"
        )
    return torch.cat([f_prev, f_curr], dim=0)


def split_attention(attn: torch.Tensor, m: int, n: int) -> AttentionBlocks:
    """Cut a (m+n)x(m+n) map (optionally with leading head dims) into four blocks."""
    if attn.shape[-1] != m + n or attn.shape[-2] != m + n:
        raise ValidationError(f"attention map shape {tuple(attn.shape)} != ({m + n}, {m + n})")
    return AttentionBlocks(
        prev=attn[..., :m, :m],
        cls=attn[..., :m, m:],
        match=attn[..., m:, :m],
        curr=attn[..., m:, m:],
    )


class SelfAttentionLayer(nn.Module):
    """Pre-norm multi-head self-attention with a residual connection."""

    def __init__(self, cfg: IcgConfig, generator: torch.Generator | None = None):
        super().__init__()
        d = cfg.model_dim
        self.heads = cfg.heads
        self.head_dim = d // cfg.heads
        self.norm = nn.LayerNorm(d, dtype=torch.float64)
        self.wq = nn.Linear(d, d, dtype=torch.float64)
        self.wk = nn.Linear(d, d, dtype=torch.float64)
        self.wv = nn.Linear(d, d, dtype=torch.float64)
        self.wo = nn.Linear(d, d, dtype=torch.float64)
        for lin in (self.wq, self.wk, self.wv):
            init_linear_(lin, generator)
        # zero-init residual branch: the layer starts as the identity map and
        # attention influence grows with training
        with torch.no_grad():
            self.wo.weight.zero_()
            self.wo.bias.zero_()

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (tokens with residual applied, per-head attention maps (H, T, T))."""
        t = x.shape[0]
        y = self.norm(x)
        q = self.wq(y).view(t, self.heads, self.head_dim).transpose(0, 1)
        k = self.wk(y).view(t, self.heads, self.head_dim).transpose(0, 1)
        v = self.wv(y).view(t, self.heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        maps = torch.softmax(scores, dim=-1)
        ctx = (maps @ v).transpose(0, 1).reshape(t, -1)
        return x + self.wo(ctx), maps


def context_inform(
    attn_out: torch.Tensor,
    abar: torch.Tensor,
    m: int,
    n: int,
    proj_prev: nn.Linear,
    proj_curr: nn.Linear,
    n_max: int,
    context_targets: str = "both",
) -> torch.Tensor:
    """Concatenate each token's cross-frame affinity profile and project back to d.

    Current token j receives row j of the averaged match map (its affinity to
    every previous token); previous token i receives column i (every current
    token's affinity to it).  Profiles are zero-padded to ``n_max`` columns.
    With ``context_targets='curr'`` previous tokens get an all-zero profile.
    """
    if m > n_max or n > n_max:
        raise CapacityError(
            f"frame population ({m}, {n}) exceeds icg.n_max={n_max}; raise icg.n_max"
        )
    if tuple(abar.shape) != (n, m):
        raise ValidationError(f"averaged match map shape {tuple(abar.shape)} != ({n}, {m})")
    dtype = attn_out.dtype
    ctx_prev = torch.zeros((m, n_max), dtype=dtype)
    ctx_curr = torch.zeros((n, n_max), dtype=dtype)
    if m and n:
        ctx_curr[:, :m] = abar
        if context_targets == "both":
            ctx_prev[:, :n] = abar.transpose(0, 1)
    out_prev = proj_prev(torch.cat([attn_out[:m], ctx_prev], dim=1))
    out_curr = proj_curr(torch.cat([attn_out[m:], ctx_curr], dim=1))
    return torch.cat([out_prev, out_curr], dim=0)


@dataclass
class IcgOutput:
    tokens_prev: torch.Tensor  # (m, d) context-informed
    tokens_curr: torch.Tensor  # (n, d) context-informed
    abar_match: torch.Tensor  # (n, m) head-averaged cross-frame map
    layer_maps: list[torch.Tensor]  # per layer, (H, m+n, m+n)


class IcgEncoder(nn.Module):
    def __init__(self, cfg: IcgConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(
            SelfAttentionLayer(cfg, generator) for _ in range(cfg.layers)
        )
        d = cfg.model_dim
        self.proj_prev = nn.Linear(d + cfg.n_max, d, dtype=torch.float64)
        self.proj_curr = nn.Linear(d + cfg.n_max, d, dtype=torch.float64)
        for proj in (self.proj_prev, self.proj_curr):
            self._init_context_projection(proj, d, generator)
        # pre-norm stacks close with a final norm; also keeps the scorer's
        # input scale independent of depth
        self.final_norm = nn.LayerNorm(d, dtype=torch.float64)

    @staticmethod
    def _init_context_projection(proj: nn.Linear, d: int,
                                 generator: torch.Generator | None) -> None:
        # near-pass-through start: identity on the token block, small weights
        # on the affinity-profile block, so the encoder output carries the
        # token signal before training has shaped the context pathway
        with torch.no_grad():
            proj.weight.zero_()
            proj.weight[:, :d] = torch.eye(d, dtype=torch.float64)
            profile = proj.weight[:, d:]
            profile.uniform_(-0.01, 0.01, generator=generator)
            proj.bias.zero_()

    def average_match_map(self, layer_maps: list[torch.Tensor], m: int, n: int) -> torch.Tensor:
        if self.cfg.avg_layers == "final":
            stacked = layer_maps[-1]
        else:
            stacked = torch.cat(layer_maps, dim=0)
        return split_attention(stacked, m, n).match.mean(dim=0)

    def forward(self, f_prev: torch.Tensor, f_curr: torch.Tensor) -> IcgOutput:
        m, n = f_prev.shape[0], f_curr.shape[0]
        x = concat_frames(f_prev, f_curr)
        layer_maps = []
        for layer in self.layers:
            x, maps = layer(x)
            layer_maps.append(maps)
        abar = self.average_match_map(layer_maps, m, n)
        informed = self.final_norm(
            context_inform(
                x, abar, m, n, self.proj_prev, self.proj_curr, self.cfg.n_max,
                self.cfg.context_targets,
            )
        )
        return IcgOutput(
            tokens_prev=informed[:m],
            tokens_curr=informed[m:],
            abar_match=abar,
            layer_maps=layer_maps,
        )
