"""Per-frame token features: sinusoidal position embedding + linear projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataset import Frame
from .errors import ConfigError, ValidationError

POS_EMBED_MIN_FREQ = 1.0
POS_EMBED_MAX_FREQ = 100.0


@dataclass(frozen=True)
class FeaturizerConfig:
    descriptor_dim: int = 32
    pos_embed_dim: int = 16
    model_dim: int = 64

    def __post_init__(self):
        if self.pos_embed_dim % 4 != 0:
            raise ConfigError(f"pos_embed_dim must be divisible by 4, got {self.pos_embed_dim}")
        if self.descriptor_dim < 1 or self.model_dim < 1:
            raise ConfigError("descriptor_dim and model_dim must be positive")


def position_embedding(position: tuple[float, float], d_pe: int) -> np.ndarray:
    """2-D sinusoidal embedding with geometric frequency bands per axis.

    Layout is [sin_x | cos_x | sin_y | cos_y], each block holding d_pe/4
    bands with frequencies from 1 to 100 cycles per unit.  The norm equals
    sqrt(d_pe / 2) since each (sin, cos) pair contributes norm 1.
    """
    if d_pe % 4 != 0:
        raise ConfigError(f"pos_embed_dim must be divisible by 4, got {d_pe}")
    bands = d_pe // 4
    freqs = np.geomspace(POS_EMBED_MIN_FREQ, POS_EMBED_MAX_FREQ, bands)
    parts = []
    for coord in position:
        angles = 2.0 * math.pi * freqs * coord
        parts.append(np.sin(angles))
        parts.append(np.cos(angles))
    return np.concatenate(parts)


def init_linear_(linear: nn.Linear, generator: torch.Generator | None) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init drawn from an explicit generator."""
    fan_in = linear.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound, generator=generator)
        if linear.bias is not None:
            linear.bias.uniform_(-bound, bound, generator=generator)


def init_orthogonal_(linear: nn.Linear, generator: torch.Generator | None) -> None:
    """Orthonormal-column init: an isometry on the input space (needs out >= in).

    Keeps input geometry (angles, distances) intact at initialization so the
    downstream scorer starts from a signal-preserving representation.
    """
    out_dim, in_dim = linear.weight.shape
    if out_dim < in_dim:
        raise ConfigError("orthogonal init requires out_dim >= in_dim")
    with torch.no_grad():
        a = torch.empty(out_dim, in_dim, dtype=torch.float64)
        a.normal_(0.0, 1.0, generator=generator)
        q, r = torch.linalg.qr(a)
        q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)  # fix sign ambiguity
        linear.weight.copy_(q)
        if linear.bias is not None:
            linear.bias.zero_()


class Featurizer(nn.Module):
    """Projects concat(descriptor, position embedding) to the model dimension."""

    def __init__(self, cfg: FeaturizerConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(
            cfg.descriptor_dim + cfg.pos_embed_dim, cfg.model_dim, dtype=torch.float64
        )
        if cfg.model_dim >= cfg.descriptor_dim + cfg.pos_embed_dim:
            init_orthogonal_(self.proj, generator)
            # the raw embedding block has norm sqrt(d_pe / 2); scale its
            # columns so position and appearance start on equal footing
            with torch.no_grad():
                self.proj.weight[:, cfg.descriptor_dim:] *= math.sqrt(2.0 / cfg.pos_embed_dim)
        else:
            init_linear_(self.proj, generator)

    def forward(self, frame: Frame) -> torch.Tensor:
        cfg = self.cfg
        if frame.n == 0:
            return torch.zeros((0, cfg.model_dim), dtype=torch.float64)
        for obs in frame.observations:
            if obs.descriptor is None:
                raise ValidationError(
                    "observation lacks a descriptor; generate data with the simulator "
                    "or supply descriptor arrays in the dataset file"
                )
            if obs.descriptor.shape[0] != cfg.descriptor_dim:
                raise ValidationError(
                    f"descriptor length {obs.descriptor.shape[0]} != configured "
                    f"{cfg.descriptor_dim}"
                )
        descriptors = np.stack([obs.descriptor for obs in frame.observations])
        embeddings = np.stack(
            [position_embedding(obs.position, cfg.pos_embed_dim) for obs in frame.observations]
        )
        inputs = torch.from_numpy(np.hstack([descriptors, embeddings])).to(torch.float64)
        return self.proj(inputs)


def embed_frame(frame: Frame, featurizer: Featurizer) -> torch.Tensor:
    return featurizer(frame)
