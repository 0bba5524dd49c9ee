"""Full matching model: featurizer -> context encoder -> pairwise scorer.

Ablation flags choose the forward path: with the context encoder off, raw
projected tokens feed the scorer; with the scorer off, probabilities fall
back to cosine similarity clipped to [0, 1] (thresholded downstream by the
counting rule).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .dataset import Frame
from .errors import CheckpointError
from .featurizer import Featurizer, FeaturizerConfig
from .icg import IcgConfig, IcgEncoder
from .losses import cosine_matrix
from .ompm import MlpConfig, PairwiseMlp, pairwise_scores
from .rng import torch_generator

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    descriptor_dim: int = 32
    pos_embed_dim: int = 16
    model_dim: int = 64
    heads: int = 4
    layers: int = 2
    n_max: int = 64
    mlp_depth: int = 3
    mlp_hidden: int = 64
    avg_layers: str = "final"
    context_targets: str = "both"
    icg_on: bool = True
    ompm_on: bool = True

    def featurizer_config(self) -> FeaturizerConfig:
        return FeaturizerConfig(
            descriptor_dim=self.descriptor_dim,
            pos_embed_dim=self.pos_embed_dim,
            model_dim=self.model_dim,
        )

    def icg_config(self) -> IcgConfig:
        return IcgConfig(
            model_dim=self.model_dim,
            heads=self.heads,
            layers=self.layers,
            n_max=self.n_max,
            avg_layers=self.avg_layers,
            context_targets=self.context_targets,
        )

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(in_dim=self.model_dim, hidden_dim=self.mlp_hidden,
                         depth=self.mlp_depth)


@dataclass
class PairForward:
    p: torch.Tensor  # (m, n) match probabilities
    tokens_prev: torch.Tensor  # (m, d) features fed to the scorer
    tokens_curr: torch.Tensor  # (n, d)
    abar_match: torch.Tensor | None  # (n, m) when the context encoder ran


class OmanModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch_generator(seed, "model-init")
        self.featurizer = Featurizer(cfg.featurizer_config(), gen)
        self.icg = IcgEncoder(cfg.icg_config(), gen)
        self.mlp = PairwiseMlp(cfg.mlp_config(), gen)

    def forward_pair(self, prev: Frame, curr: Frame) -> PairForward:
        f_prev = self.featurizer(prev)
        f_curr = self.featurizer(curr)
        abar = None
        if self.cfg.icg_on and (prev.n + curr.n) > 0:
            out = self.icg(f_prev, f_curr)
            f_prev, f_curr = out.tokens_prev, out.tokens_curr
            abar = out.abar_match
        if self.cfg.ompm_on:
            p = pairwise_scores(f_prev, f_curr, self.mlp)
        elif prev.n and curr.n:
            p = torch.clamp(cosine_matrix(f_prev, f_curr), 0.0, 1.0)
        else:
            p = torch.zeros((prev.n, curr.n), dtype=torch.float64)
        return PairForward(p=p, tokens_prev=f_prev, tokens_curr=f_curr, abar_match=abar)

    def backbone_parameters(self):
        """Feature-extraction analog, trained at the lower learning rate."""
        return list(self.featurizer.parameters())

    def head_parameters(self):
        return list(self.icg.parameters()) + list(self.mlp.parameters())


def save_checkpoint(path, model: OmanModel, seed: int, step: int,
                    train_config: dict | None = None) -> None:
    params = {}
    for name, tensor in sorted(model.named_parameters()):
        params[name] = {
            "shape": list(tensor.shape),
            "data": tensor.detach().reshape(-1).tolist(),
        }
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "train_config": train_config or {},
        "seed": seed,
        "step": step,
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[OmanModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    cfg = ModelConfig(**payload["model_config"])
    model = OmanModel(cfg, seed=payload.get("seed", 0))
    own = dict(model.named_parameters())
    if set(own) != set(payload["params"]):
        raise CheckpointError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for name, entry in payload["params"].items():
            tensor = own[name]
            if list(tensor.shape) != entry["shape"]:
                raise CheckpointError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{entry['shape']} vs {list(tensor.shape)}"
                )
            tensor.copy_(
                torch.tensor(np.asarray(entry["data"], dtype=np.float64)).reshape(tensor.shape)
            )
    return model, payload
