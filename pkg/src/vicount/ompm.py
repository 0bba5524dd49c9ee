"""Pairwise match scoring and one-to-many count decoding.

Match probability for a (previous, current) token pair is a sigmoid over an
MLP applied to their elementwise product.  Counting either follows the
literal rounded-sum arithmetic or deduplicates to unique matched pedestrians
per side; match matrices are decoded under a per-current-row cap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ValidationError
from .featurizer import init_linear_


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int = 64
    hidden_dim: int = 64
    depth: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"mlp depth must be >= 1, got {self.depth}")
        if self.in_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("mlp dimensions must be positive")


class PairwiseMlp(nn.Module):
    """MLP of ``depth`` linear layers mapping the model dimension to one logit."""

    def __init__(self, cfg: MlpConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        dims = [cfg.in_dim] + [cfg.hidden_dim] * (cfg.depth - 1) + [1]
        self.linears = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1], dtype=torch.float64) for i in range(cfg.depth)
        )
        for lin in self.linears:
            init_linear_(lin, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < len(self.linears) - 1:
                x = torch.tanh(x)
        return x


def pairwise_scores(
    f_prev: torch.Tensor, f_curr: torch.Tensor, mlp: PairwiseMlp
) -> torch.Tensor:
    """Match probabilities P of shape (m, n); rows index the previous frame."""
    if f_prev.shape[-1] != f_curr.shape[-1]:
        raise ValidationError(
            f"token dimensions differ: {f_prev.shape[-1]} vs {f_curr.shape[-1]}"
        )
    m, n = f_prev.shape[0], f_curr.shape[0]
    if m == 0 or n == 0:
        return torch.zeros((m, n), dtype=torch.float64)
    hadamard = f_prev.unsqueeze(1) * f_curr.unsqueeze(0)  # (m, n, d)
    return torch.sigmoid(mlp(hadamard).squeeze(-1))


def decode_matches(p: np.ndarray, tau: float, k: int) -> np.ndarray:
    """Binary match matrix M of shape (n, m): row j marks current pedestrian j's matches.

    An entry is eligible when its probability reaches ``tau``; each row keeps
    its ``k`` largest eligible entries, ties broken toward the lower
    previous-frame index.
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    p = np.asarray(p, dtype=np.float64)
    m, n = p.shape
    matches = np.zeros((n, m), dtype=np.int64)
    for j in range(n):
        eligible = [i for i in range(m) if p[i, j] >= tau]
        eligible.sort(key=lambda i: (-p[i, j], i))
        for i in eligible[:k]:
            matches[j, i] = 1
    return matches


@dataclass(frozen=True)
class ConstraintReport:
    ok: bool
    violating_rows: tuple[int, ...] = ()
    violating_cols: tuple[int, ...] = ()


def check_constraints(matches: np.ndarray, mode: str, k: int = 1) -> ConstraintReport:
    """Row/column-sum feasibility: one-to-one bounds both sides; one-to-many caps rows at k."""
    matches = np.asarray(matches)
    if not np.isin(matches, (0, 1)).all():
        raise ValidationError("match matrix must be binary")
    row_sums = matches.sum(axis=1)
    col_sums = matches.sum(axis=0)
    if mode == "O2O":
        bad_rows = tuple(int(j) for j in np.nonzero(row_sums > 1)[0])
        bad_cols = tuple(int(i) for i in np.nonzero(col_sums > 1)[0])
    elif mode == "O2M":
        bad_rows = tuple(int(j) for j in np.nonzero(row_sums > k)[0])
        bad_cols = ()
    else:
        raise ConfigError(f"mode must be 'O2O' or 'O2M', got {mode!r}")
    return ConstraintReport(ok=not bad_rows and not bad_cols,
                            violating_rows=bad_rows, violating_cols=bad_cols)


@dataclass(frozen=True)
class FlowCounts:
    inflow: int
    outflow: int
    shared: int
    shared_prev: int
    mode: str


def count_flows(p: np.ndarray, m: int, n: int, mode: str = "dedup",
                tau: float = 0.5) -> FlowCounts:
    """Inflow/outflow for one frame pair from the probability matrix.

    ``literal`` sums rounded probabilities over all pairs (round-half-up) and
    clamps the resulting counts at zero; it overcounts whenever one pedestrian
    matches several partners.  ``dedup`` counts current pedestrians with at
    least one match at ``tau`` (and symmetrically for the previous frame), so
    inflow = n - matched_curr and outflow = m - matched_prev hold exactly.
    """
    p = np.asarray(p, dtype=np.float64).reshape(m, n)
    if mode == "literal":
        shared_raw = int(np.floor(p + 0.5).sum()) if p.size else 0
        return FlowCounts(
            inflow=max(0, n - shared_raw),
            outflow=max(0, m - shared_raw),
            shared=shared_raw,
            shared_prev=shared_raw,
            mode=mode,
        )
    if mode == "dedup":
        hits = p >= tau
        matched_curr = int(hits.any(axis=0).sum()) if p.size else 0
        matched_prev = int(hits.any(axis=1).sum()) if p.size else 0
        return FlowCounts(
            inflow=n - matched_curr,
            outflow=m - matched_prev,
            shared=matched_curr,
            shared_prev=matched_prev,
            mode=mode,
        )
    raise ConfigError(f"count mode must be 'literal' or 'dedup', got {mode!r}")


def aggregate_video(n0: int, inflows: list[int]) -> int:
    """Video total: first-frame count plus the per-pair inflows."""
    if n0 < 0 or any(x < 0 for x in inflows):
        raise ValidationError("counts must be non-negative")
    return n0 + sum(inflows)
