"""Supervision: group labels, pairwise cross-entropy, histogram KL, and transport loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .dataset import Frame, FramePairGT
from .errors import ConfigError, DivergenceError, ValidationError
from .sinkhorn import sinkhorn

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class KlConfig:
    num_bins: int = 20
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.num_bins < 2:
            raise ConfigError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


def build_group_labels(
    prev: Frame, curr: Frame, gt: FramePairGT, radius: float = 0.2,
    radius_frame: str = "curr",
) -> np.ndarray:
    """Binary (m, n) supervision matrix expanding identity matches to nearby neighbors.

    For each previous pedestrian whose identity reappears in the current frame,
    every current pedestrian within ``radius`` of that reappearance position is
    a positive (identity pairs themselves sit at distance zero).  Previous
    pedestrians with no continuation keep an all-zero row.  With
    ``radius_frame='prev'`` the ball is drawn around the previous-frame
    position of continuing identities instead.
    """
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    if radius_frame not in ("curr", "prev"):
        raise ConfigError(f"radius_frame must be 'curr' or 'prev', got {radius_frame!r}")
    prev.identities()
    curr.identities()
    m, n = prev.n, curr.n
    labels = np.zeros((m, n), dtype=np.float64)
    prev_pos = np.array([o.position for o in prev.observations]).reshape(m, 2)
    curr_pos = np.array([o.position for o in curr.observations]).reshape(n, 2)
    for i, j_star in gt.shared_pairs:
        if radius_frame == "curr":
            center = curr_pos[j_star]
            dist = np.linalg.norm(curr_pos - center, axis=1)
            labels[i, dist <= radius] = 1.0
        else:
            center = prev_pos[i]
            dist = np.linalg.norm(prev_pos - center, axis=1)
            labels[dist <= radius, j_star] = 1.0
    return labels


def loss_cls(p: torch.Tensor, labels: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all pairs, probabilities clamped for stability.

    The clamp caps the value only; its gradient passes straight through, so a
    saturated prediction keeps a bounded restoring signal instead of freezing
    in the clamp's dead zone.
    """
    y = torch.as_tensor(labels, dtype=torch.float64)
    if tuple(p.shape) != tuple(y.shape):
        raise ValidationError(f"shape mismatch: P {tuple(p.shape)} vs Y {tuple(y.shape)}")
    if p.numel() == 0:
        return torch.zeros((), dtype=torch.float64)
    pc = p + (torch.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP) - p).detach()
    return -(y * torch.log(pc) + (1.0 - y) * torch.log(1.0 - pc)).mean()


def _histogram(values: np.ndarray, num_bins: int) -> np.ndarray:
    """Normalized counts over equal bins of [0, 1]; the last bin is closed at 1."""
    if values.size == 0:
        return np.zeros(num_bins)
    idx = np.clip(np.floor(values * num_bins).astype(int), 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins).astype(np.float64)
    return counts / counts.sum()


def kl_between_histograms(p_hist: np.ndarray, q_hist: np.ndarray, epsilon: float) -> float:
    """sum_k P(k) log(P(k) / (Q(k) + eps)) with the 0 log 0 convention."""
    total = 0.0
    for pk, qk in zip(p_hist, q_hist):
        if pk > 0:
            total += pk * math.log(pk / (qk + epsilon))
    return total


def loss_kl(p: torch.Tensor, labels: np.ndarray | torch.Tensor,
            cfg: KlConfig = KlConfig()) -> torch.Tensor:
    """Histogram KL between predicted probabilities and binary labels.

    Bin membership is a step function of the probabilities, so this term is
    piecewise constant in the parameters and contributes no gradient; it is
    reported as a constant in the loss graph.
    """
    y = np.asarray(torch.as_tensor(labels).detach().numpy(), dtype=np.float64)
    pv = p.detach().numpy().reshape(-1)
    if pv.size == 0:
        return torch.zeros((), dtype=torch.float64)
    p_hist = _histogram(pv, cfg.num_bins)
    q_hist = _histogram(y.reshape(-1), cfg.num_bins)
    return torch.tensor(kl_between_histograms(p_hist, q_hist, cfg.epsilon),
                        dtype=torch.float64)


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    an = a / torch.clamp(a.norm(dim=1, keepdim=True), min=1e-12)
    bn = b / torch.clamp(b.norm(dim=1, keepdim=True), min=1e-12)
    return an @ bn.transpose(0, 1)


@dataclass
class OtDiagnostics:
    degenerate: bool
    sinkhorn_converged: bool
    sinkhorn_residual: float


def loss_ot(
    f_prev: torch.Tensor,
    f_curr: torch.Tensor,
    labels: np.ndarray,
    eps: float = 0.05,
    lambda_neg: float = 1.0,
    n_iter: int = 200,
) -> tuple[torch.Tensor, OtDiagnostics]:
    """Group-contrastive transport loss over rows/columns that carry a positive.

    Cost is one minus cosine similarity; marginals are uniform over previous
    rows and current columns with at least one positive label.  The loss is
    the transport cost plus ``lambda_neg`` times plan mass landing on
    negatively labeled pairs.  Runs a fixed iteration count so the value is a
    smooth function of the features.
    """
    y = np.asarray(labels, dtype=np.float64)
    rows = np.nonzero(y.any(axis=1))[0]
    cols = np.nonzero(y.any(axis=0))[0]
    if rows.size == 0 or cols.size == 0:
        return torch.zeros((), dtype=torch.float64), OtDiagnostics(True, True, 0.0)
    fp = f_prev[torch.as_tensor(rows, dtype=torch.long)]
    fc = f_curr[torch.as_tensor(cols, dtype=torch.long)]
    cost = 1.0 - cosine_matrix(fp, fc)
    mu = torch.full((rows.size,), 1.0 / rows.size, dtype=torch.float64)
    nu = torch.full((cols.size,), 1.0 / cols.size, dtype=torch.float64)
    result = sinkhorn(cost, mu, nu, eps=eps, n_fixed_iter=n_iter)
    neg_mask = torch.as_tensor(1.0 - y[np.ix_(rows, cols)], dtype=torch.float64)
    loss = (result.plan * cost).sum() + lambda_neg * (result.plan * neg_mask).sum()
    return loss, OtDiagnostics(False, result.converged, result.max_marginal_residual)


@dataclass(frozen=True)
class LossBreakdown:
    l_ot: float
    l_cls: float
    l_kl: float
    l_total: float
    ot_degenerate: bool = False
    sinkhorn_converged: bool = True


def total_loss(l_ot: float, l_cls: float, l_kl: float) -> float:
    """Unweighted sum of the three parts; non-finite parts abort with attribution."""
    for name, value in (("ot", l_ot), ("cls", l_cls), ("kl", l_kl)):
        if not math.isfinite(value):
            raise DivergenceError(f"loss_{name} is non-finite ({value})")
    return l_ot + l_cls + l_kl


def make_breakdown(l_ot: float, l_cls: float, l_kl: float,
                   ot_diag: OtDiagnostics | None = None) -> LossBreakdown:
    return LossBreakdown(
        l_ot=l_ot,
        l_cls=l_cls,
        l_kl=l_kl,
        l_total=total_loss(l_ot, l_cls, l_kl),
        ot_degenerate=ot_diag.degenerate if ot_diag else False,
        sinkhorn_converged=ot_diag.sinkhorn_converged if ot_diag else True,
    )
