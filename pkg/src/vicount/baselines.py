"""One-to-one reference matchers: optimal assignment on cosine cost plus thresholding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .ompm import FlowCounts


def cosine_similarity_matrix(f_prev: np.ndarray, f_curr: np.ndarray) -> np.ndarray:
    a = np.asarray(f_prev, dtype=np.float64)
    b = np.asarray(f_curr, dtype=np.float64)
    an = a / np.clip(np.linalg.norm(a, axis=1, keepdims=True), 1e-12, None)
    bn = b / np.clip(np.linalg.norm(b, axis=1, keepdims=True), 1e-12, None)
    return an @ bn.T


def cosine_cost(f_prev: np.ndarray, f_curr: np.ndarray) -> np.ndarray:
    return 1.0 - cosine_similarity_matrix(f_prev, f_curr)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (prev index, curr index), sorted by prev
    total_cost: float


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost one-to-one assignment; rectangular inputs allowed."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size and not np.isfinite(cost).all():
        raise ValidationError("cost matrix must be finite")
    if cost.size == 0:
        return Assignment(pairs=(), total_cost=0.0)
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple(sorted(zip(map(int, rows), map(int, cols))))
    total = float(sum(cost[i, j] for i, j in pairs))
    return Assignment(pairs=pairs, total_cost=total)


def o2o_match(
    f_prev: np.ndarray, f_curr: np.ndarray, threshold: float = 0.5
) -> tuple[np.ndarray, FlowCounts]:
    """Hungarian assignment on cosine cost, keeping pairs at or above the threshold.

    Returns the (n, m) binary match matrix and flow counts with
    shared = surviving assignments.
    """
    m = np.asarray(f_prev).shape[0]
    n = np.asarray(f_curr).shape[0]
    matches = np.zeros((n, m), dtype=np.int64)
    if m == 0 or n == 0:
        return matches, FlowCounts(inflow=n, outflow=m, shared=0, shared_prev=0, mode="o2o")
    sim = cosine_similarity_matrix(f_prev, f_curr)
    assignment = hungarian(1.0 - sim)
    kept = 0
    for i, j in assignment.pairs:
        if sim[i, j] >= threshold:
            matches[j, i] = 1
            kept += 1
    return matches, FlowCounts(
        inflow=n - kept, outflow=m - kept, shared=kept, shared_prev=kept, mode="o2o"
    )
