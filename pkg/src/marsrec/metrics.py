"""Evaluation metrics: RMSE, per-cell reconstruction loss, HR@K and MAP@K."""

from __future__ import annotations

import math
from typing import Hashable, Iterable, Sequence

import numpy as np

from marsrec.tensor import DimensionError, EventTensor, frob_sq_diff


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise ValueError("rmse of empty lists")
    d = predicted - actual
    return math.sqrt(float(d @ d) / d.size)


def _as_set(relevant) -> set:
    if isinstance(relevant, (set, frozenset, list, tuple)):
        return set(relevant)
    return {relevant}


def hit_at_k(ranked: Sequence[Hashable], relevant, k: int) -> float:
    """1.0 if any relevant item is in the top ``k`` of ``ranked``, else 0.0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = _as_set(relevant)
    return 1.0 if any(item in rel for item in ranked[:k]) else 0.0


def average_precision_at_k(ranked: Sequence[Hashable], relevant, k: int) -> float:
    """Precision at each relevant hit in the top ``k``, averaged over ``min(|relevant|, k)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = _as_set(relevant)
    if not rel:
        return 0.0
    hits = 0
    total = 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if item in rel:
            hits += 1
            total += hits / pos
    return total / min(len(rel), k)


def hit_ratio_at_k(ranked_cases: Iterable[Sequence[Hashable]], relevant_cases: Iterable, k: int) -> float:
    """Mean of :func:`hit_at_k` over evaluation cases."""
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = [hit_at_k(r, rel, k) for r, rel in zip(ranked_cases, relevant_cases, strict=True)]
    return float(np.mean(vals)) if vals else 0.0


def map_at_k(ranked_cases: Iterable[Sequence[Hashable]], relevant_cases: Iterable, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = [average_precision_at_k(r, rel, k) for r, rel in zip(ranked_cases, relevant_cases, strict=True)]
    return float(np.mean(vals)) if vals else 0.0


def reconstruction_report(m, td: EventTensor, tr: EventTensor) -> dict[str, float]:
    """Average squared reconstruction error per cell for each tensor."""
    if td.shape != m.dims or tr.shape != m.dims:
        raise DimensionError(f"tensors {td.shape}/{tr.shape} vs model {m.dims}")
    cells = float(np.prod(td.shape))
    f = m.factors
    return {
        "donation_loss": frob_sq_diff(td, f.reconstruct_donations()) / cells,
        "response_loss": frob_sq_diff(tr, f.reconstruct_responses()) / cells,
    }


def random_hit_ratio(n_candidates: int, k: int) -> float:
    """Expected HR@K of a uniformly random ranking with one relevant item."""
    return min(k, n_candidates) / n_candidates
