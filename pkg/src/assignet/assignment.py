"""Exact linear assignment over a pairwise similarity matrix.

Matrices are similarities: higher means more alike, and the solver maximizes
total similarity.  ``-inf`` entries act as a "never match" sentinel.  After
solving, pairs whose similarity falls below a caller-supplied threshold are
dropped, so the result is a partial one-to-one matching.

The optimum itself is found with scipy's Jonker-Volgenant solver; this module
owns the similarity orientation, sentinel handling and threshold filtering.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["solve_lap"]


def solve_lap(sim: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximum-total-similarity one-to-one matching, threshold-filtered.

    Args:
        sim: (rows, cols) similarity matrix.  Entries must be finite except
            for the ``-inf`` sentinel; either dimension may be zero.
        threshold: pairs with similarity strictly below this are removed
            from the matching.  Must be finite.

    Returns:
        Sorted list of (row, col) pairs; each row and column appears at most
        once.  Empty input yields an empty list.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise ValueError(f"similarity matrix must be 2-D, got shape {sim.shape}")
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    if sim.size == 0:
        return []
    if np.isnan(sim).any() or np.isposinf(sim).any():
        raise ValueError("similarity entries must be finite or -inf")

    finite = np.isfinite(sim)
    cost = np.where(finite, -sim, 0.0)
    if finite.any():
        # Sentinels become strictly worse than any real entry so the solver
        # never prefers them; they are filtered out below regardless.
        worst = cost[finite].max()
        span = cost[finite].max() - cost[finite].min()
        cost = np.where(finite, cost, worst + span + 1.0)
    rows, cols = linear_sum_assignment(cost)

    pairs = [
        (int(r), int(c))
        for r, c in zip(rows, cols)
        if sim[r, c] >= threshold and np.isfinite(sim[r, c])
    ]
    pairs.sort()
    return pairs
