"""Minimum-cost perfect matching on a square cost matrix.

Shortest-augmenting-path formulation of the Hungarian method with dual
potentials, O(n^3) overall: each row is inserted by growing a tree of tight
edges until a free column is reached, updating potentials by the smallest
slack along the frontier.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

__all__ = ["solve_assignment"]


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Column assignment per row minimizing the total cost.

    Returns ``(assignment, total)`` where ``assignment[i]`` is the column
    matched to row ``i`` and ``total`` the summed cost of the matching.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ParameterError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), 0.0

    # 1-based arrays with a virtual column 0 holding the row being inserted
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        match[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[match[j] - 1] = j - 1
    total = float(cost[np.arange(n), assignment].sum())
    return assignment, total
