"""Exact linear sum assignment via the Hungarian method with row/column potentials.

O(n^3): one Dijkstra-like augmentation per row over reduced costs.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def lsap_solve(cost) -> tuple[list[int], float]:
    """Minimum-cost perfect assignment of a square matrix.

    Returns ``(assignment, total)`` where row ``i`` is assigned column
    ``assignment[i]``.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"cost matrix must be square, got shape {c.shape}")
    if np.isnan(c).any():
        raise ValidationError("cost matrix contains NaN")
    if not np.isfinite(c).all():
        raise ValidationError("cost matrix entries must be finite")
    n = c.shape[0]
    if n == 0:
        return [], 0.0
    rows = c.tolist()
    inf = float("inf")
    # 1-indexed potentials; column 0 is the virtual start
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match_col = [0] * (n + 1)  # match_col[j] = row assigned to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    assignment = [0] * n
    for j in range(1, n + 1):
        assignment[match_col[j] - 1] = j - 1
    total = float(sum(rows[i][assignment[i]] for i in range(n)))
    return assignment, total
