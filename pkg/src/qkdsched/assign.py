"""Exact rectangular assignment with deterministic tie-breaking.

Wraps a shortest-augmenting-path solver (scipy's Jonker-Volgenant variant)
and refines its answer so that among all optimal assignments the returned
one is lexicographically smallest in column index, row by row. Forbidden
pairs are carried as an explicit boolean mask, never as large sentinel
costs, so the weights stay numerically clean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

# relative slack when comparing two candidate optima; weights are exact for
# integer inputs and agree to ~1e-12 for float ones
_REL_TOL = 1e-9


class AssignmentInfeasibleError(ValueError):
    """No assignment covers every row with its feasible columns."""


@dataclass
class WeightMatrix:
    """Dense weights plus a feasibility mask, rows <= cols.

    ``feasible[i, j]`` False means row i must not take column j. Every row
    needs at least one feasible column or the solver refuses the instance.
    """

    weights: np.ndarray
    feasible: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be 2-D")
        if self.feasible is None:
            self.feasible = np.ones(self.weights.shape, dtype=bool)
        else:
            self.feasible = np.asarray(self.feasible, dtype=bool)
            if self.feasible.shape != self.weights.shape:
                raise ValueError("mask shape differs from weights")
        if not np.all(np.isfinite(self.weights[self.feasible])):
            raise ValueError("non-finite weight on a feasible edge")


def _raw_solve(cost: np.ndarray) -> np.ndarray:
    """Row -> column via scipy; infeasible edges are +inf in ``cost``."""
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise AssignmentInfeasibleError(
            "rows cannot all be matched to feasible columns") from exc
    out = np.empty(cost.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def solve_assignment(matrix: WeightMatrix, maximize: bool = True) -> np.ndarray:
    """Optimal row -> column map, lexicographically smallest among optima.

    With ``maximize`` False the total weight is minimized instead. Raises
    :class:`AssignmentInfeasibleError` when some row has no feasible column
    or no complete matching of the rows exists.
    """
    w = matrix.weights
    n_rows, n_cols = w.shape
    if n_rows > n_cols:
        raise ValueError("more rows than columns; orient the matrix first")
    if not matrix.feasible.any(axis=1).all():
        bad = int(np.flatnonzero(~matrix.feasible.any(axis=1))[0])
        raise AssignmentInfeasibleError(f"row {bad} has no feasible column")

    cost = np.where(matrix.feasible, -w if maximize else w, np.inf)
    if n_rows == 0:
        return np.zeros(0, dtype=np.int64)

    # one-row instances: straight scan, cheapest place to be deterministic
    if n_rows == 1:
        j = int(np.flatnonzero(matrix.feasible[0] & (cost[0] == cost[0].min()))[0])
        return np.array([j], dtype=np.int64)

    assigned = _raw_solve(cost)
    total = float(cost[np.arange(n_rows), assigned].sum())
    tol = _REL_TOL * max(1.0, abs(total))

    # Fix rows in order; for each, adopt the smallest column index that an
    # exact re-solve of the remaining rows proves compatible with optimality.
    fixed = np.full(n_rows, -1, dtype=np.int64)
    used = np.zeros(n_cols, dtype=bool)
    prefix = 0.0
    for i in range(n_rows):
        free_cols = np.flatnonzero(~used)
        best_j = None
        for j in free_cols:
            if not matrix.feasible[i, j]:
                continue
            candidate = prefix + cost[i, j]
            rest_rows = np.arange(i + 1, n_rows)
            if rest_rows.size:
                sub_cols = free_cols[free_cols != j]
                sub = cost[np.ix_(rest_rows, sub_cols)]
                # relaxed bound (column reuse allowed) prunes most candidates
                row_min = sub.min(axis=1)
                if not np.isfinite(row_min).all():
                    continue            # some remaining row loses its last column
                if candidate + float(row_min.sum()) > total + tol:
                    continue
                try:
                    sub_assigned = _raw_solve(sub)
                except AssignmentInfeasibleError:
                    continue
                candidate += float(sub[np.arange(sub.shape[0]), sub_assigned].sum())
            if candidate <= total + tol:
                best_j = j
                break
        if best_j is None:
            raise AssignmentInfeasibleError(f"row {i} has no feasible column")
        fixed[i] = best_j
        used[best_j] = True
        prefix += cost[i, best_j]
    return fixed


def assignment_value(matrix: WeightMatrix, row_to_col: np.ndarray) -> float:
    """Total weight of a row -> column map (raises on infeasible edges)."""
    rows = np.arange(len(row_to_col))
    if not matrix.feasible[rows, row_to_col].all():
        raise ValueError("assignment uses a forbidden edge")
    return float(matrix.weights[rows, row_to_col].sum())
