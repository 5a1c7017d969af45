"""Empirical first- and second-order stochastic dominance checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DominanceCheck:
    holds: bool
    max_violation: float


@dataclass(frozen=True)
class DominanceReport:
    first_order: DominanceCheck
    second_order: DominanceCheck


def _ecdf(sorted_x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_x, grid, side="right") / sorted_x.size


def _stop_loss(sorted_x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """``E(X - x)^+`` on the grid."""
    csum = np.concatenate([[0.0], np.cumsum(sorted_x[::-1])])[::-1]  # csum[k] = sum of x[k:]
    k = np.searchsorted(sorted_x, grid, side="right")
    return (csum[k] - (sorted_x.size - k) * grid) / sorted_x.size


def dominance_tests(samples_a, samples_b, tol: float = 0.0) -> DominanceReport:
    """Is ``a`` dominated by ``b``?

    First order: ``F_a >= F_b`` on the pooled grid.  Second order, in the
    increasing-convex sense: ``E(a - x)^+ <= E(b - x)^+`` for every ``x``.
    Violations are reported as the largest positive gap.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both sample sets must be nonempty")
    grid = np.union1d(a, b)
    v1 = float(max(np.max(_ecdf(b, grid) - _ecdf(a, grid)), 0.0))
    scale = max(1.0, float(np.abs(grid).max()))
    v2 = float(max(np.max(_stop_loss(a, grid) - _stop_loss(b, grid)), 0.0))
    v2 = 0.0 if v2 <= 1e-12 * scale else v2
    return DominanceReport(DominanceCheck(v1 <= tol, v1), DominanceCheck(v2 <= tol, v2))
