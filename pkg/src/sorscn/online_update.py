"""Projection-algorithm readout updates for in-interval streaming samples.

Each arriving sample (state vector g, target y) moves the readout by the
smallest Frobenius-norm correction that makes the prediction at g exact:

    W(n) = W(n-1) + (y - W(n-1) g) g^T / (g^T g)

The correction is rank-one and leaves predictions unchanged along directions
orthogonal to g. A denominator floor guards the degenerate all-zero state:
below it no update direction exists and the step is skipped outright, which
keeps the exact-interpolation property unconditional whenever a step fires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch


@dataclass
class ProjectionState:
    """Live readout being updated in place, plus update bookkeeping.

    ``readout_view`` aliases the model's readout matrix; steps mutate it
    directly. Re-bind after any operation that replaces the readout array
    (growth or pruning).
    """

    readout_view: np.ndarray  # (L, total nodes)
    guard_epsilon: float = 1e-12
    updates_applied: int = 0
    updates_skipped: int = 0

    def __post_init__(self):
        if self.guard_epsilon <= 0:
            raise ConfigError(f"guard_epsilon must be positive, got {self.guard_epsilon}")


def project_step(state: ProjectionState, g_hat: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Apply one projection step in place; returns the (mutated) readout.

    When ``g_hat . g_hat`` is below the guard the readout is returned
    unchanged — there is no direction to correct along — and the skip is
    counted instead of an update.
    """
    w = state.readout_view
    g_hat = np.asarray(g_hat, dtype=float)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if g_hat.shape != (w.shape[1],):
        raise DimensionMismatch(f"state vector shape {g_hat.shape}, readout has {w.shape[1]} columns")
    if target.shape != (w.shape[0],):
        raise DimensionMismatch(f"target shape {target.shape}, readout has {w.shape[0]} rows")

    denom = float(g_hat @ g_hat)
    if denom < state.guard_epsilon:
        state.updates_skipped += 1
        return w
    innovation = target - w @ g_hat
    w += np.outer(innovation / denom, g_hat)
    state.updates_applied += 1
    return w
