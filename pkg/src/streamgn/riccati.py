"""Rank-one updates of an inverse matrix (Riccati / Sherman-Morrison).

Maintains A_n^{-1} across updates A_{n+1} = A_n + w * u u^T without ever
forming A_n:

    (A + w u u^T)^{-1} = A^{-1} - w * (A^{-1} u)(A^{-1} u)^T / (1 + w u^T A^{-1} u)

The stored inverse is re-symmetrized after every update so that rounding
cannot accumulate asymmetry. A collapsing denominator signals numerical
breakdown and raises instead of regularizing silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericalBreakdown",
    "InverseState",
    "init",
    "rank_one_update",
    "double_update",
    "DENOMINATOR_FLOOR",
]

DENOMINATOR_FLOOR = 1e-300


class NumericalBreakdown(RuntimeError):
    """An update denominator collapsed; the replication must be aborted."""


@dataclass
class InverseState:
    """Running inverse of a symmetric positive definite matrix.

    Updates mutate the state in place; a state must be owned by a single
    replication. updates_applied counts rank-one updates in this session
    and is not persisted in checkpoints.
    """

    inv: np.ndarray
    updates_applied: int = 0

    @property
    def dim(self) -> int:
        return self.inv.shape[0]

    def copy(self) -> "InverseState":
        return InverseState(self.inv.copy(), self.updates_applied)


def init(a0_inv) -> InverseState:
    """Wrap an initial inverse matrix, validating symmetry and positivity."""
    a = np.array(a0_inv, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("initial inverse must be a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("initial inverse must be finite")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("initial inverse must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError("initial inverse must be positive definite") from None
    return InverseState((a + a.T) / 2)


def rank_one_update(state: InverseState, u, w: float) -> InverseState:
    """Apply A <- A + w * u u^T to the tracked inverse. Mutates state.

    w must be nonnegative and finite. A denominator at or below
    DENOMINATOR_FLOOR (possible only for corrupted, indefinite states)
    raises NumericalBreakdown.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (state.dim,):
        raise ValueError(f"update vector must have shape ({state.dim},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("update vector must be finite")
    if not np.isfinite(w) or w < 0:
        raise ValueError("update weight must be finite and nonnegative")
    a = state.inv
    au = a @ u
    denom = 1.0 + w * float(u @ au)
    if not np.isfinite(denom) or denom <= DENOMINATOR_FLOOR:
        raise NumericalBreakdown(f"update denominator collapsed ({denom})")
    if w != 0.0:
        a = a - np.outer(au, au) * (w / denom)
        state.inv = (a + a.T) / 2
    state.updates_applied += 1
    return state


def double_update(state: InverseState, z, w_z: float, phi) -> InverseState:
    """Exploration update with z (weight w_z) followed by phi (weight 1).

    Equivalent to rank_one_update(rank_one_update(state, z, w_z), phi, 1.0):
    the second update sees the half-updated inverse. Mutates state.
    """
    rank_one_update(state, z, w_z)
    return rank_one_update(state, phi, 1.0)
