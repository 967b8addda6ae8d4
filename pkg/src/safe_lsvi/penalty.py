"""Adaptive penalty factors and penalized action selection.

Three modes share one ledger.  Rectified: Z grows by the positive part of
each observed cost and is floored at the episode index, so the penalty price
never decays and unsafe-looking actions get priced out permanently.  Virtual
queue: the classical dual update max(Z + g, 0), which tracks the *signed*
cost sum and therefore lets negative costs cancel violations.  Off: Z = 0.
"""

from __future__ import annotations

import numpy as np

MODES = ("rectified", "virtual_queue", "off")


class PenaltyLedger:
    """Per-step penalty factors Z_h with the floor schedule eta_k = k."""

    def __init__(self, horizon: int, mode: str):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.z = np.ones(horizon) if mode == "rectified" else np.zeros(horizon)

    def penalty_update(self, h: int, cost: float, k: int) -> None:
        """Rectified update after episode k: Z_h <- max(Z_h + max(g, 0), k)."""
        if self.mode != "rectified":
            raise ValueError(f"penalty_update requires rectified mode, not {self.mode}")
        if abs(cost) > 1.0:
            raise ValueError("observed cost outside [-1, 1]")
        if k < 1:
            raise ValueError("episode index must be >= 1")
        self.z[h] = max(self.z[h] + max(cost, 0.0), float(k))

    def virtual_queue_update(self, h: int, cost: float) -> None:
        """Drift update: Z_h <- max(Z_h + g, 0)."""
        if self.mode != "virtual_queue":
            raise ValueError(f"virtual_queue_update requires virtual_queue mode, "
                             f"not {self.mode}")
        if abs(cost) > 1.0:
            raise ValueError("observed cost outside [-1, 1]")
        self.z[h] = max(self.z[h] + cost, 0.0)

    def end_episode(self, costs, k: int) -> None:
        """Apply this episode's observed costs to every step's factor."""
        if self.mode == "off":
            return
        for h, g in enumerate(costs):
            if self.mode == "rectified":
                self.penalty_update(h, g, k)
            else:
                self.virtual_queue_update(h, g)


def penalized_argmax(q_row: np.ndarray, ghat_row: np.ndarray,
                     z: float) -> tuple[int, float]:
    """argmax_a of Q(a) - z * max(ghat(a), 0); ties go to the lowest index."""
    q_row = np.asarray(q_row, dtype=float)
    ghat_row = np.asarray(ghat_row, dtype=float)
    if q_row.size == 0:
        raise ValueError("empty action set")
    if q_row.shape != ghat_row.shape:
        raise ValueError("Q and cost rows must have equal length")
    objective = q_row - z * np.maximum(ghat_row, 0.0)
    a = int(np.argmax(objective))
    return a, float(objective[a])
