"""Regularized least-squares value iteration with optimism bonuses.

GramState keeps lam*I + sum(phi phi^T) together with an incrementally
maintained inverse (rank-one identity), so one episode of updates costs
O(d^2) per step instead of a dense refit.  The learner caches the quadratic
forms phi^T Lambda^{-1} phi over the whole tabular feature set and downdates
them with each ingested sample, which keeps the per-episode backward pass to
a handful of matrix-vector products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .envs import FeatureMap, StepRecord

NORM_SLACK = 1e-9
RADICAND_TOL = 1e-12


class GramState:
    """Ridge statistics for one step index: Gram matrix, inverse, targets."""

    def __init__(self, d: int, lam: float):
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.d = d
        self.lam = lam
        self.gram = lam * np.eye(d)
        self.inv = np.eye(d) / lam
        self.b = np.zeros(d)
        self.count = 0

    def update(self, phi: np.ndarray, target: float = 0.0) -> tuple[np.ndarray, float]:
        """Ingest one sample: Gram += phi phi^T, b += phi * target.

        Returns (Lambda^{-1} phi, 1 + phi^T Lambda^{-1} phi) evaluated at the
        pre-update state, which callers use to downdate cached quadratic
        forms with the same rank-one identity.
        """
        phi = np.asarray(phi, dtype=float)
        norm = np.linalg.norm(phi)
        if norm > 1.0 + NORM_SLACK:
            raise ValueError(f"feature norm {norm:.6f} exceeds 1")
        v = self.inv @ phi
        denom = 1.0 + float(phi @ v)
        if denom <= 1e-12:
            raise RuntimeError("Gram inverse breakdown: 1 + phi^T A^-1 phi <= 1e-12")
        self.gram += np.outer(phi, phi)
        self.b += phi * target
        self.inv -= np.outer(v, v) / denom
        self.count += 1
        return v, denom

    def ridge_weights(self) -> np.ndarray:
        return self.inv @ self.b

    def quad_form(self, phi: np.ndarray) -> float:
        """phi^T Lambda^{-1} phi, clamped at 0 (roundoff below -1e-12 is an error)."""
        q = float(phi @ self.inv @ phi)
        if q < -RADICAND_TOL:
            raise RuntimeError(f"negative quadratic form {q:.3e}")
        return max(q, 0.0)

    def rebuild_dense(self) -> None:
        """Debug mode: recompute the inverse from the Gram matrix directly."""
        self.inv = np.linalg.inv(self.gram)


def beta_schedule(c: float, d: int, horizon: int, episodes: int, p: float) -> float:
    """Theory-scale bonus multiplier c * d * H * sqrt(log(2dHK/p))."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    arg = 2.0 * d * horizon * episodes / p
    if arg <= 1.0:
        raise ValueError("2dHK/p must exceed 1")
    return c * d * horizon * math.sqrt(math.log(arg))


@dataclass
class QModel:
    """Clipped optimistic Q-function for one episode.

    value(h, phi) = min(<w_h, phi> + beta * ||phi||_{Lambda_h^-1}, cap).
    When built by the tabular backward pass, q_table/v_table/policy hold the
    evaluation over every (state, action) and the penalized-argmax policy.
    """

    weights: np.ndarray  # (H, d)
    beta: float
    cap: float
    gram_inv: list  # per-h (d, d) arrays
    q_table: Optional[np.ndarray] = None  # (H, S, A)
    v_table: Optional[np.ndarray] = None  # (H, S)
    policy: Optional[np.ndarray] = None  # (H, S) int

    def value(self, h: int, phi: np.ndarray) -> float:
        phi = np.asarray(phi, dtype=float)
        if np.linalg.norm(phi) > 1.0 + NORM_SLACK:
            raise ValueError("feature norm exceeds 1")
        q = float(phi @ self.gram_inv[h] @ phi)
        if q < -RADICAND_TOL:
            raise RuntimeError(f"negative quadratic form {q:.3e}")
        return min(float(self.weights[h] @ phi) + self.beta * math.sqrt(max(q, 0.0)),
                   self.cap)


class LsviLearner:
    """Backward-pass machinery over a tabular feature set.

    Per step h it maintains the Gram state, the reward-weighted feature sum,
    features bucketed by observed next state (so regression targets
    r + V_{h+1}(x') reduce to one (d, S) matvec), and cached quadratic forms
    over all (s, a) features.  History is retained for debug rebuilds.
    """

    def __init__(self, feature_map: FeatureMap, num_states: int, num_actions: int,
                 horizon: int, lam: float, beta: float):
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.fmap = feature_map
        self.S, self.A, self.H = num_states, num_actions, horizon
        self.d = feature_map.dim
        self.lam = lam
        self.beta = beta
        self.feats = feature_map.flat  # (S*A, d)
        self.gram = [GramState(self.d, lam) for _ in range(horizon)]
        self.next_feats = [np.zeros((self.d, num_states)) for _ in range(horizon)]
        self.reward_feats = [np.zeros(self.d) for _ in range(horizon)]
        base_quad = np.einsum("nd,nd->n", self.feats, self.feats) / lam
        self.quad = [base_quad.copy() for _ in range(horizon)]
        self.history: list[list[StepRecord]] = []

    def observe(self, h: int, s: int, a: int, reward: float, next_state: int) -> None:
        phi = self.feats[s * self.A + a]
        v, denom = self.gram[h].update(phi)
        proj = self.feats @ v
        self.quad[h] -= proj * proj / denom
        self.next_feats[h][:, next_state] += phi
        self.reward_feats[h] += phi * reward

    def ingest_episode(self, trace: Sequence[StepRecord]) -> None:
        if len(trace) != self.H:
            raise ValueError(f"trace length {len(trace)} != horizon {self.H}")
        for h, rec in enumerate(trace):
            self.observe(h, rec.state, rec.action, rec.reward, rec.next_state)
        self.history.append(list(trace))

    def backward_pass(self, ghat: Optional[np.ndarray] = None,
                      z: Optional[np.ndarray] = None,
                      copy_gram: bool = True) -> QModel:
        """One sweep h = H..1 of ridge regression plus bonus.

        Regression targets are r + V_{h+1}(x') where V_{h+1} comes from this
        pass's own penalized argmax (SARSA-style backup: with constraints the
        next-step value is the value of the action the policy would take, not
        the unpenalized maximum).  ghat is the (H, S, A) optimistic cost
        table and z the (H,) penalty factors; both default to zero.
        """
        H, S, A = self.H, self.S, self.A
        weights = np.zeros((H, self.d))
        q_table = np.zeros((H, S, A))
        v_table = np.zeros((H, S))
        policy = np.zeros((H, S), dtype=np.int64)
        v_next = np.zeros(S)
        rows = np.arange(S)
        for h in range(H - 1, -1, -1):
            b = self.reward_feats[h] + self.next_feats[h] @ v_next
            w = self.gram[h].inv @ b
            if not np.isfinite(w).all():
                raise FloatingPointError(f"non-finite regression weights at step {h}")
            mean = self.feats @ w
            bonus = self.beta * np.sqrt(np.maximum(self.quad[h], 0.0))
            q = np.minimum(mean + bonus, float(H)).reshape(S, A)
            objective = q if ghat is None or z is None else \
                q - z[h] * np.maximum(ghat[h], 0.0)
            a_star = objective.argmax(axis=1)
            weights[h] = w
            q_table[h] = q
            policy[h] = a_star
            v_next = q[rows, a_star]
            v_table[h] = v_next
        gram_inv = [g.inv.copy() if copy_gram else g.inv for g in self.gram]
        return QModel(weights=weights, beta=self.beta, cap=float(H),
                      gram_inv=gram_inv, q_table=q_table, v_table=v_table,
                      policy=policy)

    def rebuild_dense(self) -> None:
        """Debug cross-check: recompute inverses and cached quadratic forms
        from the raw Gram matrices."""
        for h in range(self.H):
            self.gram[h].rebuild_dense()
            self.quad[h] = np.einsum("nd,dk,nk->n", self.feats,
                                     self.gram[h].inv, self.feats)

    def weight_norm_bound(self) -> float:
        """Theory bound 2H sqrt(dk/lam) for the current episode count."""
        k = len(self.history) + 1
        return 2.0 * self.H * math.sqrt(self.d * k / self.lam)

    def condition_numbers(self) -> list[float]:
        return [float(np.linalg.cond(g.gram)) for g in self.gram]
