import numpy as np
import pytest

from safe_lsvi.penalty import PenaltyLedger, penalized_argmax


# ---------------------------------------------------------------------------
# Rectified update
# ---------------------------------------------------------------------------

def test_rectified_safe_cost_adds_nothing():
    ledger = PenaltyLedger(2, "rectified")
    ledger.penalty_update(0, -1.0, k=1)
    assert ledger.z[0] == 1.0


def test_rectified_positive_cost_accumulates():
    ledger = PenaltyLedger(1, "rectified")
    ledger.penalty_update(0, 0.5, k=1)
    assert ledger.z[0] == 1.5


def test_rectified_floor_activates():
    ledger = PenaltyLedger(1, "rectified")
    ledger.z[0] = 3.0
    ledger.penalty_update(0, -0.2, k=10)
    assert ledger.z[0] == 10.0


def test_rectified_initialized_at_one():
    ledger = PenaltyLedger(4, "rectified")
    assert np.all(ledger.z == 1.0)


def test_rectified_floor_and_monotone_invariants():
    rng = np.random.default_rng(0)
    ledger = PenaltyLedger(3, "rectified")
    prev = ledger.z.copy()
    for k in range(1, 100):
        costs = rng.uniform(-1, 1, size=3)
        ledger.end_episode(costs, k)
        assert np.all(ledger.z >= k)
        assert np.all(ledger.z >= prev - 1e-12)
        prev = ledger.z.copy()


def test_rectified_mode_guard():
    ledger = PenaltyLedger(2, "virtual_queue")
    with pytest.raises(ValueError):
        ledger.penalty_update(0, 0.5, k=1)


# ---------------------------------------------------------------------------
# Virtual queue update
# ---------------------------------------------------------------------------

def test_virtual_queue_floor_at_zero():
    ledger = PenaltyLedger(1, "virtual_queue")
    ledger.virtual_queue_update(0, -1.0)
    assert ledger.z[0] == 0.0


def test_virtual_queue_signed_decrement():
    ledger = PenaltyLedger(1, "virtual_queue")
    ledger.z[0] = 2.0
    ledger.virtual_queue_update(0, -0.5)
    assert ledger.z[0] == 1.5


def test_virtual_queue_alternating_costs_oscillate():
    ledger = PenaltyLedger(1, "virtual_queue")
    seen = []
    for i in range(10):
        ledger.virtual_queue_update(0, 1.0 if i % 2 == 0 else -1.0)
        seen.append(ledger.z[0])
    assert seen == [1.0, 0.0] * 5


def test_virtual_queue_cancellation_is_possible():
    # A sequence with positive rectified mass can still end with Z = 0.
    ledger = PenaltyLedger(1, "virtual_queue")
    costs = [1.0, -1.0] * 5
    positive_mass = sum(max(c, 0.0) for c in costs)
    for c in costs:
        ledger.virtual_queue_update(0, c)
    assert positive_mass == 5.0
    assert ledger.z[0] == 0.0


def test_virtual_queue_mode_guard():
    ledger = PenaltyLedger(2, "rectified")
    with pytest.raises(ValueError):
        ledger.virtual_queue_update(0, 0.5)


def test_off_mode_stays_zero():
    ledger = PenaltyLedger(3, "off")
    ledger.end_episode([1.0, 1.0, 1.0], k=5)
    assert np.all(ledger.z == 0.0)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        PenaltyLedger(2, "lagrangian")


def test_cost_range_validated():
    ledger = PenaltyLedger(1, "rectified")
    with pytest.raises(ValueError):
        ledger.penalty_update(0, 1.5, k=1)


# ---------------------------------------------------------------------------
# Penalized argmax
# ---------------------------------------------------------------------------

def test_argmax_zero_penalty_is_plain_argmax():
    a, value = penalized_argmax(np.array([1.0, 3.0, 2.0]),
                                np.array([0.9, 0.9, 0.9]), z=0.0)
    assert a == 1 and value == 3.0


def test_argmax_hand_computed_case():
    q = np.array([5.0, 4.0])
    ghat = np.array([0.5, -1.0])
    a, value = penalized_argmax(q, ghat, z=10.0)
    # objectives are (0, 4): the penalty eliminates the Q-greedy action
    assert a == 1 and value == 4.0


def test_argmax_all_safe_ignores_z():
    q = np.array([2.0, 7.0, 4.0])
    ghat = np.array([-0.1, -0.5, -0.9])
    for z in (0.0, 1.0, 1e9):
        a, _ = penalized_argmax(q, ghat, z)
        assert a == 1


def test_argmax_ties_break_low_index():
    a, _ = penalized_argmax(np.array([1.0, 1.0]), np.array([-1.0, -1.0]), 3.0)
    assert a == 0


def test_argmax_constant_shift_invariant():
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.normal(size=5)
        g = rng.uniform(-1, 1, size=5)
        z = float(rng.uniform(0, 10))
        a1, _ = penalized_argmax(q, g, z)
        a2, _ = penalized_argmax(q + 7.3, g, z)
        assert a1 == a2


def test_argmax_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        penalized_argmax(np.array([]), np.array([]), 1.0)
    with pytest.raises(ValueError):
        penalized_argmax(np.array([1.0]), np.array([1.0, 2.0]), 1.0)
