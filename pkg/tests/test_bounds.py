import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alertgame.bounds import (
    BoundInputs, bound_report, busy_cycle_stats, dump_attack_analysis, poisson_lower_tail_bound,
    theorem1_lower_bound, threshold_expected_utility,
)
from alertgame.game_env import CostFunction, GameConfig
from alertgame.queue_core import HourOutcome


def test_theorem1_reduces_when_f_zero():
    inp = BoundInputs(1000)
    assert theorem1_lower_bound(inp) == pytest.approx((1 - 1 / 1000) ** (336 * 1920 / 1000) - 1)


def test_theorem1_large_b_limit():
    # p ~ exp(-N mu / B^2) -> 1 and f saturates at 1, so the bound tends to 1
    v = theorem1_lower_bound(BoundInputs(1e9, cost=CostFunction(1175, 4350)))
    assert v == pytest.approx(2 * math.exp(-336 * 1920 / 1e18) - 1, abs=1e-9)


def test_theorem1_b1500():
    # (1 + 325/3175) * (1 - 1/1500)^(336*1920/1500) - 1
    assert theorem1_lower_bound(BoundInputs(1500)) == pytest.approx(-0.17251167, abs=1e-7)
    # the two-outcome argument, -f(B) w.p. p else -1, gives the smaller value
    assert threshold_expected_utility(BoundInputs(1500)) == pytest.approx(-0.32618808, abs=1e-7)


def test_theorem1_rejects():
    with pytest.raises(ValueError):
        BoundInputs(1)
    with pytest.raises(ValueError):
        theorem1_lower_bound(BoundInputs(1500, attacker_budget=30000))


def test_theorem1_monotone_above_high_anchor():
    grid = np.linspace(4350, 200_000, 400)
    vals = [theorem1_lower_bound(BoundInputs(b)) for b in grid]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_poisson_tail_examples():
    v = poisson_lower_tail_bound(1919, 14, 0.3)
    assert v == pytest.approx(math.exp(-0.09 * 1919 / 28))
    assert v <= 0.0021 and round(v, 3) == 0.002
    assert poisson_lower_tail_bound(1919, 14, 0.0) == 1.0
    assert poisson_lower_tail_bound(2 * 1919, 14, 0.3) == pytest.approx(v ** 2)


@given(st.floats(0.1, 5000), st.floats(0.01, 0.9), st.floats(0.01, 0.9))
def test_poisson_tail_monotone(lam, f1, f2):
    lo, hi = sorted((f1, f2))
    a, b = poisson_lower_tail_bound(lam, 14, lo), poisson_lower_tail_bound(lam, 14, hi)
    assert 0 < b <= a <= 1
    assert poisson_lower_tail_bound(lam * 2, 14, lo) <= a


def test_dump_chain_paper():
    r = dump_attack_analysis(GameConfig.paper(attacker_budget=33600))
    assert (r.hours, r.dump_total, r.arrivals_lower, r.served, r.absorbed, r.residual_backlog) == \
        (14, 33600, 26290, 26880, 590, 4210)
    assert r.utility_bound <= -0.953 and abs(r.utility_bound + 0.953) < 0.001
    assert r.confidence >= 0.9979 and round(r.confidence, 3) == 0.998


def test_dump_regime_edge():
    r = dump_attack_analysis(GameConfig.paper(attacker_budget=28800 + 4801))
    assert r.guarantee and r.residual_backlog > 1175


def test_dump_huge_service_no_guarantee():
    from alertgame.queue_core import QueueParams
    cfg = GameConfig.paper(attacker_budget=33600, queue=QueueParams(1919, 10**6))
    r = dump_attack_analysis(cfg)
    assert not r.guarantee and r.residual_backlog == 0


def test_dump_rejects_outside_regime():
    with pytest.raises(ValueError):
        dump_attack_analysis(GameConfig.paper(attacker_budget=30000))


def test_busy_cycles_trivial():
    assert busy_cycle_stats(np.zeros(20, dtype=int)).cycle_count == 0
    st_ = busy_cycle_stats([0, 5, 0])
    assert st_.cycle_count == 1 and st_.cycle_max.tolist() == [5] and not st_.open_cycle


def test_busy_cycles_open_and_outcomes():
    st_ = busy_cycle_stats([HourOutcome(0, 0, v, 0) for v in (0, 3, 0, 2, 7)])
    assert st_.cycle_count == 1 and st_.open_cycle and st_.open_cycle_max == 7
    never = busy_cycle_stats([4, 5, 6], initial=4)
    assert never.cycle_count == 0 and never.open_cycle


@given(st.lists(st.integers(0, 30), max_size=200))
def test_busy_cycle_tails_consistent(series):
    st_ = busy_cycle_stats(series)
    tails = st_.tails(range(1, 32))
    assert ((tails >= 0) & (tails <= 1)).all()
    assert (np.diff(tails) <= 0).all()
    closed_positive = st_.cycle_count + int(st_.open_cycle)
    arr = np.concatenate(([0], series, [0]))
    starts = np.count_nonzero((arr[1:] > 0) & (arr[:-1] == 0))
    assert closed_positive == starts


def test_bound_report_shape():
    rep = bound_report(GameConfig.paper(attacker_budget=33600))
    assert rep["dump_attack"]["residual_backlog"] == 4210
    assert rep["threshold_rule"][0]["threshold"] == 1500
