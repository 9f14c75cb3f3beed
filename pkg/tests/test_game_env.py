import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alertgame import policies as P
from alertgame.game_env import (
    CSV_COLUMNS, CostFunction, GameConfig, GameState, IllegalActionError, defender_cost,
    env_rng, episode, legal_actions_attacker, legal_actions_defender, observe, reset,
    shaped_reward_attacker, shaped_reward_defender, simulate_runs, step,
)
from alertgame.queue_core import DisturbanceModel, QueueParams


def test_cost_anchors():
    f = CostFunction()
    assert f(1175) == 0.0 and f(4350) == 1.0
    assert f((1175 + 4350) / 2) == pytest.approx(0.5, abs=1e-15)
    assert f(0) == 0.0 and f(10_000) == 1.0


def test_cost_appendix_point():
    assert defender_cost(GameState(4210, 10, 0, 0), 0) == pytest.approx(3035 / 3175, abs=1e-12)


@given(st.floats(-1e4, 1e5), st.floats(-1e4, 1e5))
def test_cost_monotone_and_bounded(u, v):
    f = CostFunction()
    lo, hi = sorted((u, v))
    assert 0.0 <= f(lo) <= f(hi) <= 1.0


def test_reset_paper(paper):
    state, dobs, aobs = reset(paper, seed=0)
    assert state == GameState(1175, 336, 28800, 28800)
    assert dobs.backlog == 1175 and dobs.defender_remaining == 28800
    assert aobs.state == state


def test_zero_budget_defender_only_spends_zero(paper):
    cfg = paper.replace(defender_budget=0)
    state, _, _ = reset(cfg)
    rng = env_rng(0)
    nxt, _, _, _ = step(cfg, state, 2400, 0, rng)
    assert nxt.x == 0 and nxt.b >= 0


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        GameConfig(defender_chunk=70)
    with pytest.raises(ValueError):
        GameConfig(cost_anchor_low=10, cost_anchor_high=10)
    with pytest.raises(ValueError):
        GameConfig(horizon=0)


def test_action_set_sizes(paper):
    assert len(legal_actions_defender(None, paper)) == 41
    assert len(legal_actions_attacker(None, paper.replace(attacker_chunk=30))) == 81
    assert legal_actions_defender(None, paper.replace(defender_chunk=2400)) == [0, 2400]
    assert legal_actions_attacker(None, paper.replace(attacker_chunk=2400)) == [0, 2400]
    zero_cap = paper.replace(per_hour_cap=0)
    assert legal_actions_defender(None, zero_cap) == [0]
    assert legal_actions_attacker(None, zero_cap) == [0]


def test_uncapped_attacker_switch(desk):
    cfg = desk.replace(attacker_uncapped=True)
    assert max(legal_actions_attacker(None, cfg)) == desk.attacker_budget


@pytest.mark.parametrize("b,d,cost", [(1175, 0, 0.0), (4350, 0, 1.0)])
def test_defender_cost_anchors(b, d, cost):
    assert defender_cost(GameState(b, 5, 100, 100), d) == cost


def test_defender_cost_uses_remaining_budget():
    s = GameState(4350, 5, 100, 100)
    assert defender_cost(s, 2400) == CostFunction()(4250)


def test_step_bookkeeping(paper):
    s = GameState(2000, 10, 5000, 5000)
    rng = env_rng(3)
    assert defender_cost(s, 2400) == 0.0
    nxt, dobs, aobs, c = step(paper, s, 2400, 0, rng)
    assert nxt.x == 2600 and nxt.y == 5000 and nxt.n == 9 and c == 0.0
    assert dobs.last_defender_action == 2400


def test_attacker_clamped_by_budget(paper):
    s = GameState(0, 10, 0, 100)
    a1 = env_rng(5)
    a2 = env_rng(5)
    with_attack, _, _, _ = step(paper, s, 0, 2400, a1)
    without, _, _, _ = step(paper, GameState(0, 10, 0, 0), 0, 0, a2)
    assert with_attack.y == 0
    # same arrival stream: the attack adds at most 100 alerts
    assert 0 <= with_attack.b - without.b <= 100


def test_tiny_rate_drains():
    cfg = GameConfig.desk(queue=QueueParams(1e-9, 96.0, DisturbanceModel.fixed()))
    nxt, _, _, _ = step(cfg, GameState(50, 3, 0, 0), 0, 0, env_rng(0))
    assert nxt.b == 0


def test_terminal_and_illegal_steps(paper):
    with pytest.raises(ValueError):
        step(paper, GameState(0, 0, 0, 0), 0, 0, env_rng(0))
    with pytest.raises(IllegalActionError):
        step(paper, GameState(0, 3, 0, 0), 30, 0, env_rng(0))
    with pytest.raises(IllegalActionError):
        step(paper, GameState(0, 3, 0, 0), 0, 2460, env_rng(0))


def test_shaping_neutral_rate(desk):
    # X/N = 25: keeping x' = 250 with n' = 10 is the neutral rate, q = 1/2
    s = GameState(0, 11, 250, 250)
    assert shaped_reward_defender(desk, s, 0) == pytest.approx(0.05)
    assert shaped_reward_attacker(desk, s, 0, 0) == pytest.approx(0.05)


def test_shaping_q_half_at_budget_neutral_rate(paper):
    from alertgame import _kernels as K
    assert K.shaping_q(28800 / 336 * 100, 100, 28800.0, 336.0) == pytest.approx(0.5)
    assert K.shaping_q(0.0, 100, 28800.0, 336.0) == 0.0
    assert K.shaping_q(1.0, 10, 0.0, 336.0) == 0.0


def test_shaping_boundaries(paper):
    s = GameState(1000, 10, 28800, 28800)
    # x' = 0 leaves only the cost term
    s0 = GameState(1000, 10, 0, 0)
    assert shaped_reward_defender(paper, s0, 0) == 0.0
    assert shaped_reward_attacker(paper, s0, 0, 0) == 0.0
    # full budget late in the game saturates q at 1
    assert shaped_reward_defender(paper, s, 0) == pytest.approx(0.1)
    hot = GameState(4350, 10, 0, 28800)
    assert shaped_reward_attacker(paper, hot, 0, 0) == pytest.approx(1.1)


def test_zero_sum_unshaped(paper):
    cfg = paper.replace(shaping_weight=0.0)
    for b in (0, 1500, 3000, 5000):
        s = GameState(b, 5, 1000, 1000)
        for d in (0, 60, 2400):
            assert shaped_reward_defender(cfg, s, d) + shaped_reward_attacker(cfg, s, d, 0) == 0.0


def test_observation_projection():
    s = GameState(10, 3, 20, 30)
    dobs, aobs = observe(s, 60, 120)
    assert (dobs.backlog, dobs.remaining_hours, dobs.defender_remaining,
            dobs.last_defender_action) == (10, 3, 20, 60)
    assert not hasattr(dobs, "y") and not hasattr(dobs, "attacker_remaining")
    assert aobs.state == s and aobs.last_attacker_action == 120


def test_episode_zero_policies_tiny_rate():
    cfg = GameConfig.desk(queue=QueueParams(1e-9, 96.0, DisturbanceModel.fixed()),
                          initial_backlog=0)
    t = episode(P.zero_policy("defender"), P.zero_policy("attacker"), cfg, seed=1)
    assert t.sup_cost == 0.0


def test_episode_deterministic(desk):
    d, a = P.s1_policy(desk), P.default_stochastic_attacker(desk)
    t1 = episode(d, a, desk, seed=4, run=2)
    t2 = episode(d, a, desk, seed=4, run=2)
    assert np.array_equal(t1.records, t2.records) and np.array_equal(t1.costs, t2.costs)


def test_dump_vs_zero_defender_saturates(paper):
    cfg = paper.replace(attacker_budget=33600)
    rs = simulate_runs(P.zero_policy("defender"), P.dump_attacker(cfg), cfg, 200, seed=3)
    assert np.mean(rs.sup_costs == 1.0) >= 0.99


def test_runs_independent_of_jobs(desk):
    d, a = P.s2_policy(desk), P.random_policy("attacker", desk)
    r1 = simulate_runs(d, a, desk, 40, seed=8, jobs=1)
    r3 = simulate_runs(d, a, desk, 40, seed=8, jobs=3)
    assert np.array_equal(r1.records, r3.records)
    part = simulate_runs(d, a, desk, 10, seed=8, first_run=30)
    assert np.array_equal(part.records, r1.records[30:])


def test_illegal_policy_aborts(desk):
    bad = P.constant_policy("defender", 30)
    with pytest.raises(IllegalActionError, match="run 0, hour 1"):
        episode(bad, P.zero_policy("attacker"), desk)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), which=st.sampled_from(["s1", "full", "random"]),
       att=st.sampled_from(["dump", "random", "stoch"]))
def test_trace_invariants(seed, which, att):
    cfg = GameConfig.desk()
    d = {"s1": P.s1_policy(cfg), "full": P.full_spend_defender(cfg),
         "random": P.random_policy("defender", cfg)}[which]
    a = {"dump": P.dump_attacker(cfg), "random": P.random_policy("attacker", cfg),
         "stoch": P.default_stochastic_attacker(cfg)}[att]
    rs = simulate_runs(d, a, cfg, 5, seed=seed)
    for t in rs:
        x_prev = np.concatenate(([cfg.defender_budget], t.x[:-1]))
        y_prev = np.concatenate(([cfg.attacker_budget], t.y[:-1]))
        assert (np.diff(np.concatenate(([cfg.defender_budget], t.x))) <= 0).all()
        assert (np.diff(np.concatenate(([cfg.attacker_budget], t.y))) <= 0).all()
        assert np.array_equal(t.d_eff, np.minimum(t.d, x_prev))
        assert np.array_equal(t.a_eff, np.minimum(t.a, y_prev))
        assert t.defender_spend <= cfg.defender_budget
        assert t.attacker_spend <= cfg.attacker_budget
        assert ((t.costs >= 0) & (t.costs <= 1)).all() and 0 <= t.sup_cost <= 1
        assert (t.b_post >= 0).all()
        expect = np.maximum(0, t.b_pre - t.d_eff + t.a_eff + t.arrivals - t.capacity)
        assert np.array_equal(t.b_post, expect)
        assert np.array_equal(t.b_pre[1:], t.b_post[:-1])
        post_alloc = np.maximum(0, t.b_pre - t.d_eff)
        assert np.allclose(t.costs, [cfg.cost(v) for v in post_alloc])


def test_csv_schema(desk):
    rs = simulate_runs(P.s1_policy(desk), P.dump_attacker(desk), desk, 2, seed=1)
    buf = io.StringIO()
    rows = list(rs[0].csv_rows())
    assert len(rows) == desk.horizon and rows[0][0] == 1
    assert all(len(r) == len(CSV_COLUMNS) for r in rows)
    assert all(isinstance(v, int) for v in rows[0][:-1])
    assert rows[0][-1] == f"{rs[0].costs[0]:.6f}"


def test_runset_csv(tmp_path, desk):
    rs = simulate_runs(P.s1_policy(desk), P.dump_attacker(desk), desk, 3, seed=1)
    path = tmp_path / "t.csv"
    rs.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["run", *CSV_COLUMNS]
    assert len(rows) == 1 + 3 * desk.horizon


def test_config_roundtrip_and_hash(desk):
    again = GameConfig.from_dict(desk.to_dict())
    assert again == desk and again.config_hash() == desk.config_hash()
    assert desk.replace(attacker_chunk=30).config_hash() != desk.config_hash()
