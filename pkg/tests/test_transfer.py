import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdptransfer.agents import QLearningParams
from mdptransfer.domains import bandit_mdp, windy_corridor
from mdptransfer.mdp import StationaryPolicy, solve_optimal
from mdptransfer.transfer import (Exp3Transfer, LearningRecord, ReturnNormalizer, TransferParams, auto_beta,
                                  exp3_transfer_run, normalize_return, policy_reuse_run, q_learning_run,
                                  regret_bound, softmax_probs)


def test_probabilities_by_direct_substitution():
    b = Exp3Transfer(2, 100, beta=0.3)
    b.log_w = [math.log(2.0), 0.0, 0.0]
    # (1 - 0.3) * w / 4 + 0.3 / 3
    assert b.probabilities() == pytest.approx([0.45, 0.275, 0.275], abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0.0, 1.0), st.data())
def test_probability_vector_valid(logw, beta, data):
    b = Exp3Transfer(len(logw) - 1, 100, beta=beta)
    b.log_w = list(logw)
    for k in data.draw(st.sets(st.integers(0, len(logw) - 2), max_size=len(logw) - 1)):
        b.active[k] = False
    p = b.probabilities()
    assert sum(p) == pytest.approx(1.0, abs=1e-12)
    n_act = sum(b.active)
    for pi, a in zip(p, b.active):
        assert (pi >= beta / n_act - 1e-15) if a else pi == 0.0


def test_beta_one_and_equal_weights_are_uniform():
    assert Exp3Transfer(3, 10, beta=1.0).probabilities() == pytest.approx([0.25] * 4)
    assert Exp3Transfer(3, 10, beta=0.2).probabilities() == pytest.approx([0.25] * 4)


def test_update_hand_computed_and_touches_one_arm():
    b = Exp3Transfer(2, 100, beta=0.3)
    b.update(1, 0.6, 0.25)
    # exp(0.3 * 0.6 / (0.25 * 3))
    assert b.weights.tolist() == pytest.approx([1.0, math.exp(0.24), 1.0])
    b.update(0, 0.0, 0.5)
    assert b.weights[0] == 1.0
    assert b.pulls == [1, 1, 0] and b.z == [0.0, 0.6, 0.0]


def test_removed_arm_cannot_be_updated_and_all_sources_removed_leaves_learner():
    b = Exp3Transfer(2, 100, beta=0.3)
    b.active[0] = b.active[1] = False
    assert b.probabilities() == [0.0, 0.0, 1.0]
    assert b.select(np.random.default_rng(0)) == (2, 1.0)
    with pytest.raises(ValueError):
        b.update(0, 1.0, 0.5)


def elimination_threshold(delta, c, n):
    return 2 * math.sqrt(-math.log(delta / (2 * c)) / (2 * n))


def test_elimination_threshold_hand_value():
    # delta = 0.5, c = 1, n = 200 on both arms.
    eps = elimination_threshold(0.5, 1, 200)
    assert eps == pytest.approx(2 * math.sqrt(math.log(4) / 400)) and eps == pytest.approx(0.117741, abs=1e-6)
    assert 2 * Exp3Transfer(1, 1000, delta=0.5)._elim / math.sqrt(200) == pytest.approx(eps)


@pytest.mark.parametrize("offset, removed", [(1e-6, True), (-1e-6, False)])
def test_elimination_fires_exactly_past_the_threshold(offset, removed):
    eps = elimination_threshold(0.5, 2, 200)
    b = Exp3Transfer(2, 1000, delta=0.5, interval=10 ** 9)
    b.pulls[:2] = [200, 200]
    b.z[:2] = [200 * 0.6, 200 * (0.6 - eps - offset)]
    assert (1 in b.elimination_check()) is removed
    assert 0 in b.active_arms


def test_elimination_uses_the_configured_delta():
    b = Exp3Transfer(1, 1000, delta=0.5)
    assert b._elim == pytest.approx(math.sqrt(-math.log(0.25) / 2))


def test_identical_means_never_removed_and_learner_never_candidate():
    b = Exp3Transfer(2, 1000)
    b.pulls = [500, 500, 10 ** 6]
    b.z = [250.0, 250.0, 0.0]
    assert b.elimination_check() == set()
    b.z = [500.0, 0.0, 0.0]
    assert b.elimination_check() == {1}
    assert 2 in b.active_arms


def test_zero_pull_arms_are_skipped():
    b = Exp3Transfer(2, 1000)
    b.pulls = [1000, 0, 0]
    b.z = [1000.0, 0.0, 0.0]
    assert b.elimination_check() == set()


def test_normalizer_bounds_and_clipping():
    assert normalize_return(0.0, 0.0, 200.0, 0.9) == 0.0
    assert normalize_return(2000.0, 0.0, 200.0, 0.9) == pytest.approx(1.0)
    assert normalize_return(1000.0, 0.0, 200.0, 0.9) == pytest.approx(0.5)
    n = ReturnNormalizer(-10.0, 0.0, 0.5)
    assert n(-20.0) == 0.0 and n(-10.0) == pytest.approx(0.5)
    assert n(-25.0) == 0.0 and n(3.0) == 1.0 and n.clipped == 2
    with pytest.raises(ValueError):
        ReturnNormalizer(1.0, 1.0, 0.5)


def test_auto_beta_and_regret_bound():
    assert auto_beta(2, 10_000) == pytest.approx(math.sqrt(3 * math.log(3) / (10_000 * (math.e - 1))))
    assert auto_beta(50, 1) == 1.0
    assert regret_bound(2, 10_000, 1.0, 0.9) == pytest.approx(2.63 * 10 * math.sqrt(3 * math.log(3) * 10_000))


def test_softmax_limits():
    assert softmax_probs([0.1, 0.9, 0.5], 1e9) == pytest.approx([1 / 3] * 3)
    assert softmax_probs([0.1, 0.9, 0.5], 1e-4) == pytest.approx([0, 1, 0])


def test_record_csv_round_trip(tmp_path):
    rec = LearningRecord()
    rec.append(1, -3.5, 0.25, (0, 1))
    rec.append(0, 2.0, 0.75, (0,))
    rec.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(LearningRecord.HEADER)
    assert lines[2] == "1,0,2.0,0.75,0,-1.5"
    back = LearningRecord.read_csv(tmp_path / "r.csv")
    assert back.raw_return == rec.raw_return and back.active_arms == rec.active_arms
    assert rec.total == -1.5 and rec.final == 2.0


def test_params_round_trip():
    p = TransferParams(t_horizon=7, beta=0.2, q=QLearningParams(alpha=0.3))
    assert TransferParams.from_dict(p.to_dict()) == p


FAST = TransferParams(t_horizon=300, horizon=60)


def test_zero_sources_is_q_learning_episode_for_episode():
    mdp = windy_corridor(3, 4)
    a = exp3_transfer_run(mdp, [], FAST, seed=11)
    b = q_learning_run(mdp, FAST, seed=11)
    assert a.to_csv() == b.to_csv()


def test_policy_reuse_without_sources_is_q_learning():
    mdp = windy_corridor(3, 4)
    assert policy_reuse_run(mdp, [], FAST, seed=5).raw_return == q_learning_run(mdp, FAST, seed=5).raw_return


def test_runs_are_deterministic_and_record_valid_probabilities():
    mdp = windy_corridor(1, 2)
    srcs = [solve_optimal(windy_corridor(g, 0))[0] for g in (1, 7)]
    a = exp3_transfer_run(mdp, srcs, FAST, seed=3)
    b = exp3_transfer_run(mdp, srcs, FAST, seed=3)
    assert a.to_csv() == b.to_csv()
    assert all(0.0 <= x <= 1.0 for x in a.normalized_return) and a.clipped == 0
    removed = [set(range(3)) - set(s) for s in a.active_arms]
    assert all(x <= y for x, y in zip(removed, removed[1:]))


def test_policy_reuse_tries_every_option_first():
    mdp = windy_corridor(1, 2)
    srcs = [solve_optimal(windy_corridor(g, 0))[0] for g in (1, 7)]
    rec = policy_reuse_run(mdp, srcs, FAST, seed=0)
    assert rec.arm[:3] == [0, 1, 2]


def test_optimal_source_reaches_near_optimal_return():
    target = windy_corridor(6, 3)
    pi_star, vf = solve_optimal(target)
    v_star = float(vf.v[target.initial_state])
    others = [solve_optimal(windy_corridor(g, 0))[0] for g in (0, 9)]
    params = TransferParams(t_horizon=10_000, horizon=100)
    finals = []
    for seed in range(3):
        rec = exp3_transfer_run(target, others + [pi_star], params, seed)
        finals.append(np.mean(rec.raw_return[-100:]))
    assert abs(np.mean(finals) - v_star) <= 0.05 * abs(v_star)


def test_bandit_regret_within_bound_single_seed():
    means = [0.2, 0.8, 0.5]
    mdp = bandit_mdp(means + [0.0])
    srcs = [StationaryPolicy(np.array([a, 0])) for a in range(3)]
    params = TransferParams(t_horizon=2000, horizon=2)
    rec = exp3_transfer_run(mdp, srcs, params, seed=0)
    regret = 2000 * max(means) - rec.total
    assert regret <= regret_bound(3, 2000, 1.0, 0.9)
