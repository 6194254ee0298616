import numpy as np
import pytest

from mdptransfer.distances import d_v
from mdptransfer.domains import (CORRECT_REWARD, EAST, NORTH, SURVEIL, DomainSpec, SurveillanceLayout,
                                 bandit_mdp, block_layout, graph_surveillance, hub_spoke_layout, triangle_witness,
                                 surveillance, synthetic_singleton, windy_corridor, windy_corridor_family)
from mdptransfer.mdp import StationaryPolicy, run_episode, solve_optimal


def check_invariants(mdp):
    P = mdp.dense_transition()
    assert np.allclose(P.sum(axis=2), 1.0, atol=1e-12)
    lo, hi = mdp.reward_bounds
    assert mdp.reward.min() >= lo and mdp.reward.max() <= hi


def test_windy_family_shape_and_invariants():
    fam = windy_corridor_family()
    assert len(fam) == 100
    assert all(m.same_spaces(fam[0]) for m in fam)
    for m in fam[::11]:
        check_invariants(m)


def test_windy_calm_is_deterministic_and_wind_pushes_north():
    calm = windy_corridor(2, 0).dense_transition()
    assert set(np.unique(calm)) <= {0.0, 1.0}
    windy = windy_corridor(2, 7).dense_transition()
    probs = np.unique(windy)
    assert np.any(np.isclose(probs, 0.7)) and np.any(np.isclose(probs, 0.3))
    assert windy_corridor(2, 9).dense_transition().max() == 1.0


def test_windy_range_checks():
    with pytest.raises(ValueError):
        windy_corridor(10, 0)
    with pytest.raises(ValueError):
        windy_corridor(0, 10)


def test_windy_same_goal_transfers():
    for w in (0, 5, 9):
        assert d_v(windy_corridor(4, 0), windy_corridor(4, w)) < 1e-6


def test_surveillance_invariants_and_shared_spaces():
    a, b = surveillance([0, 5]), surveillance([3])
    check_invariants(a)
    assert a.same_spaces(b)
    with pytest.raises(ValueError):
        surveillance([1, 1])
    with pytest.raises(ValueError):
        surveillance([0, 1, 2, 3, 4])
    with pytest.raises(ValueError):
        surveillance([99])


def test_adjacent_single_target_value_by_hand():
    lay = SurveillanceLayout(5, ((2, 3),), start=(2, 2))
    mdp = surveillance([0], lay, max_targets=1, gamma=0.9)
    _, vf = solve_optimal(mdp)
    # one step east (-1), then surveil (+200)
    assert vf.v[mdp.initial_state] == pytest.approx(-1 + 0.9 * CORRECT_REWARD)


def test_two_target_sequence_bookkeeping():
    lay = SurveillanceLayout(5, ((2, 3), (2, 4)), start=(2, 2))
    mdp = surveillance([0, 1], lay, max_targets=2, gamma=0.9)
    plan = iter([EAST, SURVEIL, EAST, SURVEIL])

    class Script:
        def begin_episode(self): pass
        def act(self, s, rng): return next(plan)
        def observe(self, *a): pass
        def end_episode(self): pass

    res = run_episode(mdp, Script(), 10, np.random.default_rng(0), record=True)
    assert res.steps == 4 and sum(t[2] for t in res.trajectory) == 2 * 200 - 2


def test_wrong_surveil_penalised_without_progress():
    lay = SurveillanceLayout(5, ((2, 3),), start=(2, 2))
    mdp = surveillance([0], lay, max_targets=1)
    s = mdp.initial_state
    assert mdp.reward[s, SURVEIL] == -10
    assert mdp.dense_transition()[s, SURVEIL, s] == 1.0 and not mdp.terminal[s]


def test_block_mates_closer_than_other_blocks():
    lay = block_layout()
    base = surveillance([0, 4], lay)
    mate = surveillance([1, 5], lay)
    far = surveillance([8, 12], lay)
    assert d_v(base, mate) < d_v(base, far)
    assert d_v(base, mate) <= 10 / (1 - 0.9)


def test_full_size_layout_available():
    lay = block_layout(48, 4)
    assert len(lay.vlocs) == 64 and len(lay.groups) == 16


def graph_reward(layout, target, surveilled):
    mdp = graph_surveillance([target], layout, max_targets=1)
    r, c = layout.vlocs[surveilled]
    return mdp.reward[r * layout.grid + c, SURVEIL]


def test_hub_spoke_rewards():
    lay = hub_spoke_layout()
    hub, s1, s2 = lay.groups[0][:3]
    assert len(lay.groups[0]) == 5
    assert graph_reward(lay, hub, s1) == 190
    assert graph_reward(lay, s1, hub) == 190
    assert graph_reward(lay, s1, s2) == -10
    bare = lay.with_edges([])
    assert graph_reward(bare, hub, s1) == -10 and graph_reward(bare, hub, hub) == 200


def test_invalid_layouts_rejected():
    with pytest.raises(ValueError):
        SurveillanceLayout(4, ((0, 0), (0, 0)))
    with pytest.raises(ValueError):
        SurveillanceLayout(4, ((5, 0),))
    with pytest.raises(ValueError):
        hub_spoke_layout().with_edges([(0, 0)])


def test_triangle_witness_rewards_and_singletons():
    m1, _, _ = triangle_witness()
    assert m1.reward.tolist() == [[100, 90, -100]] and m1.gamma == 0.0
    with pytest.raises(ValueError):
        synthetic_singleton([])


def test_bandit_episode_is_one_reward():
    mdp = bandit_mdp([0.3, 0.7])
    res = run_episode(mdp, StationaryPolicy(np.array([1, 0])), 10, np.random.default_rng(0))
    assert res.steps == 1 and res.discounted_return == pytest.approx(0.7)


def test_domain_spec_builds_each_kind():
    assert DomainSpec("windy").make({"goal": 1, "wind": 2}).name == "windy-g1-w2"
    assert DomainSpec("surveillance").make({"targets": [0, 1]}).n_actions == 5
    g = DomainSpec("graph", {"edges": []}).make({"targets": [0]})
    assert g.reward.max() == 200
    assert DomainSpec("synthetic").make({"rewards": [1, 2]}).n_states == 1
    spec = DomainSpec("windy", {"gamma": 0.8})
    assert DomainSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        DomainSpec("maze")
