import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from mdptransfer.mhav import (ChainState, DensityError, EnumerableKernel, LambdaLadder, diagnostics_tv,
                              empirical_distribution, exact_target, mh_matrix, mhav_step, phi_lambda_prob,
                              phi_lambda_step, run_mhav, target_log_density, total_variation, tv_curve)


def toy_space(seed, m=4):
    rng = np.random.default_rng(seed)
    costs = rng.uniform(0, 3, m).tolist()
    K = rng.uniform(0.1, 1, (m, m))
    np.fill_diagonal(K, 0)
    K /= K.sum(axis=1, keepdims=True)
    return costs, K


def test_target_log_density_identities():
    assert target_log_density(7.3, 0.0) == 0.0
    assert target_log_density(1.0, 42.0) == 0.0
    lam, f1, f2 = 1.7, 2.0, 5.5
    ratio = math.exp(target_log_density(lam, f2) - target_log_density(lam, f1))
    assert ratio == pytest.approx(lam ** (f1 - f2))


def test_log_space_handles_huge_costs():
    lad = LambdaLadder.from_values([2.0, 1000.0])
    assert math.isfinite(target_log_density(1000.0, 1e6))
    assert lad.log_values[1] == pytest.approx(math.log(1000.0))


def test_ladder_validation():
    with pytest.raises(ValueError):
        LambdaLadder.from_values([2.0, 2.0])
    with pytest.raises(ValueError):
        LambdaLadder.from_values([0.0, 1.0])
    with pytest.raises(ValueError):
        LambdaLadder((0.0,), alpha_prime=1.0)
    g = LambdaLadder.geometric()
    assert len(g) == 20 and g.values[0] == pytest.approx(1.05) and g.values[1] == pytest.approx(1.575)


def test_ladder_walk_boundaries_and_degenerate():
    one = LambdaLadder((0.0,))
    assert phi_lambda_step(0, one, np.random.default_rng(0)) == (0, 1.0, 1.0)
    lad = LambdaLadder.from_values([1.5, 2, 3, 4], alpha_prime=0.3)
    rng = np.random.default_rng(1)
    assert phi_lambda_step(0, lad, rng) == (1, 1.0, 0.7)
    assert phi_lambda_step(3, lad, rng) == (2, 1.0, 0.3)
    for i in range(4):
        assert sum(phi_lambda_prob(i, j, lad) for j in range(4)) == pytest.approx(1.0)


def test_ladder_interior_moves_are_fair_coins():
    lad = LambdaLadder.from_values([1.5, 2, 3])
    rng = np.random.default_rng(2)
    n = 100_000
    ups = sum(phi_lambda_step(1, lad, rng)[0] == 2 for _ in range(n))
    assert abs(ups - n / 2) <= 3 * math.sqrt(n / 4)


class Fixed:
    """Kernel that always proposes ``to`` with given densities."""

    def __init__(self, to, fwd=0.5, rev=0.5):
        self.to, self.fwd, self.rev = to, fwd, rev

    def sample(self, point, rng):
        return self.to, self.fwd, self.rev


def test_lower_cost_under_symmetric_kernel_always_accepted():
    lad = LambdaLadder.from_values([2.0])
    for s in range(50):
        st_ = ChainState(0, "a", 5.0)
        # alpha tiny so the point branch fires for u in [alpha, alpha + beta)
        st_, move, acc = mhav_step(st_, lad, Fixed("b"), {"b": 1.0}.get, 1e-9, 1 - 2e-9, np.random.default_rng(s))
        if move == "point":
            assert acc and st_.point == "b" and st_.best_cost == 1.0


def test_ladder_up_acceptance_factor():
    # From interior index 1 up to 2, at cost f: ratio (lam2/lam1)^-f * (1-a')/a'.
    lad = LambdaLadder.from_values([1.5, 2.0, 3.0, 4.0], alpha_prime=0.4)
    f = 0.3
    expected = min(1.0, (3.0 / 2.0) ** -f * 0.6 / 0.4)
    costs, K = [f], np.ones((1, 1))
    P = mh_matrix(costs, K, lad, alpha=0.1, beta=0.8)
    assert P[1, 2] == pytest.approx(0.1 * 0.4 * expected, rel=1e-12)


def test_nonpositive_density_is_an_error():
    lad = LambdaLadder.from_values([2.0])
    st_ = ChainState(0, 0, 1.0)
    with pytest.raises(DensityError):
        for s in range(100):
            mhav_step(st_, lad, Fixed(1, 0.5, 0.0), lambda p: 1.0, 1e-9, 1 - 2e-9, np.random.default_rng(s))


def test_stay_branch_frequency():
    lad = LambdaLadder.from_values([2.0, 3.0])
    rng = np.random.default_rng(3)
    st_ = ChainState(0, 0, 0.0)
    n = 20_000
    stays = sum(mhav_step(st_, lad, Fixed(0), lambda p: 0.0, 0.1, 0.8, rng)[1] == "stay" for _ in range(n))
    assert abs(stays / n - 0.1) < 3 * math.sqrt(0.09 / n)


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.sampled_from([0.3, 0.5, 0.8]))
def test_mh_matrix_matches_oracle_and_balances(seed, n_lams, ap):
    costs, K = toy_space(seed)
    lad = LambdaLadder.from_values([1.2 * 1.7 ** i for i in range(n_lams)], ap)
    P = mh_matrix(costs, K, lad, 0.15, 0.7)
    ref = np.array(oracles.mh_matrix(costs, K.tolist(), list(lad.log_values), ap, 0.15, 0.7))
    assert np.allclose(P, ref, atol=1e-13)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    pi = exact_target(costs, lad)
    flow = pi[:, None] * P
    assert np.max(np.abs(flow - flow.T)) <= 1e-12
    assert np.allclose(pi @ P, pi, atol=1e-12)


def test_two_point_diagnostics_by_hand():
    # One lambda, symmetric kernel, equal costs: P = [[1-b, b], [b, 1-b]] with b = beta.
    lad = LambdaLadder.from_values([2.0])
    P = mh_matrix([1.0, 1.0], np.array([[0, 1.0], [1.0, 0]]), lad, alpha=0.1, beta=0.8)
    assert np.allclose(P, [[0.2, 0.8], [0.8, 0.2]])
    diag = diagnostics_tv(P, exact_target([1.0, 1.0], lad))
    assert diag.diameter == 1
    assert diag.delta == pytest.approx(0.4)  # min entry 0.2 over target 0.5


def test_tv_decays_under_bound_on_toy_space():
    costs, K = toy_space(11)
    lad = LambdaLadder.from_values([1.5, 3.0, 6.0])
    P = mh_matrix(costs, K, lad)
    pi = exact_target(costs, lad)
    diag = diagnostics_tv(P, pi)
    steps = [diag.diameter, 5 * diag.diameter, 20 * diag.diameter]
    for n, tv in zip(steps, tv_curve(P, pi, steps)):
        assert tv <= diag.bound(n) + 1e-12


def test_diagnostics_refuse_huge_space():
    with pytest.raises(ValueError):
        mh_matrix([0.0] * 600, np.full((600, 600), 1 / 600), LambdaLadder.from_values([2.0, 3.0]))


def test_sampled_chain_matches_exact_transitions():
    costs, K = toy_space(5, m=3)
    lad = LambdaLadder.from_values([1.5, 2.5])
    P = mh_matrix(costs, K, lad)
    kernel = EnumerableKernel(K)
    rng = np.random.default_rng(9)
    start = 1 * 3 + 2
    counts = np.zeros(6)
    n = 50_000
    for _ in range(n):
        st_ = ChainState(1, 2, costs[2])
        st_, _, _ = mhav_step(st_, lad, kernel, costs.__getitem__, 0.1, 0.8, rng)
        counts[st_.lambda_idx * 3 + st_.point] += 1
    expected = P[start] * n
    mask = expected > 0
    chi2 = float((((counts - expected) ** 2)[mask] / expected[mask]).sum())
    assert chi2 < 25.0  # df <= 5, far beyond the 0.999 quantile (20.5)
    assert np.all(counts[~mask] == 0)


def test_long_run_frequencies_match_target():
    costs, K = toy_space(6)
    lad = LambdaLadder.from_values([1.5, 2.5])
    P = mh_matrix(costs, K, lad)
    pi = exact_target(costs, lad)
    emp = empirical_distribution(P, 0, 200, 20_000, np.random.default_rng(0))
    assert total_variation(emp, pi) < 0.05


def test_mass_on_minimisers_once_mixed():
    costs = [0.0, 2.0, 2.0, 3.0]
    K = np.full((4, 4), 1 / 3)
    np.fill_diagonal(K, 0)
    lad = LambdaLadder.from_values([5.0, 20.0, 80.0])
    P = mh_matrix(costs, K, lad)
    pi = exact_target(costs, lad)
    theta = sum(pi[i * 4] for i in range(3))
    tv = tv_curve(P, pi, [400], start=3)[0]
    Pn = np.linalg.matrix_power(P, 400)[3]
    assert sum(Pn[i * 4] for i in range(3)) >= theta - tv - 1e-12


def test_run_mhav_constant_cost_and_determinism():
    K = EnumerableKernel(np.full((5, 5), 0.2))
    res = run_mhav(lambda p: 3.0, K, t_m=50, restarts=2, seed=1)
    assert res.best_cost == 3.0
    costs = [4.0, 1.0, 3.0, 0.5, 2.0]
    a = run_mhav(costs.__getitem__, K, t_m=200, restarts=3, seed=7, trace_every=1)
    b = run_mhav(costs.__getitem__, K, t_m=200, restarts=3, seed=7, trace_every=1)
    assert a.trace == b.trace and a.best_point == 3 and a.best_cost == 0.5
    best = [row[5] for row in a.trace]
    assert all(x >= y for x, y in zip(best, best[1:]))


def test_trace_file(tmp_path):
    K = EnumerableKernel(np.full((3, 3), 1 / 3))
    res = run_mhav([1.0, 2.0, 0.0].__getitem__, K, t_m=10, restarts=1, seed=0, trace_every=2)
    res.write_trace(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,restart,log_lambda,cost,accepted,best_so_far"
    assert len(lines) == 6
