import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from strategies import set_from_beliefs, small_models

from fwpomdp.belief import HistoryWindow, bayes_update, bl_distance, expected_cost, filter_from_history
from fwpomdp.errors import ModelError, NotConverged
from fwpomdp.finite_mdp import (
    FiniteBeliefMdp,
    WindowPolicy,
    build_finite_mdp,
    finite_window_action,
    greedy_policy,
    solve_window,
    value_iteration,
)
from fwpomdp.model import build_machine_repair
from fwpomdp.quantizer import build_quantized_set


def toy_mdp(costs, probs, succ, beta):
    """A hand-built finite MDP; the attached model only supplies the discount."""
    costs = np.asarray(costs, dtype=float)
    k = costs.shape[0]
    model = build_machine_repair(0.3, 0.2, 0.1, beta=beta)
    states = set_from_beliefs(np.tile([0.5, 0.5], (k, 1)))
    return FiniteBeliefMdp(states, model, costs, np.asarray(probs, dtype=float), np.asarray(succ))


def check_fixed_point(mdp, solved):
    q = mdp.bellman(solved.values)
    assert np.max(np.abs(solved.values - q.min(axis=1))) <= solved.tolerance
    assert solved.residual <= solved.tolerance * (1 - mdp.discount) / mdp.discount
    beta = mdp.discount
    h = solved.residual_history
    assert all(h[k + 1] <= beta * h[k] + 1e-12 for k in range(len(h) - 1))
    cmax = np.max(np.abs(mdp.model.cost))
    assert np.all(solved.values >= -1e-12)
    assert np.all(solved.values <= cmax / (1 - beta) + 1e-9)


def test_single_state_geometric_series():
    mdp = toy_mdp([[1.0]], [[[1.0]]], [[[0]]], 0.8)
    solved = value_iteration(mdp, tolerance=1e-10)
    assert solved.values[0] == pytest.approx(5.0, abs=1e-10)
    assert solved.policy.tolist() == [0]


def test_two_absorbing_states_closed_form():
    # costs 0 and 1, each state absorbing: values 0 and 1/(1-0.5) = 2
    mdp = toy_mdp([[0.0], [1.0]], [[[1.0]], [[1.0]]], [[[0]], [[1]]], 0.5)
    solved = value_iteration(mdp, tolerance=1e-12)
    np.testing.assert_allclose(solved.values, [0.0, 2.0], atol=1e-12)


def test_zero_cost_gives_zero_values(case1):
    m = case1.replace(cost=np.zeros((2, 2)))
    mdp, solved = solve_window(m, 1)
    np.testing.assert_array_equal(solved.values, 0.0)
    assert solved.iteration_count == 1


def test_not_converged_carries_residual(case1):
    mdp = build_finite_mdp(build_quantized_set(case1, 1), case1)
    with pytest.raises(NotConverged) as info:
        value_iteration(mdp, tolerance=1e-12, max_iter=3)
    assert info.value.max_iter == 3
    assert info.value.residual > 0


def test_tolerance_must_be_positive(case1):
    mdp = build_finite_mdp(build_quantized_set(case1, 0), case1)
    with pytest.raises(ModelError):
        value_iteration(mdp, tolerance=0.0)


def test_greedy_policy_ties_to_lowest_action():
    q = np.array([[1.0, 1.0, 2.0], [3.0, 1.0, 1.0 + 1e-14], [2.0, 1.0, 0.5]])
    assert greedy_policy(q).tolist() == [0, 1, 2]


def test_machine_repair_branch_structure(case1):
    q = build_quantized_set(case1, 1)
    mdp = build_finite_mdp(q, case1)
    for i in range(mdp.n_states):
        for u in range(2):
            br = mdp.branches(i, u)
            assert len(br) == case1.n_obs
            assert sum(p for p, _ in br) == pytest.approx(1.0, abs=1e-12)
            assert all(0 <= j < mdp.n_states for _, j in br)
            assert mdp.costs[i, u] == pytest.approx(expected_cost(q.beliefs[i], u, case1), abs=1e-15)


def test_successors_are_nearest_states(case1):
    q = build_quantized_set(case1, 2)
    mdp = build_finite_mdp(q, case1)
    rng = np.random.default_rng(0)
    for i in rng.choice(mdp.n_states, 8, replace=False):
        for u in range(2):
            for y in range(2):
                post, lik = bayes_update(q.beliefs[i], u, y, case1)
                assert mdp.probs[i, u, y] == pytest.approx(lik, abs=1e-15)
                dists = [bl_distance(post, b, case1.state_metric) for b in q.beliefs]
                assert mdp.succ[i, u, y] == int(np.argmin(np.round(dists, 12)))


def test_noiseless_deterministic_point_masses():
    # identity dynamics when idle, a sure repair, and a perfect sensor
    m = build_machine_repair(0.0, 1.0, 0.0)
    q = build_quantized_set(m, 0)
    np.testing.assert_array_equal(q.beliefs, np.eye(2))
    mdp = build_finite_mdp(q, m)
    assert mdp.branches(0, 0) == [(1.0, 0)]
    assert mdp.branches(0, 1) == [(1.0, 1)]
    assert mdp.branches(1, 0) == [(1.0, 1)]
    assert mdp.succ[0, 0, 1] == -1 and mdp.probs[0, 0, 1] == 0.0


@settings(max_examples=40)
@given(small_models(sparsity=0.3), st.integers(0, 2))
def test_solved_instances_satisfy_invariants(model, N):
    mdp, solved = solve_window(model, N, tolerance=1e-9)
    sums = mdp.probs.sum(axis=2)
    np.testing.assert_allclose(sums, 1.0, atol=1e-10)
    assert np.all((mdp.succ >= -1) & (mdp.succ < mdp.n_states))
    assert np.all(mdp.probs[mdp.succ < 0] == 0.0)
    check_fixed_point(mdp, solved)


@settings(max_examples=40)
@given(small_models(), st.integers(0, 1), st.sampled_from([0.25, 3.0, 17.5]))
def test_cost_scaling_invariance(model, N, lam):
    mdp, solved = solve_window(model, N, tolerance=1e-10)
    scaled = model.replace(cost=model.cost * lam)
    mdp2, solved2 = solve_window(scaled, N, tolerance=1e-10 * lam)
    np.testing.assert_array_equal(solved2.policy, solved.policy)
    np.testing.assert_allclose(solved2.values, lam * solved.values, atol=3e-10 * lam)


@pytest.mark.parametrize("N", [0, 1, 2, 3])
def test_machine_repair_fixed_point(case1, N):
    mdp, solved = solve_window(case1, N)
    check_fixed_point(mdp, solved)


def test_window_action_lookup(case1):
    mdp, solved = solve_window(case1, 2)
    for i, h in enumerate(mdp.states.histories):
        assert finite_window_action(solved, mdp, h) == solved.policy[i]
        assert finite_window_action(solved, mdp, h) == finite_window_action(solved, mdp, h)


def test_window_action_falls_back_to_nearest_state(case1):
    mdp, solved = solve_window(case1, 2, prune_threshold=0.05)
    full = build_quantized_set(case1, 2)
    pruned = [h for h in full.histories if mdp.states.lookup(h) < 0]
    assert pruned
    for h in pruned:
        b, _ = filter_from_history(case1.reference_prior, h, case1)
        dists = np.array([bl_distance(b, z, case1.state_metric) for z in mdp.states.beliefs])
        j = int(np.nonzero(dists <= dists.min() + 1e-12)[0][0])
        assert finite_window_action(solved, mdp, h) == solved.policy[j]


def test_window_action_rejects_bad_windows(case1):
    mdp, solved = solve_window(case1, 1)
    with pytest.raises(ModelError):
        finite_window_action(solved, mdp, HistoryWindow((0, 5), (0,)))
    with pytest.raises(ModelError):
        finite_window_action(solved, mdp, HistoryWindow((0,), ()))


def test_window_policy_reads_only_the_last_window(case1):
    mdp, solved = solve_window(case1, 2)
    pol = WindowPolicy(solved, mdp, warmup_action=1)
    assert pol([0], []) == 1
    assert pol([0, 1], [0]) == 1
    obs, acts = [1, 0, 1, 1, 0], [0, 1, 1, 0]
    expected = finite_window_action(solved, mdp, HistoryWindow((1, 1, 0), (1, 0)))
    assert pol(obs, acts) == expected
    assert pol([0, 0] + obs[2:], [1, 1] + acts[2:]) == expected


def test_window_zero_policy_uses_latest_observation(case1):
    mdp, solved = solve_window(case1, 0)
    pol = WindowPolicy(solved, mdp)
    assert pol([1, 0], [1]) == solved.policy[0]
    assert pol([0, 1], [1]) == solved.policy[1]
