import numpy as np
import pytest

from pomdp_ope.core import FutureIndex, MemorylessPolicy, TabularPOMDP, decode_future
from pomdp_ope.errors import BudgetError
from pomdp_ope.exact import (
    bellman_residual_H,
    bellman_residual_S,
    brute_force_J,
    build_algebra,
    build_step_algebra,
    check_budget,
    evaluation_error_identity,
    latent_value,
    occupancy,
    outcome_vector,
    policy_value,
    trajectory_probabilities,
)
from pomdp_ope.fdvf import construct_fdvf
from pomdp_ope.fixtures import generate_fixture
from pomdp_ope.functions import random_future_function, zero_future_function


# frozen values for the single-state two-armed bandit, worked out by hand
def test_bandit_values(bandit, bandit_alg):
    assert latent_value(bandit.model, bandit.pi_e)[0, 0] == pytest.approx(0.8, abs=1e-15)
    assert policy_value(bandit.model, bandit.pi_e) == pytest.approx(0.8, abs=1e-15)
    assert policy_value(bandit.model, bandit.pi_b) == pytest.approx(0.5, abs=1e-15)
    assert brute_force_J(bandit.model, bandit.pi_e) == pytest.approx(0.8, abs=1e-15)
    st = bandit_alg[0]
    np.testing.assert_allclose(st.outcome, [[0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(st.Z, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(st.beliefs, [[1.0]])
    np.testing.assert_allclose(st.reward_to_go, [0.2, 0.8])


def test_latent_value_has_terminal_zero_and_range(random_fixtures):
    for fx in random_fixtures[:10]:
        V = latent_value(fx.model, fx.pi_e)
        assert V.shape == (fx.model.H + 1, fx.model.S)
        assert np.all(V[-1] == 0)
        for t in range(fx.model.H):
            assert np.all(V[t] >= 0) and np.all(V[t] <= fx.model.H - t + 1e-12)


def test_zero_reward_gives_zero_value(random_fixtures):
    fx = random_fixtures[0]
    m = fx.model.with_reward(np.zeros_like(fx.model.reward))
    assert np.all(latent_value(m, fx.pi_e) == 0)


def test_deterministic_chain_single_path():
    # point-mass start, deterministic dynamics, emissions and policy
    H, S, O, A = 3, 2, 2, 2
    T = np.zeros((H - 1, S, A, S))
    T[:, :, :, 1] = 1.0
    E = np.zeros((H, S, O))
    E[:, 0, 0] = 1.0
    E[:, 1, 1] = 1.0
    R = np.array([[[0.1, 0.2], [0.3, 0.4]]] * H)
    m = TabularPOMDP([1.0, 0.0], T, E, R)
    pi = MemorylessPolicy.deterministic(m, np.ones((H, O), dtype=int))
    expected = 0.2 + 0.4 + 0.4
    assert brute_force_J(m, pi) == pytest.approx(expected, abs=1e-15)
    assert policy_value(m, pi) == pytest.approx(expected, abs=1e-15)


def test_policy_value_matches_enumeration(random_fixtures):
    for fx in random_fixtures[:20]:
        for pi in (fx.pi_e, fx.pi_b):
            assert abs(policy_value(fx.model, pi) - brute_force_J(fx.model, pi)) <= 1e-10


def test_trajectory_probabilities_sum_to_one(random_fixtures):
    for fx in random_fixtures[:5]:
        p = trajectory_probabilities(fx.model, fx.pi_b)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p >= 0)


def test_budget_errors():
    fx = generate_fixture("chain")
    with pytest.raises(BudgetError):
        check_budget(fx.model, budget=10)
    with pytest.raises(BudgetError):
        brute_force_J(fx.model, fx.pi_e, budget=100)


def test_first_step_belief_is_initial_distribution(random_fixtures):
    for fx in random_fixtures[:5]:
        st = build_step_algebra(fx.model, fx.pi_e, fx.pi_b, 0)
        assert st.beliefs.shape == (fx.model.S, 1)
        np.testing.assert_allclose(st.beliefs[:, 0], fx.model.d1)


def test_outcome_matrix_matches_scalar_oracle(random_fixtures):
    for fx in random_fixtures[:6]:
        alg = fx.algebra()
        m = fx.model
        for t in range(m.H):
            M = alg[t].outcome
            for f in range(0, m.n_futures(t), max(1, m.n_futures(t) // 17)):
                seq = decode_future(m, FutureIndex(t, f))
                np.testing.assert_allclose(M[:, f], outcome_vector(m, fx.pi_b, t, seq), atol=1e-14)


def test_step_algebra_invariants(default_set):
    for fx in default_set:
        alg = fx.algebra()
        for t in range(alg.H):
            st = alg[t]
            np.testing.assert_allclose(st.outcome.sum(axis=1), 1.0, atol=1e-10)
            np.testing.assert_allclose(st.beliefs[:, st.history_valid].sum(axis=0), 1.0, atol=1e-10)
            np.testing.assert_allclose(st.Z, st.outcome.sum(axis=0), atol=1e-12)
            assert st.history_marginal.sum() == pytest.approx(1.0, abs=1e-10)
            np.testing.assert_allclose(st.beliefs @ st.history_marginal, st.mean_belief, atol=1e-12)
            np.testing.assert_allclose(st.mean_belief, alg.occupancy_e[t], atol=1e-10)
            np.testing.assert_allclose(st.mean_belief_behavior, alg.occupancy_b[t], atol=1e-10)


def test_occupancy_rows_are_distributions(random_fixtures):
    fx = random_fixtures[3]
    d = occupancy(fx.model, fx.pi_e)
    np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-12)


def test_one_hot_beliefs_on_mdp_fixture():
    fx = generate_fixture("mdp")
    alg = fx.algebra()
    for t in range(alg.H):
        b = alg[t].beliefs[:, alg[t].history_valid]
        assert np.all((b == 0) | (np.abs(b - 1) < 1e-12))


def test_zero_V_residual_is_one_step_reward(random_fixtures):
    fx = random_fixtures[1]
    alg = fx.algebra()
    BS = bellman_residual_S(alg, zero_future_function(fx.model))
    np.testing.assert_allclose(BS, alg.one_step_reward_e, atol=1e-12)


def test_history_residual_at_first_step(random_fixtures, rng):
    fx = random_fixtures[2]
    alg = fx.algebra()
    V = random_future_function(fx.model, rng)
    BS = bellman_residual_S(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=BS)
    assert BH.tables[0].shape == (1,)
    assert BH.tables[0][0] == pytest.approx(fx.model.d1 @ BS[0], abs=1e-12)


def test_history_residual_equals_state_residual_under_one_hot_beliefs(rng):
    fx = generate_fixture("mdp")
    alg = fx.algebra()
    V = random_future_function(fx.model, rng)
    BS = bellman_residual_S(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=BS)
    for t in range(alg.H):
        st = alg[t]
        states = np.argmax(st.beliefs, axis=0)
        valid = st.history_valid
        np.testing.assert_allclose(BH.tables[t][valid], BS[t][states[valid]], atol=1e-12)


def test_fdvf_has_zero_residuals(default_set):
    for fx in default_set:
        if "identifiable" not in fx.tags:
            continue
        alg = fx.algebra()
        V = construct_fdvf(alg, "l2_weighted").function
        BS = bellman_residual_S(alg, V)
        BH = bellman_residual_H(alg, V, residual_S=BS)
        assert np.max(np.abs(BS)) <= 1e-8
        assert max(np.max(np.abs(t)) for t in BH.tables) <= 1e-8
        lhs, rhs = evaluation_error_identity(alg, V)
        assert abs(lhs) <= 1e-8 and abs(rhs) <= 1e-8


def test_evaluation_error_identity_zero_V(random_fixtures):
    fx = random_fixtures[4]
    alg = fx.algebra()
    lhs, rhs = evaluation_error_identity(alg, zero_future_function(fx.model))
    assert lhs == pytest.approx(alg.J_e, abs=1e-12)
    assert rhs == pytest.approx(alg.J_e, abs=1e-10)


def test_algebra_is_deterministic(random_fixtures):
    fx = random_fixtures[5]
    a, b = fx.algebra(), fx.algebra()
    for t in range(a.H):
        assert np.array_equal(a[t].outcome, b[t].outcome)
        assert np.array_equal(a[t].beliefs, b[t].beliefs)


def test_beliefs_defined_on_histories_unreachable_under_evaluation_policy():
    # the deterministic evaluation policy never plays a0, yet histories with a0
    # have positive behavior probability and therefore well-defined beliefs
    fx = generate_fixture("chain")
    alg = build_algebra(fx.model, fx.pi_e, fx.pi_b)
    st = alg[1]
    unreached = (st.history_marginal == 0) & (st.history_marginal_behavior > 0)
    assert unreached.any()
    assert np.all(st.history_valid[unreached])
    np.testing.assert_allclose(st.beliefs[:, unreached].sum(axis=0), 1.0)
