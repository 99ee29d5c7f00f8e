import numpy as np
import pytest

from pomdp_ope.errors import ConditioningError, PositivityError
from pomdp_ope.exact import bellman_residual_H, bellman_residual_S
from pomdp_ope.fdvf import (
    CONSTRUCTIONS,
    construct_fdvf,
    construct_history_weights,
    construct_prior_weighted_fdvf,
    cumulative_ratios,
    linear_future_function,
    outcome_covariance,
    reward_outcome_covariance,
    step_residuals,
    verify_weights,
)
from pomdp_ope.fixtures import generate_fixture
from pomdp_ope.functions import random_future_function, zero_future_function

BANDIT_TABLES = {
    "is": (0.0, 1.6),
    "pinv": (0.8, 0.8),
    "l2_weighted": (0.8, 0.8),
    "reward_weighted": (0.32, 1.28),
    "prior_weighted": (0.8, 0.8),
}


@pytest.mark.parametrize("name", CONSTRUCTIONS)
def test_bandit_constructions(bandit_alg, name):
    sol = construct_fdvf(bandit_alg, name)
    np.testing.assert_allclose(sol.function.tables[0], BANDIT_TABLES[name], atol=1e-14)
    assert sol.max_residual <= 1e-14


def test_bandit_reward_weighted_parameters(bandit_alg):
    assert reward_outcome_covariance(bandit_alg[0])[0, 0] == pytest.approx(0.5)
    sol = construct_fdvf(bandit_alg, "reward_weighted")
    assert sol.thetas[0][0] == pytest.approx(1.6)


def test_bandit_any_prior(bandit_alg):
    for p in (0.1, 1.0, 7.0):
        sol = construct_prior_weighted_fdvf(bandit_alg, np.array([p]))
        np.testing.assert_allclose(sol.function.tables[0], (0.8, 0.8), atol=1e-14)


def test_all_constructions_close_on_identifiable_fixtures(default_set):
    for fx in default_set:
        if "identifiable" not in fx.tags:
            continue
        alg = fx.algebra()
        for name in CONSTRUCTIONS:
            assert construct_fdvf(alg, name).max_residual <= 1e-8, (fx.name, name)


def test_minimum_norm_properties(default_set):
    for fx in default_set:
        if "identifiable" not in fx.tags:
            continue
        alg = fx.algebra()
        sols = {n: construct_fdvf(alg, n) for n in CONSTRUCTIONS}
        for t in range(alg.H):
            for s in sols.values():
                assert sols["pinv"].l2_norms[t] <= s.l2_norms[t] * (1 + 1e-9) + 1e-12
                assert sols["l2_weighted"].z_norms[t] <= s.z_norms[t] * (1 + 1e-9) + 1e-12


def test_importance_construction_sup_norm_bound(default_set):
    for fx in default_set:
        alg = fx.algebra()
        cmu = float(alg.mu.max())
        sol = construct_fdvf(alg, "is")
        for t in range(alg.H):
            assert sol.sup_norms[t] <= alg.H * cmu ** (alg.H - t) + 1e-12


def test_onpolicy_constructions_reduce_to_reward_to_go():
    fx = generate_fixture("onpolicy", seed=1)
    alg = fx.algebra()
    for name in ("is", "reward_weighted"):
        V = construct_fdvf(alg, name).function
        for t in range(alg.H):
            reach = alg[t].Z > 0
            np.testing.assert_allclose(V.tables[t][reach], alg[t].reward_to_go[reach], atol=1e-8)


def test_reward_to_go_constant_rewards(bandit):
    fx = generate_fixture("random", seed=4)
    m = fx.model.with_reward(np.ones_like(fx.model.reward))
    from pomdp_ope.exact import build_algebra

    alg = build_algebra(m, fx.pi_e, fx.pi_b)
    for t in range(m.H):
        assert np.all(alg[t].reward_to_go == m.H - t)


def test_revealing_fixture_identity_covariance():
    fx = generate_fixture("reveal")
    alg = fx.algebra()
    sol = construct_fdvf(alg, "l2_weighted")
    for t in range(alg.H):
        np.testing.assert_allclose(outcome_covariance(alg[t]), np.eye(fx.model.S), atol=1e-8)
        assert sol.sup_norms[t] <= alg.H + 1e-8


def test_residual_grows_linearly_in_theta_perturbation(random_fixtures):
    fx = random_fixtures[7]
    alg = fx.algebra()
    sol = construct_fdvf(alg, "l2_weighted")
    base = None
    for eps in (1e-3, 1e-2, 1e-1):
        thetas = [th + eps for th in sol.thetas]
        res = step_residuals(alg, linear_future_function(alg, thetas, "z"))
        # M_F Z^-1 M_F^T (theta + eps 1) - V = eps Sigma_F 1 = eps 1
        np.testing.assert_allclose(res, eps, rtol=1e-6)
        if base is None:
            base = res / eps
        np.testing.assert_allclose(res / eps, base, rtol=1e-6)


def test_zero_function_residual_is_value_sup_norm(random_fixtures):
    fx = random_fixtures[8]
    alg = fx.algebra()
    res = step_residuals(alg, zero_future_function(fx.model))
    np.testing.assert_allclose(res, np.abs(alg.value_e[:alg.H]).max(axis=1), atol=1e-15)


def test_unreachable_futures_get_zero_value():
    fx = generate_fixture("mdp")
    alg = fx.algebra()
    sol = construct_fdvf(alg, "l2_weighted")
    dead_count = 0
    for t in range(alg.H):
        dead = alg[t].Z == 0
        dead_count += int(dead.sum())
        assert np.all(sol.function.tables[t][dead] == 0)
    assert dead_count > 0


def test_conditioning_error_on_rank_deficient_outcomes():
    fx = generate_fixture("uniform")
    alg = fx.algebra()
    with pytest.raises(ConditioningError) as info:
        construct_fdvf(alg, "pinv")
    assert info.value.step == 0
    # the importance-sampling construction needs no solve
    assert construct_fdvf(alg, "is").max_residual <= 1e-8


def test_prior_must_be_positive(random_fixtures):
    alg = random_fixtures[0].algebra()
    with pytest.raises(PositivityError):
        construct_prior_weighted_fdvf(alg, np.zeros(alg.model.S))


def test_cumulative_ratio_peak_on_chain():
    alg = generate_fixture("chain").algebra()
    w = cumulative_ratios(alg)[0]
    assert w.max() == 256.0


def test_history_weights_mean_matching(default_set):
    for fx in default_set:
        if "identifiable" not in fx.tags:
            continue
        alg = fx.algebra()
        w = construct_history_weights(alg)
        assert verify_weights(alg, w) <= 1e-8


def test_history_weights_onpolicy_all_ones():
    fx = generate_fixture("onpolicy", seed=3)
    alg = fx.algebra()
    w = construct_history_weights(alg)
    for t in range(alg.H):
        valid = alg[t].history_valid
        np.testing.assert_allclose(w.function.tables[t][valid], 1.0, atol=1e-8)


def test_history_weight_transfer(random_fixtures, rng):
    for fx in random_fixtures[:5]:
        alg = fx.algebra()
        w = construct_history_weights(alg).function
        V = random_future_function(fx.model, rng)
        BS = bellman_residual_S(alg, V)
        BH = bellman_residual_H(alg, V, residual_S=BS)
        for t in range(alg.H):
            lhs = alg[t].history_marginal_behavior @ (w.tables[t] * BH.tables[t])
            assert lhs == pytest.approx(alg.occupancy_e[t] @ BS[t], abs=1e-8)


def test_first_step_is_flagged_deficient_when_several_states(random_fixtures):
    for fx in random_fixtures[:5]:
        w = construct_history_weights(fx.algebra())
        assert (0 in w.deficient_steps) == (fx.model.S > 1)
