"""Executable verification suite.

Every check is a function of a fixture that returns rows
``(check, fixture, step, value, tol, status, detail)``.  ``value`` is the
achieved gap (or violation) and the row passes when ``value <= tol``.  A
check that does not apply to a fixture emits nothing; a check whose
precondition fails on a particular step emits a ``skip`` row.  Exceptions
inside a check become ``fail`` rows so a single run always completes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coverage import (
    coverage_report,
    eigen_adversarial_V,
    iv_dr_diagnostics,
    iv_lower_bound,
    pinv_scaling_check,
)
from .errors import BudgetError
from .estimators import (
    build_classes,
    population_minimax_objectives,
    population_mis_objectives,
    population_plug_in,
)
from .exact import (
    _bellman_s_direct,
    _bellman_s_weighted,
    bellman_residual_H,
    bellman_residual_S,
    brute_force_J,
    evaluation_error_identity,
    future_residual_table,
    policy_value,
    trajectory_probabilities,
)
from .fdvf import (
    CONSTRUCTIONS,
    belief_covariance,
    construct_fdvf,
    construct_history_weights,
    construct_prior_weighted_fdvf,
    cumulative_ratios,
    linear_future_function,
    outcome_covariance,
    spectrum,
    step_residuals,
    verify_weights,
)
from .functions import random_future_function

RANDOM_V_SEED = 12345


@dataclass(frozen=True)
class CheckRow:
    check: str
    fixture: str
    step: int
    value: float
    tol: float
    status: str
    detail: str = ""

    COLUMNS = ("check", "fixture", "step", "value", "tol", "status", "detail")

    def as_tuple(self):
        return tuple(getattr(self, c) for c in self.COLUMNS)


class _Context:
    """Per-fixture cache of the exact objects the checks share."""

    def __init__(self, fixture, theta_offset=0.0):
        self.fixture = fixture
        self.theta_offset = theta_offset
        self._cache = {}

    def get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def alg(self):
        return self.get("alg", self.fixture.algebra)

    @property
    def report(self):
        return self.get("report", lambda: coverage_report(self.alg))

    def solution(self, name):
        return self.get(("fdvf", name), lambda: construct_fdvf(self.alg, name))

    @property
    def weights(self):
        return self.get("weights", lambda: construct_history_weights(self.alg))

    def random_V(self, k=0):
        rng = np.random.default_rng(RANDOM_V_SEED + k)
        return self.get(("randV", k), lambda: random_future_function(self.fixture.model, rng))


# --------------------------------------------------------------------------
# applicability

def _any(fx):
    return True


def _identifiable(fx):
    return "identifiable" in fx.tags


def _tag(name):
    return lambda fx: name in fx.tags


# --------------------------------------------------------------------------
# checks; each yields (step, value, tol) or (step, value, tol, status, detail)

def chk_policy_value(ctx):
    fx = ctx.fixture
    try:
        bf = brute_force_J(fx.model, fx.pi_e)
    except BudgetError as exc:
        yield -1, math.nan, 1e-10, "skip", str(exc)
        return
    yield -1, abs(policy_value(fx.model, fx.pi_e) - bf), 1e-10


def chk_latent_value_bounds(ctx):
    alg = ctx.alg
    for V in (alg.value_e, alg.value_b):
        for t in range(alg.H):
            over = max(0.0, float(V[t].max()) - (alg.H - t), -float(V[t].min()))
            yield t, over, 1e-12


def chk_stochasticity(ctx):
    alg = ctx.alg
    for t in range(alg.H):
        st = alg[t]
        b = st.beliefs[:, st.history_valid]
        gap = max(
            float(np.max(np.abs(st.outcome.sum(axis=1) - 1))),
            float(np.max(np.abs(b.sum(axis=0) - 1))),
            abs(float(st.history_marginal.sum()) - 1),
            abs(float(st.history_marginal_behavior.sum()) - 1),
            abs(float(st.mean_belief.sum()) - 1),
            float(np.max(np.abs(st.Z - st.outcome.sum(axis=0)))),
        )
        yield t, gap, 1e-10


def chk_mean_belief(ctx):
    alg = ctx.alg
    for t in range(alg.H):
        st = alg[t]
        gap = max(float(np.max(np.abs(st.mean_belief - alg.occupancy_e[t]))),
                  float(np.max(np.abs(st.mean_belief_behavior - alg.occupancy_b[t]))))
        yield t, gap, 1e-10


def chk_bellman_forms(ctx):
    alg = ctx.alg
    V = ctx.random_V()
    direct = _bellman_s_direct(alg, V)
    weighted = _bellman_s_weighted(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=direct, check=False)
    for t in range(alg.H):
        st = alg[t]
        joint = st.joint_behavior @ st.outcome
        mass = joint.sum(axis=1)
        ok = mass > 0
        cond = joint[ok] @ future_residual_table(alg, V, t) / mass[ok]
        gap = max(float(np.max(np.abs(direct[t] - weighted[t]))),
                  float(np.max(np.abs(cond - BH.tables[t][ok]))))
        yield t, gap, 1e-10


def chk_evaluation_error(ctx):
    for k in range(3):
        lhs, rhs = evaluation_error_identity(ctx.alg, ctx.random_V(k))
        yield -1, abs(lhs - rhs), 1e-8, None, f"random V #{k}"


def _closure_solution(ctx, name):
    # a theta offset only corrupts the parameterized constructions
    sol = ctx.solution(name)
    if ctx.theta_offset and sol.thetas is not None:
        thetas = [th + ctx.theta_offset for th in sol.thetas]
        return linear_future_function(ctx.alg, thetas, sol.function.weighting, name)
    return sol.function


def chk_fdvf_closure(ctx):
    for name in CONSTRUCTIONS:
        res = step_residuals(ctx.alg, _closure_solution(ctx, name))
        for t, r in enumerate(res):
            yield t, float(r), 1e-8, None, name


def chk_minimum_norms(ctx):
    sols = [ctx.solution(n) for n in CONSTRUCTIONS]
    pinv, l2w = ctx.solution("pinv"), ctx.solution("l2_weighted")
    for t in range(ctx.alg.H):
        v1 = max(pinv.l2_norms[t] - min(s.l2_norms[t] for s in sols), 0.0)
        v2 = max(l2w.z_norms[t] - min(s.z_norms[t] for s in sols), 0.0)
        scale = max(1.0, max(s.l2_norms[t] for s in sols))
        yield t, max(v1, v2), 1e-9 * scale


def chk_doubly_stochastic(ctx):
    alg = ctx.alg
    for t in range(alg.H):
        st = alg[t]
        cov = outcome_covariance(st)
        sums = max(float(np.max(np.abs(cov.sum(axis=0) - 1))), float(np.max(np.abs(cov.sum(axis=1) - 1))))
        neg = max(0.0, -float(cov.min()) - 1e-12)
        reach = st.Z > 0
        rows = float(np.max(np.abs((st.outcome[:, reach] / st.Z[reach]).sum(axis=0) - 1)))
        smax = abs(spectrum(cov)[1] - 1)
        yield t, max(sums, neg, rows), 1e-10, None, "row/column sums"
        yield t, smax, 1e-8, None, "largest singular value"


def chk_weighted_sup_bound(ctx):
    rep, sol = ctx.report, ctx.solution("l2_weighted")
    for t in range(ctx.alg.H):
        bound = math.sqrt(rep.C_FV[t] * rep.C_FU[t])
        yield t, sol.sup_norms[t] - bound, 1e-6, None, "sup norm"
        yield t, sol.z_norms[t] - math.sqrt(rep.C_FV[t]), 1e-6, None, "weighted norm"


def chk_reward_weighted_sup_bound(ctx):
    rep, sol = ctx.report, ctx.solution("reward_weighted")
    for t in range(ctx.alg.H):
        yield t, sol.sup_norms[t] - ctx.alg.H * rep.C_Finf[t], 1e-6


def chk_weight_second_moment(ctx):
    rep, w = ctx.report, ctx.weights
    for t in range(ctx.alg.H):
        yield t, w.l2_sq_norms[t] - rep.C_H2[t], 1e-6


def chk_weight_sup_bound(ctx):
    rep, w = ctx.report, ctx.weights
    for t in range(ctx.alg.H):
        yield t, w.sup_norms[t] - rep.C_Hinf[t], 1e-6


def chk_l2_below_linf(ctx):
    rep = ctx.report
    for t in range(ctx.alg.H):
        yield t, rep.C_H2[t] - rep.C_Hinf[t], 1e-8


def chk_latent_below_belief(ctx):
    rep = ctx.report
    for t in range(ctx.alg.H):
        yield t, rep.latent_ratio_second_moment[t] - rep.C_H2[t], 1e-8


def chk_revealing_identity(ctx):
    alg, rep = ctx.alg, ctx.report
    sol = ctx.solution("l2_weighted")
    for t in range(alg.H):
        yield t, float(np.max(np.abs(rep.sigma_F[t] - np.eye(alg.model.S)))), 1e-8, None, "Sigma_F = I"
        yield t, abs(rep.C_FU[t] - 1), 1e-8, None, "C_FU = 1"
        yield t, sol.sup_norms[t] - alg.H, 1e-8, None, "sup norm <= H"


def chk_revealing_value_ratio(ctx):
    alg, rep = ctx.alg, ctx.report
    for t in range(alg.H):
        gap = float(np.max(np.abs(rep.sigma_R[t] - np.diag(alg.value_b[t]))))
        yield t, gap, 1e-8, None, "Sigma^R_F = diag(V_b)"
        ratio = float(np.max(alg.value_e[t] / alg.value_b[t]))
        yield t, abs(rep.C_Finf[t] - ratio), 1e-8, None, "C_Finf = max V_e / V_b"


def chk_onpolicy_outcome_l2(ctx):
    alg, rep = ctx.alg, ctx.report
    for t in range(alg.H):
        yield t, rep.C_FV[t] - alg.model.S * alg.H ** 2, 1e-6


def chk_onpolicy_reward_weighted(ctx):
    alg, rep = ctx.alg, ctx.report
    sol, is_sol = ctx.solution("reward_weighted"), ctx.solution("is")
    for t in range(alg.H):
        rtg = alg[t].reward_to_go
        reach = alg[t].Z > 0
        yield t, float(np.max(np.abs(rep.outcome_theta[t] - 1))), 1e-8, None, "theta = 1"
        yield t, float(np.max(np.abs(sol.function.tables[t][reach] - rtg[reach]))), 1e-8, None, "V = R+"
        yield t, float(np.max(np.abs(is_sol.function.tables[t] - rtg))), 1e-8, None, "importance V = R+"
        yield t, abs(rep.C_Finf[t] - 1), 1e-8, None, "C_Finf = 1"


def chk_onpolicy_belief_l2(ctx):
    rep = ctx.report
    for t in range(ctx.alg.H):
        yield t, rep.C_H2[t] - 1, 1e-8


def chk_onpolicy_all_ones(ctx):
    alg, rep, w = ctx.alg, ctx.report, ctx.weights
    for t in range(alg.H):
        valid = alg[t].history_valid
        yield t, float(np.max(np.abs(rep.belief_theta[t] - 1))), 1e-8, None, "theta = 1"
        yield t, float(np.max(np.abs(w.function.tables[t][valid] - 1))), 1e-8, None, "w = 1"
        yield t, abs(rep.C_Hinf[t] - 1), 1e-8, None, "C_Hinf = 1"


def chk_one_hot(ctx):
    alg, rep = ctx.alg, ctx.report
    for t in range(alg.H):
        yield t, abs(rep.C_Hinf[t] - rep.latent_ratio_max[t]), 1e-8, None, "C_Hinf = max ratio"
        yield t, abs(rep.C_H2[t] - rep.latent_ratio_second_moment[t]), 1e-8, None, "C_H2 = E ratio^2"
    classes = ctx.get("classes", lambda: build_classes(alg, m=2, eps=0.5, seed=0))
    res = iv_dr_diagnostics(alg, classes.V)
    finite = res.iv_ratios[~np.isnan(res.iv_ratios)]
    gap = float(np.max(np.abs(finite - 1))) if finite.size else 0.0
    yield -1, gap, 1e-8, None, "IV = 1"


def chk_pinv_scaling(ctx):
    c = ctx.fixture.params["c_stoch"]
    for row in pinv_scaling_check(ctx.alg, c):
        status = "skip" if row["status"] == "skip" else None
        yield row["step"], row["sigma_min"] - row["bound"], 1e-8, status, row["detail"]


def chk_iv_lower_bound(ctx):
    alg = ctx.alg
    for t in range(alg.H):
        lo = spectrum(belief_covariance(alg[t]))[0]
        if lo <= 1e-12:
            yield t, math.nan, 1e-6, "skip", "belief covariance is singular"
            continue
        V = eigen_adversarial_V(alg, t)
        BS = bellman_residual_S(alg, V)
        v = np.linalg.eigh(belief_covariance(alg[t]))[1][:, 0]
        cos = abs(float(BS[t] @ v)) / float(np.linalg.norm(BS[t]))
        yield t, 1 - cos, 1e-8, None, "residual along v_min"
        iv = iv_dr_diagnostics(alg, [V]).iv
        yield t, iv_lower_bound(alg, t) - iv, 1e-6, None, "IV >= bound"


def chk_weight_transfer(ctx):
    alg, w = ctx.alg, ctx.weights
    V = ctx.random_V()
    BS = bellman_residual_S(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=BS)
    for t in range(alg.H):
        lhs = float(alg[t].history_marginal_behavior @ (w.function.tables[t] * BH.tables[t]))
        rhs = float(alg.occupancy_e[t] @ BS[t])
        yield t, abs(lhs - rhs), 1e-8


def chk_mean_matching(ctx):
    yield -1, verify_weights(ctx.alg, ctx.weights), 1e-8


def chk_prior_uniform(ctx):
    alg = ctx.alg
    l2 = ctx.solution("l2_weighted").function
    uni = construct_prior_weighted_fdvf(alg, np.full(alg.model.S, 1.0 / alg.model.S)).function
    for t in range(alg.H):
        yield t, float(np.max(np.abs(uni.tables[t] - l2.tables[t]))), 1e-10, None, "uniform prior"
    d1 = alg.model.d1
    if np.all(d1 > 0):
        sol = construct_prior_weighted_fdvf(alg, d1)
        yield -1, sol.max_residual, 1e-8, None, "initial-distribution prior"


def chk_history_residual_zero(ctx):
    alg = ctx.alg
    V = ctx.solution("reward_weighted").function
    BS = bellman_residual_S(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=BS)
    for t in range(alg.H):
        yield t, max(float(np.max(np.abs(BS[t]))), float(np.max(np.abs(BH.tables[t])))), 1e-8


def chk_population_closure(ctx):
    alg = ctx.alg
    classes = ctx.get("classes", lambda: build_classes(alg, m=2, eps=0.5, seed=0))
    for tag, obj in (("minimax", population_minimax_objectives(alg, classes.V, classes.Xi)),
                     ("mis", population_mis_objectives(alg, classes.V, classes.W))):
        i = int(np.argmin(obj))
        est = population_plug_in(alg, classes.V[i])
        yield -1, max(abs(float(obj[i])), abs(est - alg.J_e)), 1e-8, None, tag


def chk_is_unbiased(ctx):
    fx, alg = ctx.fixture, ctx.alg
    if fx.model.pair_count ** fx.model.H > 2 ** 18:
        yield -1, math.nan, 1e-10, "skip", "trajectory space too large"
        return
    p = trajectory_probabilities(fx.model, fx.pi_b)
    w = cumulative_ratios(alg)[0]
    full = float(p @ (w * alg[0].reward_to_go))
    # per-decision: prefix ratio times the reward at each step
    OA = fx.model.pair_count
    H = fx.model.H
    ids = np.arange(OA ** H)
    codes = np.stack([(ids // OA ** (H - 1 - k)) % OA for k in range(H)], axis=1)
    mu = alg.mu.reshape(H, OA)[np.arange(H)[None, :], codes]
    r = fx.model.reward.reshape(H, OA)[np.arange(H)[None, :], codes]
    pd = float(p @ (np.cumprod(mu, axis=1) * r).sum(axis=1))
    yield -1, abs(full - alg.J_e), 1e-10, None, "full trajectory"
    yield -1, abs(pd - alg.J_e), 1e-10, None, "per decision"


# name -> (function, applies-to, what it verifies)
REGISTRY = {
    "policy_value_matches_enumeration": (chk_policy_value, _any,
        "recursive policy value equals brute-force path enumeration"),
    "latent_value_bounds": (chk_latent_value_bounds, _any,
        "latent values lie in [0, remaining horizon]"),
    "step_algebra_stochasticity": (chk_stochasticity, _any,
        "outcome rows, belief columns and marginals are normalized"),
    "mean_belief_equals_occupancy": (chk_mean_belief, _any,
        "mean belief equals latent occupancy under both policies"),
    "bellman_residual_forms_agree": (chk_bellman_forms, _any,
        "one-step and importance-weighted latent residuals agree; history residual is a conditional mean"),
    "evaluation_error_identity": (chk_evaluation_error, _any,
        "evaluation error telescopes into latent Bellman residuals"),
    "fdvf_closure": (chk_fdvf_closure, _identifiable,
        "every construction solves the defining linear system"),
    "fdvf_minimum_norms": (chk_minimum_norms, _identifiable,
        "pseudo-inverse minimizes the 2-norm, weighted solution minimizes the Z-norm"),
    "outcome_covariance_doubly_stochastic": (chk_doubly_stochastic, _identifiable,
        "outcome covariance is doubly stochastic with unit spectral norm"),
    "weighted_fdvf_sup_bound": (chk_weighted_sup_bound, _identifiable,
        "weighted FDVF range is bounded by outcome L2 coverage"),
    "reward_weighted_fdvf_sup_bound": (chk_reward_weighted_sup_bound, _identifiable,
        "reward-weighted FDVF range is bounded by H times outcome Linf coverage"),
    "history_weight_second_moment": (chk_weight_second_moment, _identifiable,
        "history weight second moment is bounded by belief L2 coverage"),
    "history_weight_sup_bound": (chk_weight_sup_bound, _identifiable,
        "history weight range is bounded by belief Linf coverage"),
    "belief_l2_below_linf": (chk_l2_below_linf, _identifiable,
        "belief L2 coverage is at most belief Linf coverage"),
    "latent_ratio_below_belief_coverage": (chk_latent_below_belief, _identifiable,
        "latent density-ratio second moment is at most belief L2 coverage"),
    "revealing_future_identity": (chk_revealing_identity, _tag("revealing_future"),
        "revealing futures give identity outcome covariance and bounded weighted FDVF"),
    "revealing_future_value_ratio": (chk_revealing_value_ratio, _tag("revealing_future"),
        "revealing futures give diagonal reward covariance and value-ratio Linf coverage"),
    "onpolicy_outcome_l2_coverage": (chk_onpolicy_outcome_l2, _tag("onpolicy"),
        "on-policy outcome L2 coverage is at most S H^2"),
    "onpolicy_reward_weighted_identity": (chk_onpolicy_reward_weighted, _tag("onpolicy"),
        "on-policy reward-weighted and importance FDVFs equal reward-to-go"),
    "onpolicy_belief_l2_coverage": (chk_onpolicy_belief_l2, _tag("onpolicy"),
        "on-policy belief L2 coverage is at most 1"),
    "onpolicy_history_weights_all_ones": (chk_onpolicy_all_ones, _tag("onpolicy"),
        "on-policy history weights are identically 1"),
    "one_hot_belief_concentrability": (chk_one_hot, _tag("one_hot_beliefs"),
        "one-hot beliefs reduce belief coverage to latent density ratios"),
    "pinv_sigma_min_scaling": (chk_pinv_scaling, _tag("near_uniform"),
        "near-uniform outcome matrices have exponentially small singular values"),
    "iv_lower_bound_eigen": (chk_iv_lower_bound, _identifiable,
        "adversarial value function forces IV above the belief-covariance bound"),
    "history_weight_transfer": (chk_weight_transfer, _identifiable,
        "history weights transfer history residuals to evaluation-policy latent residuals"),
    "mean_matching": (chk_mean_matching, _identifiable,
        "history weights reproduce the evaluation-policy mean belief"),
    "prior_weighted_uniform_recovers_l2": (chk_prior_uniform, _identifiable,
        "uniform prior reproduces the weighted construction; other priors still solve the system"),
    "bellman_history_zero_for_fdvf": (chk_history_residual_zero, _identifiable,
        "an exact FDVF has zero latent and history residuals"),
    "population_minimax_closure": (chk_population_closure, _identifiable,
        "with exact expectations both estimators select a zero-objective V and recover J"),
    "is_unbiased_exhaustive": (chk_is_unbiased, _any,
        "importance-sampling estimators are unbiased in exact expectation"),
}

MANIFEST = (
    "policy_value_matches_enumeration",
    "latent_value_bounds",
    "step_algebra_stochasticity",
    "mean_belief_equals_occupancy",
    "bellman_residual_forms_agree",
    "evaluation_error_identity",
    "fdvf_closure",
    "fdvf_minimum_norms",
    "outcome_covariance_doubly_stochastic",
    "weighted_fdvf_sup_bound",
    "reward_weighted_fdvf_sup_bound",
    "history_weight_second_moment",
    "history_weight_sup_bound",
    "belief_l2_below_linf",
    "latent_ratio_below_belief_coverage",
    "revealing_future_identity",
    "revealing_future_value_ratio",
    "onpolicy_outcome_l2_coverage",
    "onpolicy_reward_weighted_identity",
    "onpolicy_belief_l2_coverage",
    "onpolicy_history_weights_all_ones",
    "one_hot_belief_concentrability",
    "pinv_sigma_min_scaling",
    "iv_lower_bound_eigen",
    "history_weight_transfer",
    "mean_matching",
    "prior_weighted_uniform_recovers_l2",
    "bellman_history_zero_for_fdvf",
    "population_minimax_closure",
    "is_unbiased_exhaustive",
)


def _rows_for(name, fn, ctx):
    fx_name = ctx.fixture.name
    try:
        for item in fn(ctx):
            step, value, tol = item[:3]
            status = item[3] if len(item) > 3 else None
            detail = item[4] if len(item) > 4 else ""
            value = float(value)
            if status is None:
                status = "pass" if value <= tol else "fail"
            yield CheckRow(name, fx_name, int(step), value, float(tol), status, detail)
    except Exception as exc:  # failures are data: one bad check must not stop the run
        yield CheckRow(name, fx_name, -1, math.nan, math.nan, "fail", f"{type(exc).__name__}: {exc}")


def run_fixture_checks(fixture, checks=None, theta_offset=0.0) -> list:
    ctx = _Context(fixture, theta_offset)
    rows = []
    for name in checks or MANIFEST:
        fn, applies, _ = REGISTRY[name]
        if applies(fixture):
            rows.extend(_rows_for(name, fn, ctx))
    return rows


def run_verification_suite(fixtures, checks=None, theta_offset=0.0, workers=1) -> list:
    """Run every applicable check on every fixture; rows keep fixture order."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda fx: run_fixture_checks(fx, checks, theta_offset), fixtures))
    else:
        parts = [run_fixture_checks(fx, checks, theta_offset) for fx in fixtures]
    return [row for part in parts for row in part]


def suite_passed(rows) -> bool:
    return not any(r.status == "fail" for r in rows)


def summarize(rows) -> dict:
    out = {"pass": 0, "fail": 0, "skip": 0}
    for r in rows:
        out[r.status] += 1
    out["checks"] = sorted({r.check for r in rows})
    out["fixtures"] = list(dict.fromkeys(r.fixture for r in rows))
    out["failures"] = [r.as_tuple() for r in rows if r.status == "fail"]
    return out
