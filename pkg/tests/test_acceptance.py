"""Acceptance criteria 1-12, one PASS/FAIL line per criterion.

The lines are written to the terminal even when output is captured.
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from pomdp_ope.coverage import (
    coverage_report,
    eigen_adversarial_V,
    iv_dr_diagnostics,
    iv_lower_bound,
    pinv_scaling_check,
)
from pomdp_ope.estimators import FunctionClass, build_classes
from pomdp_ope.exact import brute_force_J, evaluation_error_identity, policy_value
from pomdp_ope.fdvf import (
    belief_covariance,
    construct_fdvf,
    construct_history_weights,
    cumulative_ratios,
    outcome_covariance,
    spectrum,
    step_residuals,
)
from pomdp_ope.fixtures import generate_fixture, is_identifiable
from pomdp_ope.functions import random_future_function
from pomdp_ope.study import StudyConfig, run_convergence_study

FOUR = ("is", "pinv", "l2_weighted", "reward_weighted")


_terminal = None


@pytest.fixture(autouse=True)
def _attach_terminal(request):
    global _terminal
    _terminal = request.config.pluginmanager.get_plugin("terminalreporter")


def report(k, ok, detail):
    """Print the criterion line past output capture, then assert it."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    if _terminal is not None:
        _terminal.ensure_newline()
        _terminal.write_line(line)
    assert ok, line


@pytest.fixture(scope="module")
def all_fixtures(default_set, random_fixtures):
    return list(default_set) + list(random_fixtures)


def test_criterion_01_oracle_equivalence(random_fixtures):
    start = time.perf_counter()
    worst = 0.0
    for fx in random_fixtures:
        m = fx.model
        assert m.S <= 3 and m.O <= 3 and m.A <= 3 and m.H <= 4
        for pi in (fx.pi_e, fx.pi_b):
            worst = max(worst, abs(policy_value(m, pi) - brute_force_J(m, pi)))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-10 and elapsed < 60,
           f"max |policy_value - brute_force_J| = {worst:.2e} over {len(random_fixtures)} fixtures, {elapsed:.1f}s")


def test_criterion_02_fdvf_closure(all_fixtures):
    worst, checked, partial = 0.0, 0, []
    for fx in all_fixtures:
        alg = fx.algebra()
        # rank-deficient outcome matrices only admit the importance construction
        names = FOUR if is_identifiable(fx) else ("is",)
        if names != FOUR:
            partial.append(fx.name)
        for name in names:
            sol = construct_fdvf(alg, name)
            worst = max(worst, float(np.max(step_residuals(alg, sol.function))))
            checked += 1
    report(2, worst <= 1e-8,
           f"max closure residual {worst:.2e} over {checked} constructions; importance only on {partial}")


def test_criterion_03_outcome_covariance(all_fixtures):
    sums = smax = 0.0
    for fx in all_fixtures:
        alg = fx.algebra()
        for t in range(alg.H):
            cov = outcome_covariance(alg[t])
            sums = max(sums, float(np.max(np.abs(cov.sum(axis=0) - 1))),
                       float(np.max(np.abs(cov.sum(axis=1) - 1))))
            smax = max(smax, abs(spectrum(cov)[1] - 1))
    report(3, sums <= 1e-10 and smax <= 1e-8,
           f"row/col sum gap {sums:.2e}, |sigma_max - 1| = {smax:.2e} on {len(all_fixtures)} fixtures")


def test_criterion_04_onpolicy_identities():
    worst = 0.0
    for seed in range(5):
        fx = generate_fixture("onpolicy", seed=seed)
        alg = fx.algebra()
        rep = coverage_report(alg)
        V = construct_fdvf(alg, "reward_weighted").function
        for t in range(alg.H):
            reach = alg[t].Z > 0
            worst = max(worst,
                        float(np.max(np.abs(rep.belief_theta[t] - 1))),
                        float(np.max(np.abs(rep.outcome_theta[t] - 1))),
                        float(np.max(np.abs(V.tables[t][reach] - alg[t].reward_to_go[reach]))))
    report(4, worst <= 1e-8, f"max deviation from all-ones / reward-to-go {worst:.2e} on 5 fixtures")


def test_criterion_05_reveal_and_mdp():
    eye_gap, sup_excess, ratio_gap = 0.0, -math.inf, 0.0
    for seed in range(5):
        fx = generate_fixture("reveal", seed=seed)
        alg = fx.algebra()
        sol = construct_fdvf(alg, "l2_weighted")
        for t in range(alg.H):
            eye_gap = max(eye_gap, float(np.max(np.abs(outcome_covariance(alg[t]) - np.eye(fx.model.S)))))
        sup_excess = max(sup_excess, sol.function.sup_norm() - alg.H)
        rep = coverage_report(generate_fixture("mdp", seed=seed).algebra())
        ratio_gap = max(ratio_gap, float(np.max(np.abs(rep.C_Hinf - rep.latent_ratio_max))))
    ok = eye_gap <= 1e-8 and sup_excess <= 1e-8 and ratio_gap <= 1e-8
    report(5, ok, f"|Sigma_F - I| = {eye_gap:.2e}, sup V - H = {sup_excess:.3f}, "
                  f"|C_Hinf - max ratio| = {ratio_gap:.2e}")


def test_criterion_06_inequalities(random_fixtures):
    violations = []
    for fx in random_fixtures:
        alg = fx.algebra()
        rep = coverage_report(alg)
        l2 = construct_fdvf(alg, "l2_weighted")
        rw = construct_fdvf(alg, "reward_weighted")
        w = construct_history_weights(alg)
        for t in range(alg.H):
            tests = {
                "C_H2 <= C_Hinf": rep.C_H2[t] - rep.C_Hinf[t] <= 1e-8,
                "E ratio^2 <= C_H2": rep.latent_ratio_second_moment[t] - rep.C_H2[t] <= 1e-8,
                "sup <= sqrt(C_FV C_FU)": l2.sup_norms[t] <= math.sqrt(rep.C_FV[t] * rep.C_FU[t]) + 1e-6,
                "sup <= H C_Finf": rw.sup_norms[t] <= alg.H * rep.C_Finf[t] + 1e-6,
                "|w|^2 <= C_H2": w.l2_sq_norms[t] <= rep.C_H2[t] + 1e-6,
            }
            violations += [(fx.name, t, k) for k, ok in tests.items() if not ok]
    report(6, not violations, f"{len(violations)} violations over {len(random_fixtures)} fixtures {violations[:3]}")


def test_criterion_07_evaluation_error_identity(random_fixtures):
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(100):
        alg = random_fixtures[k % len(random_fixtures)].algebra()
        lhs, rhs = evaluation_error_identity(alg, random_future_function(alg.model, rng))
        worst = max(worst, abs(lhs - rhs))
    report(7, worst <= 1e-8, f"max |lhs - rhs| = {worst:.2e} over 100 random V")


def test_criterion_08_uniform_singular_values():
    rows = []
    for seed in range(5):
        fx = generate_fixture("uniform", seed=seed)
        rows += pinv_scaling_check(fx.algebra(), fx.params["c_stoch"])
    applied = [r for r in rows if r["status"] != "skip"]
    worst = max(r["sigma_min"] - r["bound"] for r in applied)
    ok = len(applied) == len(rows) and worst <= 1e-8
    report(8, ok, f"max sigma_min - bound = {worst:.2e} at {len(applied)}/{len(rows)} steps")


def test_criterion_09_iv_lower_bound(default_set, random_fixtures):
    worst, count = -math.inf, 0
    for fx in list(default_set) + list(random_fixtures[:20]):
        if not is_identifiable(fx):
            continue
        alg = fx.algebra()
        base = build_classes(alg, m=2, eps=0.5, seed=0).V
        for t in range(alg.H):
            if spectrum(belief_covariance(alg[t]))[0] <= 1e-12:
                continue
            vclass = FunctionClass("futures", list(base) + [eigen_adversarial_V(alg, t)])
            res = iv_dr_diagnostics(alg, vclass)
            worst = max(worst, iv_lower_bound(alg, t) - res.iv_ratios[-1, t])
            count += 1
    report(9, count > 0 and worst <= 1e-6, f"max (bound - IV) = {worst:.2e} over {count} injected steps")


STUDY_10 = (StudyConfig(fixture="bandit"),
            StudyConfig(fixture="random-3", fixture_params={"S": 2, "O": 2, "A": 2, "H": 3}))


def test_criterion_10_rates():
    start = time.perf_counter()
    lines, ok = [], True
    for cfg in STUDY_10:
        res = run_convergence_study(cfg)
        H = resolve_H(res)
        for est in ("minimax", "mis"):
            slope = res.row(est, 10_000)["slope"]
            rmse = res.row(est, 10_000)["rmse"]
            ok &= -0.65 <= slope <= -0.35 and rmse <= 0.05 * H
            lines.append(f"{res.fixture}/{est} slope {slope:.3f} rmse@1e4 {rmse:.4f}")
    elapsed = time.perf_counter() - start
    report(10, ok and elapsed <= 600, "; ".join(lines) + f"; {elapsed:.1f}s")


def resolve_H(res):
    from pomdp_ope.study import resolve_fixture
    return resolve_fixture(res.config).model.H


def test_criterion_11_exponential_gap():
    fx = generate_fixture("chain")
    alg = fx.algebra()
    res = run_convergence_study(StudyConfig(fixture="chain", estimators=("is", "mis")))
    is_rmse, mis_rmse = res.rmse("is"), res.rmse("mis")
    c_hinf = coverage_report(alg).max("C_Hinf")
    weight = float(max(np.max(w) for w in cumulative_ratios(alg)[:1]))
    ok = all(a > b for a, b in zip(is_rmse, mis_rmse)) and c_hinf <= 5 and weight == 256
    report(11, ok, f"IS rmse {np.round(is_rmse, 4).tolist()} vs MIS {np.round(mis_rmse, 4).tolist()}, "
                   f"C_Hinf {c_hinf:.3f}, max cumulative weight {weight:g}")


def _cli(args, out_dir, threads):
    env = dict(os.environ, OPENBLAS_NUM_THREADS=str(threads), OMP_NUM_THREADS=str(threads),
               MKL_NUM_THREADS=str(threads))
    proc = subprocess.run([sys.executable, "-m", "pomdp_ope", "--out-dir", str(out_dir), *args],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_criterion_12_determinism(tmp_path):
    vcfg = tmp_path / "verify.json"
    vcfg.write_text(json.dumps({"fixtures": ["bandit", "reveal-0", "mdp-0", "uniform-0", "chain",
                                             "onpolicy-0", "random-0", "random-1"]}))
    scfg = tmp_path / "study.json"
    scfg.write_text(json.dumps({"fixture": "random-3", "fixture_params": {"S": 2, "O": 2, "A": 2, "H": 3},
                                "n_grid": [100, 1000], "seed_count": 20}))
    outputs = {}
    for run, (workers, threads) in enumerate(((1, 1), (1, 1), (4, 4), (1, 4), (4, 1))):
        d = tmp_path / f"run{run}"
        outputs[run] = {**_cli(["verify", "--config", str(vcfg), "--workers", str(workers)], d / "v", threads),
                        **_cli(["study", "--config", str(scfg), "--workers", str(workers)], d / "s", threads)}
    same = all(outputs[k] == outputs[0] for k in outputs)
    report(12, same and set(outputs[0]) == {"verify.csv", "verify.json", "study.csv", "study.json"},
           f"{len(outputs)} runs (workers 1/4, BLAS threads 1/4) byte-identical: {same}")


def test_error_within_bound_envelope(default_set):
    # with the absolute constant set to 50, both evaluated bounds dominate the
    # observed RMSE at n = 1e4 on every identifiable fixture
    bad = []
    for fx in default_set:
        if not is_identifiable(fx):
            continue
        res = run_convergence_study(StudyConfig(fixture=fx.name, n_grid=(10_000,), seed_count=10, bound_c=50.0))
        for row in res.rows:
            if row["rmse"] > min(row["bound_thm2"], row["bound_thm3"]):
                bad.append((fx.name, row["estimator"], row["rmse"], row["bound_thm2"], row["bound_thm3"]))
    assert not bad, bad
