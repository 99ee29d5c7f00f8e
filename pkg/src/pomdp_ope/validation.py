"""Structural and rank/conditioning checks on a model and policy pair.

Shape problems raise when the model is built; everything else is recorded as
a failed check so a single report shows every issue at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PROB_TOL, MemorylessPolicy, TabularPOMDP
from .errors import PomdpError


@dataclass(frozen=True)
class Check:
    name: str
    step: int | None
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    belief_rank: dict = field(default_factory=dict)
    outcome_rank: dict = field(default_factory=dict)
    min_future_probability: dict = field(default_factory=dict)
    min_reward: float = float("nan")
    condition_numbers: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def add(self, name, step, passed, detail=""):
        self.checks.append(Check(name, step, bool(passed), detail))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [vars(c) for c in self.checks],
            "belief_rank": {str(k): v for k, v in self.belief_rank.items()},
            "outcome_rank": {str(k): v for k, v in self.outcome_rank.items()},
            "min_future_probability": {str(k): v for k, v in self.min_future_probability.items()},
            "min_reward": self.min_reward,
            "condition_numbers": {
                name: {str(k): v for k, v in per.items()} for name, per in self.condition_numbers.items()
            },
            "warnings": list(self.warnings),
        }


def _rows_normalized(report, name, table, step):
    table = np.asarray(table)
    sums = table.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
    neg = np.argwhere(np.any(table < 0, axis=-1))
    detail = ""
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        detail = f"row {idx} sums to {float(sums[idx]):.12g}"
    elif neg.size:
        detail = f"row {tuple(int(i) for i in neg[0])} has a negative entry"
    report.add(f"{name}_normalized", step, not bad.size and not neg.size, detail)


def validate_model(model: TabularPOMDP, pi_b: MemorylessPolicy | None = None,
                   pi_e: MemorylessPolicy | None = None, budget=None) -> ValidationReport:
    """Check normalization and reward positivity; with policies, ranks and conditioning."""
    report = ValidationReport()
    _rows_normalized(report, "d1", model.d1, None)
    for t in range(model.H - 1):
        _rows_normalized(report, "transition", model.transition[t], t)
    for t in range(model.H):
        _rows_normalized(report, "emission", model.emission[t], t)
    report.min_reward = float(model.reward.min())
    for t in range(model.H):
        r = model.reward[t]
        low = np.argwhere(r <= 0)
        high = np.argwhere(r > 1)
        detail = ""
        if low.size:
            o, a = (int(i) for i in low[0])
            detail = f"R[{t}][{o}][{a}] = {r[o, a]:.6g}; rewards must be strictly positive"
        elif high.size:
            o, a = (int(i) for i in high[0])
            detail = f"R[{t}][{o}][{a}] = {r[o, a]:.6g} exceeds 1"
        report.add("reward_in_unit_interval", t, not low.size and not high.size, detail)
    for tag, pol in (("pi_b", pi_b), ("pi_e", pi_e)):
        if pol is not None:
            pol.check_compatible(model)
            for t in range(model.H):
                _rows_normalized(report, tag, pol.probs[t], t)
    if pi_b is None or not report.ok:
        return report
    _algebra_checks(report, model, pi_b, pi_e or pi_b, budget)
    return report


def _algebra_checks(report, model, pi_b, pi_e, budget):
    from .exact import DEFAULT_BUDGET, build_algebra
    from .fdvf import belief_covariance, outcome_covariance, reward_outcome_covariance, spectrum

    try:
        alg = build_algebra(model, pi_e, pi_b, budget=budget or DEFAULT_BUDGET)
    except PomdpError as exc:
        report.add("exact_algebra", None, False, str(exc))
        return
    conds = {"Sigma_F": {}, "Sigma^R_F": {}, "Sigma_H": {}}
    for t in range(model.H):
        st = alg[t]
        rf = st.outcome_rank()
        report.outcome_rank[t] = rf
        report.add("outcome_rank_full", t, rf == model.S, f"rank {rf} of {model.S}")
        rh = st.belief_rank()
        report.belief_rank[t] = rh
        # every history at step 0 is the empty one, so its belief matrix has rank 1
        if t > 0 or model.S == 1:
            report.add("belief_rank_full", t, rh == model.S, f"rank {rh} of {model.S}")
        pmin = float(st.future_marginal.min())
        report.min_future_probability[t] = pmin
        # zero-probability futures are legitimate (e.g. identity emissions); report only
        if pmin <= 0:
            report.warnings.append(f"step {t}: some futures have zero probability under pi_b")
        conds["Sigma_F"][t] = spectrum(outcome_covariance(st))[2]
        conds["Sigma^R_F"][t] = spectrum(reward_outcome_covariance(st))[2]
        conds["Sigma_H"][t] = spectrum(belief_covariance(st))[2]
    report.condition_numbers = conds
