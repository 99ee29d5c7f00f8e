"""Coverage coefficients, identifiability diagnostics and error-bound evaluation.

Per-step coefficients (``t`` is the step):

=========  ==============================================================
C_FV       ``V_S^T Sigma_F^-1 V_S``                  outcome L2, value
C_FU       ``max_f (u/Z)^T Sigma_F^-1 (u/Z)``        outcome L2, features
C_Finf     ``|(Sigma^R_F)^-1 V_S|_inf``              outcome Linf
C_H2       ``b_e^T Sigma_H^-1 b_e``                  belief L2
C_Hinf     ``|Sigma_H^-1 b_e|_inf``                  belief Linf
=========  ==============================================================

Where ``Sigma_H`` is singular but mean matching is still solvable (step 0),
the belief coefficients use the anchored solution from
:func:`pomdp_ope.fdvf.history_weight_thetas`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import c_mu as _c_mu
from .errors import PomdpError
from .exact import ExactAlgebra, bellman_residual_H, bellman_residual_S
from .fdvf import (
    belief_covariance,
    future_features,
    history_weight_thetas,
    outcome_covariance,
    reward_outcome_covariance,
    solve_guarded,
    spectrum,
)
from .functions import FutureFunction

ZERO_MOMENT = 1e-20


@dataclass(frozen=True, eq=False)
class CoverageReport:
    H: int
    S: int
    c_mu: float
    sigma_F: tuple
    sigma_R: tuple
    sigma_H: tuple
    C_FV: np.ndarray
    C_FU: np.ndarray
    C_Finf: np.ndarray
    C_H2: np.ndarray
    C_Hinf: np.ndarray
    sigma_min_MF: np.ndarray
    sigma_max_SF: np.ndarray
    sigma_min_SH: np.ndarray
    latent_ratio_max: np.ndarray
    latent_ratio_second_moment: np.ndarray
    belief_theta: tuple          # Sigma_H^-1 b_e per step
    outcome_theta: tuple         # (Sigma^R_F)^-1 V_S per step

    def max(self, name: str) -> float:
        return float(np.max(getattr(self, name)))

    COLUMNS = ("step", "C_FV", "C_FU", "C_Finf", "C_H2", "C_Hinf", "sigma_min_MF",
               "sigma_max_SF", "sigma_min_SH", "latent_ratio_max", "latent_ratio_second_moment")

    def rows(self) -> list:
        out = []
        for t in range(self.H):
            row = {"step": t}
            for name in self.COLUMNS[1:]:
                row[name] = float(getattr(self, name)[t])
            out.append(row)
        return out

    def summary(self) -> dict:
        out = {"c_mu": self.c_mu}
        for name in self.COLUMNS[1:]:
            out[name] = self.max(name)
        return out


def latent_ratio_stats(alg: ExactAlgebra, t: int):
    """``(max_s d_e/d_b, E_b[(d_e/d_b)^2])``; infinite if ``d_e > 0 = d_b`` somewhere."""
    de, db = alg.occupancy_e[t], alg.occupancy_b[t]
    if np.any((de > 0) & (db <= 0)):
        return math.inf, math.inf
    on = db > 0
    ratio = de[on] / db[on]
    return float(ratio.max()), float(np.sum(db[on] * ratio ** 2))


def coverage_report(alg: ExactAlgebra) -> CoverageReport:
    H = alg.H
    sF, sR, sH, thF = [], [], [], []
    cols = {k: np.zeros(H) for k in (
        "C_FV", "C_FU", "C_Finf", "C_H2", "C_Hinf", "sigma_min_MF", "sigma_max_SF",
        "sigma_min_SH", "latent_ratio_max", "latent_ratio_second_moment")}
    thH, _ = history_weight_thetas(alg)
    for t in range(H):
        st = alg[t]
        vs = alg.value_e[t]
        cov_f = outcome_covariance(st)
        cov_r = reward_outcome_covariance(st)
        cov_h = belief_covariance(st)
        sF.append(cov_f)
        sR.append(cov_r)
        sH.append(cov_h)
        cols["C_FV"][t] = vs @ solve_guarded(cov_f, vs, "Sigma_F", t)
        feats = future_features(st, "z")[:, st.Z > 0]
        quad = np.sum(feats * solve_guarded(cov_f, feats, "Sigma_F", t), axis=0)
        cols["C_FU"][t] = quad.max()
        theta_r = solve_guarded(cov_r, vs, "Sigma^R_F", t)
        thF.append(theta_r)
        cols["C_Finf"][t] = np.max(np.abs(theta_r))
        cols["C_H2"][t] = st.mean_belief @ thH[t]
        cols["C_Hinf"][t] = np.max(np.abs(thH[t]))
        gram = np.linalg.eigvalsh(st.outcome @ st.outcome.T)
        cols["sigma_min_MF"][t] = math.sqrt(max(gram.min(), 0.0))
        cols["sigma_max_SF"][t] = spectrum(cov_f)[1]
        cols["sigma_min_SH"][t] = spectrum(cov_h)[0]
        cols["latent_ratio_max"][t], cols["latent_ratio_second_moment"][t] = latent_ratio_stats(alg, t)
    for arr in cols.values():
        arr.setflags(write=False)
    return CoverageReport(
        H=H, S=alg.model.S, c_mu=_c_mu(alg.pi_e, alg.pi_b),
        sigma_F=tuple(sF), sigma_R=tuple(sR), sigma_H=tuple(sH),
        belief_theta=tuple(thH), outcome_theta=tuple(thF), **cols,
    )


def l2_below_linf_check(report: CoverageReport, tol=1e-8) -> bool:
    """Belief L2 coverage never exceeds belief Linf coverage, at every step."""
    return bool(np.all(report.C_H2 <= report.C_Hinf + tol))


def belief_vs_latent_check(report: CoverageReport, tol=1e-8) -> bool:
    """Latent second-moment density ratio is bounded by belief L2 coverage."""
    return bool(np.all(report.latent_ratio_second_moment <= report.C_H2 + tol))


# --------------------------------------------------------------------------
# wide outcome matrices with near-uniform entries

def sigma_min_future(alg: ExactAlgebra, t: int) -> float:
    st = alg[t]
    ev = np.linalg.eigvalsh(st.outcome @ st.outcome.T)
    return math.sqrt(max(float(ev.min()), 0.0))


def pinv_scaling_check(alg: ExactAlgebra, c_stoch: float, tol=1e-8) -> list:
    """Compare ``sigma_min(M_F,t)`` with ``c_stoch sqrt(S) / (OA)^((H-t)/2)``.

    The comparison only applies when every outcome probability is at most
    ``c_stoch / (OA)^(H-t)``; otherwise the step is reported as skipped.
    """
    model = alg.model
    out = []
    for t in range(alg.H):
        st = alg[t]
        width = model.pair_count ** (model.H - t)
        peak = float(st.outcome.max())
        sigma = sigma_min_future(alg, t)
        bound = c_stoch * math.sqrt(model.S) / math.sqrt(width)
        row = {"step": t, "sigma_min": sigma, "bound": bound, "max_entry": peak,
               "rank": st.outcome_rank()}
        if peak > c_stoch / width * (1 + 1e-12):
            row["status"] = "skip"
            row["detail"] = f"max entry {peak:.3e} exceeds c_stoch/(OA)^len = {c_stoch / width:.3e}"
        else:
            row["status"] = "pass" if sigma <= bound + tol else "fail"
            row["detail"] = "rank deficient" if row["rank"] < model.S else ""
        out.append(row)
    return out


# --------------------------------------------------------------------------
# identifiability diagnostics

@dataclass(frozen=True)
class IvDrResult:
    iv: float
    dr: float
    iv_ratios: np.ndarray        # (members, H); nan where skipped
    dr_ratios: np.ndarray
    skipped: tuple               # (member, step) pairs with a zero denominator


def residual_moments(alg: ExactAlgebra, V: FutureFunction):
    """Per step: ``E_b[(B^S V)^2]``, ``E_b[(B^H V)^2]``, ``E_e[(B^S V)^2]``."""
    BS = bellman_residual_S(alg, V)
    BH = bellman_residual_H(alg, V, residual_S=BS, check=False)
    sb = np.einsum("ts,ts->t", alg.occupancy_b, BS ** 2)
    se = np.einsum("ts,ts->t", alg.occupancy_e, BS ** 2)
    hb = np.array([alg[t].history_marginal_behavior @ BH.tables[t] ** 2 for t in range(alg.H)])
    return sb, hb, se


def iv_dr_diagnostics(alg: ExactAlgebra, vclass) -> IvDrResult:
    members = list(vclass)
    if not members:
        raise PomdpError("iv/dr diagnostics need a nonempty class")
    iv = np.full((len(members), alg.H), np.nan)
    dr = np.full((len(members), alg.H), np.nan)
    skipped = []
    for i, V in enumerate(members):
        sb, hb, se = residual_moments(alg, V)
        for t in range(alg.H):
            if hb[t] <= ZERO_MOMENT or sb[t] <= ZERO_MOMENT:
                skipped.append((i, t))
                continue
            iv[i, t] = math.sqrt(sb[t] / hb[t])
            dr[i, t] = math.sqrt(se[t] / sb[t])
    iv_max = float(np.nanmax(iv)) if np.any(~np.isnan(iv)) else math.nan
    dr_max = float(np.nanmax(dr)) if np.any(~np.isnan(dr)) else math.nan
    return IvDrResult(iv_max, dr_max, iv, dr, tuple(skipped))


def eigen_adversarial_V(alg: ExactAlgebra, t: int, c0=1.0) -> FutureFunction:
    """A value function whose latent residual at step ``t`` is ``c0 v_min(Sigma_H,t)``.

    ``V`` is zero at every other step, and ``V_t`` is the minimum-norm solution
    of ``M_F,t V_t = rbar_t - c0 v_min`` with ``rbar_t`` the one-step reward
    under the evaluation policy.
    """
    st = alg[t]
    _, vecs = np.linalg.eigh(belief_covariance(st))
    v_min = vecs[:, 0]
    u = st.outcome
    target = alg.one_step_reward_e[t] - c0 * v_min
    theta = solve_guarded(u @ u.T, target, "M_F M_F^T", t)
    tables = [np.zeros(alg.model.n_futures(k)) for k in range(alg.H)]
    tables[t] = u.T @ theta
    return FutureFunction(tables, label=f"eigen_adversarial[{t}]")


def iv_lower_bound(alg: ExactAlgebra, t: int) -> float:
    """``sqrt(min_s d_b(s_t) / sigma_min(Sigma_H,t))``."""
    lo = spectrum(belief_covariance(alg[t]))[0]
    if lo <= 0:
        return math.inf
    return math.sqrt(float(alg.occupancy_b[t].min()) / lo)


# --------------------------------------------------------------------------
# error bounds, up to an absolute constant c

@dataclass(frozen=True)
class BoundEvaluation:
    kind: str                    # "iv_dr" | "belief_l2" | "belief_linf"
    value: float
    n: int
    delta: float
    c: float
    inputs: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "n": self.n, "delta": self.delta,
                "c": self.c, "note": "up to absolute constant c", **self.inputs}


BOUND_KINDS = ("iv_dr", "belief_l2", "belief_linf")


def bound_evaluation(kind: str, report: CoverageReport, n: int, delta: float = 0.05,
                     class_sizes=(1, 1), class_norms=(0.0, 0.0), eps_v=0.0, eps_w=0.0,
                     c=1.0, iv=1.0, dr=1.0) -> BoundEvaluation:
    """Evaluate one of the three finite-sample error bounds.

    ``iv_dr``       ``c H max(C_V + 1, C_Xi) IV Dr sqrt(C_mu log(|V||Xi|/delta) / n)``
    ``belief_l2``   ``c H^2 (C_Finf + 1) sqrt(C_H2 C_mu log(|V||Xi|/delta) / n)``
    ``belief_linf`` ``eps_V + eps_W + c H^2 C_Hinf (C_Finf + 1) sqrt(C_mu log(|V||W|/delta) / n)``

    Coefficients are maxima over steps.
    """
    H = report.H
    log_term = math.log(class_sizes[0] * class_sizes[1] / delta)
    cmu = report.c_mu
    cf = report.max("C_Finf")
    inputs = {"H": H, "class_sizes": list(class_sizes), "c_mu": cmu}
    if kind == "iv_dr":
        cv, cx = class_norms
        value = c * H * max(cv + 1.0, cx) * iv * dr * math.sqrt(cmu * log_term / n)
        inputs.update(C_V=cv, C_Xi=cx, IV=iv, Dr=dr)
    elif kind == "belief_l2":
        ch2 = report.max("C_H2")
        value = c * H ** 2 * (cf + 1.0) * math.sqrt(ch2 * cmu * log_term / n)
        inputs.update(C_Finf=cf, C_H2=ch2)
    elif kind == "belief_linf":
        chi = report.max("C_Hinf")
        value = eps_v + eps_w + c * H ** 2 * chi * (cf + 1.0) * math.sqrt(cmu * log_term / n)
        inputs.update(C_Finf=cf, C_Hinf=chi, eps_V=eps_v, eps_W=eps_w)
    else:
        raise ValueError(f"unknown bound kind {kind!r}; expected one of {BOUND_KINDS}")
    return BoundEvaluation(kind, float(value), int(n), float(delta), float(c), inputs)
