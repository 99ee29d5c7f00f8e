"""Future-dependent value functions and effective history weights.

A future-dependent value function (FDVF) is any ``V`` over futures with
``M_F,t V_t = V_S,t`` (its behavior-conditional mean given the latent state
is the evaluation policy's latent value).  The constructions here differ in
which of the many solutions they pick:

- ``is``: reward-to-go times the product of action ratios along the future.
- ``pinv``: the minimum plain 2-norm solution.
- ``l2_weighted``: the minimum ``Z``-weighted norm solution, ``V = Z^-1 M_F^T Sigma_F^-1 V_S``.
- ``reward_weighted``: as above with ``Z^R = Z / R+`` in place of ``Z``.
- ``prior_weighted``: the ``Z^p``-weighted solution of the prior-scaled system.

Futures with ``Z(f) = 0`` cannot occur from any latent state; they are left
out of every solve and assigned 0.

Effective history weights satisfy ``E_b[w(tau_t) b(tau_t)] = b^e_t`` and the
standard choice is linear in the belief, ``w(tau) = b(tau)^T Sigma_H^-1 b^e``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, PositivityError
from .exact import ExactAlgebra, StepLinearAlgebra
from .functions import FutureFunction, HistoryFunction

COND_LIMIT = 1e12
CONSTRUCTIONS = ("is", "pinv", "l2_weighted", "reward_weighted", "prior_weighted")


# --------------------------------------------------------------------------
# covariance matrices and feature maps

def future_features(st: StepLinearAlgebra, weighting: str) -> np.ndarray:
    """``u(f) g(f)`` for every future, with ``g = 1`` ("u"), ``1/Z`` ("z") or ``R+/Z`` ("zr")."""
    if weighting == "u":
        return st.outcome
    reach = st.Z > 0
    g = np.zeros_like(st.Z)
    g[reach] = 1.0 / st.Z[reach]
    if weighting == "zr":
        g = g * st.reward_to_go
    elif weighting != "z":
        raise ValueError(f"unknown weighting {weighting!r}")
    return st.outcome * g[None, :]


def outcome_covariance(st: StepLinearAlgebra) -> np.ndarray:
    """``Sigma_F = M_F Z^-1 M_F^T``."""
    return future_features(st, "z") @ st.outcome.T


def reward_outcome_covariance(st: StepLinearAlgebra) -> np.ndarray:
    """``Sigma^R_F = M_F (Z^R)^-1 M_F^T``."""
    return future_features(st, "zr") @ st.outcome.T


def belief_covariance(st: StepLinearAlgebra) -> np.ndarray:
    """``Sigma_H = sum_tau d^b(tau) b(tau) b(tau)^T``."""
    return (st.beliefs * st.history_marginal_behavior[None, :]) @ st.beliefs.T


def spectrum(matrix: np.ndarray):
    """Return ``(sigma_min, sigma_max, cond)`` of a symmetric PSD matrix."""
    ev = np.abs(np.linalg.eigvalsh(matrix))
    lo, hi = float(ev.min()), float(ev.max())
    cond = hi / lo if lo > 0 else np.inf
    return lo, hi, cond


def solve_guarded(matrix, rhs, name, step):
    lo, _, cond = spectrum(matrix)
    if not cond <= COND_LIMIT:
        raise ConditioningError(name, step, lo, cond)
    return np.linalg.solve(matrix, rhs)


# --------------------------------------------------------------------------
# linear function builders

def linear_future_function(alg: ExactAlgebra, thetas, weighting: str, label="") -> FutureFunction:
    tables = [future_features(alg[t], weighting).T @ thetas[t] for t in range(alg.H)]
    return FutureFunction(tables, thetas=tuple(thetas), weighting=weighting, label=label)


def linear_history_function(alg: ExactAlgebra, thetas, label="") -> HistoryFunction:
    tables = [alg[t].beliefs.T @ thetas[t] for t in range(alg.H)]
    return HistoryFunction(tables, thetas=tuple(thetas), label=label)


# --------------------------------------------------------------------------
# FDVF constructions

@dataclass(frozen=True, eq=False)
class FdvfSolution:
    construction: str
    function: FutureFunction
    residuals: np.ndarray        # per-step sup-norm of M_F V - V_S
    sup_norms: np.ndarray
    z_norms: np.ndarray          # sqrt(sum_f Z(f) V(f)^2)
    l2_norms: np.ndarray

    @property
    def thetas(self):
        return self.function.thetas

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def sup_norm(self) -> float:
        return float(self.sup_norms.max())

    def summary(self) -> dict:
        return {
            "construction": self.construction,
            "sup_norm": [float(x) for x in self.sup_norms],
            "z_norm": [float(x) for x in self.z_norms],
            "l2_norm": [float(x) for x in self.l2_norms],
            "residual": [float(x) for x in self.residuals],
        }


def step_residuals(alg: ExactAlgebra, V: FutureFunction) -> np.ndarray:
    return np.array([
        np.max(np.abs(alg[t].outcome @ V.table(t) - alg.value_e[t])) for t in range(alg.H)
    ])


def verify_fdvf(alg: ExactAlgebra, solution) -> float:
    """Largest ``|M_F,t V_t - V_S,t|`` over steps and latent states."""
    V = solution.function if isinstance(solution, FdvfSolution) else solution
    return float(step_residuals(alg, V).max())


def _finish(alg, tag, V):
    return FdvfSolution(
        construction=tag,
        function=V,
        residuals=step_residuals(alg, V),
        sup_norms=np.array([V.step_sup_norm(t) for t in range(alg.H)]),
        z_norms=np.array([np.sqrt(alg[t].Z @ V.table(t) ** 2) for t in range(alg.H)]),
        l2_norms=np.array([np.linalg.norm(V.table(t)) for t in range(alg.H)]),
    )


def cumulative_ratios(alg: ExactAlgebra) -> list:
    """Product of action ratios along every future, per step."""
    OA = alg.model.pair_count
    out = [None] * alg.H
    w = alg.mu[alg.H - 1].reshape(OA)
    out[alg.H - 1] = w
    for t in range(alg.H - 2, -1, -1):
        w = (alg.mu[t].reshape(OA)[:, None] * w[None, :]).reshape(-1)
        out[t] = w
    return out


def construct_is_fdvf(alg: ExactAlgebra) -> FdvfSolution:
    ratios = cumulative_ratios(alg)
    V = FutureFunction([alg[t].reward_to_go * ratios[t] for t in range(alg.H)], label="is")
    return _finish(alg, "is", V)


def construct_pinv_fdvf(alg: ExactAlgebra) -> FdvfSolution:
    thetas = []
    for t in range(alg.H):
        u = alg[t].outcome
        thetas.append(solve_guarded(u @ u.T, alg.value_e[t], "M_F M_F^T", t))
    return _finish(alg, "pinv", linear_future_function(alg, thetas, "u", "pinv"))


def _weighted_thetas(alg, cov_fn, name):
    return [solve_guarded(cov_fn(alg[t]), alg.value_e[t], name, t) for t in range(alg.H)]


def construct_l2_weighted_fdvf(alg: ExactAlgebra) -> FdvfSolution:
    thetas = _weighted_thetas(alg, outcome_covariance, "Sigma_F")
    return _finish(alg, "l2_weighted", linear_future_function(alg, thetas, "z", "l2_weighted"))


def construct_reward_weighted_fdvf(alg: ExactAlgebra) -> FdvfSolution:
    if np.any(alg.model.reward <= 0):
        raise PositivityError("reward-weighted construction needs strictly positive rewards")
    thetas = _weighted_thetas(alg, reward_outcome_covariance, "Sigma^R_F")
    return _finish(alg, "reward_weighted",
                   linear_future_function(alg, thetas, "zr", "reward_weighted"))


def construct_prior_weighted_fdvf(alg: ExactAlgebra, prior) -> FdvfSolution:
    """Minimum ``Z^p``-weighted solution of ``diag(p) M_F V = diag(p) V_S``.

    ``prior`` is one vector over latent states, or one per step (shape (H, S)).
    """
    prior = np.broadcast_to(np.asarray(prior, dtype=float), (alg.H, alg.model.S))
    if np.any(prior <= 0):
        raise PositivityError("latent-state prior must be strictly positive")
    tables = []
    for t in range(alg.H):
        st = alg[t]
        pu = prior[t][:, None] * st.outcome
        zp = prior[t] @ st.outcome
        inv = np.zeros_like(zp)
        inv[zp > 0] = 1.0 / zp[zp > 0]
        cov = (pu * inv[None, :]) @ pu.T
        theta = solve_guarded(cov, prior[t] * alg.value_e[t], "Sigma^p_F", t)
        tables.append(inv * (pu.T @ theta))
    return _finish(alg, "prior_weighted", FutureFunction(tables, label="prior_weighted"))


def construct_fdvf(alg: ExactAlgebra, construction: str, prior=None) -> FdvfSolution:
    if construction == "is":
        return construct_is_fdvf(alg)
    if construction == "pinv":
        return construct_pinv_fdvf(alg)
    if construction == "l2_weighted":
        return construct_l2_weighted_fdvf(alg)
    if construction == "reward_weighted":
        return construct_reward_weighted_fdvf(alg)
    if construction == "prior_weighted":
        if prior is None:
            prior = np.ones(alg.model.S)
        return construct_prior_weighted_fdvf(alg, prior)
    raise ValueError(f"unknown construction {construction!r}; expected one of {CONSTRUCTIONS}")


# --------------------------------------------------------------------------
# history weights

@dataclass(frozen=True, eq=False)
class HistoryWeights:
    """Belief-linear history weights, ``w(tau_t) = <b(tau_t), theta_t>``.

    ``deficient_steps`` lists steps where ``Sigma_H`` is singular but the
    mean-matching system is still consistent (always the case at step 0 with
    several latent states, where every history is the empty one).  There the
    solution ``1 + Sigma_H^+ (b^e - b^b)`` is used; it coincides with
    ``Sigma_H^-1 b^e`` whenever ``Sigma_H`` is invertible.
    """

    function: HistoryFunction
    residuals: np.ndarray
    sup_norms: np.ndarray
    l2_sq_norms: np.ndarray      # E_b[w^2]
    deficient_steps: tuple

    @property
    def thetas(self):
        return self.function.thetas

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())


def mean_matching_residuals(alg: ExactAlgebra, w: HistoryFunction) -> np.ndarray:
    out = []
    for t in range(alg.H):
        st = alg[t]
        got = st.beliefs @ (st.history_marginal_behavior * w.tables[t])
        out.append(np.max(np.abs(got - st.mean_belief)))
    return np.array(out)


def verify_weights(alg: ExactAlgebra, weights) -> float:
    """Largest ``|E_b[w b] - b^e|`` over steps and latent states."""
    w = weights.function if isinstance(weights, HistoryWeights) else weights
    return float(mean_matching_residuals(alg, w).max())


def _psd_pinv_apply(matrix, vec, rel=1e-12):
    ev, vecs = np.linalg.eigh(matrix)
    keep = ev > rel * max(ev.max(), 0.0)
    coef = (vecs[:, keep].T @ vec) / ev[keep]
    return vecs[:, keep] @ coef


def history_weight_thetas(alg: ExactAlgebra):
    """Return ``(thetas, deficient_steps)`` for the belief-linear weights."""
    thetas, deficient = [], []
    for t in range(alg.H):
        st = alg[t]
        cov = belief_covariance(st)
        lo, _, cond = spectrum(cov)
        if cond <= COND_LIMIT:
            thetas.append(np.linalg.solve(cov, st.mean_belief))
            continue
        gap = st.mean_belief - st.mean_belief_behavior
        theta = 1.0 + _psd_pinv_apply(cov, gap)
        if np.max(np.abs(cov @ theta - st.mean_belief)) > 1e-10:
            raise ConditioningError("Sigma_H", t, lo, cond)
        thetas.append(theta)
        deficient.append(t)
    return thetas, tuple(deficient)


def construct_history_weights(alg: ExactAlgebra) -> HistoryWeights:
    thetas, deficient = history_weight_thetas(alg)
    w = linear_history_function(alg, thetas, label="w_star")
    sup = np.array([w.step_sup_norm(t, alg[t].history_valid) for t in range(alg.H)])
    l2 = np.array([alg[t].history_marginal_behavior @ w.tables[t] ** 2 for t in range(alg.H)])
    return HistoryWeights(w, mean_matching_residuals(alg, w), sup, l2, deficient)
