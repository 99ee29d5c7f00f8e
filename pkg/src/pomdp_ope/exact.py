"""Exact, enumeration-based computation of POMDP distributional objects.

Everything here is a deterministic function of the model and the two
policies: belief and outcome matrices per step, latent values and
occupancies, policy values, and the two Bellman residual operators.
``brute_force_J`` is kept deliberately separate from the recursions so it
can serve as an independent oracle.

Belief convention: a history's belief is computed from the action-conditioned
observation likelihood, which does not depend on the policy.  It is defined
whenever some policy reaches the history with positive probability; histories
that no policy can produce are flagged in ``history_valid`` and get an
all-zero column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MemorylessPolicy, TabularPOMDP, action_ratios
from .errors import BudgetError, ModelShapeError, PomdpError
from .functions import FutureFunction, HistoryFunction

DEFAULT_BUDGET = 2 ** 20
BRUTE_FORCE_BUDGET = 2 ** 22
CROSS_CHECK_TOL = 1e-10


def check_budget(model: TabularPOMDP, budget=DEFAULT_BUDGET):
    # the longest sequence at any step has length H (the future at t=0)
    size = model.pair_count ** model.H
    if size > budget:
        raise BudgetError(
            f"(OA)^H = {model.pair_count}^{model.H} = {size} exceeds the enumeration "
            f"budget {budget}"
        )


def _check_policy(model, *policies):
    for p in policies:
        p.check_compatible(model)


# --------------------------------------------------------------------------
# forward / backward recursions

def _forward_joint(model, probs):
    """Yield ``alpha[tau, s] = Pr(tau_t, s_t)`` for t = 0..H-1.

    ``probs`` of None gives the policy-free likelihood
    ``Pr(o_{<t}, s_t | do(a_{<t}))``.
    """
    S = model.S
    alpha = model.d1[None, :].copy()
    for t in range(model.H):
        yield alpha
        if t == model.H - 1:
            break
        joint = alpha[:, :, None, None] * model.emission[t][None, :, :, None]
        if probs is not None:
            joint = joint * probs[t][None, None, :, :]
        else:
            joint = np.broadcast_to(joint, joint.shape[:3] + (model.A,))
        # (tau, s, o, a) x (s, a, s') -> (tau, o, a, s')
        alpha = np.einsum("hsoa,sap->hoap", joint, model.transition[t]).reshape(-1, S)


def _outcome_matrices(model, pi_b):
    """``M_F`` for every step, built backwards from the last step."""
    S, OA = model.S, model.pair_count
    pb = pi_b.probs
    out = [None] * model.H
    last = model.H - 1
    u = (model.emission[last][:, :, None] * pb[last][None, :, :]).reshape(S, OA)
    out[last] = u
    for t in range(last - 1, -1, -1):
        nxt = np.einsum("sap,pf->saf", model.transition[t], u)
        u = (model.emission[t][:, :, None, None] * pb[t][None, :, :, None]
             * nxt[:, None, :, :]).reshape(S, -1)
        out[t] = u
    return out


def _reward_to_go(model):
    out = [None] * model.H
    rtg = model.reward[model.H - 1].reshape(-1)
    out[model.H - 1] = rtg
    for t in range(model.H - 2, -1, -1):
        rtg = (model.reward[t].reshape(-1)[:, None] + rtg[None, :]).reshape(-1)
        out[t] = rtg
    return out


def latent_value(model: TabularPOMDP, pi: MemorylessPolicy) -> np.ndarray:
    """Latent value table ``V[t, s]`` for t = 0..H, with ``V[H] = 0``."""
    _check_policy(model, pi)
    V = np.zeros((model.H + 1, model.S))
    for t in range(model.H - 1, -1, -1):
        cont = np.zeros((model.S, model.A))
        if t < model.H - 1:
            cont = model.transition[t] @ V[t + 1]
        # per (s, o, a): reward plus expected continuation
        q = model.reward[t][None, :, :] + cont[:, None, :]
        V[t] = np.einsum("so,oa,soa->s", model.emission[t], pi.probs[t], q)
    return V


def policy_value(model: TabularPOMDP, pi: MemorylessPolicy) -> float:
    return float(model.d1 @ latent_value(model, pi)[0])


def occupancy(model: TabularPOMDP, pi: MemorylessPolicy) -> np.ndarray:
    """Latent-state marginals ``d[t, s]`` under ``pi``."""
    _check_policy(model, pi)
    d = np.zeros((model.H, model.S))
    d[0] = model.d1
    for t in range(model.H - 1):
        d[t + 1] = np.einsum("s,so,oa,sap->p", d[t], model.emission[t],
                             pi.probs[t], model.transition[t])
    return d


def brute_force_J(model: TabularPOMDP, pi: MemorylessPolicy, budget=BRUTE_FORCE_BUDGET) -> float:
    """Expected return by summing over every (s, o, a) path of length H.

    The path axis is kept explicit: after step t the probability array has
    one entry per prefix ``(s_1, o_1, a_1, ..., s_t, o_t, a_t)``.
    """
    _check_policy(model, pi)
    S, O, A, H = model.S, model.O, model.A, model.H
    n_paths = (S * O * A) ** H
    if n_paths > budget:
        raise BudgetError(f"brute force needs {n_paths} paths, budget is {budget}")
    start = model.d1.reshape(1, S)
    returns = np.zeros(1)
    total = 0.0
    for t in range(H):
        path = (start[:, :, None, None]
                * model.emission[t].reshape(1, S, O, 1)
                * pi.probs[t].reshape(1, 1, O, A))
        ret = returns[:, None, None, None] + model.reward[t].reshape(1, 1, O, A)
        ret = np.broadcast_to(ret, path.shape)
        if t == H - 1:
            total = float(np.sum(path * ret))
            break
        nxt = path[..., None] * model.transition[t].reshape(1, S, 1, A, S)
        start = nxt.reshape(-1, S)
        returns = ret.reshape(-1)
    return total


def trajectory_probabilities(model: TabularPOMDP, pi: MemorylessPolicy) -> np.ndarray:
    """``Pr_pi`` of every full observation-action sequence, indexed as a future at step 0."""
    _check_policy(model, pi)
    S = model.S
    alpha = model.d1[None, :]
    for t in range(model.H):
        joint = (alpha[:, :, None, None] * model.emission[t][None, :, :, None]
                 * pi.probs[t][None, None, :, :])
        if t == model.H - 1:
            return joint.sum(axis=1).reshape(-1)
        alpha = np.einsum("hsoa,sap->hoap", joint, model.transition[t]).reshape(-1, S)


def outcome_vector(model: TabularPOMDP, pi_b: MemorylessPolicy, t: int, sequence) -> np.ndarray:
    """``u(f_t)[s] = Pr_{pi_b}(f_t | s_t = s)`` for one explicit future.

    Computed by a forward product along the given sequence, independently of
    the backward recursion used to build whole outcome matrices.
    """
    seq = list(sequence)
    if len(seq) != model.H - t:
        raise ModelShapeError(f"future at step {t} must have {model.H - t} pairs")
    out = np.zeros(model.S)
    for s0 in range(model.S):
        belief = np.zeros(model.S)
        belief[s0] = 1.0
        for k, (o, a) in enumerate(seq):
            step = t + k
            belief = belief * model.emission[step][:, o] * pi_b.probs[step, o, a]
            if step < model.H - 1:
                belief = belief @ model.transition[step][:, a, :]
        out[s0] = belief.sum()
    return out


# --------------------------------------------------------------------------
# step algebra

@dataclass(frozen=True, eq=False)
class StepLinearAlgebra:
    """Belief/outcome matrices and related marginals for one step ``t``.

    ``history_marginal`` and ``mean_belief`` refer to the policy the algebra
    was built for; the ``*_behavior`` fields refer to the behavior policy,
    which also defines the outcome matrix.
    """

    step: int
    beliefs: np.ndarray               # (S, |H_t|)
    history_valid: np.ndarray         # (|H_t|,) bool
    history_marginal: np.ndarray      # d^pi(tau_t)
    history_marginal_behavior: np.ndarray
    joint_behavior: np.ndarray        # (|H_t|, S) Pr_{pi_b}(tau_t, s_t)
    mean_belief: np.ndarray           # M_H d^pi(tau)
    mean_belief_behavior: np.ndarray
    outcome: np.ndarray               # (S, |F_t|) rows Pr_{pi_b}(f_t | s_t)
    Z: np.ndarray                     # column sums of outcome
    future_marginal: np.ndarray       # Pr_{pi_b}(f_t)
    reward_to_go: np.ndarray          # R+(f_t)

    @property
    def future_reachable(self) -> np.ndarray:
        return self.Z > 0

    def belief_rank(self, tol=1e-10) -> int:
        mask = self.history_marginal_behavior > 0
        if not mask.any():
            return 0
        return int(np.linalg.matrix_rank(self.beliefs[:, mask], tol=tol))

    def outcome_rank(self, tol=1e-12) -> int:
        # rank via the S x S Gram matrix; the outcome matrix can be very wide
        gram = self.outcome @ self.outcome.T
        ev = np.linalg.eigvalsh(gram)
        return int(np.sum(ev > tol * max(ev.max(), 1e-300)))


def _assemble_steps(model, pi, pi_b, steps):
    S = model.S
    outcomes = _outcome_matrices(model, pi_b)
    rtg = _reward_to_go(model)
    lik_iter = _forward_joint(model, None)
    pi_iter = _forward_joint(model, pi.probs)
    pb_iter = _forward_joint(model, pi_b.probs)
    out = []
    for t, lik, a_pi, a_b in zip(range(model.H), lik_iter, pi_iter, pb_iter):
        if t not in steps:
            continue
        norm = lik.sum(axis=1)
        valid = norm > 0
        beliefs = np.zeros((S, lik.shape[0]))
        beliefs[:, valid] = (lik[valid] / norm[valid, None]).T
        d_pi = a_pi.sum(axis=1)
        d_b = a_b.sum(axis=1)
        u = outcomes[t]
        Z = u.sum(axis=0)
        out.append(StepLinearAlgebra(
            step=t,
            beliefs=beliefs,
            history_valid=valid,
            history_marginal=d_pi,
            history_marginal_behavior=d_b,
            joint_behavior=a_b,
            mean_belief=beliefs @ d_pi,
            mean_belief_behavior=beliefs @ d_b,
            outcome=u,
            Z=Z,
            future_marginal=(a_b.sum(axis=0) @ u) if t > 0 else model.d1 @ u,
            reward_to_go=rtg[t],
        ))
    for alg in out:
        for arr in vars(alg).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
    return out


def build_step_algebra(model: TabularPOMDP, pi: MemorylessPolicy, pi_b: MemorylessPolicy,
                       t: int, budget=DEFAULT_BUDGET) -> StepLinearAlgebra:
    _check_policy(model, pi, pi_b)
    check_budget(model, budget)
    if not 0 <= t < model.H:
        raise ValueError(f"step {t} outside [0, {model.H})")
    return _assemble_steps(model, pi, pi_b, {t})[0]


@dataclass(frozen=True, eq=False)
class ExactAlgebra:
    """All exact objects for an evaluation/behavior policy pair.

    ``value_e``/``value_b`` have H+1 rows; the last is zero.
    """

    model: TabularPOMDP
    pi_e: MemorylessPolicy
    pi_b: MemorylessPolicy
    steps: tuple
    mu: np.ndarray
    value_e: np.ndarray
    value_b: np.ndarray
    occupancy_e: np.ndarray
    occupancy_b: np.ndarray
    one_step_reward_e: np.ndarray   # E_{a ~ pi_e}[r_t | s_t]

    @property
    def H(self) -> int:
        return self.model.H

    @property
    def J_e(self) -> float:
        return float(self.model.d1 @ self.value_e[0])

    @property
    def J_b(self) -> float:
        return float(self.model.d1 @ self.value_b[0])

    def __getitem__(self, t) -> StepLinearAlgebra:
        return self.steps[t]


def build_algebra(model: TabularPOMDP, pi_e: MemorylessPolicy, pi_b: MemorylessPolicy,
                  budget=DEFAULT_BUDGET) -> ExactAlgebra:
    _check_policy(model, pi_e, pi_b)
    check_budget(model, budget)
    mu = action_ratios(pi_e, pi_b)
    steps = _assemble_steps(model, pi_e, pi_b, set(range(model.H)))
    rbar = np.einsum("tso,toa,toa->ts", model.emission, pi_e.probs, model.reward)
    for arr in (mu, rbar):
        arr.setflags(write=False)
    return ExactAlgebra(
        model=model, pi_e=pi_e, pi_b=pi_b, steps=tuple(steps), mu=mu,
        value_e=latent_value(model, pi_e), value_b=latent_value(model, pi_b),
        occupancy_e=occupancy(model, pi_e), occupancy_b=occupancy(model, pi_b),
        one_step_reward_e=rbar,
    )


# --------------------------------------------------------------------------
# Bellman residuals

def future_residual_table(alg: ExactAlgebra, V: FutureFunction, t: int) -> np.ndarray:
    """Per-future residual ``mu(o_t,a_t) (R(o_t,a_t) + V(f_{t+1})) - V(f_t)``."""
    model = alg.model
    OA = model.pair_count
    mu = alg.mu[t].reshape(OA, 1)
    r = model.reward[t].reshape(OA, 1)
    nxt = V.table(t + 1).reshape(1, -1)
    cur = V.table(t).reshape(OA, -1)
    return (mu * (r + nxt) - cur).reshape(-1)


def _bellman_s_direct(alg, V):
    model = alg.model
    out = np.zeros((model.H, model.S))
    for t in range(model.H):
        expected_now = alg[t].outcome @ V.table(t)
        cont = np.zeros(model.S)
        if t < model.H - 1:
            nxt = alg[t + 1].outcome @ V.table(t + 1)          # E_{pi_b}[V(f_{t+1}) | s_{t+1}]
            per_sa = model.transition[t] @ nxt                # (S, A)
            cont = np.einsum("so,oa,sa->s", model.emission[t], alg.pi_e.probs[t], per_sa)
        out[t] = alg.one_step_reward_e[t] + cont - expected_now
    return out


def _bellman_s_weighted(alg, V):
    return np.stack([alg[t].outcome @ future_residual_table(alg, V, t)
                     for t in range(alg.H)])


def _scale(*arrays):
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrays if np.size(a)])


def bellman_residual_S(alg: ExactAlgebra, V: FutureFunction, check=True) -> np.ndarray:
    """``(B^S V)[t, s]``, with the two equivalent computations cross-checked."""
    direct = _bellman_s_direct(alg, V)
    if check:
        weighted = _bellman_s_weighted(alg, V)
        gap = float(np.max(np.abs(direct - weighted)))
        if gap > CROSS_CHECK_TOL * _scale(direct, weighted, *V.tables):
            raise PomdpError(f"Bellman residual forms disagree by {gap:.3e}")
    return direct


def bellman_residual_H(alg: ExactAlgebra, V: FutureFunction, residual_S=None,
                       check=True) -> HistoryFunction:
    """``(B^H V)(tau_t) = <b(tau_t), (B^S V)_t>`` for every history.

    With ``check`` the result is compared on every behavior-reachable history
    to the conditional expectation of the per-future residual computed from
    the joint (history, future) distribution.
    """
    BS = bellman_residual_S(alg, V, check=check) if residual_S is None else residual_S
    tables = []
    for t in range(alg.H):
        st = alg[t]
        bh = st.beliefs.T @ BS[t]
        if check:
            joint = st.joint_behavior @ st.outcome           # Pr_{pi_b}(tau_t, f_t)
            mass = joint.sum(axis=1)
            ok = mass > 0
            direct = joint[ok] @ future_residual_table(alg, V, t) / mass[ok]
            gap = float(np.max(np.abs(direct - bh[ok]))) if ok.any() else 0.0
            if gap > CROSS_CHECK_TOL * _scale(direct, bh, *V.tables):
                raise PomdpError(f"history residual check failed at step {t}: {gap:.3e}")
        tables.append(bh)
    return HistoryFunction(tables, label=f"B^H[{V.label}]")


def evaluation_error_identity(alg: ExactAlgebra, V: FutureFunction):
    """Return ``(J(pi_e) - E_b[V(f_0)], sum_t E_e[(B^S V)(s_t)])``."""
    lhs = alg.J_e - float(alg.model.d1 @ (alg[0].outcome @ V.table(0)))
    BS = bellman_residual_S(alg, V)
    rhs = float(sum(alg.occupancy_e[t] @ BS[t] for t in range(alg.H)))
    return lhs, rhs


def expected_history_value(alg: ExactAlgebra, fn: HistoryFunction, t: int, behavior=True) -> float:
    st = alg[t]
    d = st.history_marginal_behavior if behavior else st.history_marginal
    return float(d @ fn.tables[t])
