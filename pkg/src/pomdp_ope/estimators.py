"""Off-policy estimators and the finite function classes they search over.

Both minimax estimators work on the per-sample residual

    G_t = mu(o_t, a_t) (r_t + V(f_{t+1})) - V(f_t)

and return the plug-in value ``E_D[V(f_0)]`` of the selected ``V``:

- ``minimax``: ``argmin_V max_xi sum_t E_D[G_t xi(tau_t) - xi(tau_t)^2 / 2]``
- ``mis``: ``argmin_V max_w sum_t |E_D[w(tau_t) G_t]|``, each mean optionally
  replaced by a median of block means.

The search is exhaustive over the finite classes; ties go to the lowest
index.  Class members are dense tables built from the known model, so this
is a research harness rather than a model-free method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ActionCoverageError, PomdpError
from .exact import ExactAlgebra, bellman_residual_H
from .fdvf import (
    construct_history_weights,
    construct_reward_weighted_fdvf,
    linear_future_function,
    linear_history_function,
)
from .functions import FutureFunction, HistoryFunction
from .simulate import ObservedData

METHODS = ("minimax", "mis", "is", "pd-is", "plugin")


@dataclass(frozen=True, eq=False)
class FunctionClass:
    domain: str                  # "futures" | "histories"
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise PomdpError("function classes must be nonempty")
        object.__setattr__(self, "members", tuple(self.members))

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    @property
    def sup_norm(self) -> float:
        return max(m.sup_norm() for m in self.members)

    def without(self, index: int) -> "FunctionClass":
        return FunctionClass(self.domain, self.members[:index] + self.members[index + 1:])


@dataclass(frozen=True, eq=False)
class ClassBundle:
    V: FunctionClass
    Xi: FunctionClass
    W: FunctionClass


def build_classes(alg: ExactAlgebra, m: int = 0, eps: float = 0.1, seed: int = 0) -> ClassBundle:
    """Classes that contain the exact FDVF and history weights.

    ``V`` holds the reward-weighted FDVF followed by ``m`` members with
    parameters ``theta_t + eps * eta_t``; ``Xi`` holds ``B^H V`` for each of
    them, in the same order; ``W`` holds the belief-linear history weights
    followed by ``m`` parameter perturbations of them.  ``eta`` is uniform on
    ``[-1, 1]^S`` and drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    S = alg.model.S
    vf = construct_reward_weighted_fdvf(alg).function
    vs = [vf]
    for k in range(m):
        thetas = [th + eps * rng.uniform(-1.0, 1.0, S) for th in vf.thetas]
        vs.append(linear_future_function(alg, thetas, "zr", label=f"V_pert[{k}]"))
    xis = [bellman_residual_H(alg, v) for v in vs]
    wstar = construct_history_weights(alg).function
    ws = [wstar]
    for k in range(m):
        thetas = [th + eps * rng.uniform(-1.0, 1.0, S) for th in wstar.thetas]
        ws.append(linear_history_function(alg, thetas, label=f"w_pert[{k}]"))
    return ClassBundle(FunctionClass("futures", vs), FunctionClass("histories", xis),
                       FunctionClass("histories", ws))


# --------------------------------------------------------------------------
# sample-level evaluation

@dataclass(frozen=True, eq=False)
class EstimateReport:
    estimator: str
    estimate: float
    n: int
    seed: int | None = None
    selected: int | None = None
    adversary: int | None = None
    step_losses: np.ndarray | None = None    # per step, at (selected, adversary)
    objectives: np.ndarray | None = None     # max over the adversary class, per V
    bound: dict | None = field(default=None)

    def to_dict(self) -> dict:
        out = {"estimator": self.estimator, "estimate": self.estimate, "n": self.n,
               "seed": self.seed, "selected": self.selected, "adversary": self.adversary}
        if self.step_losses is not None:
            out["step_losses"] = [float(x) for x in self.step_losses]
        if self.objectives is not None:
            out["objectives"] = [float(x) for x in self.objectives]
        if self.bound is not None:
            out["bound"] = self.bound
        return out


def _ids(data: ObservedData):
    OA = data.O * data.A
    codes = data.codes
    H = data.H
    hist = [np.zeros(data.n, dtype=np.int64)]
    for t in range(1, H):
        hist.append(hist[-1] * OA + codes[:, t - 1])
    fut = [None] * (H + 1)
    fut[H] = np.zeros(data.n, dtype=np.int64)
    scale = 1
    for t in range(H - 1, -1, -1):
        fut[t] = codes[:, t] * scale + fut[t + 1]
        scale *= OA
    return hist, fut


def sample_ratios(data: ObservedData, pi_e) -> np.ndarray:
    """Per-sample ``pi_e(a_t|o_t) / logged pi_b(a_t|o_t)``."""
    steps = np.arange(data.H)[None, :]
    pe = pi_e.probs[steps, data.obs, data.acts]
    bad = (pe > 0) & (data.bprobs <= 0)
    if bad.any():
        i, t = (int(v) for v in np.argwhere(bad)[0])
        raise ActionCoverageError(
            f"trajectory {i}, step {t}: logged behavior probability is 0 but the "
            f"evaluation policy plays the action"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(data.bprobs > 0, pe / np.where(data.bprobs > 0, data.bprobs, 1.0), 0.0)


def _residual_samples(data, mu, fut, V: FutureFunction) -> np.ndarray:
    """``G[t, i]`` for one value function."""
    H = data.H
    G = np.empty((H, data.n))
    for t in range(H):
        nxt = V(t + 1, fut[t + 1]) if t + 1 < H else 0.0
        G[t] = mu[:, t] * (data.rews[:, t] + nxt) - V(t, fut[t])
    return G


def _history_samples(data, hist, fn: HistoryFunction) -> np.ndarray:
    return np.stack([fn(t, hist[t]) for t in range(data.H)])


def mom_blocks_default(n: int, delta: float = 0.05) -> int:
    return min(n, math.ceil(8 * math.log(2 / delta)))


def _mean(x: np.ndarray, blocks: int | None) -> np.ndarray:
    """Mean over the last axis, or the median of ``blocks`` contiguous block means."""
    if blocks is None:
        return x.sum(axis=-1) / x.shape[-1]
    parts = np.array_split(x, blocks, axis=-1)
    means = np.stack([p.sum(axis=-1) / p.shape[-1] for p in parts], axis=-1)
    return np.median(means, axis=-1)


def plug_in_estimate(data: ObservedData, V: FutureFunction) -> float:
    _, fut = _ids(data)
    return float(V(0, fut[0]).sum() / data.n)


def minimax_fdvf_estimate(data: ObservedData, pi_e, vclass: FunctionClass, xiclass: FunctionClass,
                          seed=None) -> EstimateReport:
    hist, fut = _ids(data)
    mu = sample_ratios(data, pi_e)
    X = np.stack([_history_samples(data, hist, xi) for xi in xiclass])       # (J, H, n)
    penalty = 0.5 * (X * X).sum(axis=-1) / data.n                          # (J, H)
    losses = []
    for V in vclass:
        G = _residual_samples(data, mu, fut, V)
        losses.append((G[None] * X).sum(axis=-1) / data.n - penalty)
    losses = np.stack(losses)                                               # (I, J, H)
    return _select(data, "minimax", losses.sum(axis=-1), losses, vclass, fut, seed)


def mis_estimate(data: ObservedData, pi_e, vclass: FunctionClass, wclass: FunctionClass,
                 mom_blocks: int | None = None, seed=None) -> EstimateReport:
    if mom_blocks is not None and not 1 <= mom_blocks <= data.n:
        raise PomdpError(f"median-of-means needs 1 <= blocks <= n, got {mom_blocks} with n={data.n}")
    hist, fut = _ids(data)
    mu = sample_ratios(data, pi_e)
    Wv = np.stack([_history_samples(data, hist, w) for w in wclass])         # (J, H, n)
    losses = []
    for V in vclass:
        G = _residual_samples(data, mu, fut, V)
        losses.append(_mean(G[None] * Wv, mom_blocks))
    losses = np.stack(losses)
    return _select(data, "mis", np.abs(losses).sum(axis=-1), losses, vclass, fut, seed)


def _select(data, tag, totals, losses, vclass, fut, seed):
    # totals[i, j]: objective of V_i against adversary j
    adversary = np.argmax(totals, axis=1)
    objectives = totals[np.arange(totals.shape[0]), adversary]
    i = int(np.argmin(objectives))
    j = int(adversary[i])
    est = float(vclass[i](0, fut[0]).sum() / data.n)
    return EstimateReport(tag, est, data.n, seed, i, j, losses[i, j], objectives)


def is_estimate(data: ObservedData, pi_e, mode: str = "full_trajectory") -> float:
    mu = sample_ratios(data, pi_e)
    if mode == "full_trajectory":
        w = np.prod(mu, axis=1)
        return float((w * data.rews.sum(axis=1)).sum() / data.n)
    if mode == "per_decision":
        w = np.cumprod(mu, axis=1)
        return float((w * data.rews).sum(axis=1).sum() / data.n)
    raise ValueError(f"unknown importance sampling mode {mode!r}")


def run_estimator(method: str, data: ObservedData, pi_e, classes: ClassBundle | None = None,
                  mom_blocks=None, seed=None) -> EstimateReport:
    if method == "minimax":
        return minimax_fdvf_estimate(data, pi_e, classes.V, classes.Xi, seed)
    if method == "mis":
        return mis_estimate(data, pi_e, classes.V, classes.W, mom_blocks, seed)
    if method == "is":
        return EstimateReport("is", is_estimate(data, pi_e, "full_trajectory"), data.n, seed)
    if method == "pd-is":
        return EstimateReport("pd-is", is_estimate(data, pi_e, "per_decision"), data.n, seed)
    if method == "plugin":
        return EstimateReport("plugin", plug_in_estimate(data, classes.V[0]), data.n, seed, 0)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# --------------------------------------------------------------------------
# population (exact-expectation) counterparts

def _population_terms(alg, vclass):
    """Per V: ``B^H V`` tables, built once."""
    return [bellman_residual_H(alg, V) for V in vclass]


def population_minimax_objectives(alg: ExactAlgebra, vclass, xiclass) -> np.ndarray:
    """``max_xi sum_t E_b[xi (B^H V) - xi^2 / 2]`` for every V, with exact expectations."""
    bh = _population_terms(alg, vclass)
    out = []
    for b in bh:
        vals = []
        for xi in xiclass:
            vals.append(sum(
                alg[t].history_marginal_behavior @ (xi.tables[t] * b.tables[t] - 0.5 * xi.tables[t] ** 2)
                for t in range(alg.H)))
        out.append(max(vals))
    return np.array(out)


def population_mis_table(alg: ExactAlgebra, vclass, wclass) -> np.ndarray:
    """``sum_t E_b[w (B^H V)]`` signed per step, shape (|V|, |W|, H)."""
    bh = _population_terms(alg, vclass)
    out = np.zeros((len(vclass), len(wclass), alg.H))
    for i, b in enumerate(bh):
        for j, w in enumerate(wclass):
            for t in range(alg.H):
                out[i, j, t] = alg[t].history_marginal_behavior @ (w.tables[t] * b.tables[t])
    return out


def population_mis_objectives(alg: ExactAlgebra, vclass, wclass) -> np.ndarray:
    return np.abs(population_mis_table(alg, vclass, wclass)).sum(axis=-1).max(axis=1)


def population_plug_in(alg: ExactAlgebra, V: FutureFunction) -> float:
    return float(alg.model.d1 @ (alg[0].outcome @ V.table(0)))


def realizability_surrogates(alg: ExactAlgebra, vclass, wclass):
    """Approximate-realizability surrogates ``(eps_V, eps_W)`` from exact expectations.

    ``eps_V = min_V max_w |sum_t E_b[w B^H V]|``.  ``eps_W`` measures how well
    the best single member ``w`` stands in for the exact history weights,
    ``min_w max_V |sum_t E_b[(w_star - w) B^H V]|``; searching single members
    rather than their span makes it an upper bound on the span version.
    """
    table = population_mis_table(alg, vclass, wclass).sum(axis=-1)      # (I, J)
    eps_v = float(np.abs(table).max(axis=1).min())
    wstar = construct_history_weights(alg).function
    star = population_mis_table(alg, vclass, [wstar]).sum(axis=-1)[:, 0]  # (I,)
    eps_w = float(np.abs(star[:, None] - table).max(axis=0).min())
    return eps_v, eps_w
