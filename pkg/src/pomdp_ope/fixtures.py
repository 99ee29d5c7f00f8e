"""Named test models with known structure.

Each generator checks the defining property of its kind before returning,
so a fixture that exists is a fixture whose claims hold.

======== =================================================================
bandit   one state, one observation, two actions, rewards 0.2 / 0.8
mdp      identity emissions, deterministic cyclic transitions: one-hot beliefs
reveal   absorbing latent state, last observation equals the state
uniform  near-uniform emissions and behavior policy (parameter ``c_stoch``)
chain    long horizon, evaluation policy copies the observation
onpolicy random model evaluated under its own behavior policy
random   random model, rejection-sampled until well identified
======== =================================================================
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import MemorylessPolicy, TabularPOMDP
from .errors import GenerationError
from .exact import build_algebra
from .fdvf import belief_covariance, outcome_covariance, reward_outcome_covariance, spectrum

KINDS = ("random", "bandit", "mdp", "reveal", "uniform", "chain", "onpolicy")
MAX_ATTEMPTS = 1000
GEN_COND_LIMIT = 1e6
R_MIN = 0.05


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    model: TabularPOMDP
    pi_e: MemorylessPolicy
    pi_b: MemorylessPolicy
    tags: tuple = ()
    params: dict = field(default_factory=dict)

    def algebra(self, budget=None):
        if budget is None:
            return build_algebra(self.model, self.pi_e, self.pi_b)
        return build_algebra(self.model, self.pi_e, self.pi_b, budget=budget)


def _simplex(rng, *shape, alpha=1.0):
    return rng.dirichlet(np.full(shape[-1], alpha), size=shape[:-1])


def _rewards(rng, H, O, A):
    return R_MIN + (1.0 - R_MIN) * rng.random((H, O, A))


def _well_identified(model, pi_e, pi_b) -> bool:
    alg = build_algebra(model, pi_e, pi_b)
    for t in range(model.H):
        st = alg[t]
        if st.outcome_rank() < model.S:
            return False
        for cov in (outcome_covariance(st), reward_outcome_covariance(st)):
            if not spectrum(cov)[2] <= GEN_COND_LIMIT:
                return False
        if (t > 0 or model.S == 1) and not spectrum(belief_covariance(st))[2] <= GEN_COND_LIMIT:
            return False
    return True


def _random_model(rng, S, O, A, H):
    return TabularPOMDP(
        d1=_simplex(rng, S),
        transition=_simplex(rng, H - 1, S, A, S),
        emission=_simplex(rng, H, S, O),
        reward=_rewards(rng, H, O, A),
    )


def _full_support_policy(rng, H, O, A, floor=0.05, name="pi"):
    p = _simplex(rng, H, O, A)
    return MemorylessPolicy(floor / A + (1 - floor) * p, name=name)


def _random_fixture(rng, params, onpolicy=False):
    sizes = {}
    for key, hi in (("S", 3), ("A", 3), ("H", 4)):
        sizes[key] = int(params.get(key, rng.integers(1, hi + 1)))
    # outcome matrices need at least as many observations as latent states
    sizes["O"] = int(params.get("O", rng.integers(sizes["S"], 4)))
    S, O, A, H = sizes["S"], sizes["O"], sizes["A"], sizes["H"]
    for _ in range(MAX_ATTEMPTS):
        model = _random_model(rng, S, O, A, H)
        pi_b = _full_support_policy(rng, H, O, A, name="pi_b")
        if onpolicy:
            pi_e = MemorylessPolicy(pi_b.probs, name="pi_e")
        else:
            pi_e = _full_support_policy(rng, H, O, A, floor=0.0, name="pi_e")
        if _well_identified(model, pi_e, pi_b):
            return model, pi_e, pi_b, sizes
    raise GenerationError(f"no well-identified model with {sizes} after {MAX_ATTEMPTS} attempts")


def _bandit():
    model = TabularPOMDP(
        d1=np.array([1.0]),
        transition=np.zeros((0, 1, 2, 1)),
        emission=np.ones((1, 1, 1)),
        reward=np.array([[[0.2, 0.8]]]),
    )
    pi_b = MemorylessPolicy(np.array([[[0.5, 0.5]]]), name="pi_b")
    pi_e = MemorylessPolicy(np.array([[[0.0, 1.0]]]), name="pi_e")
    return model, pi_e, pi_b


def _mdp(rng, S, H):
    A = S
    T = np.zeros((H - 1, S, A, S))
    for s in range(S):
        for a in range(A):
            T[:, s, a, (s + a) % S] = 1.0
    d1 = np.zeros(S)
    d1[0] = 1.0
    model = TabularPOMDP(d1=d1, transition=T, emission=np.broadcast_to(np.eye(S), (H, S, S)).copy(),
                         reward=_rewards(rng, H, S, A))
    pi_b = _full_support_policy(rng, H, S, A, floor=0.3, name="pi_b")
    pi_e = _full_support_policy(rng, H, S, A, floor=0.0, name="pi_e")
    return model, pi_e, pi_b


def _reveal(rng, S, A, H, noise):
    O = S
    T = np.broadcast_to(np.eye(S)[:, None, :], (H - 1, S, A, S)).copy()
    E = np.empty((H, S, O))
    E[:] = noise / (O - 1) if O > 1 else 0.0
    for s in range(S):
        E[:, s, s] = 1.0 - noise if O > 1 else 1.0
    E[H - 1] = np.eye(S)
    model = TabularPOMDP(d1=_simplex(rng, S, alpha=5.0), transition=T, emission=E,
                         reward=_rewards(rng, H, O, A))
    pi_b = _full_support_policy(rng, H, O, A, floor=0.3, name="pi_b")
    pi_e = _full_support_policy(rng, H, O, A, floor=0.0, name="pi_e")
    return model, pi_e, pi_b


def _near_uniform_rows(rng, shape, delta):
    """Rows ``(1 + delta * xi) / K`` with zero-mean ``xi`` in [-1, 1]."""
    K = shape[-1]
    xi = rng.uniform(-1.0, 1.0, shape)
    xi -= xi.mean(axis=-1, keepdims=True)
    peak = np.max(np.abs(xi), axis=-1, keepdims=True)
    xi = np.where(peak > 0, xi / np.where(peak > 0, peak, 1.0), 0.0)
    return (1.0 + delta * xi) / K


def _uniform(rng, S, O, A, H, c_stoch):
    # emission and policy entries are at most (1 + delta) / K, so every outcome
    # probability is at most (1 + delta)^(2 (H - t)) / (OA)^(H - t) <= c_stoch / (OA)^(H - t)
    delta = c_stoch ** (1.0 / (2 * H)) - 1.0
    model = TabularPOMDP(
        d1=_simplex(rng, S),
        transition=_simplex(rng, H - 1, S, A, S),
        emission=_near_uniform_rows(rng, (H, S, O), delta),
        reward=_rewards(rng, H, O, A),
    )
    pi_b = MemorylessPolicy(_near_uniform_rows(rng, (H, O, A), delta), name="pi_b")
    pi_e = _full_support_policy(rng, H, O, A, floor=0.0, name="pi_e")
    return model, pi_e, pi_b


def _chain(H, accuracy, stick):
    S = O = A = 2
    E = np.array([[accuracy, 1 - accuracy], [1 - accuracy, accuracy]])
    T = np.zeros((H - 1, S, A, S))
    for s in range(S):
        for a in range(A):
            # the latent state drifts toward the chosen action
            T[:, s, a, a] = stick
            T[:, s, a, 1 - a] = 1 - stick
    R = np.array([[0.9, 0.3], [0.3, 0.9]])
    model = TabularPOMDP(
        d1=np.array([0.6, 0.4]),
        transition=T,
        emission=np.broadcast_to(E, (H, S, O)).copy(),
        reward=np.broadcast_to(R, (H, O, A)).copy(),
    )
    pi_b = MemorylessPolicy(np.full((H, O, A), 0.5), name="pi_b")
    pi_e = MemorylessPolicy(np.broadcast_to(np.eye(2), (H, O, A)).copy(), name="pi_e")
    return model, pi_e, pi_b


def _verify(kind, model, pi_e, pi_b, params):
    """Check the defining property of ``kind``; raise if it fails."""
    alg = build_algebra(model, pi_e, pi_b)
    if kind == "mdp":
        for t in range(model.H):
            b = alg[t].beliefs[:, alg[t].history_valid]
            if not np.all((np.abs(b) < 1e-12) | (np.abs(b - 1) < 1e-12)):
                raise GenerationError(f"mdp fixture has a non one-hot belief at step {t}")
    elif kind == "reveal":
        for t in range(model.H):
            gap = np.max(np.abs(outcome_covariance(alg[t]) - np.eye(model.S)))
            if gap > 1e-8:
                raise GenerationError(f"reveal fixture has Sigma_F != I at step {t} (gap {gap:.2e})")
    elif kind == "uniform":
        c = params["c_stoch"]
        for t in range(model.H):
            width = model.pair_count ** (model.H - t)
            if alg[t].outcome.max() > c / width * (1 + 1e-12):
                raise GenerationError("uniform fixture violates its entrywise outcome bound")
    elif kind == "chain":
        if np.max(np.cumprod(alg.mu.max(axis=(1, 2)))) != 2.0 ** model.H:
            raise GenerationError("chain fixture does not reach the expected cumulative weight")


def generate_fixture(kind: str, params: dict | None = None, seed: int = 0) -> Fixture:
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    tags = (kind,)
    if kind == "bandit":
        model, pi_e, pi_b = _bandit()
    elif kind == "mdp":
        params.setdefault("S", 3)
        params.setdefault("H", 3)
        model, pi_e, pi_b = _mdp(rng, params["S"], params["H"])
        tags += ("one_hot_beliefs",)
    elif kind == "reveal":
        params.setdefault("S", 2)
        params.setdefault("A", 2)
        params.setdefault("H", 3)
        params.setdefault("noise", 0.25)
        model, pi_e, pi_b = _reveal(rng, params["S"], params["A"], params["H"], params["noise"])
        tags += ("revealing_future",)
    elif kind == "uniform":
        for key, val in (("S", 2), ("O", 2), ("A", 2), ("H", 3), ("c_stoch", 1.5)):
            params.setdefault(key, val)
        model, pi_e, pi_b = _uniform(rng, params["S"], params["O"], params["A"], params["H"],
                                     params["c_stoch"])
        tags += ("near_uniform",)
    elif kind == "chain":
        params.setdefault("H", 8)
        params.setdefault("accuracy", 0.8)
        params.setdefault("stick", 0.7)
        model, pi_e, pi_b = _chain(params["H"], params["accuracy"], params["stick"])
        tags += ("long_horizon",)
    elif kind in ("random", "onpolicy"):
        model, pi_e, pi_b, sizes = _random_fixture(rng, params, onpolicy=kind == "onpolicy")
        params.update(sizes)
        if kind == "onpolicy":
            tags += ("onpolicy",)
    else:
        raise ValueError(f"unknown fixture kind {kind!r}; expected one of {KINDS}")
    _verify(kind, model, pi_e, pi_b, params)
    if kind in ("random", "onpolicy", "bandit", "mdp", "reveal", "chain"):
        tags += ("identifiable",)
    name = kind if kind in ("bandit", "chain") else f"{kind}-{seed}"
    return Fixture(name, model, pi_e, pi_b, tags, params)


def default_fixture_set(random_count: int = 3, seed: int = 0) -> list:
    out = [
        generate_fixture("bandit"),
        generate_fixture("mdp", seed=seed),
        generate_fixture("reveal", seed=seed),
        generate_fixture("uniform", seed=seed),
        generate_fixture("chain"),
        generate_fixture("onpolicy", seed=seed),
    ]
    out += [generate_fixture("random", seed=seed + k) for k in range(random_count)]
    return out


def fixture_from_name(name: str) -> Fixture:
    """Inverse of ``Fixture.name`` for generated fixtures, e.g. ``"random-7"``."""
    kind, _, seed = name.partition("-")
    return generate_fixture(kind, seed=int(seed) if seed else 0)


def is_identifiable(fixture: Fixture) -> bool:
    return "identifiable" in fixture.tags


def expected_cumulative_weight(fixture: Fixture) -> float:
    alg = fixture.algebra()
    return float(math.prod(alg.mu[t].max() for t in range(fixture.model.H)))
