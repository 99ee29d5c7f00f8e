"""Tabular POMDP and memoryless-policy containers, plus history/future encodings.

Steps are zero-based throughout the package: ``t = 0`` is the first decision
step and ``t = H - 1`` the last.  A history at step ``t`` holds ``t``
observation-action pairs, a future at step ``t`` holds ``H - t`` pairs.

Sequences are packed into integers lexicographically.  Each pair ``(o, a)``
becomes the digit ``o * A + a`` (observation-major) and the leftmost pair is
the most significant digit in base ``O * A``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ActionCoverageError, EncodingError, ModelShapeError

PROB_TOL = 1e-12


def _frozen(x, name):
    try:
        arr = np.array(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelShapeError(f"{name}: not a rectangular numeric table ({exc})") from None
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularPOMDP:
    """Finite-horizon POMDP with shared per-step state/observation spaces.

    Parameters
    ----------
    d1 : array (S,)
        Initial latent distribution.
    transition : array (H-1, S, A, S)
        ``transition[t, s, a, s2] = Pr(s_{t+1}=s2 | s_t=s, a_t=a)``.
    emission : array (H, S, O)
        ``emission[t, s, o] = Pr(o_t=o | s_t=s)``.
    reward : array (H, O, A)
        Deterministic reward ``R(o_t, a_t)``.

    Only shapes are checked here; normalization and reward positivity are
    reported by :func:`pomdp_ope.validation.validate_model` so that broken
    models can still be inspected.
    """

    d1: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        d1 = _frozen(self.d1, "d1")
        emission = _frozen(self.emission, "emission")
        reward = _frozen(self.reward, "reward")
        if d1.ndim != 1 or d1.size == 0:
            raise ModelShapeError(f"d1: expected a non-empty vector, got shape {d1.shape}")
        if emission.ndim != 3:
            raise ModelShapeError(f"emission: expected (H, S, O), got shape {emission.shape}")
        H, S, O = emission.shape
        if H < 1 or O < 1:
            raise ModelShapeError(f"emission: empty table of shape {emission.shape}")
        if S != d1.size:
            raise ModelShapeError(f"emission: state axis has {S} entries but d1 has {d1.size}")
        if reward.ndim != 3 or reward.shape[:2] != (H, O) or reward.shape[2] < 1:
            raise ModelShapeError(
                f"reward: expected (H={H}, O={O}, A), got shape {reward.shape}"
            )
        A = reward.shape[2]
        transition = np.asarray(self.transition, dtype=float)
        if H == 1 and transition.size == 0:
            transition = np.zeros((0, S, A, S))
        transition = _frozen(transition, "transition")
        if transition.shape != (H - 1, S, A, S):
            raise ModelShapeError(
                f"transition: expected {H - 1} step slices of shape (S={S}, A={A}, S={S}), "
                f"got shape {transition.shape}"
            )
        for name, arr in (("d1", d1), ("transition", transition),
                          ("emission", emission), ("reward", reward)):
            if not np.all(np.isfinite(arr)):
                raise ModelShapeError(f"{name}: contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def H(self) -> int:
        return self.emission.shape[0]

    @property
    def S(self) -> int:
        return self.emission.shape[1]

    @property
    def O(self) -> int:  # noqa: E743
        return self.emission.shape[2]

    @property
    def A(self) -> int:
        return self.reward.shape[2]

    @property
    def pair_count(self) -> int:
        """Number of distinct (o, a) pairs, the base of the packed encodings."""
        return self.O * self.A

    def n_histories(self, t: int) -> int:
        return self.pair_count ** t

    def n_futures(self, t: int) -> int:
        return self.pair_count ** (self.H - t)

    def with_reward(self, reward) -> "TabularPOMDP":
        return TabularPOMDP(self.d1, self.transition, self.emission, reward)

    def to_dict(self) -> dict:
        return {
            "H": self.H, "S": self.S, "O": self.O, "A": self.A,
            "d1": self.d1.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "reward": self.reward.tolist(),
        }

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON serialization."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class MemorylessPolicy:
    """Observation-conditioned policy, ``probs[t, o, a] = pi(a | o)`` at step t."""

    probs: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        probs = _frozen(self.probs, "policy")
        if probs.ndim != 3 or 0 in probs.shape:
            raise ModelShapeError(f"policy: expected (H, O, A), got shape {probs.shape}")
        object.__setattr__(self, "probs", probs)

    @property
    def H(self) -> int:
        return self.probs.shape[0]

    def check_compatible(self, model: TabularPOMDP):
        if self.probs.shape != (model.H, model.O, model.A):
            raise ModelShapeError(
                f"policy {self.name or '<unnamed>'}: shape {self.probs.shape} does not match "
                f"model (H={model.H}, O={model.O}, A={model.A})"
            )

    def normalization_error(self) -> float:
        return float(np.max(np.abs(self.probs.sum(axis=-1) - 1.0)))

    def is_valid(self) -> bool:
        return bool(np.all(self.probs >= 0)) and self.normalization_error() <= PROB_TOL

    def to_dict(self) -> dict:
        return {"pi": self.probs.tolist()}

    @classmethod
    def uniform(cls, model: TabularPOMDP, name="uniform"):
        return cls(np.full((model.H, model.O, model.A), 1.0 / model.A), name=name)

    @classmethod
    def deterministic(cls, model: TabularPOMDP, actions, name="deterministic"):
        """``actions[t][o]`` gives the action played; a scalar is broadcast."""
        idx = np.broadcast_to(np.asarray(actions, dtype=int), (model.H, model.O))
        probs = np.zeros((model.H, model.O, model.A))
        np.put_along_axis(probs, idx[..., None], 1.0, axis=-1)
        return cls(probs, name=name)


# --------------------------------------------------------------------------
# encodings

@dataclass(frozen=True)
class HistoryIndex:
    step: int
    id: int


@dataclass(frozen=True)
class FutureIndex:
    step: int
    id: int


def _pack(model, seq, length, what):
    seq = list(seq)
    if len(seq) != length:
        raise EncodingError(f"{what}: expected {length} (o, a) pairs, got {len(seq)}")
    base = model.pair_count
    out = 0
    for k, pair in enumerate(seq):
        try:
            o, a = pair
        except (TypeError, ValueError):
            raise EncodingError(f"{what}: element {k} is not an (o, a) pair: {pair!r}") from None
        if not (0 <= o < model.O and 0 <= a < model.A) or int(o) != o or int(a) != a:
            raise EncodingError(
                f"{what}: pair {k} = ({o}, {a}) outside [0,{model.O})x[0,{model.A})"
            )
        out = out * base + int(o) * model.A + int(a)
    return out


def _unpack(model, idx, length, what):
    base = model.pair_count
    if not 0 <= idx < base ** length:
        raise EncodingError(f"{what}: id {idx} outside [0, {base ** length})")
    pairs = []
    for _ in range(length):
        idx, digit = divmod(idx, base)
        pairs.append(divmod(digit, model.A))
    return tuple(reversed(pairs))


def _check_step(model, t):
    if not 0 <= t < model.H:
        raise EncodingError(f"step {t} outside [0, {model.H})")


def encode_history(model: TabularPOMDP, t: int, sequence) -> HistoryIndex:
    _check_step(model, t)
    return HistoryIndex(t, _pack(model, sequence, t, f"history at step {t}"))


def decode_history(model: TabularPOMDP, index: HistoryIndex):
    _check_step(model, index.step)
    return _unpack(model, index.id, index.step, f"history at step {index.step}")


def encode_future(model: TabularPOMDP, t: int, sequence) -> FutureIndex:
    _check_step(model, t)
    return FutureIndex(t, _pack(model, sequence, model.H - t, f"future at step {t}"))


def decode_future(model: TabularPOMDP, index: FutureIndex):
    _check_step(model, index.step)
    return _unpack(model, index.id, model.H - index.step, f"future at step {index.step}")


def pair_codes(model: TabularPOMDP, obs, acts) -> np.ndarray:
    """Digits ``o * A + a`` for arrays of observations and actions."""
    return np.asarray(obs, dtype=np.int64) * model.A + np.asarray(acts, dtype=np.int64)


def history_ids(model: TabularPOMDP, codes: np.ndarray, t: int) -> np.ndarray:
    """Packed history ids at step ``t`` for an (n, H) array of pair codes."""
    ids = np.zeros(codes.shape[0], dtype=np.int64)
    for k in range(t):
        ids = ids * model.pair_count + codes[:, k]
    return ids


def future_ids(model: TabularPOMDP, codes: np.ndarray, t: int) -> np.ndarray:
    """Packed future ids at step ``t`` for an (n, H) array of pair codes."""
    ids = np.zeros(codes.shape[0], dtype=np.int64)
    for k in range(t, model.H):
        ids = ids * model.pair_count + codes[:, k]
    return ids


# --------------------------------------------------------------------------
# action ratios

def action_ratios(pi_e: MemorylessPolicy, pi_b: MemorylessPolicy) -> np.ndarray:
    """Table ``mu[t, o, a] = pi_e(a|o) / pi_b(a|o)``; zero where both vanish.

    Raises
    ------
    ActionCoverageError
        If ``pi_e`` puts mass where ``pi_b`` has none.
    """
    pe, pb = pi_e.probs, pi_b.probs
    if pe.shape != pb.shape:
        raise ModelShapeError(f"policy shapes differ: {pe.shape} vs {pb.shape}")
    bad = (pe > 0) & (pb <= 0)
    if bad.any():
        t, o, a = (int(v) for v in np.argwhere(bad)[0])
        raise ActionCoverageError(
            f"evaluation policy plays a={a} at (step {t}, o={o}) where the behavior "
            f"policy has zero probability"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(pb > 0, pe / np.where(pb > 0, pb, 1.0), 0.0)
    return mu


def action_ratio(pi_e, pi_b, t, o, a) -> float:
    return float(action_ratios(pi_e, pi_b)[t, o, a])


def c_mu(pi_e: MemorylessPolicy, pi_b: MemorylessPolicy) -> float:
    """Largest one-step action ratio over all (t, o, a) with ``pi_b > 0``."""
    mu = action_ratios(pi_e, pi_b)
    return float(mu[pi_b.probs > 0].max())


# --------------------------------------------------------------------------
# JSON files

_MODEL_KEYS = {"H", "S", "O", "A", "d1", "transition", "emission", "reward"}


def model_from_dict(data: dict) -> TabularPOMDP:
    extra = set(data) - _MODEL_KEYS
    missing = _MODEL_KEYS - set(data)
    if extra:
        raise ModelShapeError(f"model file: unknown fields {sorted(extra)}")
    if missing:
        raise ModelShapeError(f"model file: missing fields {sorted(missing)}")
    model = TabularPOMDP(data["d1"], data["transition"], data["emission"], data["reward"])
    declared = (data["H"], data["S"], data["O"], data["A"])
    if declared != (model.H, model.S, model.O, model.A):
        raise ModelShapeError(
            f"model file: declared (H,S,O,A)={declared} but tables imply "
            f"{(model.H, model.S, model.O, model.A)}"
        )
    return model


def policy_from_dict(data: dict, name="") -> MemorylessPolicy:
    extra = set(data) - {"pi"}
    if extra:
        raise ModelShapeError(f"policy file: unknown fields {sorted(extra)}")
    if "pi" not in data:
        raise ModelShapeError("policy file: missing field 'pi'")
    return MemorylessPolicy(data["pi"], name=name)


def load_model(path) -> TabularPOMDP:
    return model_from_dict(json.loads(Path(path).read_text()))


def load_policy(path) -> MemorylessPolicy:
    path = Path(path)
    return policy_from_dict(json.loads(path.read_text()), name=path.stem)


def save_model(model: TabularPOMDP, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def save_policy(policy: MemorylessPolicy, path):
    Path(path).write_text(json.dumps(policy.to_dict(), indent=1) + "\n")
