"""Seeded trajectory sampling under the behavior policy, and JSONL persistence.

Randomness comes from a counter-based Philox stream keyed by the root seed.
Trajectory ``i`` consumes the fixed block of uniforms at positions
``[i * D, (i + 1) * D)`` where ``D = 4 * ceil(3H / 4)``: three draws per step
(latent state, observation, action) padded to a whole Philox counter.  Any
trajectory can therefore be regenerated on its own by advancing the counter,
and sampling all of them in one pass gives the same bits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MemorylessPolicy, TabularPOMDP
from .errors import DatasetError

FORMAT_TAG = "pomdp-ope-trajectories"


def block_size(H: int) -> int:
    return 4 * math.ceil(3 * H / 4)


def _uniform_block(root_seed: int, first: int, count: int, H: int) -> np.ndarray:
    D = block_size(H)
    bitgen = np.random.Philox(seed=root_seed)
    if first:
        bitgen = bitgen.advance(first * D // 4)
    return np.random.Generator(bitgen).random(count * D).reshape(count, D)


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw one index per row of ``probs`` using the uniforms ``u``."""
    cdf = np.cumsum(probs, axis=1)
    idx = np.sum(u[:, None] >= cdf, axis=1)
    # guards against u landing above a cdf that sums to 1 - eps
    last_positive = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last_positive)


@dataclass(frozen=True, eq=False)
class ObservedData:
    """What an estimator may see: observations, actions, rewards, logged probabilities."""

    obs: np.ndarray      # (n, H) int
    acts: np.ndarray
    rews: np.ndarray     # (n, H) float
    bprobs: np.ndarray
    O: int
    A: int

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @property
    def H(self) -> int:
        return self.obs.shape[1]

    @property
    def codes(self) -> np.ndarray:
        return self.obs * self.A + self.acts


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Behavior-policy episodes.  ``states`` is kept for diagnostics only."""

    fingerprint: str
    seed: int
    obs: np.ndarray
    acts: np.ndarray
    rews: np.ndarray
    bprobs: np.ndarray
    O: int
    A: int
    states: np.ndarray | None = None

    def __post_init__(self):
        for name in ("obs", "acts", "rews", "bprobs", "states"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @property
    def H(self) -> int:
        return self.obs.shape[1]

    def observed(self) -> ObservedData:
        return ObservedData(self.obs, self.acts, self.rews, self.bprobs, self.O, self.A)

    def same_trajectories(self, other: "TrajectoryDataset") -> bool:
        return (self.fingerprint == other.fingerprint and self.seed == other.seed
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("obs", "acts", "rews", "bprobs")))


def _simulate(model, pi_b, U):
    n, H = U.shape[0], model.H
    obs = np.zeros((n, H), dtype=np.int64)
    acts = np.zeros((n, H), dtype=np.int64)
    states = np.zeros((n, H), dtype=np.int64)
    s = _inverse_cdf(np.broadcast_to(model.d1, (n, model.S)), U[:, 0])
    for t in range(H):
        if t > 0:
            s = _inverse_cdf(model.transition[t - 1][s, acts[:, t - 1]], U[:, 3 * t])
        o = _inverse_cdf(model.emission[t][s], U[:, 3 * t + 1])
        a = _inverse_cdf(pi_b.probs[t][o], U[:, 3 * t + 2])
        states[:, t], obs[:, t], acts[:, t] = s, o, a
    steps = np.arange(H)[None, :]
    rews = model.reward[steps, obs, acts]
    bprobs = pi_b.probs[steps, obs, acts]
    return obs, acts, rews, bprobs, states


def sample_dataset(model: TabularPOMDP, pi_b: MemorylessPolicy, n: int, root_seed: int) -> TrajectoryDataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    pi_b.check_compatible(model)
    U = _uniform_block(int(root_seed), 0, n, model.H)
    obs, acts, rews, bprobs, states = _simulate(model, pi_b, U)
    return TrajectoryDataset(model.fingerprint(), int(root_seed), obs, acts, rews, bprobs,
                             model.O, model.A, states)


def sample_trajectory(model: TabularPOMDP, pi_b: MemorylessPolicy, root_seed: int, index: int):
    """Regenerate trajectory ``index`` alone; returns ``(obs, acts, rews, bprobs, states)``."""
    U = _uniform_block(int(root_seed), index, 1, model.H)
    return tuple(x[0] for x in _simulate(model, pi_b, U))


# --------------------------------------------------------------------------
# JSONL persistence

def write_dataset(dataset: TrajectoryDataset, path):
    header = {"format": FORMAT_TAG, "fingerprint": dataset.fingerprint, "seed": dataset.seed,
              "n": dataset.n, "H": dataset.H, "O": dataset.O, "A": dataset.A}
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(dataset.n):
        lines.append(json.dumps({
            "obs": dataset.obs[i].tolist(), "acts": dataset.acts[i].tolist(),
            "rews": dataset.rews[i].tolist(), "bprobs": dataset.bprobs[i].tolist(),
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path, model: TabularPOMDP | None = None) -> TrajectoryDataset:
    text = Path(path).read_text()
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise DatasetError(f"{path}: empty file")
    try:
        header = json.loads(rows[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: line 1: malformed header ({exc.msg})") from None
    if header.get("format") != FORMAT_TAG:
        raise DatasetError(f"{path}: line 1 is not a trajectory file header")
    if model is not None and header["fingerprint"] != model.fingerprint():
        raise DatasetError(
            f"{path}: dataset was generated from model {header['fingerprint'][:12]}..., "
            f"not the supplied model {model.fingerprint()[:12]}..."
        )
    n, H = int(header["n"]), int(header["H"])
    cols = {k: [] for k in ("obs", "acts", "rews", "bprobs")}
    for lineno, line in enumerate(rows[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {lineno}: cannot parse trajectory ({exc.msg})") from None
        if set(rec) != set(cols) or any(len(rec[k]) != H for k in cols):
            raise DatasetError(f"{path}: line {lineno}: expected keys {sorted(cols)} of length {H}")
        for k in cols:
            cols[k].append(rec[k])
    if len(cols["obs"]) != n:
        raise DatasetError(f"{path}: header declares {n} trajectories, found {len(cols['obs'])}")
    return TrajectoryDataset(
        header["fingerprint"], int(header["seed"]),
        np.array(cols["obs"], dtype=np.int64).reshape(n, H),
        np.array(cols["acts"], dtype=np.int64).reshape(n, H),
        np.array(cols["rews"], dtype=float).reshape(n, H),
        np.array(cols["bprobs"], dtype=float).reshape(n, H),
        int(header["O"]), int(header["A"]),
    )
