"""Functions over futures and histories, stored as one dense table per step.

Members built from a parameter vector keep that vector (``thetas``) so that
function classes can be perturbed compactly in parameter space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _freeze_tables(tables):
    out = []
    for tab in tables:
        arr = np.array(tab, dtype=float)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class FutureFunction:
    """``V(f_t)`` for every step; ``V(f_H)`` (past the horizon) is identically 0.

    ``weighting`` names the feature map used when the function is linear in
    ``thetas``: ``"u"`` for ``u(f)``, ``"z"`` for ``u(f)/Z(f)`` and ``"zr"`` for
    ``u(f) R+(f)/Z(f)``.
    """

    tables: tuple
    thetas: tuple | None = None
    weighting: str | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tables", _freeze_tables(self.tables))
        if self.thetas is not None:
            object.__setattr__(self, "thetas", _freeze_tables(self.thetas))

    @property
    def horizon(self) -> int:
        return len(self.tables)

    def table(self, t: int) -> np.ndarray:
        if t == self.horizon:
            return np.zeros(1)
        return self.tables[t]

    def __call__(self, t: int, ids) -> np.ndarray:
        if t == self.horizon:
            return np.zeros(np.shape(ids))
        return self.tables[t][ids]

    def step_sup_norm(self, t: int) -> float:
        return float(np.max(np.abs(self.tables[t])))

    def sup_norm(self) -> float:
        return max(self.step_sup_norm(t) for t in range(self.horizon))

    def shifted(self, offsets, label=None) -> "FutureFunction":
        """Add a per-step constant ``offsets[t]`` to every table."""
        return FutureFunction(
            [tab + off for tab, off in zip(self.tables, offsets)],
            label=label if label is not None else self.label,
        )


@dataclass(frozen=True, eq=False)
class HistoryFunction:
    """``w(tau_t)`` or ``xi(tau_t)`` for every step, dense over all histories."""

    tables: tuple
    thetas: tuple | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tables", _freeze_tables(self.tables))
        if self.thetas is not None:
            object.__setattr__(self, "thetas", _freeze_tables(self.thetas))

    @property
    def horizon(self) -> int:
        return len(self.tables)

    def __call__(self, t: int, ids) -> np.ndarray:
        return self.tables[t][ids]

    def step_sup_norm(self, t: int, mask=None) -> float:
        tab = self.tables[t] if mask is None else self.tables[t][mask]
        return float(np.max(np.abs(tab))) if tab.size else 0.0

    def sup_norm(self) -> float:
        return max(self.step_sup_norm(t) for t in range(self.horizon))


def zero_future_function(model) -> FutureFunction:
    return FutureFunction([np.zeros(model.n_futures(t)) for t in range(model.H)], label="zero")


def zero_history_function(model) -> HistoryFunction:
    return HistoryFunction([np.zeros(model.n_histories(t)) for t in range(model.H)], label="zero")


def random_future_function(model, rng, scale=1.0) -> FutureFunction:
    return FutureFunction(
        [rng.uniform(-scale, scale, model.n_futures(t)) for t in range(model.H)],
        label="random",
    )
