"""Seeded Monte-Carlo studies and byte-stable report files.

A study samples ``seed_count`` datasets at each sample size, runs every
requested estimator on the same datasets, and records per-seed estimates,
RMSE against the exact policy value, and the log-log slope of RMSE in n.
Dataset seeds are derived from ``(base_seed, seed index, n)`` so any single
cell of a study can be regenerated on its own.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .coverage import bound_evaluation, coverage_report
from .estimators import realizability_surrogates, build_classes, run_estimator
from .fixtures import fixture_from_name, generate_fixture
from .simulate import sample_dataset

REPORT_COLUMNS = ("fixture", "estimator", "n", "seed_count", "mean", "rmse", "slope",
                  "bound_thm2", "bound_thm3")


@dataclass(frozen=True)
class StudyConfig:
    fixture: str = "bandit"
    fixture_params: dict = field(default_factory=dict)
    n_grid: tuple = (100, 1000, 10000)
    seed_count: int = 100
    estimators: tuple = ("minimax", "mis")
    base_seed: int = 0
    class_size: int = 4
    class_eps: float = 2.0
    class_seed: int = 0
    mom_blocks: int | None = None
    delta: float = 0.05
    bound_c: float = 1.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.seed_count < 1 or not self.n_grid:
            raise ValueError("a study needs at least one seed and one sample size")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown study config keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        out["estimators"] = list(self.estimators)
        return out


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    fixture: str
    true_value: float
    rows: tuple                  # dicts keyed by REPORT_COLUMNS
    estimates: dict              # (estimator, n) -> per-seed list

    def row(self, estimator: str, n: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["n"] == n:
                return r
        raise KeyError((estimator, n))

    def rmse(self, estimator: str) -> list:
        return [self.row(estimator, n)["rmse"] for n in self.config.n_grid]


def dataset_seed(base_seed: int, index: int, n: int) -> int:
    state = np.random.SeedSequence([int(base_seed), int(index), int(n)]).generate_state(1, np.uint64)
    return int(state[0])


def log_log_slope(ns, values) -> float:
    if len(ns) < 2:
        return math.nan
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    x = x - x.mean()
    return float((x * (y - y.mean())).sum() / (x * x).sum())


def resolve_fixture(config: StudyConfig):
    if config.fixture_params:
        kind, _, seed = config.fixture.partition("-")
        return generate_fixture(kind, config.fixture_params, int(seed) if seed else 0)
    return fixture_from_name(config.fixture)


def run_convergence_study(config: StudyConfig) -> StudyResult:
    fx = resolve_fixture(config)
    alg = fx.algebra()
    classes = build_classes(alg, m=config.class_size, eps=config.class_eps, seed=config.class_seed)
    truth = alg.J_e

    def one_seed(j):
        out = {}
        for n in config.n_grid:
            seed = dataset_seed(config.base_seed, j, n)
            data = sample_dataset(fx.model, fx.pi_b, n, seed).observed()
            for est in config.estimators:
                rep = run_estimator(est, data, fx.pi_e, classes, config.mom_blocks, seed)
                out[(est, n)] = rep.estimate
        return out

    seeds = range(config.seed_count)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            per_seed = list(pool.map(one_seed, seeds))
    else:
        per_seed = [one_seed(j) for j in seeds]

    report = coverage_report(alg)
    eps_v, eps_w = realizability_surrogates(alg, classes.V, classes.W)
    estimates, rows = {}, []
    for est in config.estimators:
        stats = []
        for n in config.n_grid:
            vals = np.array([ps[(est, n)] for ps in per_seed])
            estimates[(est, n)] = vals.tolist()
            err = vals - truth
            stats.append((n, float(vals.sum() / vals.size), math.sqrt(float((err * err).sum() / err.size))))
        slope = log_log_slope([s[0] for s in stats], [s[2] for s in stats])
        for n, mean, rmse in stats:
            b2 = bound_evaluation("belief_l2", report, n, config.delta, (len(classes.V), len(classes.Xi)),
                                  c=config.bound_c)
            b3 = bound_evaluation("belief_linf", report, n, config.delta, (len(classes.V), len(classes.W)),
                                  eps_v=eps_v, eps_w=eps_w, c=config.bound_c)
            rows.append({"fixture": fx.name, "estimator": est, "n": n,
                         "seed_count": config.seed_count, "mean": mean, "rmse": rmse,
                         "slope": slope, "bound_thm2": b2.value, "bound_thm3": b3.value})
    return StudyResult(config, fx.name, truth, tuple(rows), estimates)


# --------------------------------------------------------------------------
# serialization

def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else format(x, ".17g")
    return str(x)


def dumps_canonical(obj, indent=0) -> str:
    """JSON text with 17-significant-digit floats and NaN written as null.

    Key order is preserved, so parsing and re-emitting gives the same bytes.
    """
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        text = format(x, ".17g")
        # keep floats recognizable as floats after a round trip
        if all(c not in text for c in ".eEn"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_canonical(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps_canonical(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps_canonical(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps_canonical(obj.tolist(), indent)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_canonical_json(obj, path):
    Path(path).write_text(dumps_canonical(obj) + "\n")


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def study_to_dict(result: StudyResult) -> dict:
    # the worker count changes scheduling only, so it stays out of the report
    config = {k: v for k, v in result.config.to_dict().items() if k != "workers"}
    return {
        "config": config,
        "fixture": result.fixture,
        "true_value": result.true_value,
        "bound_note": "bounds are up to an absolute constant c (bound_c)",
        "columns": list(REPORT_COLUMNS),
        "rows": [dict(r) for r in result.rows],
        "estimates": [{"estimator": e, "n": n, "values": v} for (e, n), v in result.estimates.items()],
    }


def emit_report(result, path, fmt: str = "csv"):
    """Write a study result (or ``None`` for an empty report) as CSV or JSON."""
    rows = [] if result is None else list(result.rows)
    if fmt == "csv":
        Path(path).write_text(rows_to_csv(rows, REPORT_COLUMNS))
    elif fmt == "json":
        data = {"columns": list(REPORT_COLUMNS), "rows": []} if result is None else study_to_dict(result)
        write_canonical_json(data, path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
