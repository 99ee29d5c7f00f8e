import csv
import json
import math

import numpy as np
import pytest

from pomdp_ope.study import (
    REPORT_COLUMNS,
    StudyConfig,
    dataset_seed,
    dumps_canonical,
    emit_report,
    log_log_slope,
    run_convergence_study,
    study_to_dict,
)

SMALL = dict(fixture="bandit", n_grid=(50, 200), seed_count=5, estimators=("minimax", "mis", "is"))


@pytest.fixture(scope="module")
def small_result():
    return run_convergence_study(StudyConfig(**SMALL))


def test_rows_cover_grid(small_result):
    rows = small_result.rows
    assert len(rows) == 6
    assert [(r["estimator"], r["n"]) for r in rows] == [
        ("minimax", 50), ("minimax", 200), ("mis", 50), ("mis", 200), ("is", 50), ("is", 200)]
    for r in rows:
        assert list(r) == list(REPORT_COLUMNS)
        vals = small_result.estimates[(r["estimator"], r["n"])]
        assert len(vals) == 5
        assert r["mean"] == pytest.approx(np.mean(vals))
        assert r["rmse"] == pytest.approx(math.sqrt(np.mean((np.array(vals) - 0.8) ** 2)))
        assert r["bound_thm2"] > 0 and r["bound_thm3"] > 0


def test_slope_fit():
    assert log_log_slope([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)
    assert log_log_slope([1, 4], [2.0, 1.0]) == pytest.approx(-0.5)
    assert math.isnan(log_log_slope([10], [1.0]))


def test_dataset_seeds_are_distinct():
    seeds = {dataset_seed(0, j, n) for j in range(50) for n in (100, 1000)}
    assert len(seeds) == 100
    assert dataset_seed(3, 1, 10) == dataset_seed(3, 1, 10)


def test_config_round_trip():
    cfg = StudyConfig(**SMALL)
    again = StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ValueError, match="unknown"):
        StudyConfig.from_dict({"fixture": "bandit", "colour": "red"})
    with pytest.raises(ValueError):
        StudyConfig(seed_count=0)


def test_empty_report_is_header_only(tmp_path):
    emit_report(None, tmp_path / "e.csv", "csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(REPORT_COLUMNS) + "\n"
    emit_report(None, tmp_path / "e.json", "json")
    assert json.loads((tmp_path / "e.json").read_text())["rows"] == []


def test_csv_layout(tmp_path, small_result):
    emit_report(small_result, tmp_path / "s.csv", "csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 7
    # seventeen significant digits survive the text round trip
    assert float(rows[1][5]) == small_result.rows[0]["rmse"]


def test_json_round_trip_is_byte_identical(tmp_path, small_result):
    path = tmp_path / "s.json"
    emit_report(small_result, path, "json")
    text = path.read_text()
    assert dumps_canonical(json.loads(text)) + "\n" == text
    assert json.loads(text)["rows"][0]["rmse"] == small_result.rows[0]["rmse"]


def test_canonical_json_details():
    assert dumps_canonical(1.0) == "1.0"
    assert dumps_canonical(float("nan")) == "null"
    assert dumps_canonical(float("inf")) == "null"
    assert dumps_canonical(0.1) == "0.10000000000000001"
    assert dumps_canonical({"a": [1, 2.5], "b": {}}) == '{\n  "a": [1, 2.5],\n  "b": {}\n}'
    with pytest.raises(TypeError):
        dumps_canonical(object())


def test_rerun_gives_identical_bytes(tmp_path, small_result):
    again = run_convergence_study(StudyConfig(**SMALL))
    for fmt in ("csv", "json"):
        emit_report(small_result, tmp_path / f"a.{fmt}", fmt)
        emit_report(again, tmp_path / f"b.{fmt}", fmt)
        assert (tmp_path / f"a.{fmt}").read_bytes() == (tmp_path / f"b.{fmt}").read_bytes()


def test_workers_do_not_change_results(small_result):
    par = run_convergence_study(StudyConfig(**SMALL, workers=3))
    assert study_to_dict(par)["rows"] == study_to_dict(small_result)["rows"]
    assert par.estimates == small_result.estimates


def test_random_fixture_with_params():
    cfg = StudyConfig(fixture="random-3", fixture_params={"S": 2, "O": 2, "A": 2, "H": 3},
                      n_grid=(100,), seed_count=2, estimators=("plugin",))
    res = run_convergence_study(cfg)
    assert res.fixture == "random-3"
    assert res.rows[0]["n"] == 100


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(None, tmp_path / "x", "xml")
