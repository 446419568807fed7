import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhnflex.harness import RunMetrics, StepRecord, compare, run_nominal, run_optimized
from dhnflex.report import emit_figure_data, read_long, read_metrics, read_table, write_ledger

from conftest import CP_DT, one_user_scenario

finite = st.floats(-1e12, 1e12, allow_nan=False)


def run_from(values, label="r"):
    steps = []
    for k, (a, b, c, f) in enumerate(values):
        steps.append(StepRecord(k, 600.0 * k, a, b, c, np.array([a]), np.array([b]), np.array([c]), np.array([f]), np.array([c])))
    return RunMetrics(label, ["h"], np.ones(1), -np.ones(1), np.ones(1), 600.0, steps)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite), min_size=1, max_size=6))
def test_metrics_round_trip_is_lossless(tmp_path_factory, values):
    out = tmp_path_factory.mktemp("ledger")
    m = run_from(values)
    write_ledger(out, m)
    back = read_metrics(out / "metrics.csv")
    np.testing.assert_array_equal(back["supply_kg_s"], m.series("supply"))
    np.testing.assert_array_equal(back["bypass_kg_s"], m.series("bypass"))
    np.testing.assert_array_equal(back["plant_head_pa"], m.series("head"))
    flex = read_metrics(out / "user_flex_j.csv")
    np.testing.assert_array_equal(flex["h"], m.series("flexibility")[:, 0])
    mi = read_long(emit_figure_data(m, "mI", out))
    assert [x for _, _, v, x in mi if v == "supply_kg_s"] == [s.supply for s in m.steps]


@pytest.fixture(scope="module")
def small_runs():
    sc = one_user_scenario(0.6 * CP_DT, steps=2)
    return sc, run_nominal(sc), run_optimized(sc)


def test_ledger_files(tmp_path, small_runs):
    sc, nom, opt = small_runs
    out = write_ledger(tmp_path, opt, sc.config, comparison=compare(nom, opt))
    for name in ("config.json", "metrics.csv", "selections.csv", "costs.csv", "user_flow_kg_s.csv", "user_heat_w.csv", "user_flex_j.csv", "summary.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["completed"] and summary["n_steps"] == 2
    assert summary["bypass_integral_kg"] == opt.bypass_integral
    assert summary["comparison"]["reduction"] == compare(nom, opt).reduction
    sel = read_table(out / "selections.csv")
    assert sel["step"] == ["0", "1"]
    costs = read_table(out / "costs.csv")
    assert len(costs["step"]) == 2 * len(sc.config.candidates())


def test_figure_files(tmp_path, small_runs):
    _, nom, opt = small_runs
    rows = read_long(emit_figure_data([nom, opt], "mdot", tmp_path))
    assert {e for _, e, _, _ in rows} == {"nominal/h", "optimized/h"}
    flex = read_long(emit_figure_data([opt], "flex", tmp_path))
    assert {v for _, _, v, _ in flex} == {"flex_j", "lower_j", "upper_j"}
    costs = read_long(emit_figure_data([opt], "costs", tmp_path, step=1))
    assert all(t == 600.0 for t, _, _, _ in costs)
    assert len(costs) == 2 * 24
    with pytest.raises(ValueError):
        emit_figure_data([opt], "nope", tmp_path)
