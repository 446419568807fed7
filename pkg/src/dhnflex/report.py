"""Run ledgers and tidy figure data.

Every number is written with ``repr`` so files read back bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .harness import ComparisonReport, RunMetrics
from .scenario import ScenarioConfig, save_config

LEDGER_FORMAT = 1
FIGURES = ("mI", "mdot", "flex", "costs")

METRIC_COLUMNS = ("step", "time_s", "supply_kg_s", "bypass_kg_s", "plant_head_pa", "max_abs_dev_k")
SELECTION_COLUMNS = (
    "step",
    "time_s",
    "index",
    "dp_pa",
    "total_cost_kg",
    "total_mdot_kg_s",
    "pressure_residual_pa",
    "epsilon_pa",
    "widenings",
)
COST_COLUMNS = ("step", "subsystem", "dp_tot_pa", "feasible", "cost_kg", "mdot0_kg_s")


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _vec(xs) -> str:
    return " ".join(_num(x) for x in xs)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


# --------------------------------------------------------------------------
# ledger
# --------------------------------------------------------------------------
def metric_rows(m: RunMetrics) -> list[list[str]]:
    dev = m.deviation if m.steps else np.zeros((0, len(m.building_ids)))
    rows = []
    for s, d in zip(m.steps, dev):
        rows.append(
            [
                _num(s.step),
                _num(s.time),
                _num(s.supply),
                _num(s.bypass),
                _num(s.head),
                _num(np.abs(d).max() if d.size else 0.0),
            ]
        )
    return rows


def write_ledger(
    out_dir: str | Path,
    metrics: RunMetrics,
    config: ScenarioConfig | None = None,
    comparison: ComparisonReport | None = None,
    extra: dict | None = None,
) -> Path:
    """Write the run ledger directory and return its path.

    Incomplete runs are written the same way; ``summary.json`` then carries
    ``completed: false`` and the notes explaining why the run stopped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config is not None:
        save_config(config, out / "config.json")
    _write_rows(out / "metrics.csv", METRIC_COLUMNS, metric_rows(metrics))

    sel = [[_num(r[c]) if c not in ("index", "dp_pa") else _vec(r[c]) for c in SELECTION_COLUMNS] for r in metrics.selections]
    _write_rows(out / "selections.csv", SELECTION_COLUMNS, sel)

    costs = [[_num(r[c]) for c in COST_COLUMNS] for r in metrics.cost_rows]
    _write_rows(out / "costs.csv", COST_COLUMNS, costs)

    for name, attr in (("user_flow_kg_s", "flows"), ("user_heat_w", "heat"), ("user_flex_j", "flexibility")):
        header = ["time_s", *metrics.building_ids]
        rows = [[_num(s.time), *(_num(v) for v in getattr(s, attr))] for s in metrics.steps]
        _write_rows(out / f"{name}.csv", header, rows)

    summary = {
        "format": LEDGER_FORMAT,
        "label": metrics.label,
        "completed": metrics.completed,
        "n_steps": metrics.n_steps,
        "bypass_integral_kg": metrics.bypass_integral,
        "supplied_mass_kg": metrics.supplied_mass,
        "max_deviation_k": metrics.max_deviation,
        "wall_time_s": metrics.wall_time,
        "notes": list(metrics.notes),
    }
    if comparison is not None:
        summary["comparison"] = comparison.to_dict()
    if extra:
        summary.update(extra)
    with open(out / "summary.json", "w") as fh:
        json.dump(_json_safe(summary), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def read_table(path: str | Path) -> dict[str, list[str]]:
    """Columns of a ledger CSV as raw strings."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols = {h: [] for h in header}
        for row in r:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    return {k: np.array([float(x) for x in v]) for k, v in read_table(path).items()}


# --------------------------------------------------------------------------
# figure data, long format (time_s, entity, variable, value)
# --------------------------------------------------------------------------
LONG_HEADER = ("time_s", "entity", "variable", "value")


def _long_mI(runs: list[RunMetrics]):
    for m in runs:
        for s in m.steps:
            yield s.time, m.label, "supply_kg_s", s.supply
            yield s.time, m.label, "bypass_kg_s", s.bypass


def _long_mdot(runs: list[RunMetrics]):
    for m in runs:
        for s in m.steps:
            for bid, q in zip(m.building_ids, s.flows):
                yield s.time, f"{m.label}/{bid}", "flow_kg_s", q


def _long_flex(runs: list[RunMetrics]):
    for m in runs:
        for s in m.steps:
            for i, bid in enumerate(m.building_ids):
                ent = f"{m.label}/{bid}"
                yield s.time, ent, "flex_j", s.flexibility[i]
                yield s.time, ent, "lower_j", m.lower[i]
                yield s.time, ent, "upper_j", m.upper[i]


def _long_costs(runs: list[RunMetrics], step: int | None):
    for m in runs:
        steps = {r["step"] for r in m.cost_rows}
        if not steps:
            continue
        k = min(steps) if step is None else step
        t = k * m.interval
        for r in m.cost_rows:
            if r["step"] != k:
                continue
            ent = f"{m.label}/S{r['subsystem']}@{r['dp_tot_pa']!r}"
            yield t, ent, "cost_kg", r["cost_kg"]
            yield t, ent, "mdot0_kg_s", r["mdot0_kg_s"]


def emit_figure_data(runs, which: str, out_dir: str | Path, step: int | None = None) -> Path:
    """Write ``fig_<which>.csv`` for one or more runs.

    For ``costs`` the entity is ``label/S<subsystem>@<head drop in Pa>`` and
    ``step`` picks the control step (first logged step by default).
    """
    if isinstance(runs, RunMetrics):
        runs = [runs]
    if which not in FIGURES:
        raise ValueError(f"unknown figure {which!r}; choose from {FIGURES}")
    gen = {
        "mI": lambda: _long_mI(runs),
        "mdot": lambda: _long_mdot(runs),
        "flex": lambda: _long_flex(runs),
        "costs": lambda: _long_costs(runs, step),
    }[which]()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"fig_{which}.csv"
    _write_rows(path, LONG_HEADER, ([_num(t), e, v, _num(x)] for t, e, v, x in gen))
    return path


def read_long(path: str | Path) -> list[tuple[float, str, str, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != LONG_HEADER:
            raise ValueError(f"{path}: not a long-format figure file")
        return [(float(t), e, v, float(x)) for t, e, v, x in r]


__all__ = [
    "FIGURES",
    "emit_figure_data",
    "metric_rows",
    "read_long",
    "read_metrics",
    "read_table",
    "write_ledger",
]
