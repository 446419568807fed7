"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 infeasible run.  Logs go to
stderr (level from ``DHN_LOG_LEVEL``); data goes only under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .errors import DHNError, TrackingInfeasible
from .report import FIGURES, emit_figure_data, write_ledger
from .scenario import Scenario, ScenarioConfig, generate, load_config, load_scenario, write_scenario

log = logging.getLogger("dhnflex")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dhnflex", description="District heating demand-side flexibility runs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="scenario config JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--parallelism", type=int, help="worker processes for the candidate sweep")

    g = sub.add_parser("generate", help="write a synthetic scenario")
    common(g, config_required=False)
    g.add_argument("--layout", choices=("reference", "random"), default="reference")
    g.add_argument("--users", type=int, default=18)

    common(sub.add_parser("partition", help="partition the network and write the reduced graph"))

    s = sub.add_parser("sweep", help="low-level cost tables at one instant")
    common(s)
    s.add_argument("--time-s", type=float, default=0.0)

    for name, text in (
        ("nominal", "nominal tracking run"),
        ("optimize", "receding-horizon hierarchical run"),
        ("compare", "nominal and optimized runs side by side"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--steps", type=int, help="limit the number of control steps")
    return p


def _setup_logging() -> None:
    level = os.environ.get("DHN_LOG_LEVEL", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"DHN_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(LOG_LEVELS[level])
    log.propagate = False


def _overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.parallelism is not None:
        if args.parallelism < 1:
            raise UsageError("--parallelism must be >= 1")
        changes["parallelism"] = args.parallelism
    return replace(cfg, **changes) if changes else cfg


def _scenario(args) -> Scenario:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {exc.filename}") from exc
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from exc
    cfg = _overrides(cfg, args)
    try:
        return load_scenario(cfg)
    except FileNotFoundError as exc:
        raise UsageError(f"scenario file not found: {exc.filename}") from exc
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad scenario input: {exc}") from exc


def _steps(sc: Scenario, args) -> int:
    n = sc.config.n_steps if args.steps is None else args.steps
    if n < 1:
        raise UsageError("--steps must be >= 1")
    return min(n, sc.config.n_steps)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------
def cmd_generate(args, out: Path) -> int:
    base = ScenarioConfig()
    if args.config:
        base = load_config(args.config)
    seed = base.seed if args.seed is None else args.seed
    base = _overrides(replace(base, seed=seed), args)
    try:
        sc = generate(seed, args.layout, args.users, base)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    path = write_scenario(sc, out)
    log.info("scenario written to %s", path)
    return EXIT_OK


def cmd_partition(args, out: Path) -> int:
    sc = _scenario(args)
    h = harness.build_hierarchy(sc)
    _write_json(out / "partition.json", h.partition.to_dict())
    _write_json(out / "reduced_graph.json", h.reduced.to_dict())
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    sc = _scenario(args)
    t = float(args.time_s)
    h = harness.build_hierarchy(sc)
    plant = harness.Plant(sc)
    plant.initialize(np.array([b.demand.at(t) for b in sc.buildings]), sc.boundary(t), t)
    cands = sc.config.candidates()
    inputs = [harness.local_inputs(sc, h, j, plant.state.temperatures, sc.buildings, t) for j in range(len(h.user_subsystems))]
    tables = harness.parallel_map(harness._sweep, [(inp, cands) for inp in inputs], sc.config.parallelism)
    m = harness.RunMetrics("sweep", [b.id for b in sc.buildings], np.zeros(0), np.zeros(0), np.zeros(0), sc.config.interval_s)
    for j, tab in enumerate(tables):
        for row in tab.rows(h.user_subsystems[j].id):
            row["step"] = int(round(t / sc.config.interval_s))
            m.cost_rows.append(row)
    write_ledger(out, m, sc.config, extra={"time_s": t})
    emit_figure_data(m, "costs", out)
    return EXIT_OK


def cmd_nominal(args, out: Path) -> int:
    sc = _scenario(args)
    try:
        m = harness.run_nominal(sc, _steps(sc, args))
    except TrackingInfeasible as exc:
        _write_json(out / "summary.json", {"completed": False, "error": str(exc)})
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    write_ledger(out, m, sc.config)
    for fig in ("mI", "mdot", "flex"):
        emit_figure_data(m, fig, out)
    return EXIT_OK


def _optimized(sc, n, out: Path):
    partial = harness.RunMetrics("optimized", [], np.zeros(0), np.zeros(0), np.zeros(0), sc.config.interval_s)
    try:
        return harness.run_optimized(sc, n, partial=partial), None
    except DHNError as exc:
        partial.notes.append(f"infeasible: {exc}")
        write_ledger(out, partial, sc.config, extra={"error": str(exc)})
        log.error("%s", exc)
        return partial, exc


def cmd_optimize(args, out: Path) -> int:
    sc = _scenario(args)
    m, err = _optimized(sc, _steps(sc, args), out)
    if err is not None:
        return EXIT_INFEASIBLE
    write_ledger(out, m, sc.config)
    for fig in FIGURES:
        emit_figure_data(m, fig, out)
    return EXIT_OK


def cmd_compare(args, out: Path) -> int:
    sc = _scenario(args)
    n = _steps(sc, args)
    try:
        nom = harness.run_nominal(sc, n)
    except TrackingInfeasible as exc:
        _write_json(out / "summary.json", {"completed": False, "error": str(exc)})
        return EXIT_INFEASIBLE
    write_ledger(out / "nominal", nom, sc.config)
    opt, err = _optimized(sc, n, out / "optimized")
    if err is not None:
        return EXIT_INFEASIBLE
    rep = harness.compare(nom, opt)
    write_ledger(out / "optimized", opt, sc.config, comparison=rep)
    for fig in FIGURES:
        emit_figure_data([nom, opt], fig, out)
    _write_json(out / "summary.json", {"format": 1, "comparison": rep.to_dict()})
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "partition": cmd_partition,
    "sweep": cmd_sweep,
    "nominal": cmd_nominal,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        _setup_logging()
        args = parser.parse_args(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except DHNError as exc:
        log.error("%s", exc)
        print(f"dhnflex: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
