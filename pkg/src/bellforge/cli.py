"""Command line: ``bellforge <command> --config <file> [--seed S] [--out DIR] [--trials K]``.

Exit codes: 0 success, 2 classical behavior or infeasible Bell value,
3 solver failure. ``BELLFORGE_THREADS`` sets the worker count for trial
batches.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .conic import SolverError
from .finitekey import ProtocolParams
from .keyrate import asymptotic_model, rate_curve
from .npa import BetaAboveQuantumMaximum
from .polytope import InfeasibleClassical, optimal_hyperplane, render_tabular
from .protocol import abort_statistics, run_protocol
from .quantum import born_probabilities

EXIT_OK = 0
EXIT_CLASSICAL = 2
EXIT_SOLVER = 3

CSV_SCHEMAS = {
    "keyrate": "bellforge-keyrate/1: N,log10_N,rate,xi,eta,beta_eff",
    "theta": "bellforge-theta/1: theta,rate",
    "random": "bellforge-random/1: cell,p,trials,violated,positive,fraction,wilson_low,wilson_high,solver_failures",
}

log = logging.getLogger("bellforge")


def _write_csv(path: Path, schema: str, config: dict, header: list[str], rows):
    """CSV with the schema tag and the exact configuration as comment lines."""
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {CSV_SCHEMAS[schema]}\n")
        fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _grid(config: dict, key: str, default: dict) -> np.ndarray:
    g = {**default, **config.get(key, {})}
    return ex.log_grid(float(g["start"]), float(g["stop"]), float(g["step"]))


def _settings(config: dict):
    return ex.default_settings(
        float(config.get("eps_c", 1e-2)), float(config.get("eps_s", 1e-5)), **config.get("overrides", {})
    )


# ------------------------------------------------------------------ commands


def cmd_bell_opt(config: dict, args) -> int:
    setup = ex.resolve_setup(config.get("setup", "chsh"), float(config.get("p", 0.0)), float(config.get("theta", 0.0)))
    P = born_probabilities(setup)
    try:
        f = optimal_hyperplane(P)
    except InfeasibleClassical as exc:
        print(f"classical: {exc}")
        return EXIT_CLASSICAL
    out = Path(args.out)
    stem = config.get("name", "functional")
    f.dump(out / f"{stem}.json")
    text = render_tabular(f)
    (out / f"{stem}.txt").write_text(text + "\n")
    print(text)
    print(f"violation {f.violation:.6g} (bound {f.c:.6g}, value {f.value(P):.6g})")
    return EXIT_OK


def cmd_keyrate_sweep(config: dict, args) -> int:
    settings = _settings(config)
    out = Path(args.out)
    levels = int(config.get("levels", 14))
    preset = config.get("setup", "chsh")
    if "theta_grid" in config:
        thetas = config["theta_grid"]
        N = float(config.get("N", 1e10))
        p = float(config.get("p", 0.02))
        rows = ex.theta_sweep(thetas, N, p, settings, levels)
        _write_csv(out / "theta_sweep.csv", "theta", config, ["theta", "rate"], rows)
        for th, r in rows:
            print(f"theta={th:+.5f} rate={r:.6f}")
        return EXIT_OK
    N_grid = _grid(config, "log10_N", {"start": 4, "stop": 15, "step": 0.25})
    p_grid = config.get("p_grid", [0.0])
    for p in p_grid:
        setup = ex.resolve_setup(preset, float(p), float(config.get("theta", 0.0)))
        try:
            model = asymptotic_model(setup)
        except InfeasibleClassical as exc:
            print(f"p={p}: classical: {exc}")
            return EXIT_CLASSICAL
        points = rate_curve(model, N_grid, settings=settings, levels=levels)
        rows = [(pt.N, math.log10(pt.N), pt.rate, pt.xi, pt.eta, pt.beta_eff) for pt in points]
        name = f"keyrate_p{p:g}.csv"
        _write_csv(out / name, "keyrate", {**config, "p": p}, ["N", "log10_N", "rate", "xi", "eta", "beta_eff"], rows)
        onset = next((pt.N for pt in points if pt.rate > 0), float("inf"))
        print(f"p={p}: plateau {points[-1].rate:.4f} at N={points[-1].N:.3g}; first positive N={onset:.3g} -> {name}")
    return EXIT_OK


def cmd_random_settings(config: dict, args) -> int:
    trials = args.trials if args.trials is not None else int(config.get("trials", 1000))
    N = float(config.get("N", 1e12))
    settings = _settings(config)
    cells = []
    for m in config.get("m", [2, 3]):
        for p in config.get("p_grid", [0.0]):
            cells.append(("qubit", int(m), float(p)))
    for d in config.get("d", []):
        for p in config.get("p_grid_qudit", config.get("p_grid", [0.0])):
            cells.append(("qudit", int(d), float(p)))
    rows = []
    for i, (kind, size, p) in enumerate(cells):
        seed = None if args.seed is None else [args.seed, i]
        cell = ex.random_settings_fraction(kind, size, p, trials, seed, N, settings)
        row = cell.to_dict()
        rows.append(row)
        lo, hi = cell.wilson()
        print(f"{cell.label} p={p:<5g} fraction {cell.fraction:.3f}  95% [{lo:.3f}, {hi:.3f}]  ({cell.n_positive}/{trials})")
    header = list(rows[0]) if rows else []
    _write_csv(Path(args.out) / "random_settings.csv", "random", {**config, "trials": trials}, header, [list(r.values()) for r in rows])
    return EXIT_OK


def _params_from_config(config: dict, d: int) -> ProtocolParams:
    raw = dict(config.get("params", {}))
    if "N" not in raw:
        raise ValueError("simulate needs params.N, params.xi and params.eta")
    eps_c = float(raw.pop("eps_c", 1e-2))
    eps_s = float(raw.pop("eps_s", 1e-5))
    N, xi, eta = float(raw.pop("N")), float(raw.pop("xi")), float(raw.pop("eta"))
    raw.setdefault("d", d)
    d = int(raw.pop("d"))
    return ProtocolParams.from_budget(N, xi, eta, d, eps_c, eps_s, **raw)


def cmd_simulate(config: dict, args) -> int:
    setup = ex.resolve_setup(config.get("setup", "chsh"), float(config.get("p", 0.0)), float(config.get("theta", 0.0)))
    params = _params_from_config(config, setup.d)
    mode = config.get("mode", "auto")
    trials = args.trials if args.trials is not None else int(config.get("trials", 1))
    out = Path(args.out)
    if trials == 1:
        outcome = run_protocol(setup, params, args.seed, mode)
        payload = {"config": config, "seed": args.seed, "outcome": outcome.to_dict()}
        (out / "run.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
        rate = outcome.report.rate if outcome.report else 0.0
        print(f"{outcome.status}{'' if outcome.reason is None else ' (' + outcome.reason + ')'}; rate {rate:.6f}")
        return EXIT_CLASSICAL if outcome.reason == "classical-P1" else EXIT_OK
    stats = abort_statistics(setup, params, trials, args.seed, mode)
    payload = {"config": config, "seed": args.seed, "abort_statistics": stats.to_dict()}
    (out / "abort_statistics.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(
        f"aborted {stats.n_aborted}/{stats.n_trials} = {stats.fraction:.4f}, "
        f"95% [{stats.ci_low:.4f}, {stats.ci_high:.4f}], bound {params.completeness:g}"
    )
    return EXIT_OK


COMMANDS = {
    "bell-opt": cmd_bell_opt,
    "keyrate-sweep": cmd_keyrate_sweep,
    "random-settings": cmd_random_settings,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellforge", description="Bell inequalities and finite-size key rates.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--trials", type=int, default=None, help="override the trial count")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    config = json.loads(Path(args.config).read_text())
    if args.seed is None and "seed" in config:
        args.seed = int(config["seed"])
    if args.trials is not None and args.trials < 1:
        print("--trials must be at least 1", file=sys.stderr)
        return 1
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](config, args)
    except (InfeasibleClassical, BetaAboveQuantumMaximum) as exc:
        print(f"classical/infeasible: {exc}", file=sys.stderr)
        return EXIT_CLASSICAL
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
