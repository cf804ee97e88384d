"""Command-line entry point: solve consistency systems, simulate, run studies.

Every run writes its artifacts plus a manifest into the output directory.
Numbers are written with 17 significant digits so byte-level comparison of
repeated runs is meaningful.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .consistency_pf import build_pf_strategy, solve_pf_consistency
from .consistency_po import build_po_strategy, solve_po_consistency
from .errors import MFLQGError
from .harness import run_convergence_study, run_nash_gap_study
from .model import InformationMode, Model, PopulationConfig, build_model
from .population import (
    estimate_cost,
    generate_noise,
    simulate_pf_population,
    simulate_po_population,
)

_FMT = "%.17g"


def _fmt(x) -> str:
    return _FMT % float(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_hash(config_path: str) -> str:
    with open(config_path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _manifest(args, model: Model, outputs, started: float) -> dict:
    return {
        "tool_version": __version__,
        "subcommand": args.command,
        "config_path": str(args.config),
        "config_sha256": _config_hash(args.config),
        "seed": model.population.seed,
        "grid": {"T": model.grid.horizon, "M": model.grid.steps},
        "population": {
            "N": model.population.N,
            "reps": model.population.reps,
            "mode": model.population.mode.value,
        },
        "outputs": sorted(str(p.name) for p in outputs),
        "wall_clock_seconds": time.monotonic() - started,
    }


def _load_model(args) -> Model:
    model = build_model(args.config)
    pop = model.population
    seed = args.seed if args.seed is not None else pop.seed
    N = args.N if args.N is not None else pop.N
    reps = args.reps if args.reps is not None else pop.reps
    population = PopulationConfig(N=N, reps=reps, seed=seed, mode=pop.mode)
    return Model(grid=model.grid, table=model.table, population=population)


def _cmd_solve_pf(args, out: Path):
    model = _load_model(args)
    cons = solve_pf_consistency(model)
    header = ["t", "p", "phat", "pi", "phi", "beta", "a_tilde", "b_tilde", "ex0"]
    cols = [
        model.grid.nodes,
        cons.control_riccati.values,
        cons.mean_riccati.values,
        cons.aggregate_riccati.values,
        cons.offset.values,
        cons.adjoint_noise_gain.values,
        cons.mean_feedback.values,
        cons.mean_intercept.values,
        cons.mean_path.values,
    ]
    outputs = []
    if args.format == "json":
        path = out / "pf_consistency.json"
        _write_json(path, {h: list(map(float, c)) for h, c in zip(header, cols)})
    else:
        path = out / "pf_consistency.csv"
        _write_csv(path, header, zip(*cols))
    outputs.append(path)
    return model, outputs


def _cmd_solve_po(args, out: Path):
    model = _load_model(args)
    cons = solve_po_consistency(model)
    pi = cons.value_matrix.values
    ga = cons.value_offset.values
    header = (
        ["t", "pf"]
        + [f"pi{i + 1}{j + 1}" for i in range(3) for j in range(3)]
        + ["gamma1", "gamma2", "gamma3"]
        + ["a_tilde", "b_tilde", "c", "d", "f", "g"]
    )
    cols = (
        [model.grid.nodes, cons.filter_variance.values]
        + [pi[:, i, j] for i in range(3) for j in range(3)]
        + [ga[:, i] for i in range(3)]
        + [
            cons.mean_drift_on_self.values,
            cons.mean_drift_on_filter.values,
            cons.filter_drift_on_mean.values,
            cons.filter_drift_on_self.values,
            cons.mean_drift_intercept.values,
            cons.filter_drift_intercept.values,
        ]
    )
    outputs = []
    if args.format == "json":
        path = out / "po_consistency.json"
        _write_json(path, {h: list(map(float, c)) for h, c in zip(header, cols)})
    else:
        path = out / "po_consistency.csv"
        _write_csv(path, header, zip(*cols))
    outputs.append(path)
    return model, outputs


def _cmd_simulate(args, out: Path):
    model = _load_model(args)
    pop = model.population
    if model.mode is InformationMode.PARTIAL_OBSERVATION:
        cons = solve_po_consistency(model)
        strat = build_po_strategy(cons)
        simulate = lambda noise: simulate_po_population(model, strat, cons, noise)  # noqa: E731
    else:
        cons = solve_pf_consistency(model)
        strat = build_pf_strategy(cons)
        simulate = lambda noise: simulate_pf_population(model, strat, noise)  # noqa: E731

    outputs = []
    trajectories = []
    for rep in range(pop.reps):
        noise = generate_noise(pop, model.grid, rep=rep)
        traj = simulate(noise)
        trajectories.append(traj)
        header = (
            ["t"]
            + [f"x_{i + 1}" for i in range(pop.N)]
            + [f"xhat_{i + 1}" for i in range(pop.N)]
            + ["xN", "x0"]
        )
        rows = np.column_stack(
            [traj.t, traj.states, traj.filters, traj.state_avg, traj.limit_mean]
        )
        path = out / f"paths_rep{rep:04d}.csv"
        _write_csv(path, header, rows)
        outputs.append(path)

    cost_pop = estimate_cost(trajectories, model, mode="population")
    cost_lim = estimate_cost(trajectories, model, mode="limiting")
    summary = {
        "N": pop.N,
        "reps": pop.reps,
        "seed": pop.seed,
        "mode": pop.mode.value,
        "cost_population": {
            "mean": cost_pop.mean,
            "stderr": cost_pop.stderr,
        },
        "cost_limiting": {"mean": cost_lim.mean, "stderr": cost_lim.stderr},
    }
    path = out / "summary.json"
    _write_json(path, summary)
    outputs.append(path)
    return model, outputs


def _cmd_study_convergence(args, out: Path):
    model = _load_model(args)
    result = run_convergence_study(
        model,
        N_values=tuple(args.N_list) if args.N_list else (16, 64, 256, 1024),
        reps=model.population.reps,
        seed=model.population.seed,
        threads=args.threads,
    )
    outputs = []
    path = out / "convergence.json"
    _write_json(path, result.to_dict())
    outputs.append(path)
    rows = []
    for name, vals in result.estimates.items():
        for N, (est, se) in zip(result.N_values, vals):
            rows.append([N, name, est, se])
    path = out / "convergence.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "quantity", "estimate", "stderr"])
        for N, name, est, se in rows:
            writer.writerow([N, name, _fmt(est), _fmt(se)])
    outputs.append(path)
    return model, outputs


def _cmd_study_nash(args, out: Path):
    model = _load_model(args)
    report = run_nash_gap_study(
        model,
        N_values=tuple(args.N_list) if args.N_list else (16, 64, 256, 1024),
        reps=model.population.reps,
        seed=model.population.seed,
        threads=args.threads,
    )
    outputs = []
    path = out / "nash.json"
    _write_json(path, report.to_dict())
    outputs.append(path)
    path = out / "nash.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "deviation", "cost", "cost_se", "gap", "gap_se"])
        for N in report.N_values:
            for g in report.gaps[N]:
                writer.writerow(
                    [N, g.label, _fmt(g.cost), _fmt(g.cost_se), _fmt(g.gap), _fmt(g.gap_se)]
                )
    outputs.append(path)
    return model, outputs


_COMMANDS = {
    "solve-pf": _cmd_solve_pf,
    "solve-po": _cmd_solve_po,
    "simulate": _cmd_simulate,
    "study-convergence": _cmd_study_convergence,
    "study-nash": _cmd_study_nash,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mflqg",
        description="Mean-field LQ game consistency solver and population simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML model configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--N", type=int, default=None)
        p.add_argument(
            "--N-list",
            type=int,
            nargs="+",
            default=None,
            help="agent counts for studies",
        )
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument(
            "--threads",
            type=int,
            default=int(os.environ.get("MFLQG_THREADS", "1")),
        )
    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    try:
        model, outputs = _COMMANDS[args.command](args, out)
    except MFLQGError as exc:
        payload = {
            "error": type(exc).__name__,
            "message": str(exc),
            "stage": args.command,
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    manifest_path = out / "manifest.json"
    _write_json(manifest_path, _manifest(args, model, outputs, started))
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
