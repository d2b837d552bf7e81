"""Command-line front end.

Verbs:
    bound     -- closed-form throughput ceilings over a capacity sweep
    solve     -- policy synthesis over a (capacity, K, p(0+)) grid
    simulate  -- Monte Carlo run of a stored, constant, or freshly solved policy
    sweep     -- summary-only utility grid, optionally across worker processes

Every run is deterministic given its configuration (seeds included); errors
print one ``error[CODE]: message`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .arrivals import HarvestParams, PacketDistribution
from .bounds import upper_bound_finite, upper_bound_infinite
from .config import ExperimentConfig, load_config
from .errors import ConfigError, EhmacError, UsageError
from .measures import (constant_policy, export_measure, export_policy,
                       load_policy, measure_closed_form)
from .rates import RateFunction
from .simulate import SimConfig, crossing_balance, simulate
from .solver import SolverConfig, best_k_search, solve_symmetric_mac

SUMMARY_COLUMNS = ("L", "K", "p0plus", "utility", "R_upper", "ratio")


def _params(cfg: ExperimentConfig, capacity: float) -> HarvestParams:
    return HarvestParams(cfg.lam, cfg.zeta, capacity)


def _solver_config(cfg: ExperimentConfig, k: float, p0: float,
                   init: str) -> SolverConfig:
    return SolverConfig(k_const=k, p0plus=p0, grid_n=cfg.grid_n,
                        theta_tol=cfg.theta_tol, max_outer=cfg.max_outer,
                        ode_substeps=cfg.ode_substeps, init_policy=init,
                        divergence_tol=cfg.divergence_tol)


def _bound_for(cfg: ExperimentConfig, capacity: float) -> float:
    rf = RateFunction(cfg.n0)
    hps = [_params(cfg, capacity)] * cfg.node_count
    if math.isinf(capacity):
        return upper_bound_infinite(hps, rf)
    return upper_bound_finite(hps, rf)


def _write_summary(path: Path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(rows)


def cmd_bound(cfg: ExperimentConfig, outdir: Path | None):
    """Ceiling table over the configured capacities."""
    rows = []
    for cap in cfg.capacities:
        rows.append((cap, "", "", "", f"{_bound_for(cfg, cap):.6f}", ""))
    if outdir is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(rows)
    else:
        outdir.mkdir(parents=True, exist_ok=True)
        _write_summary(outdir / "bounds.csv", rows)
    return rows


def _solve_cell(args):
    cfg, cap, k, p0, init = args
    rf = RateFunction(cfg.n0)
    hp = _params(cfg, cap)
    sc = _solver_config(cfg, k, p0, init)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = solve_symmetric_mac(cfg.node_count, hp, rf, sc,
                                     keep_history=cfg.keep_history)
    return report


def _summary_row(cfg: ExperimentConfig, cap, k, p0, utility):
    bound = _bound_for(cfg, cap)
    return (cap, round(k, 6), p0, f"{utility:.6f}", f"{bound:.6f}",
            f"{utility / bound:.4f}")


def _cell_tag(cap, k, p0, init):
    tag = f"L{cap:g}_K{k:g}_p0{p0:g}"
    if init != "linear":
        tag += f"_{init}"
    return tag


def cmd_solve(cfg: ExperimentConfig, outdir: Path):
    """Solve the configured grid, writing policies, measures and traces."""
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cap in cfg.capacities:
        for k in cfg.k_values:
            for p0 in cfg.p0plus_values:
                for init in cfg.init_policies:
                    report = _solve_cell((cfg, cap, k, p0, init))
                    tag = _cell_tag(cap, k, p0, init)
                    cell_dir = outdir / tag
                    report.write_dir(cell_dir)
                    if cfg.keep_history:
                        for i, pol in enumerate(report.policy_history):
                            export_policy(pol, cell_dir / f"policy_iter{i}.csv")
                    rows.append(_summary_row(cfg, cap, k, p0, report.utility))
        if cfg.best_k:
            rf = RateFunction(cfg.n0)
            hp = _params(cfg, cap)
            sc = _solver_config(cfg, 0.0, cfg.p0plus_values[0], cfg.init_policies[0])
            k_best, u_best, table = best_k_search(
                cfg.node_count, hp, rf, sc, cfg.k_min, cfg.k_max,
                step=cfg.k_step, coarse_step=cfg.k_coarse)
            rows.append(_summary_row(cfg, cap, k_best, cfg.p0plus_values[0], u_best))
            with open(outdir / f"ksearch_L{cap:g}.csv", "w", newline="",
                      encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(("K", "utility"))
                writer.writerows((f"{k:.4f}", f"{u:.6f}") for k, u in table)
    _write_summary(outdir / "summary.csv", rows)
    return rows


def cmd_sweep(cfg: ExperimentConfig, outdir: Path | None):
    """Summary-only solve grid; cells may run in parallel worker processes."""
    cells = [(cfg, cap, k, p0, init)
             for cap in cfg.capacities for k in cfg.k_values
             for p0 in cfg.p0plus_values for init in cfg.init_policies]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_solve_cell, cells))
    else:
        reports = [_solve_cell(c) for c in cells]
    rows = [_summary_row(cfg, cap, k, p0, rep.utility)
            for (_, cap, k, p0, _), rep in zip(cells, reports)]
    if outdir is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(rows)
    else:
        outdir.mkdir(parents=True, exist_ok=True)
        _write_summary(outdir / "summary.csv", rows)
    return rows


def cmd_simulate(cfg: ExperimentConfig, outdir: Path):
    """Simulate a policy and write the statistics and crossing report."""
    outdir.mkdir(parents=True, exist_ok=True)
    if not cfg.capacities:
        raise UsageError("simulate needs one capacity")
    rf = RateFunction(cfg.n0)
    cap = cfg.capacities[0]
    hp = _params(cfg, cap)
    if cfg.policy_file:
        policy = load_policy(cfg.policy_file)
    elif cfg.policy_level > 0.0:
        span = cap if math.isfinite(cap) else 12.0 / cfg.zeta
        policy = constant_policy(cfg.policy_level, span, max(cfg.grid_n, 64))
    else:
        report = _solve_cell((cfg, cap, cfg.k_values[0], cfg.p0plus_values[0],
                              cfg.init_policies[0]))
        policy = report.policies[0]
        export_policy(policy, outdir / "policy_solved.csv")
    dist = PacketDistribution.exponential(cfg.zeta)
    sim_cfg = SimConfig(horizon=cfg.horizon, replications=cfg.replications,
                        seed=cfg.seed, burn_in=cfg.burn_in,
                        level_probes=tuple(cfg.level_probes))
    stats = simulate([(hp, policy, dist)] * cfg.node_count, rf, sim_cfg)
    (outdir / "stats.txt").write_text(stats.to_text(), encoding="utf-8")
    np.savetxt(outdir / "cdf_node0.csv",
               np.column_stack([stats.cdf_levels[0], stats.cdf[0]]),
               header="columns = level, occupancy_cdf")
    measure = measure_closed_form(policy, hp)
    export_measure(measure, outdir / "measure_analytic.csv")
    if stats.crossing_levels.size:
        records = crossing_balance(stats, measure, policy, hp, dist)
        with open(outdir / "crossing_balance.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()))
            writer.writeheader()
            writer.writerows(records)
    return stats


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehmac",
        description="Battery-charge measures, throughput bounds and power "
                    "policies for energy-harvesting multiple-access "
                    "transmitters.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("bound", "closed-form throughput ceilings"),
                      ("solve", "synthesize policies over a parameter grid"),
                      ("simulate", "Monte Carlo run of a policy"),
                      ("sweep", "summary-only utility grid")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", type=Path, default=None,
                       help="flat key = value configuration file")
        p.add_argument("--preset", type=str, default=None,
                       help="named preset (table1, table2, fig1, fig2, fig3)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (bound/sweep print to stdout "
                            "when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes for sweep cells")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(path=args.config, preset=args.preset,
                          overrides={"seed": args.seed, "workers": args.workers})
        if args.command == "bound":
            cmd_bound(cfg, args.out)
        elif args.command == "solve":
            if args.out is None:
                raise UsageError("solve writes files; pass --out DIR")
            cmd_solve(cfg, args.out)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.out)
        elif args.command == "simulate":
            if args.out is None:
                raise UsageError("simulate writes files; pass --out DIR")
            cmd_simulate(cfg, args.out)
    except (ConfigError, UsageError) as err:
        print(f"error[{err.code}]: {err}", file=sys.stderr)
        return 2
    except EhmacError as err:
        print(f"error[{err.code}]: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error[E_IO]: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
