"""Command line entry point: ``poriferous {map,partition,run,analyze}``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import partition as P
from .config import load_config, parse_faults
from .conformal import distortion_report, load_mapped, save_mapped
from .errors import PoriferousError
from .sim import (
    _round,
    build_world,
    fmt,
    iss_gamma,
    max_agents,
    min_obstacle_gap,
    run_coverage,
    verify_iss,
)

log = logging.getLogger("poriferous")


def _world(args, cfg):
    mm = load_mapped(args.mapped) if getattr(args, "mapped", None) else None
    return build_world(cfg, mm)


def _dump(path, data):
    with open(path, "w") as fh:
        yaml.safe_dump(_round(data), fh, sort_keys=False)


def cmd_map(args):
    from .plotting import plot_mapping

    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg)
    save_mapped(world.mm, out / "mapped.npz")
    rep = distortion_report(world.mm)
    rep["stages"] = world.mm.report.get("stages", {}) if isinstance(world.mm.report, dict) else {}
    _dump(out / "mapping_report.yaml", rep)
    plot_mapping(world.mm, out / "mapping.png")
    print(f"mapped {world.mesh.n_vertices} vertices; mean |mu| {rep['mean_mu']:.4g}; wrote {out}")
    return 0


def cmd_partition(args):
    from .plotting import plot_partition

    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = _world(args, cfg)
    if args.phases:
        phases = P.unwrap_ordered([float(x) for x in args.phases.split(",")])
    else:
        phases = 2 * math.pi * np.arange(cfg.N) / cfg.N
    bars = P.build_bars(phases, world.circles, cfg.beta)
    m_nom = P.sector_workloads(phases, world.table)
    m_act, D = P.actual_workloads(phases, bars, world.circles, world.table, world.profiles)
    with open(out / "partition.csv", "w") as fh:
        fh.write("agent,psi,m_nominal,m_actual,bar_shift\n")
        for i in range(len(phases)):
            fh.write(f"{i + 1},{fmt(P.wrap(phases)[i])},{fmt(m_nom[i])},{fmt(m_act[i])},{fmt(D[i])}\n")
    _dump(out / "bars.yaml", {f"bar_{b.index}": [[z.real, z.imag] for z in b.points] for b in bars})
    plot_partition(world.circles, bars, path=out / "partition.png", density=world.image_density)
    bad = P.bar_violations(bars, world.circles)
    print(f"{len(phases)} sectors; total {m_act.sum():.6g} (face sum {world.total_mass:.6g}); violations: {len(bad)}")
    return 0 if not bad else 1


def cmd_run(args):
    from .plotting import plot_partition, plot_workloads

    over = dict(seed=args.seed, K_star=args.k_star)
    if args.fault:
        over["faults"] = parse_faults(args.fault)
    cfg = load_config(args.config, **over)
    out = Path(args.out)
    world = _world(args, cfg)
    res = run_coverage(cfg, world, out_dir=out)
    with open(out / "summary.yaml") as fh:
        summary = yaml.safe_load(fh)
    summary["analysis_inputs"] = _round(dict(
        omega_floor=world.table.floor,
        rho_sup=world.image_density.sup,
        radii=[c.radius for c in world.circles],
        d_min=min_obstacle_gap(world.circles),
        omega_at_bars=world.table.omega_at(res.best.state.phases),
    ))
    with open(out / "summary.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    bars = P.build_bars(res.best.state.phases, world.circles, cfg.beta)
    plot_partition(world.circles, bars, res.positions, out / "final_partition.png", density=world.image_density)
    plot_workloads(res.best.trace, out / "workloads.png")
    if res.fault_run is not None:
        plot_workloads(res.fault_run.trace, out / "fault_workloads.png")
    m = res.metrics
    print(f"k*={res.best_k} J*={res.J_star:.6g} imbalance={m['imbalance']:.5f} steps={m['iterations']} -> {out}")
    return 0


def _read_trace(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    ids = [c[2:] for c in rows[0] if c.startswith("m_")]
    errs = []
    for r in rows:
        m = np.array([float(r[f"m_{i}"]) for i in ids if r[f"m_{i}"] != ""])
        errs.append(float(np.linalg.norm(m - m.mean())))
    return rows, ids, np.array(errs)


def cmd_analyze(args):
    from .plotting import plot_error_decay

    run = Path(args.run)
    cfg = load_config(run / "config_used.yaml")
    with open(run / "summary.yaml") as fh:
        summary = yaml.safe_load(fh)
    inp = summary.get("analysis_inputs")
    if inp is None:
        raise PoriferousError("summary has no analysis inputs; rerun with the `run` subcommand")
    rows, ids, errs = _read_trace(run / "metrics.csv")
    N = len(ids)
    C = P.workload_error_bound(1.0, N, inp["radii"], inp["rho_sup"])
    rep = verify_iss(errs, cfg.dt, cfg.beta, inp["omega_floor"], cfg.k_psi, N, C)
    gamma = iss_gamma(cfg.k_psi, inp["omega_floor"], N)
    n_max = max_agents(inp["radii"], cfg.beta, gamma, C, args.eps_max, inp["d_min"])
    geom_term = 0.5 * inp["d_min"] / (max(inp["radii"]) * cfg.beta)
    err_term = gamma * args.eps_max / (C * cfg.beta)
    omega = [max(w, 1e-12) for w in inp["omega_at_bars"]]
    _, lam2 = P.weighted_laplacian(omega)
    out = dict(
        iss=dict(gamma=rep.gamma, C_delta=rep.C_delta, steady_state=rep.steady_state, slope=rep.slope,
                 slope_limit=rep.slope_limit, envelope_violations=len(rep.violations), margin=rep.margin),
        N_max=n_max,
        N_max_terms=dict(buffer_disjointness=geom_term, error_budget=err_term, eps_max=args.eps_max),
        spectral=dict(lambda2=lam2, bound=min(omega) * P.cycle_lambda2(N)),
    )
    _dump(run / "analysis.yaml", out)
    plot_error_decay(errs, cfg.dt, rep.gamma, rep.C_delta * cfg.beta / rep.gamma, run / "error_decay.png")
    print(yaml.safe_dump(_round(out), sort_keys=False), end="")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="poriferous", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("map", help="build and cache the ball-world map")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("partition", help="static partition for given phases")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phases", help="comma separated angles in radians")
    p.add_argument("--mapped", help="cached map from `map`")
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("run", help="anchor sweep, balancing and coverage")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--k-star", type=int, dest="k_star")
    p.add_argument("--fault", help="'step:id,id;step:id'")
    p.add_argument("--mapped", help="cached map from `map`")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("analyze", help="ISS, capacity and spectral checks of a saved run")
    p.add_argument("--run", required=True, help="output directory of `run`")
    p.add_argument("--eps-max", type=float, default=0.05, dest="eps_max")
    p.set_defaults(fn=cmd_analyze)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (PoriferousError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
