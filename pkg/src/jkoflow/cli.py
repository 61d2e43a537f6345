"""Batch front end: experiment commands over the field-file format.

Configuration is a flat text file of `section.key = value` lines; unknown
keys are hard errors so that typos cannot silently corrupt an experiment.
Exit codes: 0 success/certified, 2 assertion failure, 3 non-certified
solve, 4 usage or I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .energy import EntropyEnergy, PowerLawEnergy, QuadraticEnergy, WeightedEnergy
from .grids import (
    Grid, ScalarField, QuadraticCost, read_field, write_field,
    c_transform, cbar_transform, c_concavify,
)
from .jko import SolverConfig, jko_step, smallest_pressure_select
from .flow import run_flow, stationary_barrier, edi_slack, FlowLedger
from . import verify as V

EXIT_OK = 0
EXIT_ASSERT = 2
EXIT_UNCERTIFIED = 3
EXIT_USAGE = 4


class ConfigError(ValueError):
    pass


_KNOWN_KEYS = {
    "domain.dim": int,
    "domain.extent": str,
    "domain.n": str,
    "energy.kind": str,
    "energy.m": float,
    "energy.weight_field": str,
    "cost.kind": str,
    "cost.tau": float,
    "solver.max_iters": int,
    "solver.gap_tol": float,
    "solver.sigma": float,
    "solver.concavify_every": int,
    "solver.k_schedule": str,
    "solver.delta": float,
    "solver.transport": str,
    "solver.res_tol": float,
    "flow.T": float,
    "flow.snapshot_every": int,
    "flow.M_bound": float,
    "flow.allow_uncertified": str,
    "io.out_dir": str,
    "io.seed": int,
}

_DEFAULTS = {
    "domain.dim": 1,
    "domain.extent": "1.0",
    "domain.n": "128",
    "energy.kind": "quadratic",
    "energy.m": 2.0,
    "energy.weight_field": "",
    "cost.kind": "quadratic",
    "cost.tau": 0.25,
    "solver.max_iters": 20000,
    "solver.gap_tol": 1e-6,
    "solver.sigma": 1.0,
    "solver.concavify_every": 1,
    "solver.k_schedule": "4,16,64,256",
    "solver.delta": 0.0,
    "solver.transport": "nodal",
    "solver.res_tol": -1.0,
    "flow.T": 0.1,
    "flow.snapshot_every": 1,
    "flow.M_bound": -1.0,
    "flow.allow_uncertified": "false",
    "io.out_dir": "out",
    "io.seed": 0,
}


def parse_config(path):
    values = dict(_DEFAULTS)
    if path is None:
        return values
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'section.key = value'")
            key, val = (t.strip() for t in line.split("=", 1))
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
            try:
                values[key] = _KNOWN_KEYS[key](val)
            except ValueError:
                raise ConfigError(f"{path}:{ln}: bad value for {key}: {val!r}")
    return values


def _parse_list(text, typ):
    return tuple(typ(t) for t in str(text).split(",") if t.strip())


def build_grid(cfg):
    dim = cfg["domain.dim"]
    ext = _parse_list(cfg["domain.extent"], float)
    ns = _parse_list(cfg["domain.n"], int)
    if len(ext) == 1 and dim == 2:
        ext = ext * 2
    if len(ns) == 1 and dim == 2:
        ns = ns * 2
    if len(ext) != dim or len(ns) != dim:
        raise ConfigError("domain.extent/domain.n arity does not match domain.dim")
    return Grid(ext, ns)


def build_energy(cfg):
    kind = cfg["energy.kind"]
    if kind == "quadratic":
        base = QuadraticEnergy()
    elif kind == "power_law":
        base = PowerLawEnergy(cfg["energy.m"])
    elif kind == "entropy":
        base = EntropyEnergy()
    else:
        raise ConfigError(f"unknown energy.kind {kind!r}")
    wf = cfg["energy.weight_field"]
    if wf:
        fld = read_field(wf, role="pressure")
        return WeightedEnergy(base, lambda x, f=fld: f.interp(x))
    return base


def build_cost(cfg):
    if cfg["cost.kind"] != "quadratic":
        raise ConfigError("only cost.kind = quadratic is available from the CLI")
    return QuadraticCost(cfg["cost.tau"])


def build_solver(cfg):
    res_tol = cfg["solver.res_tol"]
    return SolverConfig(
        max_iters=cfg["solver.max_iters"],
        gap_tol=cfg["solver.gap_tol"],
        sigma=cfg["solver.sigma"],
        concavify_every=cfg["solver.concavify_every"],
        k_schedule=_parse_list(cfg["solver.k_schedule"], int),
        delta=cfg["solver.delta"],
        transport=cfg["solver.transport"],
        res_tol=None if res_tol < 0 else res_tol,
    )


def _outdir(args, cfg):
    out = args.out or cfg["io.out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_step(args):
    cfg = parse_config(args.config)
    cost = build_cost(cfg)
    solver = build_solver(cfg)
    energy = build_energy(cfg)
    rho = read_field(args.infile, role="density")
    res = jko_step(rho, energy, cost, solver)
    out = _outdir(args, cfg)
    write_field(os.path.join(out, "rho_star.csv"), res.rho_star)
    write_field(os.path.join(out, "p_star.csv"), res.p_star)
    with open(os.path.join(out, "ledger.csv"), "w") as fh:
        fh.write("primal,dual,gap,iterations,certified,residual_l1\n")
        fh.write(
            f"{res.primal_value:.17g},{res.dual_value:.17g},{res.gap:.17g},"
            f"{res.iterations},{int(res.certified)},{res.residual_l1:.17g}\n"
        )
    print(f"step: gap={res.gap:.3e} certified={res.certified} iters={res.iterations}")
    return EXIT_OK if res.certified else EXIT_UNCERTIFIED


def cmd_flow(args):
    cfg = parse_config(args.config)
    cost_tau = cfg["cost.tau"]
    solver = build_solver(cfg)
    energy = build_energy(cfg)
    rho0 = read_field(args.infile, role="density")
    out = _outdir(args, cfg)
    m_bound = cfg["flow.M_bound"]
    result = run_flow(
        rho0, energy, cost_tau, cfg["flow.T"], config=solver,
        snapshot_every=cfg["flow.snapshot_every"],
        m_bound=None if m_bound < 0 else m_bound,
        allow_uncertified=cfg["flow.allow_uncertified"].lower() == "true",
    )
    result.ledger.to_csv(os.path.join(out, "ledger.csv"))
    for step, snap in sorted(result.snapshots.items()):
        write_field(os.path.join(out, f"snap_{step}.csv"), snap)
    print(
        f"flow: steps={result.steps_done} completed={result.completed} "
        f"edi_slack={edi_slack(result.ledger):.3e}"
    )
    return EXIT_OK if result.completed else EXIT_UNCERTIFIED


def cmd_barrier(args):
    cfg = parse_config(args.config)
    energy = build_energy(cfg)
    grid = build_grid(cfg)
    bar = stationary_barrier(energy, grid, args.lam)
    out = _outdir(args, cfg)
    write_field(os.path.join(out, "barrier.csv"), bar.rho)
    print(f"barrier: alpha={bar.alpha:.12g} range=[{bar.a:.6g},{bar.b:.6g}]")
    return EXIT_OK


def cmd_ctransform(args):
    if args.tau is None or args.tau <= 0:
        print("ctransform: need --tau > 0", file=sys.stderr)
        return EXIT_USAGE
    fld = read_field(args.infile, role="pressure")
    cost = QuadraticCost(args.tau)
    if args.mode == "c":
        out = c_transform(fld, cost)
    elif args.mode == "cbar":
        out = cbar_transform(fld, cost)
    elif args.mode == "concavify":
        out = c_concavify(fld, cost)
    else:
        print(f"ctransform: unknown mode {args.mode!r}", file=sys.stderr)
        return EXIT_USAGE
    write_field(args.out, out)
    return EXIT_OK


def _summary(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)


def cmd_verify(args):
    cfg = parse_config(args.config)
    seed = args.seed if args.seed is not None else cfg["io.seed"]
    out = _outdir(args, cfg)
    grid = build_grid(cfg)
    energy = build_energy(cfg)
    solver = build_solver(cfg)
    rng = np.random.default_rng(seed)
    suite = args.suite
    lines = [f"suite={suite} seed={seed}"]
    ok = True

    if suite in ("contraction", "comparison"):
        cost = build_cost(cfg)
        rows = []
        trials = args.trials
        for t in range(trials):
            r0 = V.random_admissible_density(grid, 0.4, rng)
            if suite == "contraction":
                r1 = V.random_admissible_density(grid, 0.5, rng)
                rep = V.check_contraction(r0, r1, energy, cost, solver, deltas=())
                rows.append(
                    f"{t},{rep.pre:.17g},{rep.post:.17g},{rep.slack:.17g},"
                    f"{rep.tol:.17g},{int(rep.passed)}"
                )
                ok &= rep.passed
            else:
                bump = V.random_admissible_density(grid, 0.1, rng)
                r1 = ScalarField(grid, r0.values + bump.values, "density")
                rep = V.check_comparison(r0, r1, energy, cost, solver)
                rows.append(f"{t},{rep.rho_violation:.17g},{rep.tol:.17g},{int(rep.passed)}")
                ok &= rep.passed
        with open(os.path.join(out, f"{suite}.csv"), "w") as fh:
            header = "trial,pre,post,slack,tol,passed" if suite == "contraction" \
                else "trial,violation,tol,passed"
            fh.write(header + "\n")
            fh.write("\n".join(rows) + "\n")
        lines.append(f"trials={trials} all_passed={ok}")
    elif suite == "maxprinciple":
        cost = build_cost(cfg)
        rows = []
        for t in range(args.trials):
            r0 = V.random_admissible_density(grid, 0.5, rng)
            rep = V.check_maximum_principle(r0, energy, cost, solver)
            rows.append(
                f"{t},{rep.branch},{rep.a:.17g},{rep.b:.17g},"
                f"{rep.p_min:.17g},{rep.p_max:.17g},{int(rep.passed)}"
            )
            ok &= rep.passed
        with open(os.path.join(out, "maxprinciple.csv"), "w") as fh:
            fh.write("trial,branch,a,b,p_min,p_max,passed\n")
            fh.write("\n".join(rows) + "\n")
        lines.append(f"trials={args.trials} all_passed={ok}")
    elif suite == "edi":
        rho0 = V.random_admissible_density(grid, 0.5, rng)
        result = run_flow(rho0, energy, cfg["cost.tau"], cfg["flow.T"],
                          config=solver, snapshot_every=max(cfg["flow.snapshot_every"], 1))
        result.ledger.to_csv(os.path.join(out, "edi_ledger.csv"))
        slack = edi_slack(result.ledger)
        ok = result.completed and slack <= 0.0
        lines.append(f"steps={result.steps_done} edi_slack={slack:.6e} holds={slack <= 0.0}")
    elif suite == "barenblatt":
        rep = V.benchmark_pme_barenblatt(m=cfg["energy.m"], gap_tol=cfg["solver.gap_tol"])
        with open(os.path.join(out, "barenblatt.csv"), "w") as fh:
            fh.write("tau,h,l1_error\n")
            for (t, h, e) in rep.entries:
                fh.write(f"{t:.17g},{h:.17g},{e:.17g}\n")
        ok = rep.passed
        lines.append(f"rate_tau={rep.rate_tau:.3f} {rep.detail} passed={rep.passed}")
    elif suite == "heat":
        rep = V.benchmark_heat(gap_tol=cfg["solver.gap_tol"])
        with open(os.path.join(out, "heat.csv"), "w") as fh:
            fh.write("tau,h,l1_error\n")
            for (t, h, e) in rep.entries:
                fh.write(f"{t:.17g},{h:.17g},{e:.17g}\n")
        ok = rep.passed
        lines.append(f"rate_tau={rep.rate_tau:.3f} {rep.detail} passed={rep.passed}")
    else:
        print(f"verify: unknown suite {suite!r}", file=sys.stderr)
        return EXIT_USAGE

    _summary(os.path.join(out, f"{suite}_summary.txt"), lines)
    return EXIT_OK if ok else EXIT_ASSERT


def main(argv=None):
    ap = argparse.ArgumentParser(prog="jkoflow", description=__doc__)
    ap.add_argument("--threads", type=int, default=1,
                    help="worker count (kernels are sequential; kept for interface stability)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("step", help="run one minimizing-movement step")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("flow", help="iterate steps up to time T")
    p.add_argument("--config", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("verify", help="run a certification suite")
    p.add_argument("--config", default=None)
    p.add_argument("--suite", required=True,
                   choices=["contraction", "comparison", "maxprinciple",
                            "edi", "barenblatt", "heat"])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ctransform", help="apply a transform to a field file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", required=True, choices=["c", "cbar", "concavify"])
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_ctransform)

    p = sub.add_parser("barrier", help="write the stationary profile of given mass")
    p.add_argument("--config", required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_barrier)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
