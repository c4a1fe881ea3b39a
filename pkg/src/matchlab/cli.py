"""Command-line front end: reproducible runs into artifact directories.

Commands: solve, simulate, design, verify, sweep, oracle.  Options resolve
in three layers: built-in defaults, then a flat key=value config file, then
command-line flags.  Every run writes ``manifest.txt`` echoing the resolved
configuration and tool version; all CSV artifacts use 17-significant-digit
floats and LF line endings so identical runs are byte-identical.

Exit codes: 0 success / certified, 1 certification failure, 2 configuration
error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from .core import (
    DSEState,
    NonConvergenceError,
    ProductionFunction,
    SearchParams,
    format_float,
    load_platform,
    make_grid,
    read_manifest,
    save_platform,
)
from .designer import (
    design,
    enumerate_involutions,
    first_best_platform,
    first_best_wage_coefficient,
    glitch,
    informational_rent,
    involution_rent,
    optimal_exclusion,
    transfer_coefficient,
)
from .simulator import SimConfig, simulate
from .solver import SolverConfig, solve_dse, dse_residuals
from .verifier import audit, prop4_oracle

__all__ = ["RunConfig", "ConfigError", "run", "main"]

COMMANDS = ("solve", "simulate", "design", "verify", "sweep", "oracle")


class ConfigError(Exception):
    """Bad configuration file or flag combination (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    command: str = "solve"
    n: int = 100
    rho: float = 1.0
    alpha: float = 0.5
    r: float = 0.05
    f: str = "xy"
    c: float = 0.0
    table: str = ""
    cutoff: str = "0"          # node value, or "auto" (design only)
    platform: str = ""          # artifact directory to load instead of first-best
    epsilon: str = ""           # glitch weight, empty for none
    seed: int = 12345
    out: str = "out"
    jobs: int = 1
    # solver overrides
    tol_w: float = 1e-10
    tol_u: float = 1e-12
    max_outer: int = 100_000
    max_inner: int = 10_000
    damping: float = 0.5
    w_init: str = "zeros"
    # simulation overrides
    agents_per_node: int = 100
    horizon: float = 500.0
    burn_in: float = 50.0
    replications: int = 4
    event_log: bool = False
    # oracle sizes
    oracle_n: int = 4
    involution_block: int = 5
    # sweep lists (comma separated)
    sweep_rho: str = ""
    sweep_alpha: str = ""
    sweep_r: str = ""


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL_KEYS = {"event_log"}
_INT_KEYS = {"n", "seed", "jobs", "max_outer", "max_inner", "agents_per_node",
             "replications", "oracle_n", "involution_block"}
_FLOAT_KEYS = {"rho", "alpha", "r", "c", "tol_w", "tol_u", "damping",
               "horizon", "burn_in"}


def parse_config_file(path: str) -> dict:
    """Read a flat key=value file; '#' starts a comment, unknown keys fail."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    overrides: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES or key == "command":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _coerce(key, value, f"{path}:{lineno}")
    return overrides


def _coerce(key: str, value: str, where: str):
    try:
        if key in _BOOL_KEYS:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {key}={value!r}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if args.config:
        cfg = replace(cfg, **parse_config_file(args.config))
    flag_overrides = {}
    for key in ("out", "seed", "jobs", "n", "rho", "alpha", "r", "f", "c",
                "cutoff", "epsilon", "platform"):
        value = getattr(args, key, None)
        if value is not None:
            flag_overrides[key] = value
    if flag_overrides:
        cfg = replace(cfg, **flag_overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if cfg.n < 2:
        raise ConfigError(f"n must be at least 2, got {cfg.n}")
    for key in ("rho", "alpha", "r"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.f not in ("xy", "xy+c", "table"):
        raise ConfigError(f"f must be one of xy, xy+c, table; got {cfg.f!r}")
    if cfg.f == "table" and not cfg.table:
        raise ConfigError("f=table requires a table= path")
    if cfg.c < 0:
        raise ConfigError("c must be nonnegative")
    if cfg.cutoff != "auto":
        try:
            value = float(cfg.cutoff)
        except ValueError:
            raise ConfigError(f"cutoff must be a number or 'auto', got {cfg.cutoff!r}") from None
        if not 0.0 <= value < 1.0:
            raise ConfigError(f"cutoff must lie in [0, 1), got {value}")
    elif cfg.command != "design":
        raise ConfigError("cutoff=auto is only meaningful for the design command")
    if cfg.epsilon:
        try:
            eps = float(cfg.epsilon)
        except ValueError:
            raise ConfigError(f"epsilon must be a number, got {cfg.epsilon!r}") from None
        if not 0.0 <= eps <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {eps}")
    if cfg.platform and not os.path.isdir(cfg.platform):
        raise ConfigError(f"platform directory not found: {cfg.platform}")
    if cfg.table and not os.path.exists(cfg.table):
        raise ConfigError(f"table file not found: {cfg.table}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")


# ---------------------------------------------------------------------------
# Shared builders
# ---------------------------------------------------------------------------


def _production(cfg: RunConfig, grid) -> ProductionFunction:
    if cfg.f == "xy":
        return ProductionFunction.multiplicative()
    if cfg.f == "xy+c":
        return ProductionFunction.multiplicative_plus_constant(cfg.c)
    table = np.zeros((grid.n, grid.n))
    import csv as _csv
    with open(cfg.table, newline="") as fh:
        for row in _csv.DictReader(fh):
            table[int(row["i"]), int(row["j"])] = float(row["f"])
    return ProductionFunction.tabulated(grid, table)


def _cutoff_index(cfg: RunConfig, grid) -> int:
    value = float(cfg.cutoff)
    return int(np.searchsorted(grid.nodes, value, side="left"))


def _solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(tol_w=cfg.tol_w, tol_u=cfg.tol_u, max_outer=cfg.max_outer,
                        max_inner=cfg.max_inner, damping=cfg.damping, w_init=cfg.w_init)


def _resolve_platform(cfg: RunConfig):
    """(platform, production, grid) from a directory or the built-in family."""
    if cfg.platform:
        platform, production = load_platform(cfg.platform)
        grid = platform.grid
    else:
        grid = make_grid(cfg.n)
        production = _production(cfg, grid)
        platform = first_best_platform(grid, _cutoff_index(cfg, grid))
    if cfg.epsilon:
        platform = glitch(platform, float(cfg.epsilon))
    return platform, production, grid


def _write_lines(path: str, lines: list) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_manifest(cfg: RunConfig, outdir: str, extra: dict | None = None) -> None:
    """Merge the resolved run config into the directory manifest.

    Platform-level keys written by ``save_platform`` (n, cutoff, f.kind, f.c)
    are authoritative and kept; the run-level requests that could shadow them
    are stored as ``n_request``, ``cutoff_request`` and ``platform_source``.
    Keys are sorted so identical runs produce byte-identical manifests.
    """
    path = os.path.join(outdir, "manifest.txt")
    merged: dict = {}
    if os.path.exists(path):
        merged.update(read_manifest(path))
    merged["tool"] = f"matchlab {__version__}"
    merged["command"] = cfg.command
    renames = {"cutoff": "cutoff_request", "platform": "platform_source",
               "n": "n_request"}
    for field in fields(RunConfig):
        if field.name == "command":
            continue
        value = getattr(cfg, field.name)
        if isinstance(value, float):
            value = format_float(value)
        merged[renames.get(field.name, field.name)] = str(value)
    for key, value in (extra or {}).items():
        merged[key] = str(value)
    _write_lines(path, [f"{key}={merged[key]}" for key in sorted(merged)])


def _write_dse(outdir: str, grid, state: DSEState) -> None:
    lines = ["i,x,w,u"]
    for i in range(grid.n):
        lines.append(f"{i},{format_float(grid.nodes[i])},"
                     f"{format_float(state.w[i])},{format_float(state.u[i])}")
    _write_lines(os.path.join(outdir, "dse.csv"), lines)


def _write_acceptance(outdir: str, state: DSEState) -> None:
    lines = ["i,j"]
    rows, cols = np.nonzero(state.M)
    lines.extend(f"{a},{b}" for a, b in zip(rows.tolist(), cols.tolist()))
    _write_lines(os.path.join(outdir, "acceptance.csv"), lines)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_solve(cfg: RunConfig) -> int:
    platform, production, grid = _resolve_platform(cfg)
    params = SearchParams(rho=cfg.rho, alpha=cfg.alpha, r=cfg.r)
    state = solve_dse(platform, production, params, _solver_config(cfg))
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    _write_dse(outdir, grid, state)
    _write_acceptance(outdir, state)
    summary = {"bellman": state.bellman_residual, "balance": state.balance_residual,
               "iterations": state.iterations, "seed": cfg.seed}
    with open(os.path.join(outdir, "residuals.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_platform(platform, production, outdir)
    _write_manifest(cfg, outdir)
    return 0


def _cmd_simulate(cfg: RunConfig) -> int:
    platform, production, grid = _resolve_platform(cfg)
    params = SearchParams(rho=cfg.rho, alpha=cfg.alpha, r=cfg.r)
    state = solve_dse(platform, production, params, _solver_config(cfg))
    sim_cfg = SimConfig(agents_per_node=cfg.agents_per_node, horizon=cfg.horizon,
                        burn_in=cfg.burn_in, seed=cfg.seed,
                        replications=cfg.replications, collect_events=cfg.event_log)
    outcome = simulate(platform, production, params, state.w, sim_cfg)
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    _write_dse(outdir, grid, state)
    lines = ["i,x,u_hat,se_u,payoff_hat,se_payoff"]
    for i in range(grid.n):
        lines.append(",".join([str(i), format_float(grid.nodes[i]),
                               format_float(outcome.unmatched_fraction_by_node[i]),
                               format_float(outcome.se_unmatched_by_node[i]),
                               format_float(outcome.mean_discounted_payoff_by_node[i]),
                               format_float(outcome.se_payoff_by_node[i])]))
    _write_lines(os.path.join(outdir, "sim.csv"), lines)
    if cfg.event_log:
        lines = ["t,type,agent_a,agent_b"]
        for t, kind, a, b in outcome.event_log:
            lines.append(f"{format_float(t)},{kind},{a},{b}")
        _write_lines(os.path.join(outdir, "events.csv"), lines)
    tallies = {
        "match_formation_count": outcome.match_formation_count,
        "divorce_count": outcome.divorce_count,
        "meeting_count": outcome.meeting_count,
        "failed_meeting_count": outcome.failed_meeting_count,
        "rejected_meeting_count": outcome.rejected_meeting_count,
        "seed": outcome.seed,
        "replications": outcome.replications,
    }
    with open(os.path.join(outdir, "sim_summary.json"), "w") as fh:
        json.dump(tallies, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_platform(platform, production, outdir)
    _write_manifest(cfg, outdir)
    return 0


def _cmd_design(cfg: RunConfig) -> int:
    grid = make_grid(cfg.n)
    production = _production(cfg, grid)
    params = SearchParams(rho=cfg.rho, alpha=cfg.alpha, r=cfg.r)
    exclusion = optimal_exclusion(grid, production)
    cutoff = exclusion.cutoff_index if cfg.cutoff == "auto" else _cutoff_index(cfg, grid)
    result = design(grid, production, params, cutoff)
    rent, _ = informational_rent(result.platform, production, params, result.dse)

    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    lines = ["i,x,w,t,m,included"]
    for i in range(grid.n):
        lines.append(",".join([str(i), format_float(grid.nodes[i]),
                               format_float(result.dse.w[i]),
                               format_float(result.platform.transfers[i]),
                               format_float(rent[i]),
                               "1" if i >= cutoff else "0"]))
    _write_lines(os.path.join(outdir, "design.csv"), lines)

    lines = ["k,x_tilde,profit,phi"]
    for k in range(grid.n):
        lines.append(",".join([str(k), format_float(grid.nodes[k]),
                               format_float(exclusion.profit_curve[k]),
                               format_float(exclusion.phi[k])]))
    _write_lines(os.path.join(outdir, "exclusion_curve.csv"), lines)

    _write_dse(outdir, grid, result.dse)
    save_platform(result.platform, production, outdir)
    _write_manifest(cfg, outdir, extra={
        "theta": format_float(params.theta),
        "wage_coeff": format_float(first_best_wage_coefficient(params)),
        "transfer_coeff": format_float(transfer_coefficient(params)),
        "profit": format_float(result.profit),
        "rent_total": format_float(result.rent_total),
        "x_tilde": format_float(result.x_tilde),
    })
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    target = cfg.platform or cfg.out
    if not os.path.isdir(target):
        raise ConfigError(f"verify needs an artifact directory, got {target!r}")
    platform, production = load_platform(target)
    manifest = read_manifest(os.path.join(target, "manifest.txt"))
    params = SearchParams(rho=float(manifest["rho"]), alpha=float(manifest["alpha"]),
                          r=float(manifest["r"]))
    grid = platform.grid

    w = np.zeros(grid.n)
    u = np.ones(grid.n)
    import csv as _csv
    with open(os.path.join(target, "dse.csv"), newline="") as fh:
        for row in _csv.DictReader(fh):
            w[int(row["i"])] = float(row["w"])
            u[int(row["i"])] = float(row["u"])
    F = production.values(grid)
    M = (F - w[:, None] - w[None, :]) >= 0.0
    state = DSEState(w=w, u=u, M=M, bellman_residual=0.0, balance_residual=0.0)
    bell, bal, violations = dse_residuals(platform, production, params, state)
    state = DSEState(w=w, u=u, M=M, bellman_residual=bell, balance_residual=bal)

    report = audit(platform, production, params, state)
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    payload = {
        "consistency_defect": report.consistency_defect,
        "ir_min_slack": report.ir_min_slack,
        "ic_max_violation": report.ic_max_violation,
        "worst_misreport": list(report.worst_misreport),
        "bellman_residual": report.bellman_residual,
        "balance_residual": report.balance_residual,
        "acceptance_violations": report.acceptance_violations,
        "upper_set_ok": report.upper_set_ok,
        "row_smoothness": report.row_smoothness,
        "certified": report.certified(),
        "seed": cfg.seed,
    }
    with open(os.path.join(outdir, "audit.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(cfg, outdir)
    return 0 if report.certified() else 1


def _sweep_values(raw: str, fallback: float) -> list:
    if not raw:
        return [fallback]
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep list {raw!r}") from None


def _run_sweep_point(base: RunConfig, rho: float, alpha: float, r: float,
                     outdir: str) -> int:
    point = replace(base, command="solve", rho=rho, alpha=alpha, r=r, out=outdir,
                    sweep_rho="", sweep_alpha="", sweep_r="")
    return _cmd_solve(point)


def _cmd_sweep(cfg: RunConfig) -> int:
    rhos = _sweep_values(cfg.sweep_rho, cfg.rho)
    alphas = _sweep_values(cfg.sweep_alpha, cfg.alpha)
    rs = _sweep_values(cfg.sweep_r, cfg.r)
    points = [(rho, alpha, r) for rho in rhos for alpha in alphas for r in rs]
    os.makedirs(cfg.out, exist_ok=True)

    jobs = []
    for idx, (rho, alpha, r) in enumerate(points):
        sub = os.path.join(cfg.out, f"point_{idx:04d}_rho{rho:g}_alpha{alpha:g}_r{r:g}")
        jobs.append((idx, rho, alpha, r, sub))

    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_run_sweep_point, cfg, rho, alpha, r, sub)
                       for _, rho, alpha, r, sub in jobs]
            statuses = [fut.result() for fut in futures]
    else:
        statuses = [_run_sweep_point(cfg, rho, alpha, r, sub)
                    for _, rho, alpha, r, sub in jobs]

    lines = ["point,rho,alpha,r,dir"]
    for (idx, rho, alpha, r, sub) in jobs:
        lines.append(f"{idx},{format_float(rho)},{format_float(alpha)},"
                     f"{format_float(r)},{os.path.basename(sub)}")
    _write_lines(os.path.join(cfg.out, "sweep_manifest.csv"), lines)
    _write_manifest(cfg, cfg.out)
    return max(statuses) if statuses else 0


def _cmd_oracle(cfg: RunConfig) -> int:
    grid = make_grid(max(cfg.involution_block, 2))
    production = _production(cfg, grid)
    params = SearchParams(rho=cfg.rho, alpha=cfg.alpha, r=cfg.r)

    prop4_ok = prop4_oracle(cfg.oracle_n, _production(cfg, make_grid(cfg.oracle_n)), params)

    identity = tuple(range(grid.n))
    rent_identity = involution_rent(grid, production, params, 0, identity)
    scanned = 0
    minimal = True
    for perm in enumerate_involutions(grid.n):
        scanned += 1
        if involution_rent(grid, production, params, 0, perm) < rent_identity - 1e-12:
            minimal = False
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    payload = {
        "prop4_upper_set_ok": prop4_ok,
        "prop4_grid": cfg.oracle_n,
        "involution_identity_minimal": minimal,
        "involution_block": grid.n,
        "involutions_scanned": scanned,
        "identity_rent": rent_identity,
        "seed": cfg.seed,
    }
    with open(os.path.join(outdir, "oracle.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(cfg, outdir)
    return 0 if (prop4_ok and minimal) else 1


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchlab",
        description="Search equilibria, simulation and platform design on type grids")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed (64-bit)")
    parser.add_argument("--jobs", type=int, help="parallel sweep points")
    parser.add_argument("--n", type=int, help="grid size")
    parser.add_argument("--rho", type=float, help="meeting rate")
    parser.add_argument("--alpha", type=float, help="divorce rate")
    parser.add_argument("--r", type=float, help="discount rate")
    parser.add_argument("--f", choices=["xy", "xy+c", "table"], help="production kind")
    parser.add_argument("--c", type=float, help="constant term for f=xy+c")
    parser.add_argument("--cutoff", help="exclusion level in [0,1) or 'auto'")
    parser.add_argument("--epsilon", help="glitch mixing weight in [0,1]")
    parser.add_argument("--platform", help="artifact directory to load")
    return parser


_DISPATCH = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "design": _cmd_design,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
}


def run(cfg: RunConfig) -> int:
    """Execute a resolved configuration; returns the process exit status."""
    try:
        return _DISPATCH[cfg.command](cfg)
    except ConfigError as exc:
        print(f"matchlab: config error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"matchlab: no convergence: {exc} "
              f"(bellman {exc.bellman_residual:g}, balance {exc.balance_residual:g})",
              file=sys.stderr)
        return 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"matchlab: config error: {exc}", file=sys.stderr)
        return 2
    status = run(cfg)
    return status


if __name__ == "__main__":
    sys.exit(main())
