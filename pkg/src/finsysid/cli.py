"""``finsysid <subcommand> --config <path> --out <dir> [--seed <u64>]``.

Exit status: 0 on success, 1 on domain/contract failures, 2 on configuration
errors. Machine outputs go to files in ``--out`` (written atomically); a short
two-column summary goes to stdout.
"""
from __future__ import annotations

import argparse
import inspect
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import bounds, experiments, numerics
from .config import Config, experiment_from, noise_from, system_from, to_scalar
from .errors import ConfigError, FinSysIdError
from .estimators import ols, sparse_lse, ssarx_fit
from .experiments import atomic_write_text, derive_stream
from .systems import Trajectory, regressors, simulate

SUBCOMMANDS = ("simulate", "identify", "bounds", "mc-coverage", "rate", "tail", "riccati")
STOCHASTIC = {"simulate", "identify", "mc-coverage", "rate", "tail"}


def _table(rows) -> str:
    rows = [(str(a), str(b)) for a, b in rows]
    width = max((len(a) for a, _ in rows), default=0)
    return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows)


def _seed(cfg: Config, override: int | None) -> int:
    if override is not None:
        return override
    if cfg.has("seed"):
        return cfg.int("seed")
    raise ConfigError("no seed: pass --seed or set 'seed = <u64>' in the config (wall-clock seeding is disabled)")


def _write(out: str, files: dict[str, str]) -> None:
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        atomic_write_text(os.path.join(out, name), text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands: each returns (files, summary rows)


def cmd_simulate(cfg: Config, seed: int):
    system = system_from(cfg)
    T = cfg.int("simulate.T")
    restart = cfg.int("simulate.restart_k", None)
    traj = simulate(system, noise_from(cfg), T, derive_stream(seed, 0), restart_k=restart)
    summary = [("T", T), ("d_Y", traj.Y.shape[1]), ("d_U", traj.U.shape[1]),
               ("max |Y|", format(float(np.max(np.abs(traj.Y), initial=0.0)), ".6g"))]
    return {"trajectory.csv": traj.to_csv()}, summary


def cmd_identify(cfg: Config, seed: int | None):
    method = cfg.str("identify.method", "ols")
    files = {}
    if cfg.has("identify.trajectory"):
        with open(cfg.str("identify.trajectory")) as fh:
            traj = Trajectory.from_csv(fh.read())
    else:
        if seed is None:
            raise ConfigError("identify simulates data and therefore needs a seed")
        system = system_from(cfg)
        traj = simulate(system, noise_from(cfg), cfg.int("identify.T"), derive_stream(seed, 0))
        files["trajectory.csv"] = traj.to_csv()
    p = cfg.int("identify.p", 1)
    if method == "ssarx":
        est = ssarx_fit(traj, p)
    else:
        X, Y = regressors(traj, p, cfg.int("identify.q", 0))
        if method == "ols":
            est = ols(X, Y)
        elif method == "sparse":
            est = sparse_lse(X, Y, cfg.int("identify.s"))
        else:
            raise ConfigError(f"identify.method must be ols, sparse or ssarx, got {method!r}")
    files["estimate.json"] = est.to_json() + "\n"
    summary = [("method", method), ("T", traj.T), ("rank", est.rank), ("min_eig", format(est.min_eig, ".6g")),
               ("theta_hat", np.array2string(est.theta_hat, precision=6, separator=", "))]
    if est.support is not None:
        summary.append(("support", list(est.support)))
    return files, summary


def cmd_bounds(cfg: Config, seed: int | None):
    reports = []
    for name in cfg.sections():
        if name not in bounds.EVALUATORS:
            continue
        fn = bounds.EVALUATORS[name][0]
        params = inspect.signature(fn).parameters
        raw = cfg.section(name)
        unknown = set(raw) - set(params)
        if unknown:
            raise ConfigError(f"{name}: unknown inputs {sorted(unknown)}; expected {list(params)}")
        kwargs = {k: to_scalar(v) for k, v in raw.items()}
        reports.append(bounds.evaluate(name, **kwargs))
    if not reports:
        raise ConfigError(f"no bound sections found; known bounds are {sorted(bounds.EVALUATORS)}")
    payload = [json.loads(r.to_json()) for r in reports]
    summary = []
    for r in reports:
        summary += [(r.name, format(r.value, ".10g")), (f"{r.name}.valid", str(r.valid).lower())]
    return {"bounds.json": _dumps(payload)}, summary


def cmd_mc_coverage(cfg: Config, seed: int):
    exp = experiment_from(cfg, seed)
    report = experiments.mc_coverage(exp, workers=cfg.int("experiment.workers", 1))
    files = {"coverage.csv": report.to_csv(), "coverage.json": experiments.sidecar_json(exp)}
    summary = [(f"{c.experiment} T={c.T} delta={c.delta:g}",
                f"{c.violations}/{c.trials} wilson={c.wilson_upper_95:.4f} valid={str(c.valid).lower()}")
               for c in report.cells]
    return files, summary


def cmd_rate(cfg: Config, seed: int):
    exp = experiment_from(cfg, seed)
    fit = experiments.rate_fit(exp, workers=cfg.int("experiment.workers", 1))
    extra = {"fit": {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2}}
    files = {"rate.csv": fit.to_csv(exp.name), "rate.json": experiments.sidecar_json(exp, extra)}
    return files, [("slope", f"{fit.slope:.6f}"), ("intercept", f"{fit.intercept:.6f}"), ("r2", f"{fit.r2:.6f}")]


def cmd_tail(cfg: Config, seed: int):
    M = cfg.matrix("tail.M")
    noise = noise_from(cfg)
    samples = cfg.int("tail.samples")
    grid = cfg.floats("tail.s_grid")
    name = cfg.str("tail.name", "tail")
    pts = experiments.tail_compare(M, noise, samples, grid, derive_stream(seed, 0))
    sidecar = {"name": name, "M": M.tolist(), "noise": asdict(noise), "samples": samples, "s_grid": grid,
               "base_seed": seed, "version": experiments.__version__}
    files = {"tail.csv": experiments.tail_csv(name, samples, pts), "tail.json": _dumps(sidecar)}
    summary = [(f"s={p.s:g}", f"empirical={p.empirical_ccdf:.5f} bound={p.hw_bound:.5f}") for p in pts]
    summary.append(("dominated", str(all(p.dominated for p in pts)).lower()))
    return files, summary


def cmd_riccati(cfg: Config, seed: int | None):
    sol = numerics.riccati_fixed_point(
        cfg.matrix("riccati.A"), cfg.matrix("riccati.C"), cfg.matrix("riccati.Sigma_W"),
        cfg.matrix("riccati.Sigma_V"), tol=cfg.float("riccati.tol", 1e-12),
        max_iter=cfg.int("riccati.max_iter", 100_000))
    payload = {"P_star": sol.P_star.tolist(), "F_star": sol.F_star.tolist(), "Sigma_E": sol.Sigma_E.tolist(),
               "residual": sol.residual, "iterations": sol.iterations}
    summary = [("iterations", sol.iterations), ("residual", format(sol.residual, ".3e")),
               ("P_star", np.array2string(sol.P_star, precision=8, separator=", ")),
               ("F_star", np.array2string(sol.F_star, precision=8, separator=", "))]
    return {"riccati.json": _dumps(payload)}, summary


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "bounds": cmd_bounds,
    "mc-coverage": cmd_mc_coverage,
    "rate": cmd_rate,
    "tail": cmd_tail,
    "riccati": cmd_riccati,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finsysid", description="Finite-sample system identification toolkit.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="flat key = value configuration file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="64-bit base seed (overrides the config)")
    return ap


def run(subcommand: str, config_path: str, output_dir: str, seed_override: int | None = None) -> int:
    try:
        cfg = Config.load(config_path)
        if subcommand in STOCHASTIC and not (subcommand == "identify" and cfg.has("identify.trajectory")):
            seed = _seed(cfg, seed_override)
        else:
            seed = seed_override if seed_override is not None else (cfg.int("seed") if cfg.has("seed") else None)
        files, summary = COMMANDS[subcommand](cfg, seed)
        _write(output_dir, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FinSysIdError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(_table([("command", subcommand)] + summary + [("outputs", ", ".join(sorted(files)))]))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed)
