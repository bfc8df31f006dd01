"""Seeded Monte Carlo campaigns: bound coverage, rate fits and tail comparisons.

Every trial draws from its own stream ``derive_stream(base_seed, i)`` and
returns plain records; reports are commutative folds over those records, so
results do not depend on the order in which trials finish.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import __version__, bounds, numerics
from .errors import ConfigError, ContractError, RateError
from .estimators import FiniteClass, error_norms, finite_class_lse, ols, sparse_lse, ssarx_fit
from .systems import (ArxSystem, NoiseSpec, StateSpaceInnovation, Trajectory, covariance_sequence,
                      markov_params, regressors, sample_noise, simulate)

MASK64 = (1 << 64) - 1
WILSON_Z = 1.959964  # two-sided 95% normal quantile
PSD_SLACK = 1e-10
ESTIMATORS = ("pe", "selfnorm", "arx_op", "ss_op", "sparse", "nonlinear")
COVERAGE_COLUMNS = ["experiment", "T", "delta", "trials", "violations", "empirical_rate", "wilson_upper",
                    "bound_value", "valid"]


# ---------------------------------------------------------------------------
# seeding


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 generator (Steele, Lea & Flood 2014)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, trial_index: int) -> int:
    return splitmix64((splitmix64(base_seed & MASK64) + (trial_index & MASK64)) & MASK64)


def derive_stream(base_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, trial_index)))


def wilson_upper(violations: int, trials: int, z: float = WILSON_Z) -> float:
    if trials < 1 or not 0 <= violations <= trials:
        raise ContractError("wilson_upper needs 0 <= violations <= trials and trials >= 1")
    n = float(trials)
    p = violations / n
    z2 = z * z
    centre = p + z2 / (2 * n)
    spread = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    # the interval always contains p; guard against round-off at p = 1
    return min(1.0, max(p, (centre + spread) / (1 + z2 / n)))


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    system: ArxSystem | StateSpaceInnovation | None
    noise: NoiseSpec
    horizons: tuple[int, ...]
    trials: int
    delta_grid: tuple[float, ...]
    base_seed: int
    tau_or_p: int = 1
    estimator: str = "arx_op"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(T) for T in self.horizons))
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.horizons or any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError("horizons must be nonempty and strictly increasing")
        if any(not 0 < d < 1 for d in self.delta_grid):
            raise ConfigError("every delta must lie in (0, 1)")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "system": system_to_dict(self.system),
            "noise": asdict(self.noise),
            "horizons": list(self.horizons),
            "trials": self.trials,
            "delta_grid": list(self.delta_grid),
            "base_seed": self.base_seed,
            "tau_or_p": self.tau_or_p,
            "estimator": self.estimator,
            "options": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.options.items())},
        }


def system_to_dict(sys) -> dict | None:
    if sys is None:
        return None
    if isinstance(sys, ArxSystem):
        return {"kind": "arx", "A_coeffs": [a.tolist() for a in sys.A_coeffs],
                "B_coeffs": [b.tolist() for b in sys.B_coeffs], "Sigma_W_sqrt": sys.Sigma_W_sqrt.tolist(),
                "input_std_sigma_u": sys.input_std_sigma_u, "d_u": sys.d_u}
    return {"kind": "state_space", "A": sys.A.tolist(), "B": sys.B.tolist(), "C": sys.C.tolist(),
            "F": sys.F.tolist(), "Sigma_E_sqrt": sys.Sigma_E_sqrt.tolist(),
            "input_std_sigma_u": sys.input_std_sigma_u}


@dataclass(frozen=True)
class CoverageCell:
    experiment: str
    T: int
    delta: float
    trials: int
    violations: int
    empirical_rate: float
    wilson_upper_95: float
    bound_value: float
    valid: bool


@dataclass(frozen=True)
class CoverageReport:
    cells: tuple[CoverageCell, ...]

    def cell(self, experiment: str, T: int, delta: float) -> CoverageCell:
        for c in self.cells:
            if c.experiment == experiment and c.T == T and c.delta == delta:
                return c
        raise KeyError((experiment, T, delta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COVERAGE_COLUMNS)
        for c in self.cells:
            w.writerow([c.experiment, c.T, _fmt(c.delta), c.trials, c.violations, _fmt(c.empirical_rate),
                        _fmt(c.wilson_upper_95), _fmt(c.bound_value), str(c.valid).lower()])
        return buf.getvalue()


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    medians_per_T: tuple[float, ...]
    horizons: tuple[int, ...] = ()

    def to_csv(self, name: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "T", "median_error", "fit_slope", "fit_intercept", "fit_r2"])
        for T, m in zip(self.horizons, self.medians_per_T):
            w.writerow([name, T, _fmt(m), _fmt(self.slope), _fmt(self.intercept), _fmt(self.r2)])
        return buf.getvalue()


@dataclass(frozen=True)
class TailPoint:
    s: float
    empirical_ccdf: float
    hw_bound: float

    @property
    def dominated(self) -> bool:
        return self.hw_bound >= 1.0 or self.empirical_ccdf <= self.hw_bound


def tail_csv(name: str, samples: int, points: Sequence[TailPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "s", "samples", "empirical_ccdf", "hw_bound", "dominated"])
    for pt in points:
        w.writerow([name, _fmt(pt.s), samples, _fmt(pt.empirical_ccdf), _fmt(pt.hw_bound),
                    str(pt.dominated).lower()])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_json(cfg: ExperimentConfig, extra: dict | None = None) -> str:
    payload = {"config": cfg.describe(), "base_seed": cfg.base_seed, "version": __version__}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# per-campaign deterministic context


def _prefix(traj: Trajectory, T: int) -> Trajectory:
    return Trajectory(Y=traj.Y[:T], U=traj.U[:T], W=traj.W[:T], restart_block_k=traj.restart_block_k)


def _noise_sigma2(cfg: ExperimentConfig) -> float:
    """Variance proxy of V_t = Sigma_W^{1/2} W_t."""
    sys = cfg.system
    S = sys.Sigma_W_sqrt if isinstance(sys, ArxSystem) else sys.Sigma_E_sqrt
    return cfg.noise.sigma2 * numerics.op_norm(S) ** 2


def _arx_orders(cfg: ExperimentConfig) -> tuple[int, int]:
    sys = cfg.system
    if not isinstance(sys, ArxSystem):
        raise ConfigError(f"estimator {cfg.estimator!r} requires an ARX system")
    return sys.p, sys.q


def _context(cfg: ExperimentConfig) -> dict:
    """Everything the trials share: exact covariances, burn-ins, deterministic bound pieces."""
    sys = cfg.system
    ctx: dict = {}
    Tmax = cfg.horizons[-1]
    K2 = cfg.noise.variance_proxy_K2
    est = cfg.estimator
    if est in ("pe", "arx_op"):
        p, q = _arx_orders(cfg)
        tau = cfg.tau_or_p
        if tau < max(p, q):
            raise ConfigError("tau must be at least max(p, q)")
        cov = covariance_sequence(sys, Tmax)
        lam_tau = numerics.lambda_min(cov[tau])
        ctx["Sigma_tau"] = cov[tau]
        ctx["burn_in"] = {(T, d): bounds.arx_burn_in(T, d, tau, K2, sys.dims, numerics.op_norm(cov[T]), lam_tau)[1]
                          for T in cfg.horizons for d in cfg.delta_grid}
        if est == "arx_op":
            s = bounds.snr(bounds.SnrContext(lam_tau, numerics.op_norm(sys.Sigma_W), K2, tau))
            C = float(cfg.options.get("C", bounds.DEFAULT_C))
            ctx["bound"] = {(T, d): bounds.arx_error_bound(s, T, sys.dims, d, bounds.logdet_cond(cov[T], cov[tau]), C)
                            for T in cfg.horizons for d in cfg.delta_grid}
    elif est == "selfnorm":
        _arx_orders(cfg)
        ctx["Sigma"] = numerics.as_matrix(cfg.options.get("Sigma", np.eye(sys.dims)), "Sigma")
        ctx["sigma2"] = _noise_sigma2(cfg)
    elif est == "ss_op":
        if not isinstance(sys, StateSpaceInnovation):
            raise ConfigError("ss_op requires a state-space system")
        p = cfg.tau_or_p
        cov = covariance_sequence(sys, Tmax, p=p)
        s = cfg.noise.variance_proxy_K2 * numerics.op_norm(sys.Sigma_E)
        snr_pp = numerics.lambda_min(cov[p]) / s
        C1 = float(cfg.options.get("C1", bounds.DEFAULT_C1))
        ctx["theta_star"] = markov_params(sys, p)
        # the theorem's failure budget is 2 delta; evaluate at delta/2 so each cell is nominal level delta
        ctx["bound"] = {(T, d): bounds.ss_error_bound(snr_pp, T, p, sys.d_y + sys.d_u, d / 2,
                                                      bounds.logdet_cond(cov[T], cov[p]), C1)
                        for T in cfg.horizons for d in cfg.delta_grid}
        ctx["burn_in"] = {(T, d): bounds.ss_bias_ok(sys, p, T)[0] for T in cfg.horizons for d in cfg.delta_grid}
    elif est == "sparse":
        p, q = _arx_orders(cfg)
        if q != 0 or sys.d_y != 1:
            raise ConfigError("sparse campaigns need a scalar pure autoregression")
        s = int(cfg.options.get("s", 1))
        k = int(cfg.options.get("k", p))
        c, c_prime = float(cfg.options.get("c", 1.0)), float(cfg.options.get("c_prime", 1.0))
        sigma2 = _noise_sigma2(cfg)
        ctx.update(s=s, k=k, sigma2=sigma2)
        ctx["weight"] = bounds.averaged_covariances(sys, Tmax)[k] * cfg.noise.scale**2
        ctx["bound"], ctx["burn_in"], ctx["unit"] = {}, {}, {}
        for T in cfg.horizons:
            cs = bounds.cond_sys(sys, T, k)
            for d in cfg.delta_grid:
                b, ok = bounds.sparse_bound(sigma2, s, p, cs, d, T, k, c, c_prime)
                ctx["bound"][T, d], ctx["burn_in"][T, d] = b, ok
                ctx["unit"][T, d] = b / c if c > 0 else math.nan
    elif est == "nonlinear":
        p, q = _arx_orders(cfg)
        if p != 1 or q != 0 or sys.d_y != 1:
            raise ConfigError("nonlinear campaigns need a scalar AR(1) system")
        gains = tuple(float(g) for g in cfg.options.get("gains", ()))
        if not gains:
            raise ConfigError("nonlinear campaigns need options.gains")
        a = float(sys.A_coeffs[0][0, 0])
        star = int(np.argmin([abs(g - a) for g in gains]))
        if abs(gains[star] - a) > 1e-12:
            raise ConfigError("the true gain must belong to the hypothesis class")
        k = int(cfg.options.get("k", 1))
        F = FiniteClass.linear_gains(gains)
        cov = covariance_sequence(sys, k)
        ex2 = float(np.mean(cov[:k, 0, 0])) * cfg.noise.scale**2
        if "cond_F" in cfg.options:
            cond_F = float(cfg.options["cond_F"])
        else:
            cond_F = estimate_cond_F(cfg, F, star, k)
        sigma2 = _noise_sigma2(cfg)
        ctx.update(F=F, gains=gains, star=star, k=k, ex2=ex2, cond_F=cond_F)
        ctx["bound"], ctx["burn_in"] = {}, {}
        for T in cfg.horizons:
            if T % k:
                raise ConfigError(f"restart block k={k} must divide every horizon")
            for d in cfg.delta_grid:
                ctx["bound"][T, d], ctx["burn_in"][T, d] = bounds.nonlinear_bound(sigma2, len(gains), d, T, k, cond_F)
    return ctx


def estimate_cond_F(cfg: ExperimentConfig, F: FiniteClass, star: int, k: int, samples: int = 4000) -> float:
    """Monte Carlo estimate of cond_F from independent restart blocks (separate seed lane)."""
    stream = derive_stream(cfg.base_seed ^ 0xC0DF, 0)
    blocks = []
    for _ in range(samples):
        traj = simulate(cfg.system, cfg.noise, k, stream)
        X, _ = regressors(traj, 1, 0)
        blocks.append(X)
    return bounds.cond_F_empirical(F, star, np.stack(blocks))


# ---------------------------------------------------------------------------
# trials


def _trial(cfg: ExperimentConfig, ctx: dict, index: int) -> list[tuple]:
    """Records (metric, T, delta, violated, bound, valid, statistic) for one trial."""
    stream = derive_stream(cfg.base_seed, index)
    Tmax = cfg.horizons[-1]
    sys, est = cfg.system, cfg.estimator
    restart = ctx.get("k") if est == "nonlinear" else None
    traj = simulate(sys, cfg.noise, Tmax, stream, restart_k=restart)
    out = []
    if est == "ss_op":
        for T in cfg.horizons:
            err = error_norms(ssarx_fit(_prefix(traj, T), cfg.tau_or_p).theta_hat, ctx["theta_star"])[0] ** 2
            for d in cfg.delta_grid:
                b = ctx["bound"][T, d]
                out.append(("ss_op", T, d, err > b, b, ctx["burn_in"][T, d], err))
        return out
    X, Y = regressors(traj, sys.p, sys.q)
    for T in cfg.horizons:
        Xt, Yt = X[:T], Y[:T]
        if est == "pe":
            emp = Xt.T @ Xt / T
            gap = numerics.lambda_min(emp - ctx["Sigma_tau"] / 16.0)
            for d in cfg.delta_grid:
                out.append(("pe", T, d, gap < -PSD_SLACK, d, ctx["burn_in"][T, d], gap))
        elif est == "arx_op":
            err = error_norms(ols(Xt, Yt).theta_hat, sys.theta_star)[0] ** 2
            for d in cfg.delta_grid:
                b = ctx["bound"][T, d]
                out.append(("arx_op", T, d, err > b, b, ctx["burn_in"][T, d], err))
        elif est == "selfnorm":
            V = Yt - Xt @ sys.theta_star.T
            frob2, op2, ratio = bounds.selfnorm_statistic(V, Xt, ctx["Sigma"])
            for d in cfg.delta_grid:
                bf = bounds.selfnorm_frobenius_bound(sys.d_y, ctx["sigma2"], ratio, d)
                bo = bounds.selfnorm_operator_bound(sys.d_y, ctx["sigma2"], ratio, d)
                out.append(("selfnorm_frob", T, d, frob2 > bf, bf, True, frob2))
                out.append(("selfnorm_op", T, d, op2 > bo, bo, True, op2))
        elif est == "sparse":
            sp = sparse_lse(Xt, Yt, ctx["s"])
            err = error_norms(sp.theta_hat, sys.theta_star, ctx["weight"])[2] ** 2
            ols_err = None
            if cfg.options.get("compare_ols", False):
                ols_err = error_norms(ols(Xt, Yt).theta_hat, sys.theta_star, ctx["weight"])[2] ** 2
            for d in cfg.delta_grid:
                b = ctx["bound"][T, d]
                out.append(("sparse", T, d, err > b, b, ctx["burn_in"][T, d], err))
                unit = ctx["unit"][T, d]
                out.append(("sparse_c_min", T, d, err > unit, math.nan, ctx["burn_in"][T, d],
                            err / unit if unit > 0 else math.inf))
                if ols_err is not None:
                    out.append(("ols_better", T, d, ols_err < err, math.nan, True, ols_err - err))
        elif est == "nonlinear":
            name, _ = finite_class_lse(ctx["F"], Xt, Yt)
            g_hat = ctx["gains"][ctx["F"].names.index(name)]
            l2 = (g_hat - ctx["gains"][ctx["star"]]) ** 2 * ctx["ex2"]
            for d in cfg.delta_grid:
                b = ctx["bound"][T, d]
                out.append(("nonlinear", T, d, l2 > b, b, ctx["burn_in"][T, d], l2))
    return out


def _run_trials(cfg: ExperimentConfig, ctx: dict, workers: int) -> list[list[tuple]]:
    if workers <= 1:
        return [_trial(cfg, ctx, i) for i in range(cfg.trials)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial, [cfg] * cfg.trials, [ctx] * cfg.trials, range(cfg.trials),
                             chunksize=max(1, cfg.trials // (4 * workers))))


def mc_coverage(cfg: ExperimentConfig, workers: int = 1) -> CoverageReport:
    """Violation frequencies of the configured event for every (metric, T, delta) cell."""
    if cfg.system is None:
        raise ConfigError("mc_coverage needs a system")
    ctx = _context(cfg)
    results = _run_trials(cfg, ctx, workers)
    tally: dict = {}
    for records in results:
        for metric, T, d, violated, b, valid, stat in records:
            entry = tally.setdefault((metric, T, d), {"v": 0, "b": b, "valid": valid, "stats": [], "bounds": []})
            entry["v"] += int(violated)
            entry["stats"].append(stat)
            entry["bounds"].append(b)
    cells = []
    for (metric, T, d) in sorted(tally):
        e = tally[metric, T, d]
        bval = e["b"]
        if metric.startswith("selfnorm"):
            # the bound is data dependent; report its median over trials
            bval = float(np.median(e["bounds"]))
        if metric == "sparse_c_min":
            # smallest constant c for which the bound holds in a (1 - delta) fraction of trials
            bval = float(np.quantile(np.sort(e["stats"]), 1 - d, method="higher"))
        cells.append(CoverageCell(
            experiment=f"{cfg.name}:{metric}", T=T, delta=d, trials=cfg.trials, violations=e["v"],
            empirical_rate=e["v"] / cfg.trials, wilson_upper_95=wilson_upper(e["v"], cfg.trials),
            bound_value=float(bval), valid=bool(e["valid"]),
        ))
    return CoverageReport(tuple(cells))


# ---------------------------------------------------------------------------
# rates and tails


def fit_loglog(horizons: Sequence[float], values: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line log(value) = intercept + slope log(T); returns (slope, intercept, r2)."""
    x = np.log(np.asarray(horizons, dtype=float))
    v = np.asarray(values, dtype=float)
    if x.size < 4:
        raise RateError("a rate fit needs at least 4 horizons")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise RateError("rate fit over degenerate (zero or non-finite) errors")
    y = np.log(v)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if sst == 0 else max(0.0, 1.0 - float(resid @ resid) / sst)
    return float(slope), float(intercept), min(r2, 1.0)


def _rate_trial(cfg: ExperimentConfig, index: int) -> list[float]:
    stream = derive_stream(cfg.base_seed, index)
    sys = cfg.system
    traj = simulate(sys, cfg.noise, cfg.horizons[-1], stream)
    if isinstance(sys, StateSpaceInnovation):
        theta = markov_params(sys, cfg.tau_or_p)
        return [error_norms(ssarx_fit(_prefix(traj, T), cfg.tau_or_p).theta_hat, theta)[0] for T in cfg.horizons]
    X, Y = regressors(traj, sys.p, sys.q)
    return [error_norms(ols(X[:T], Y[:T]).theta_hat, sys.theta_star)[0] for T in cfg.horizons]


def rate_fit(cfg: ExperimentConfig, workers: int = 1) -> RateFit:
    """Slope of log median operator-norm error against log T."""
    if len(cfg.horizons) < 4:
        raise RateError("rate_fit needs at least 4 horizons")
    if workers <= 1:
        errs = [_rate_trial(cfg, i) for i in range(cfg.trials)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errs = list(pool.map(_rate_trial, [cfg] * cfg.trials, range(cfg.trials)))
    med = np.median(np.asarray(errs), axis=0)
    slope, intercept, r2 = fit_loglog(cfg.horizons, med)
    return RateFit(slope, intercept, r2, tuple(float(m) for m in med), cfg.horizons)


def tail_compare(M, noise: NoiseSpec, samples: int, s_grid: Sequence[float],
                 stream: np.random.Generator) -> list[TailPoint]:
    """Empirical P(|W^T M W - E W^T M W| > s) against the Hanson-Wright bound."""
    if samples < 1000:
        raise ContractError("tail_compare needs at least 1000 samples")
    M = numerics.as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ContractError("M must be square")
    W = sample_noise(noise, samples, M.shape[0], stream)
    quad = np.einsum("ni,ij,nj->n", W, M, W)
    dev = np.abs(quad - noise.scale**2 * np.trace(M))
    frob, op = float(np.linalg.norm(M)), numerics.op_norm(M)
    pts = []
    for s in s_grid:
        s = float(s)
        emp = float(np.mean(dev > s))
        if frob == 0 or noise.sigma2 == 0:
            hw = 1.0 if s == 0 else 0.0
        else:
            hw = min(1.0, bounds.hw_tail(s, noise.sigma2, frob, op))
        pts.append(TailPoint(s, emp, hw))
    return pts
