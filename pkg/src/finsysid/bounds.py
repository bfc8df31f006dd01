"""Closed-form tail bounds, burn-in times and error bounds.

Scalar calculators return raw floats (probability bounds are *not* clamped).
:func:`evaluate` wraps any calculator into a :class:`BoundReport`, clamping
probability-type values to [0, 1] and echoing the raw value.
System-dependent helpers (T_pe search, cond_sys, cond_F, SSARX bias check)
live at the bottom of the module.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics
from .errors import CapacityError, ContractError, ExcitationError
from .systems import ArxSystem, StateSpaceInnovation, causal_operator, companion_embed, covariance_sequence, \
    state_covariance_sequence

SQRT2 = math.sqrt(2.0)
DEFAULT_C = 128.0
DEFAULT_C1 = 128.0
T_PE_CAP = 10_000_000


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractError(msg)


def _check_delta(delta: float, where: str) -> None:
    _require(0.0 < delta < 1.0, f"{where}: confidence level delta={delta} must lie in (0, 1)")


def _check_divides(T: int, k: int, where: str) -> None:
    _require(k >= 1 and T >= 1 and T % k == 0, f"{where}: block length k={k} must divide T={T}")


# ---------------------------------------------------------------------------
# concentration


def gaussian_tail(s: float, sigma2: float) -> float:
    """exp(-s^2 / (2 sigma^2)), the one-sided sub-Gaussian Chernoff bound."""
    _require(s >= 0, "gaussian_tail: deviation s must be nonnegative")
    _require(sigma2 > 0, "gaussian_tail: variance proxy must be positive")
    return math.exp(-s * s / (2.0 * sigma2))


def hw_tail(s: float, sigma2: float, M_frob: float, M_op: float) -> float:
    """Hanson-Wright: 2 exp(-min(s^2/(144 sigma^4 |M|_F^2), s/(16 sqrt2 sigma^2 |M|_op)))."""
    _require(s >= 0, "hw_tail: deviation s must be nonnegative")
    _require(sigma2 > 0 and M_frob > 0 and M_op > 0, "hw_tail: sigma^2 and the norms of M must be positive")
    quad = s * s / (144.0 * sigma2**2 * M_frob**2)
    lin = s / (16.0 * SQRT2 * sigma2 * M_op)
    return 2.0 * math.exp(-min(quad, lin))


def hw_switch_point(sigma2: float, M_frob: float, M_op: float) -> float:
    """Deviation at which the two Hanson-Wright exponents coincide."""
    return 144.0 * sigma2 * M_frob**2 / (16.0 * SQRT2 * M_op)


def hw_mgf_limit(sigma2: float, M_op: float) -> float:
    return 1.0 / (8.0 * SQRT2 * sigma2 * M_op)


def hw_mgf_exponent(lam: float, sigma2: float, M_frob: float, M_op: float) -> float:
    """36 lambda^2 sigma^4 |M|_F^2, valid for |lambda| <= 1/(8 sqrt2 sigma^2 |M|_op)."""
    limit = hw_mgf_limit(sigma2, M_op)
    _require(abs(lam) <= limit,
             f"hw_mgf_exponent: |lambda|={abs(lam)} exceeds the Hanson-Wright MGF range {limit}")
    return 36.0 * lam * lam * sigma2**2 * M_frob**2


def covering_cardinality_bound(eps: float, d: int) -> float:
    """(1 + 2/eps)^d bound on the eps-covering number of the unit sphere."""
    _require(eps > 0, "covering_cardinality_bound: eps must be positive")
    _require(d >= 0, "covering_cardinality_bound: dimension must be nonnegative")
    return (1.0 + 2.0 / eps) ** d


def spectrum_deviation_failure(eps: float, K2: float, M_op: float, L_op: float, d_X: int) -> float:
    """exp(-eps^2 / (576 K^2 |M|^2 |L|^2) + d_X log 18)."""
    _require(eps >= 0 and K2 > 0 and M_op > 0 and L_op > 0,
             "spectrum_deviation_failure: eps >= 0 and positive K^2, |M|, |L| required")
    return math.exp(-eps * eps / (576.0 * K2 * M_op**2 * L_op**2) + d_X * math.log(18.0))


def csys(T: int, k: int, L_op2: float, sum_cov_min: float, sum_cov_max: float,
         sum_decoupled_min: float) -> float:
    """1 + 4 sqrt2 ((T |LL^T| / (18 k lmin) + 9) lmax) / lmin_decoupled."""
    if sum_cov_min <= 0 or sum_decoupled_min <= 0:
        raise ExcitationError("csys: degenerate excitation, the covariance sums must be positive definite "
                              "for the lower-tail theorem")
    _require(k >= 1, "csys: k must be positive")
    return 1.0 + 4.0 * SQRT2 * ((T * L_op2 / (18.0 * k * sum_cov_min) + 9.0) * sum_cov_max) / sum_decoupled_min


def lower_tail_failure(T: int, k: int, K2: float, d: int, c_sys: float) -> float:
    """c_sys^d exp(-T / (576 K^2 k))."""
    _check_divides(T, k, "lower_tail_failure")
    _require(K2 > 0 and c_sys > 0, "lower_tail_failure: K^2 and C_sys must be positive")
    return c_sys**d * math.exp(-T / (576.0 * K2 * k))


def selfnorm_frobenius_bound(d_Y: int, sigma2: float, logdet_ratio: float, delta: float) -> float:
    """d_Y sigma^2 log det ratio + 2 sigma^2 log(1/delta)."""
    _require(logdet_ratio >= 0, "selfnorm bound: log-determinant ratio must be nonnegative")
    _check_delta(delta, "selfnorm_frobenius_bound")
    return d_Y * sigma2 * logdet_ratio + 2.0 * sigma2 * math.log(1.0 / delta)


def selfnorm_operator_bound(d_Y: int, sigma2: float, logdet_ratio: float, delta: float) -> float:
    """4 sigma^2 log det ratio + 8 d_Y sigma^2 log 5 + 8 sigma^2 log(1/delta)."""
    _require(logdet_ratio >= 0, "selfnorm bound: log-determinant ratio must be nonnegative")
    _check_delta(delta, "selfnorm_operator_bound")
    return 4.0 * sigma2 * logdet_ratio + 8.0 * d_Y * sigma2 * math.log(5.0) + 8.0 * sigma2 * math.log(1.0 / delta)


# ---------------------------------------------------------------------------
# ARX / state-space


@dataclass(frozen=True)
class SnrContext:
    sigma_tau_min_eig: float
    noise_op_norm: float
    K2: float
    tau: int

    def __post_init__(self):
        if not (self.sigma_tau_min_eig > 0 and self.noise_op_norm > 0 and self.K2 > 0 and self.tau > 0):
            raise ContractError("SnrContext fields must all be strictly positive")


def snr(ctx: SnrContext) -> float:
    """lambda_min(Sigma_tau) / (|Sigma_W| K^2)."""
    return ctx.sigma_tau_min_eig / (ctx.noise_op_norm * ctx.K2)


def arx_csys(T: float, tau: int, sigma_T_op: float, sigma_tau_min: float) -> float:
    return (2.0 * T / (3.0 * tau)) * sigma_T_op**2 / sigma_tau_min**2


def arx_burn_in_T0(T: float, delta: float, tau: int, K2: float, dims: int, sigma_T_op: float,
                   sigma_tau_min: float) -> float:
    if sigma_tau_min <= 0:
        raise ExcitationError("arx_burn_in: lambda_min(Sigma_tau) must be positive for persistence of excitation")
    _check_delta(delta, "arx_burn_in")
    c = arx_csys(T, tau, sigma_T_op, sigma_tau_min)
    return 1152.0 * tau * max(K2, 1.0) * (dims * math.log(c) + math.log(1.0 / delta))


def arx_burn_in(T: int, delta: float, tau: int, K2: float, p_dY_q_dU: int, sigma_T_op: float,
                sigma_tau_min: float) -> tuple[float, bool]:
    """Persistence-of-excitation burn-in T0 and whether T >= T0."""
    T0 = arx_burn_in_T0(T, delta, tau, K2, p_dY_q_dU, sigma_T_op, sigma_tau_min)
    return T0, T >= T0


def arx_error_bound(snr_tau: float, T: int, dims: int, delta: float, logdet_cond: float,
                    C: float = DEFAULT_C) -> float:
    """(C / (SNR_tau T)) (dims log(dims/delta) + log det(Sigma_T Sigma_tau^{-1}))."""
    _require(T >= 1 and dims >= 1, "arx_error_bound: T and dims must be positive")
    _require(snr_tau > 0, "arx_error_bound: SNR must be positive")
    _check_delta(delta, "arx_error_bound")
    return C / (snr_tau * T) * (dims * math.log(dims / delta) + logdet_cond)


def matrix_markov_factor(dims: int, delta: float) -> float:
    _check_delta(delta, "matrix_markov_factor")
    return dims / delta


def power_norm_bound(k: int, d: int, M: float) -> float:
    """(e k)^{d-1} max(M^d, 1)."""
    _require(k >= 1 and d >= 1 and M > 0, "power_norm_bound: k, d >= 1 and M > 0 required")
    return (math.e * k) ** (d - 1) * max(M**d, 1.0)


def ss_horizon(beta: float, T: int) -> int:
    """p = ceil(beta ln T), at least 1."""
    _require(beta > 0 and T >= 3, "ss_horizon: beta > 0 and T >= 3 required")
    x = beta * math.log(T)
    # tolerate round-off such as 2 * ln(e^5) = 10.000000000000002
    p = math.ceil(x - 1e-9 * max(1.0, x))
    return max(1, p)


def ss_error_bound(snr_pp: float, T: int, p: int, d_sum: int, delta: float, logdet_cond: float,
                   C1: float = DEFAULT_C1) -> float:
    """(C1 / (SNR_{p,p} T)) (n log(n/delta) + logdet) with n = p (d_Y + d_U); failure budget 2 delta."""
    n = p * d_sum
    _require(T >= 1 and n >= 1 and snr_pp > 0, "ss_error_bound: T, p(d_Y+d_U) and SNR must be positive")
    _check_delta(delta, "ss_error_bound")
    return C1 / (snr_pp * T) * (n * math.log(n / delta) + logdet_cond)


def sparse_bound(sigma2: float, s: int, p: int, cond_sys: float, delta: float, T: int, k: int,
                 c: float = 1.0, c_prime: float = 1.0) -> tuple[float, bool]:
    """Sparse LSE bound c sigma^2 (s log(p cond/s) + log(1/delta)) / T and its burn-in flag."""
    _require(1 <= s <= p, f"sparse_bound: sparsity s={s} must satisfy 1 <= s <= p={p}")
    _check_delta(delta, "sparse_bound")
    _check_divides(T, k, "sparse_bound")
    _require(cond_sys > 0, "sparse_bound: cond_sys must be positive")
    bound = c * sigma2 * (s * math.log(p * cond_sys / s) + math.log(1.0 / delta)) / T
    need = c_prime * sigma2 * (s * (math.log(cond_sys) + math.log(p / s)) + math.log(1.0 / delta))
    return bound, T / k >= need


def nonlinear_bound(sigma2: float, class_size: int, delta: float, T: int, k: int,
                    cond_F: float) -> tuple[float, bool]:
    """16 sigma^2 (log|F| + log(2/delta)) / T and the burn-in T/k >= 4 cond_F^2 (...)."""
    _require(class_size >= 1, "nonlinear_bound: the hypothesis class must be nonempty")
    _check_delta(delta, "nonlinear_bound")
    _check_divides(T, k, "nonlinear_bound")
    complexity = math.log(class_size) + math.log(2.0 / delta)
    return 16.0 * sigma2 * complexity / T, T / k >= 4.0 * cond_F**2 * complexity


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class BoundReport:
    name: str
    value: float
    inputs: dict = field(default_factory=dict)
    valid: bool = True

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "value": self.value, "inputs": self.inputs, "valid": self.valid},
                          sort_keys=True)

    def table(self) -> list[tuple[str, str]]:
        rows = [("bound", self.name), ("value", format(self.value, ".10g")), ("valid", str(self.valid).lower())]
        rows += [(k, format(v, ".10g") if isinstance(v, float) else str(v)) for k, v in sorted(self.inputs.items())]
        return rows


# name -> (function, is_probability)
EVALUATORS: dict[str, tuple[Callable, bool]] = {
    "gaussian_tail": (gaussian_tail, True),
    "hw_tail": (hw_tail, True),
    "hw_mgf_exponent": (hw_mgf_exponent, False),
    "covering_cardinality_bound": (covering_cardinality_bound, False),
    "spectrum_deviation_failure": (spectrum_deviation_failure, True),
    "csys": (csys, False),
    "lower_tail_failure": (lower_tail_failure, True),
    "selfnorm_frobenius_bound": (selfnorm_frobenius_bound, False),
    "selfnorm_operator_bound": (selfnorm_operator_bound, False),
    "arx_burn_in": (arx_burn_in, False),
    "arx_error_bound": (arx_error_bound, False),
    "matrix_markov_factor": (matrix_markov_factor, False),
    "power_norm_bound": (power_norm_bound, False),
    "ss_horizon": (ss_horizon, False),
    "ss_error_bound": (ss_error_bound, False),
    "sparse_bound": (sparse_bound, False),
    "nonlinear_bound": (nonlinear_bound, False),
}


def evaluate(name: str, **inputs) -> BoundReport:
    """Evaluate a named calculator; probabilities are clamped with the raw value echoed."""
    if name not in EVALUATORS:
        raise KeyError(f"unknown bound {name!r}")
    fn, is_prob = EVALUATORS[name]
    raw = fn(**inputs)
    echo = dict(inputs)
    valid = True
    if isinstance(raw, tuple):
        raw, valid = raw
        valid = bool(valid)
    value = float(raw)
    if is_prob:
        echo["raw_value"] = value
        echo["vacuous"] = value >= 1.0
        value = min(max(value, 0.0), 1.0)
    return BoundReport(name=name, value=value, inputs=echo, valid=valid and math.isfinite(value))


# ---------------------------------------------------------------------------
# system-dependent helpers


def t_pe_search(sys: ArxSystem, delta: float, tau: int, K2: float = 1.0, cap: int = T_PE_CAP) -> int:
    """Smallest t >= tau with t >= T0(t, delta, tau), recomputing Sigma_t incrementally."""
    _require(tau >= max(sys.p, sys.q), "t_pe_search: tau must be at least max(p, q)")
    A, B = companion_embed(sys)
    Gamma = np.diag(np.r_[np.ones(sys.d_y), np.full(sys.d_u, sys.input_std_sigma_u**2)])
    Q = B @ Gamma @ B.T
    S = np.zeros_like(A)
    for _ in range(tau):
        S = A @ S @ A.T + Q
    lam_tau = numerics.lambda_min(0.5 * (S + S.T))
    if lam_tau <= 0:
        raise ExcitationError("t_pe_search: Sigma_tau is singular, persistence of excitation cannot be certified")
    t = tau
    dims = sys.dims
    while t <= cap:
        T0 = arx_burn_in_T0(t, delta, tau, K2, dims, numerics.op_norm(S), lam_tau)
        if t >= T0:
            return t
        S = A @ S @ A.T + Q
        S = 0.5 * (S + S.T)
        t += 1
    raise CapacityError(f"t_pe_search: no burn-in time found below the cap {cap}")


def averaged_covariances(sys: ArxSystem, T: int) -> np.ndarray:
    """Sigma_j = (1/j) sum_{t=1}^{j} E X_t X_t^T for j = 1..T (index 0 unused, zero)."""
    seq = covariance_sequence(sys, T)
    # regressor X_t has covariance seq[t-1]
    cum = np.cumsum(seq[:T], axis=0)
    out = np.zeros_like(seq)
    out[1:] = cum / np.arange(1, T + 1)[:, None, None]
    return out


def cond_sys(sys: ArxSystem, T: int, k: int) -> float:
    """(1 + |L L^T| / (k lmin(Sigma_T))) lmax(Sigma_T) / lmin(Sigma_k), Sigma_j averaged."""
    _check_divides(T, k, "cond_sys")
    avg = averaged_covariances(sys, T)
    lo_T, hi_T = numerics.sym_eig_extremes(avg[T])
    lo_k = numerics.lambda_min(avg[k])
    if lo_T <= 0 or lo_k <= 0:
        raise ExcitationError("cond_sys: averaged covariance is singular")
    A, B = companion_embed(sys)
    B = B @ np.diag(np.r_[np.ones(sys.d_y), np.full(sys.d_u, sys.input_std_sigma_u)])
    L = causal_operator(A, B, T, k)
    return (1.0 + L.op_norm() ** 2 / (k * lo_T)) * hi_T / lo_k


def cond_F_empirical(F, star: int, X_blocks: np.ndarray) -> float:
    """max over f in F - f_star and t of sqrt(E|f(X_t)|^4) / E|f(X_t)|^2.

    ``X_blocks`` has shape (n_samples, k, d_X): independent draws of a block
    of regressors. Differences that vanish identically at some t are skipped
    there (the ratio is undefined).
    """
    X_blocks = np.asarray(X_blocks, dtype=float)
    n, k, d = X_blocks.shape
    flat = X_blocks.reshape(n * k, d)
    f_star = F.evaluate(star, flat)
    worst = 1.0
    for i in range(F.cardinality):
        if i == star:
            continue
        diff = (F.evaluate(i, flat) - f_star).reshape(n, k, -1)
        sq = np.sum(diff * diff, axis=2)
        m2 = sq.mean(axis=0)
        m4 = (sq * sq).mean(axis=0)
        ok = m2 > 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.sqrt(m4[ok]) / m2[ok])))
    return worst


def ss_bias_ok(sys: StateSpaceInnovation, p: int, T: int) -> tuple[bool, float, float]:
    """Check |C A_cl^p| |Sigma_{X,T}| <= T^{-3}; returns (ok, lhs, rhs)."""
    _require(p >= 1 and T >= 2, "ss_bias_ok: p >= 1 and T >= 2 required")
    lhs = numerics.op_norm(sys.C @ np.linalg.matrix_power(sys.A_cl, p))
    if lhs > 0:
        lhs *= numerics.op_norm(state_covariance_sequence(sys, T)[T])
    rhs = float(T) ** -3
    return lhs <= rhs, lhs, rhs


def selfnorm_statistic(V: np.ndarray, X: np.ndarray, Sigma: np.ndarray) -> tuple[float, float, float]:
    """(|S (Sigma + XX)^{-1/2}|_F^2, |.|_op^2, log det((Sigma + XX) Sigma^{-1})) with S = sum V_t X_t^T."""
    V = np.asarray(V, dtype=float).reshape(X.shape[0], -1)
    G = Sigma + X.T @ X
    S = V.T @ X
    L = np.linalg.cholesky(0.5 * (G + G.T))
    # |S G^{-1/2}|^2 norms equal those of S L^{-T}
    M = np.linalg.solve(L, S.T).T
    frob2 = float(np.sum(M * M))
    op2 = numerics.op_norm(M) ** 2
    ratio = numerics.logdet_psd(G) - numerics.logdet_psd(Sigma)
    return frob2, op2, max(ratio, 0.0)


def logdet_cond(Sigma_T: np.ndarray, Sigma_tau: np.ndarray) -> float:
    """log det(Sigma_T Sigma_tau^{-1})."""
    return numerics.logdet_psd(Sigma_T) - numerics.logdet_psd(Sigma_tau)

