"""Least-squares family estimators: OLS, exhaustive sparse LSE, SSARX, finite-class LSE."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import CapacityError, ContractError, DimensionError, EvaluationError
from .systems import Trajectory, regressors

ENUMERATION_CAP = 1_000_000
# relative slack under which two residuals count as tied
_TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Estimate:
    theta_hat: np.ndarray
    emp_cov: np.ndarray
    rank: int
    min_eig: float
    support: tuple[int, ...] | None = None

    def to_json(self) -> str:
        payload = {
            "theta_hat": self.theta_hat.ravel().tolist(),
            "shape": list(self.theta_hat.shape),
            "rank": self.rank,
            "min_eig": self.min_eig,
        }
        if self.support is not None:
            payload["support"] = list(self.support)
        return json.dumps(payload, sort_keys=True)


@dataclass(frozen=True)
class FiniteClass:
    """Named hypotheses f: (n, d_X) -> (n, d_Y); evaluated row-wise on stacks."""

    names: tuple[str, ...]
    members: tuple[Callable[[np.ndarray], np.ndarray], ...]

    def __post_init__(self):
        if len(self.names) != len(self.members):
            raise ContractError("FiniteClass needs one name per member")
        if not self.members:
            raise ContractError("FiniteClass must be nonempty")

    @property
    def cardinality(self) -> int:
        return len(self.members)

    @classmethod
    def linear_gains(cls, gains: Sequence[float]) -> "FiniteClass":
        gains = [float(g) for g in gains]
        return cls(tuple(f"gain={g:g}" for g in gains),
                   tuple((lambda X, g=g: g * X) for g in gains))

    def evaluate(self, i: int, X: np.ndarray) -> np.ndarray:
        out = np.asarray(self.members[i](X), dtype=float)
        out = out.reshape(X.shape[0], -1)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"hypothesis {self.names[i]!r} produced non-finite values")
        return out


def _stacks(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"stack lengths differ: X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if X.shape[0] < 1:
        raise ContractError("need at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ContractError("data contain non-finite values")
    return X, Y


def _cov_summary(X: np.ndarray) -> tuple[np.ndarray, int, float]:
    S = X.T @ X / X.shape[0]
    S = 0.5 * (S + S.T)
    rank = numerics.matrix_rank(X.T @ X)
    min_eig = float(np.linalg.eigvalsh(S)[0]) if S.size else 0.0
    return S, rank, min_eig


def ols(X, Y) -> Estimate:
    """theta = (sum Y X^T)(sum X X^T)^+ ; rank deficiency is reported, never raised."""
    X, Y = _stacks(X, Y)
    G = X.T @ X
    theta = (Y.T @ X) @ numerics.pinv(0.5 * (G + G.T))
    S, rank, min_eig = _cov_summary(X)
    return Estimate(theta_hat=theta, emp_cov=S, rank=rank, min_eig=min_eig)


def _restricted_fit(X: np.ndarray, y: np.ndarray, support: tuple[int, ...]) -> tuple[np.ndarray, float]:
    theta = np.zeros(X.shape[1])
    if support:
        Xs = X[:, support]
        G = Xs.T @ Xs
        theta[list(support)] = numerics.pinv(0.5 * (G + G.T)) @ (Xs.T @ y)
    r = y - X @ theta
    return theta, float(r @ r)


def sparse_lse(X, Y, s: int, cap: int = ENUMERATION_CAP) -> Estimate:
    """Exact least squares over all supports of size <= s.

    Supports are visited by size then lexicographically; a later support
    replaces the incumbent only if its residual is strictly smaller (beyond a
    1e-12 relative slack), so ties resolve to the smallest support in that order.
    """
    X, Y = _stacks(X, Y)
    if Y.shape[1] != 1:
        raise DimensionError("sparse_lse requires one-dimensional targets")
    p = X.shape[1]
    if not 1 <= s <= p:
        raise ContractError(f"sparsity s={s} must satisfy 1 <= s <= p={p}")
    count = sum(math.comb(p, j) for j in range(s + 1))
    if count > cap:
        raise CapacityError(f"{count} supports exceed the enumeration cap {cap}")
    y = Y[:, 0]
    best_theta, best_rss = _restricted_fit(X, y, ())
    best_support: tuple[int, ...] = ()
    for size in range(1, s + 1):
        for support in itertools.combinations(range(p), size):
            theta, rss = _restricted_fit(X, y, support)
            if rss < best_rss - _TIE_RTOL * max(best_rss, 1e-300):
                best_theta, best_rss, best_support = theta, rss, support
    S, rank, min_eig = _cov_summary(X)
    return Estimate(theta_hat=best_theta[None, :], emp_cov=S, rank=rank, min_eig=min_eig,
                    support=best_support)


def ssarx_fit(traj: Trajectory, p: int) -> Estimate:
    """OLS of Y_t on Z_t = [Y_{t-1..t-p}, U_{t-1..t-p}].

    Columns are returned in Markov-parameter order (input block first,
    then output block) so the estimate is directly comparable to
    ``systems.markov_params(sys, p)``.
    """
    if p < 1 or traj.T <= p:
        raise ContractError(f"ssarx_fit needs T > p >= 1 (T={traj.T}, p={p})")
    Z, Y = regressors(traj, p, p)
    d_y = traj.Y.shape[1]
    order = np.r_[np.arange(p * d_y, Z.shape[1]), np.arange(p * d_y)]
    return ols(Z[:, order], Y)


def finite_class_lse(F: FiniteClass, X, Y) -> tuple[str, float]:
    """Empirical risk minimizer (1/T) sum ||Y_t - f(X_t)||^2; lowest index wins ties."""
    X, Y = _stacks(X, Y)
    best, best_risk = 0, math.inf
    for i in range(F.cardinality):
        risk = empirical_risk(F, i, X, Y)
        if risk < best_risk:
            best, best_risk = i, risk
    return F.names[best], best_risk


def empirical_risk(F: FiniteClass, i: int, X, Y) -> float:
    X, Y = _stacks(X, Y)
    R = Y - F.evaluate(i, X)
    return float(np.sum(R * R) / X.shape[0])


def error_norms(theta_hat, theta_star, weight=None) -> tuple[float, float, float | None]:
    """Operator, Frobenius and weighted ||(theta_hat - theta_star) weight^{1/2}||_F norms."""
    A = numerics.as_matrix(theta_hat, "theta_hat")
    B = numerics.as_matrix(theta_star, "theta_star")
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    D = A - B
    op = numerics.op_norm(D)
    frob = float(np.linalg.norm(D))
    maha = None
    if weight is not None:
        Wt = numerics.as_matrix(weight, "weight")
        if Wt.shape != (D.shape[1], D.shape[1]):
            raise DimensionError("weight does not conform to theta")
        maha = float(np.linalg.norm(D @ numerics.psd_sqrt(Wt)))
    return op, frob, maha
