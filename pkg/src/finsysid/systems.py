"""System definitions, structural constructions and trajectory simulation.

Time-index convention
---------------------
A simulated :class:`Trajectory` holds rows ``t = 1..T``. Everything before
``t = 1`` (outputs, inputs, state) is zero, so the regressor built from row
``t`` is ``X_t = [Y_{t-1..t-p}, U_{t-1..t-q}]`` with ``X_1 = 0``.
:func:`covariance_sequence` follows the convention ``Sigma_0 = 0``,
``Sigma_1 = B Gamma B^T``, i.e. ``Sigma_t`` is the covariance of the regressor
of trajectory row ``t + 1``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.sparse.linalg import LinearOperator, svds

from . import numerics
from .errors import ContractError, DimensionError
from .numerics import as_matrix, spectral_radius

STABILITY_TOL = 1e-8

# variance proxies of the unit-variance base draw
_BASE_K2 = {"gaussian": 1.0, "rademacher": 1.0, "uniform": 3.0}


@dataclass(frozen=True)
class NoiseSpec:
    """Sub-Gaussian driving noise: unit-variance iid draws multiplied by ``scale``.

    ``variance_proxy_K2`` is the proxy of the unit-variance draw (clamped to
    be at least 1). ``scale = 0`` gives noise-free simulation.
    """

    family: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in _BASE_K2:
            raise ContractError(f"unknown noise family {self.family!r}; expected one of {sorted(_BASE_K2)}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise ContractError("noise scale must be finite and nonnegative")

    @property
    def variance_proxy_K2(self) -> float:
        return max(_BASE_K2[self.family], 1.0)

    @property
    def sigma2(self) -> float:
        """Variance proxy of the scaled draw."""
        return self.scale**2 * self.variance_proxy_K2


def sample_noise(spec: NoiseSpec, rows: int, cols: int, stream: np.random.Generator) -> np.ndarray:
    """iid mean-zero, unit-variance entries (times ``spec.scale``)."""
    shape = (rows, cols)
    if spec.family == "gaussian":
        Z = stream.standard_normal(shape)
    elif spec.family == "rademacher":
        Z = 2.0 * stream.integers(0, 2, size=shape).astype(float) - 1.0
    else:
        r = math.sqrt(3.0)
        Z = stream.uniform(-r, r, size=shape)
    return spec.scale * Z


def _stack(mats: Sequence, rows: int, cols: int, name: str) -> tuple[np.ndarray, ...]:
    out = []
    for i, M in enumerate(mats):
        A = as_matrix(M, f"{name}[{i}]")
        if A.shape != (rows, cols):
            raise DimensionError(f"{name}[{i}] has shape {A.shape}, expected {(rows, cols)}")
        out.append(A)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ArxSystem:
    """Y_t = sum_i A_i Y_{t-i} + sum_j B_j U_{t-j} + Sigma_W^{1/2} W_t.

    ``q = 0`` (pure autoregression) is allowed; ``d_u`` must then be given
    explicitly if inputs should still be generated.
    """

    A_coeffs: tuple
    B_coeffs: tuple = ()
    Sigma_W_sqrt: np.ndarray = field(default_factory=lambda: np.eye(1))
    input_std_sigma_u: float = 1.0
    d_u: int | None = None

    def __post_init__(self):
        S = as_matrix(self.Sigma_W_sqrt, "Sigma_W_sqrt")
        d_y = S.shape[0]
        if S.shape != (d_y, d_y):
            raise DimensionError("Sigma_W_sqrt must be square")
        if len(self.A_coeffs) < 1:
            raise ContractError("ArxSystem needs p >= 1 autoregressive coefficients")
        A = _stack(self.A_coeffs, d_y, d_y, "A_coeffs")
        if self.B_coeffs:
            d_u = as_matrix(self.B_coeffs[0]).shape[1]
            if self.d_u is not None and self.d_u != d_u:
                raise DimensionError("d_u disagrees with B_coeffs")
        else:
            d_u = 0 if self.d_u is None else int(self.d_u)
        B = _stack(self.B_coeffs, d_y, d_u, "B_coeffs")
        if not (self.input_std_sigma_u >= 0):
            raise ContractError("input_std_sigma_u must be nonnegative")
        object.__setattr__(self, "A_coeffs", A)
        object.__setattr__(self, "B_coeffs", B)
        object.__setattr__(self, "Sigma_W_sqrt", S)
        object.__setattr__(self, "d_u", d_u)
        if numerics.lambda_min(S @ S.T) <= 0:
            raise ContractError("Sigma_W must be positive definite")
        rho = spectral_radius(self.companion_A11())
        if rho > 1 + STABILITY_TOL:
            raise ContractError(f"explosive ARX system: spectral radius {rho:.6g} > 1")

    @classmethod
    def scalar(cls, a: Sequence[float], b: Sequence[float] = (), sigma_w: float = 1.0,
               sigma_u: float = 1.0, d_u: int | None = None) -> "ArxSystem":
        return cls(
            A_coeffs=tuple(np.array([[x]]) for x in a),
            B_coeffs=tuple(np.array([[x]]) for x in b),
            Sigma_W_sqrt=np.array([[sigma_w]]),
            input_std_sigma_u=sigma_u,
            d_u=d_u if not b else None,
        )

    @property
    def p(self) -> int:
        return len(self.A_coeffs)

    @property
    def q(self) -> int:
        return len(self.B_coeffs)

    @property
    def d_y(self) -> int:
        return self.Sigma_W_sqrt.shape[0]

    @property
    def d_noise(self) -> int:
        return self.d_y

    @property
    def dims(self) -> int:
        """Regressor dimension p d_Y + q d_U."""
        return self.p * self.d_y + self.q * self.d_u

    @property
    def Sigma_W(self) -> np.ndarray:
        return self.Sigma_W_sqrt @ self.Sigma_W_sqrt.T

    @property
    def theta_star(self) -> np.ndarray:
        return np.hstack(self.A_coeffs + self.B_coeffs)

    def companion_A11(self) -> np.ndarray:
        d, p = self.d_y, self.p
        A11 = np.zeros((p * d, p * d))
        A11[:d, :] = np.hstack(self.A_coeffs)
        A11[d:, :-d] = np.eye((p - 1) * d)
        return A11


@dataclass(frozen=True, eq=False)
class StateSpaceInnovation:
    """X_{t+1} = A X_t + B U_t + F Sigma_E^{1/2} E_t,  Y_t = C X_t + Sigma_E^{1/2} E_t."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    F: np.ndarray
    Sigma_E_sqrt: np.ndarray
    input_std_sigma_u: float = 1.0

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError("A must be square")
        C = as_matrix(self.C, "C")
        if C.shape[1] != n:
            raise DimensionError("C does not conform to A")
        d_y = C.shape[0]
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
        F = as_matrix(self.F, "F").reshape(n, d_y)
        S = as_matrix(self.Sigma_E_sqrt, "Sigma_E_sqrt")
        if S.shape != (d_y, d_y):
            raise DimensionError("Sigma_E_sqrt must be d_Y x d_Y")
        for name, val in (("A", A), ("B", B), ("C", C), ("F", F), ("Sigma_E_sqrt", S)):
            object.__setattr__(self, name, val)
        if numerics.lambda_min(S @ S.T) <= 0:
            raise ContractError("Sigma_E must be positive definite")
        rho = spectral_radius(A)
        if rho > 1 + STABILITY_TOL:
            raise ContractError(f"explosive state-space system: spectral radius {rho:.6g} > 1")
        rho_cl = spectral_radius(A - F @ C)
        if rho_cl >= 1:
            raise ContractError(f"system is not minimum-phase: rho(A - F C) = {rho_cl:.6g}")

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_y(self) -> int:
        return self.C.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]

    @property
    def d_noise(self) -> int:
        return self.d_y

    @property
    def A_cl(self) -> np.ndarray:
        return self.A - self.F @ self.C

    @property
    def Sigma_E(self) -> np.ndarray:
        return self.Sigma_E_sqrt @ self.Sigma_E_sqrt.T


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Simulated rows t = 1..T; ``U[t]`` drives ``Y[t+1]``."""

    Y: np.ndarray
    U: np.ndarray
    W: np.ndarray
    restart_block_k: int | None = None

    def __post_init__(self):
        T = self.Y.shape[0]
        if self.U.shape[0] != T or self.W.shape[0] != T:
            raise DimensionError("Y, U, W must have the same number of rows")
        if self.restart_block_k is not None and T % self.restart_block_k:
            raise ContractError("restart_block_k must divide T")

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    def to_csv(self) -> str:
        """``t,y_0..,u_0..`` with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"] + [f"y_{i}" for i in range(self.Y.shape[1])] + [f"u_{i}" for i in range(self.U.shape[1])]
        w.writerow(header)
        for t in range(self.T):
            row = [str(t + 1)] + [format(v + 0.0, ".17g") for v in self.Y[t]] + [format(v + 0.0, ".17g") for v in self.U[t]]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
        u_cols = [i for i, h in enumerate(header) if h.startswith("u_")]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        Y, U = data[:, y_cols], data[:, u_cols]
        return cls(Y=Y, U=U, W=np.full((len(body), 0), np.nan))


# ---------------------------------------------------------------------------
# structural constructions


def companion_embed(sys: ArxSystem) -> tuple[np.ndarray, np.ndarray]:
    """First-order recursion X_{t+1} = A_cal X_t + B_cal [W_t; U_t] for the ARX regressor."""
    d_y, d_u, p, q = sys.d_y, sys.d_u, sys.p, sys.q
    n_y, n_u = p * d_y, q * d_u
    n = n_y + n_u
    A_cal = np.zeros((n, n))
    A_cal[:n_y, :n_y] = sys.companion_A11()
    if q:
        A_cal[:d_y, n_y:] = np.hstack(sys.B_coeffs)
        A_cal[n_y + d_u:, n_y:n - d_u] = np.eye((q - 1) * d_u)
    B_cal = np.zeros((n, d_y + d_u))
    B_cal[:d_y, :d_y] = sys.Sigma_W_sqrt
    if q:
        B_cal[n_y:n_y + d_u, d_y:] = np.eye(d_u)
    return A_cal, B_cal


def ss_augmented(sys: StateSpaceInnovation, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Recursion for xi_t = [X_t; Y_{t-1..t-p}; U_{t-1..t-p}] driven by [E_t; U_t].

    The trailing ``p (d_Y + d_U)`` coordinates of xi_t are the SSARX regressor Z_t.
    """
    if p < 1:
        raise ContractError("past horizon p must be >= 1")
    n, d_y, d_u = sys.d_x, sys.d_y, sys.d_u
    ny, nu = p * d_y, p * d_u
    N = n + ny + nu
    A = np.zeros((N, N))
    A[:n, :n] = sys.A
    A[n:n + d_y, :n] = sys.C
    A[n + d_y:n + ny, n:n + ny - d_y] = np.eye(ny - d_y)
    A[n + ny + d_u:, n + ny:N - d_u] = np.eye(nu - d_u)
    B = np.zeros((N, d_y + d_u))
    S = sys.Sigma_E_sqrt
    B[:n, :d_y] = sys.F @ S
    B[:n, d_y:] = sys.B
    B[n:n + d_y, :d_y] = S
    B[n + ny:n + ny + d_u, d_y:] = np.eye(d_u)
    return A, B


def _input_gamma(d_noise: int, d_u: int, sigma_u: float) -> np.ndarray:
    return np.diag(np.r_[np.ones(d_noise), np.full(d_u, sigma_u**2)])


def _cov_recursion(A, B, Gamma, T: int) -> np.ndarray:
    n = A.shape[0]
    Q = B @ Gamma @ B.T
    out = np.zeros((T + 1, n, n))
    for t in range(T):
        S = A @ out[t] @ A.T + Q
        out[t + 1] = 0.5 * (S + S.T)
    return out


def covariance_sequence(sys, T: int, p: int | None = None) -> np.ndarray:
    """Exact regressor covariances Sigma_0..Sigma_T (array of shape (T+1, n, n)).

    For an :class:`ArxSystem` the regressor is X_t; for a
    :class:`StateSpaceInnovation` it is the SSARX regressor Z_t with past
    horizon ``p`` (required). Shocks are taken with unit variance.
    """
    if T < 1:
        raise ContractError("covariance_sequence requires T >= 1")
    if isinstance(sys, ArxSystem):
        A, B = companion_embed(sys)
        return _cov_recursion(A, B, _input_gamma(sys.d_y, sys.d_u, sys.input_std_sigma_u), T)
    if p is None:
        raise ContractError("state-space covariance_sequence needs the past horizon p")
    A, B = ss_augmented(sys, p)
    full = _cov_recursion(A, B, _input_gamma(sys.d_y, sys.d_u, sys.input_std_sigma_u), T)
    n = sys.d_x
    return full[:, n:, n:]


def state_covariance_sequence(sys: StateSpaceInnovation, T: int) -> np.ndarray:
    """Sigma_{X,0..T} of the innovation-form state (X_0 = 0)."""
    Gamma = _input_gamma(sys.d_y, sys.d_u, sys.input_std_sigma_u)
    Bx = np.hstack([sys.F @ sys.Sigma_E_sqrt, sys.B])
    return _cov_recursion(sys.A, Bx, Gamma, T)


def markov_params(sys: StateSpaceInnovation, p: int) -> np.ndarray:
    """[C B, ..., C A_cl^{p-1} B, C F, ..., C A_cl^{p-1} F]."""
    if p < 1:
        raise ContractError("markov_params requires p >= 1")
    Acl = sys.A_cl
    left, right = [], []
    G = sys.C.copy()
    for _ in range(p):
        left.append(G @ sys.B)
        right.append(G @ sys.F)
        G = G @ Acl
    return np.hstack(left + right)


def innovation_from_standard(A, B, C, Sigma_W, Sigma_V, sigma_u: float = 1.0,
                             tol: float = 1e-12, max_iter: int = 100_000) -> StateSpaceInnovation:
    """Kalman-filter innovation form of S_{t+1} = A S_t + B U_t + W_t, Y_t = C S_t + V_t."""
    sol = numerics.riccati_fixed_point(A, C, Sigma_W, Sigma_V, tol=tol, max_iter=max_iter)
    try:
        S = np.linalg.cholesky(sol.Sigma_E)
    except np.linalg.LinAlgError as exc:
        raise ContractError("innovation covariance is not positive definite") from exc
    A = as_matrix(A, "A")
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return StateSpaceInnovation(A=A, B=B, C=as_matrix(C, "C"), F=sol.F_star, Sigma_E_sqrt=S,
                                input_std_sigma_u=sigma_u)


# ---------------------------------------------------------------------------
# causal operator


@dataclass(frozen=True, eq=False)
class CausalOperator:
    """Block lower-triangular Toeplitz map X_{1:T} = L V_{1:T}.

    Row block t, column block s (0-based, s <= t) is ``A_cal^{t-s} B_cal``.
    Blocks are grouped into a ``(T/k) x (T/k)`` grid of ``dk x pk`` blocks;
    ``decoupled`` keeps only the diagonal grid blocks.
    """

    A_cal: np.ndarray
    B_cal: np.ndarray
    T: int
    k: int
    decoupled: bool = False

    @property
    def d(self) -> int:
        return self.A_cal.shape[0]

    @property
    def m(self) -> int:
        return self.B_cal.shape[1]

    @property
    def block_rows(self) -> int:
        return self.T // self.k

    block_cols = block_rows

    @property
    def shape(self) -> tuple[int, int]:
        return self.T * self.d, self.T * self.m

    def block(self, i: int, j: int) -> np.ndarray:
        d, m, k = self.d, self.m, self.k
        out = np.zeros((d * k, m * k))
        if j > i or (self.decoupled and i != j):
            return out
        powers = [np.eye(d)]
        for _ in range(2 * k):
            powers.append(self.A_cal @ powers[-1])
        base = (i - j) * k
        for r in range(k):
            for c in range(k):
                lag = base + r - c
                if lag < 0:
                    continue
                Ap = powers[lag] if lag < len(powers) else np.linalg.matrix_power(self.A_cal, lag)
                out[r * d:(r + 1) * d, c * m:(c + 1) * m] = Ap @ self.B_cal
        return out

    @property
    def blocks(self) -> list[list[np.ndarray | None]]:
        n = self.block_rows
        return [[self.block(i, j) if j <= i and (not self.decoupled or i == j) else None
                 for j in range(n)] for i in range(n)]

    def block_diagonal(self) -> "CausalOperator":
        return CausalOperator(self.A_cal, self.B_cal, self.T, self.k, decoupled=True)

    def dense(self) -> np.ndarray:
        n, d, m, k = self.block_rows, self.d, self.m, self.k
        L = np.zeros(self.shape)
        for i in range(n):
            for j in range(i + 1):
                if self.decoupled and i != j:
                    continue
                L[i * d * k:(i + 1) * d * k, j * m * k:(j + 1) * m * k] = self.block(i, j)
        return L

    def apply(self, V: np.ndarray) -> np.ndarray:
        """L @ vec(V) for V of shape (T, m); returns shape (T, d)."""
        V = np.asarray(V, dtype=float).reshape(self.T, self.m)
        X = np.zeros((self.T, self.d))
        x = np.zeros(self.d)
        for t in range(self.T):
            if self.decoupled and t % self.k == 0:
                x = np.zeros(self.d)
            x = (self.A_cal @ x if t else x) + self.B_cal @ V[t]
            X[t] = x
        return X

    def apply_transpose(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(self.T, self.d)
        V = np.zeros((self.T, self.m))
        z = np.zeros(self.d)
        for t in range(self.T - 1, -1, -1):
            if self.decoupled and (t + 1) % self.k == 0:
                z = np.zeros(self.d)
            z = X[t] + self.A_cal.T @ z
            V[t] = self.B_cal.T @ z
        return V

    def op_norm(self) -> float:
        rows, cols = self.shape
        if rows * cols <= 4_000_000:
            return numerics.op_norm(self.dense())
        op = LinearOperator(
            (rows, cols),
            matvec=lambda v: self.apply(v).ravel(),
            rmatvec=lambda x: self.apply_transpose(x).ravel(),
            dtype=float,
        )
        s = svds(op, k=1, return_singular_vectors=False, tol=1e-10,
                 v0=np.ones(min(rows, cols)) / math.sqrt(min(rows, cols)))
        return float(s[0])


def causal_operator(A_cal, B_cal, T: int, k: int) -> CausalOperator:
    A_cal = as_matrix(A_cal, "A_cal")
    B_cal = as_matrix(B_cal, "B_cal")
    if B_cal.shape[0] != A_cal.shape[0]:
        raise DimensionError("B_cal rows must match A_cal")
    if k < 1 or T < 1 or T % k:
        raise ContractError(f"block size k={k} must divide horizon T={T}")
    return CausalOperator(A_cal, B_cal, int(T), int(k))


# ---------------------------------------------------------------------------
# simulation


def _arx_core(sys: ArxSystem, W: np.ndarray, U: np.ndarray) -> np.ndarray:
    T = W.shape[0]
    forcing = W @ sys.Sigma_W_sqrt.T
    for j, Bj in enumerate(sys.B_coeffs, start=1):
        if j < T:
            forcing[j:] += U[:-j] @ Bj.T
    if sys.d_y == 1:
        den = np.r_[1.0, -np.array([a[0, 0] for a in sys.A_coeffs])]
        return lfilter([1.0], den, forcing[:, 0])[:, None]
    Y = np.zeros_like(forcing)
    for t in range(T):
        acc = forcing[t].copy()
        for i, Ai in enumerate(sys.A_coeffs, start=1):
            if t - i >= 0:
                acc += Ai @ Y[t - i]
        Y[t] = acc
    return Y


def _ss_core(sys: StateSpaceInnovation, E: np.ndarray, U: np.ndarray) -> np.ndarray:
    T = E.shape[0]
    innov = E @ sys.Sigma_E_sqrt.T
    drive = U @ sys.B.T + innov @ sys.F.T
    if sys.d_x == 1:
        # x_{t+1} = a x_t + drive_t with x_1 = 0
        x = np.zeros(T)
        if T > 1:
            x[1:] = lfilter([1.0], [1.0, -sys.A[0, 0]], drive[:-1, 0])
        X = x[:, None]
    else:
        X = np.zeros((T, sys.d_x))
        for t in range(T - 1):
            X[t + 1] = sys.A @ X[t] + drive[t]
    return X @ sys.C.T + innov


def simulate(sys, noise: NoiseSpec, T: int, stream: np.random.Generator,
             restart_k: int | None = None) -> Trajectory:
    """Simulate T steps from zero initial conditions.

    Shocks (T x d_noise) are drawn first, then the Gaussian inputs
    (T x d_U, std ``sigma_u``). With ``restart_k`` the system is restarted
    from zero every ``restart_k`` steps while the shock stream runs on.
    """
    if T < 1:
        raise ContractError("simulate requires T >= 1")
    if restart_k is not None and (restart_k < 1 or T % restart_k):
        raise ContractError(f"restart block size {restart_k} must divide T={T}")
    W = sample_noise(noise, T, sys.d_noise, stream)
    U = sys.input_std_sigma_u * stream.standard_normal((T, sys.d_u))
    core = _arx_core if isinstance(sys, ArxSystem) else _ss_core
    if restart_k is None:
        Y = core(sys, W, U)
    else:
        Y = np.vstack([core(sys, W[s:s + restart_k], U[s:s + restart_k])
                       for s in range(0, T, restart_k)])
    return Trajectory(Y=Y, U=U, W=W, restart_block_k=restart_k)


def _lagged(Z: np.ndarray, lag: int, k: int | None) -> np.ndarray:
    out = np.zeros_like(Z)
    if lag < Z.shape[0]:
        out[lag:] = Z[:-lag]
    if k is not None:
        out[(np.arange(Z.shape[0]) % k) < lag] = 0.0
    return out


def regressors(traj: Trajectory, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack X_t = [Y_{t-1}, ..., Y_{t-p}, U_{t-1}, ..., U_{t-q}] for t = 1..T.

    Values before t = 1 (or before the start of a restart block) are zero.
    Returns ``(X, Y)`` with shapes ``(T, p d_Y + q d_U)`` and ``(T, d_Y)``.
    """
    if p < 0 or q < 0 or p + q < 1:
        raise ContractError("regressors needs p, q >= 0 and p + q >= 1")
    if traj.T <= max(p, q):
        raise ContractError(f"horizon T={traj.T} too short for lags p={p}, q={q}")
    k = traj.restart_block_k
    cols = [_lagged(traj.Y, i, k) for i in range(1, p + 1)]
    cols += [_lagged(traj.U, j, k) for j in range(1, q + 1)]
    return np.hstack(cols), traj.Y
