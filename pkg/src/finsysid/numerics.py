"""Dense linear-algebra helpers shared by the rest of the package.

All functions are pure and accept anything ``np.asarray`` understands.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ConvergenceError, DimensionError, SingularityError

SYMMETRY_RTOL = 1e-10


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (scalars become 1x1)."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractError(f"{name} contains non-finite entries")
    return A


def _square(M, name: str) -> np.ndarray:
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def symmetrize(M, name: str = "matrix") -> np.ndarray:
    """Return (M + M^T)/2 after checking M is symmetric to relative 1e-10."""
    A = _square(M, name)
    scale = max(np.max(np.abs(A), initial=0.0), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise ContractError(f"{name} is not symmetric within relative tolerance {SYMMETRY_RTOL}")
    return 0.5 * (A + A.T)


def sym_eig_extremes(M) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(symmetrize(M))
    return float(w[0]), float(w[-1])


def lambda_min(M) -> float:
    return sym_eig_extremes(M)[0]


def lambda_max(M) -> float:
    return sym_eig_extremes(M)[1]


def op_norm(M) -> float:
    """Spectral norm (largest singular value)."""
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def default_pinv_tol(M) -> float:
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return max(A.shape) * np.finfo(float).eps * op_norm(A)


def pinv(M, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values ``<= tol`` are treated as zero. The default cutoff is
    ``max(rows, cols) * eps * sigma_1``.
    """
    A = as_matrix(M)
    if tol is None:
        tol = default_pinv_tol(A)
    if tol < 0:
        raise ContractError("pinv tolerance must be nonnegative")
    if A.size == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > tol
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def matrix_rank(M, tol: float | None = None) -> int:
    A = as_matrix(M)
    if A.size == 0:
        return 0
    if tol is None:
        tol = default_pinv_tol(A)
    return int(np.sum(np.linalg.svd(A, compute_uv=False) > tol))


def logdet_psd(M) -> float:
    """Log-determinant of a symmetric positive definite matrix.

    Raises :class:`SingularityError` when the matrix is not strictly PD; a
    ``-inf`` result is never returned.
    """
    A = symmetrize(M)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("logdet_psd: matrix is not positive definite") from exc
    d = np.diag(L)
    if np.any(d <= 0):
        raise SingularityError("logdet_psd: matrix is not positive definite")
    return float(2.0 * np.sum(np.log(d)))


def psd_sqrt(M) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative round-off eigenvalues clipped)."""
    w, V = np.linalg.eigh(symmetrize(M))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gramian_sum(A, Q, T: int) -> np.ndarray:
    """sum_{t=1}^{T} sum_{k=0}^{t-1} A^k Q (A^T)^k.

    Uses G_1 = Q, G_{t+1} = A G_t A^T + Q, accumulating G_1 + ... + G_T.
    """
    A = _square(A, "A")
    Q = _square(Q, "Q")
    if Q.shape != A.shape:
        raise DimensionError(f"Q shape {Q.shape} does not conform to A shape {A.shape}")
    if T < 1:
        raise ContractError("gramian_sum requires T >= 1")
    G = Q.copy()
    total = G.copy()
    for _ in range(T - 1):
        G = A @ G @ A.T + Q
        total += G
    return 0.5 * (total + total.T)


def spectral_radius(A) -> float:
    A = _square(A, "A")
    if A.size == 0:
        return 0.0
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        from .errors import NumericError

        raise NumericError("eigenvalue computation failed") from exc
    return float(np.max(np.abs(ev)))


@dataclass(frozen=True)
class RiccatiSolution:
    P_star: np.ndarray
    F_star: np.ndarray
    Sigma_E: np.ndarray
    residual: float
    iterations: int


def riccati_operator(P, A, C, Sigma_W, Sigma_V) -> np.ndarray:
    """RIC(P) = A P A^T + Sigma_W - A P C^T (C P C^T + Sigma_V)^{-1} C P A^T."""
    S = C @ P @ C.T + Sigma_V
    APC = A @ P @ C.T
    R = A @ P @ A.T + Sigma_W - APC @ np.linalg.solve(S, APC.T)
    return 0.5 * (R + R.T)


def kalman_gain(P, A, C, Sigma_V) -> np.ndarray:
    """Predictor gain A P C^T (C P C^T + Sigma_V)^{-1}.

    Sign convention: this is the gain for which A - F C is the (stable)
    one-step predictor matrix, i.e. X_{t+1} = A X_t + B U_t + F e_t.
    """
    S = C @ P @ C.T + Sigma_V
    return np.linalg.solve(S.T, (A @ P @ C.T).T).T


def riccati_fixed_point(
    A,
    C,
    Sigma_W,
    Sigma_V,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> RiccatiSolution:
    """Solve P = RIC(P) by fixed-point iteration from P_0 = Sigma_W.

    Detectability/stabilizability are not checked; failure to reach
    ``||P - RIC(P)||_op <= tol`` within ``max_iter`` raises
    :class:`ConvergenceError`.
    """
    A = _square(A, "A")
    C = as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
    Sigma_W = symmetrize(Sigma_W, "Sigma_W")
    Sigma_V = symmetrize(Sigma_V, "Sigma_V")
    if Sigma_W.shape != (n, n) or Sigma_V.shape != (C.shape[0], C.shape[0]):
        raise DimensionError("noise covariances do not conform to (A, C)")
    if lambda_min(Sigma_V) <= 0:
        raise ContractError("Sigma_V must be positive definite")

    P = Sigma_W.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        P_next = riccati_operator(P, A, C, Sigma_W, Sigma_V)
        residual = op_norm(P_next - P)
        P = P_next
        if residual <= tol:
            break
    else:
        raise ConvergenceError("Riccati fixed-point iteration did not converge", residual, max_iter)

    residual = op_norm(P - riccati_operator(P, A, C, Sigma_W, Sigma_V))
    F = kalman_gain(P, A, C, Sigma_V)
    Sigma_E = C @ P @ C.T + Sigma_V
    return RiccatiSolution(
        P_star=P,
        F_star=F,
        Sigma_E=0.5 * (Sigma_E + Sigma_E.T),
        residual=float(residual),
        iterations=it,
    )
