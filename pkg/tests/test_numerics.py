from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from finsysid import numerics
from finsysid.errors import ContractError, ConvergenceError, DimensionError, SingularityError

finite = st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False)


def sym_matrices(n_max=5):
    return st.integers(1, n_max).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=finite).map(lambda M: (M + M.T) / 2)
    )


# --- sym_eig_extremes -------------------------------------------------------

def test_eig_extremes_examples():
    assert numerics.sym_eig_extremes(np.eye(3)) == (1.0, 1.0)
    assert numerics.sym_eig_extremes(np.diag([2.0, 5.0])) == pytest.approx((2.0, 5.0))
    assert numerics.sym_eig_extremes([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx((1.0, 3.0))


def test_eig_extremes_rejects_bad_input():
    with pytest.raises(DimensionError):
        numerics.sym_eig_extremes(np.ones((2, 3)))
    with pytest.raises(ContractError):
        numerics.sym_eig_extremes([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ContractError):
        numerics.sym_eig_extremes([[np.nan, 0.0], [0.0, 1.0]])


@given(sym_matrices(), st.floats(-5, 5))
def test_eig_shift_property(M, c):
    lo, hi = numerics.sym_eig_extremes(M)
    lo2, hi2 = numerics.sym_eig_extremes(M + c * np.eye(M.shape[0]))
    scale = max(1.0, abs(lo), abs(hi), abs(c))
    assert lo2 == pytest.approx(lo + c, abs=1e-9 * scale)
    assert hi2 == pytest.approx(hi + c, abs=1e-9 * scale)


# --- pinv -------------------------------------------------------------------

def test_pinv_examples():
    np.testing.assert_allclose(numerics.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    np.testing.assert_allclose(numerics.pinv(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(numerics.pinv([[1.0], [2.0]]), [[0.2, 0.4]])


def test_pinv_negative_tol_rejected():
    with pytest.raises(ContractError):
        numerics.pinv(np.eye(2), tol=-1.0)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**31))
@settings(max_examples=60)
def test_pinv_penrose_identities(m, n, r, seed):
    rng = np.random.default_rng(seed)
    r = min(r, m, n)
    A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    P = numerics.pinv(A)
    tol = 1e-8 * max(1.0, np.abs(A).max()) ** 2
    np.testing.assert_allclose(A @ P @ A, A, atol=tol)
    np.testing.assert_allclose(P @ A @ P, P, atol=1e-8 * max(1.0, np.abs(P).max()) ** 2)
    np.testing.assert_allclose((A @ P).T, A @ P, atol=1e-8)
    np.testing.assert_allclose((P @ A).T, P @ A, atol=1e-8)


# --- logdet -----------------------------------------------------------------

def test_logdet_examples():
    assert numerics.logdet_psd(np.eye(4)) == 0.0
    assert numerics.logdet_psd(np.diag([math.e, math.e])) == pytest.approx(2.0, rel=1e-12)
    assert numerics.logdet_psd([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(math.log(3.0), rel=1e-12)


def test_logdet_singular_raises():
    with pytest.raises(SingularityError):
        numerics.logdet_psd(np.diag([1.0, 0.0]))
    with pytest.raises(SingularityError):
        numerics.logdet_psd(-np.eye(2))


# --- gramian_sum ------------------------------------------------------------

def test_gramian_examples():
    np.testing.assert_allclose(numerics.gramian_sum(np.zeros((2, 2)), np.eye(2), 3), 3 * np.eye(2))
    np.testing.assert_allclose(numerics.gramian_sum([[0.5]], [[1.0]], 2), [[2.25]])
    np.testing.assert_allclose(numerics.gramian_sum(np.eye(2), np.eye(2), 3), 6 * np.eye(2))


def test_gramian_matches_double_sum():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3)) * 0.4
    Q = rng.standard_normal((3, 3))
    Q = Q @ Q.T
    T = 7
    direct = sum(np.linalg.matrix_power(A, k) @ Q @ np.linalg.matrix_power(A, k).T
                 for t in range(1, T + 1) for k in range(t))
    np.testing.assert_allclose(numerics.gramian_sum(A, Q, T), direct, rtol=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 12))
@settings(max_examples=40)
def test_gramian_psd_and_monotone(seed, T):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    A /= max(1.0, numerics.spectral_radius(A))
    R = rng.standard_normal((3, 2))
    Q = R @ R.T
    G1 = numerics.gramian_sum(A, Q, T)
    G2 = numerics.gramian_sum(A, Q, T + 1)
    scale = max(1.0, np.abs(G2).max())
    assert np.linalg.eigvalsh(G1)[0] >= -1e-9 * scale
    assert np.linalg.eigvalsh(G2 - G1)[0] >= -1e-9 * scale


def test_gramian_rejects_nonconforming():
    with pytest.raises(DimensionError):
        numerics.gramian_sum(np.eye(2), np.eye(3), 2)
    with pytest.raises(ContractError):
        numerics.gramian_sum(np.eye(2), np.eye(2), 0)


# --- Riccati ----------------------------------------------------------------

def test_riccati_zero_dynamics():
    C = np.array([[1.0, 2.0]])
    SW = np.diag([1.0, 3.0])
    sol = numerics.riccati_fixed_point(np.zeros((2, 2)), C, SW, [[0.5]])
    np.testing.assert_allclose(sol.P_star, SW)
    np.testing.assert_allclose(sol.F_star, 0.0)
    np.testing.assert_allclose(sol.Sigma_E, C @ SW @ C.T + 0.5)


def test_riccati_no_process_noise():
    sol = numerics.riccati_fixed_point([[0.5]], [[1.0]], [[0.0]], [[1.0]])
    assert sol.P_star[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert sol.F_star[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert sol.Sigma_E[0, 0] == pytest.approx(1.0)


def test_riccati_scalar_against_quadratic_root():
    # p = 0.81 p + 1 - 0.81 p^2 / (p + 1)  <=>  p^2 - 0.81 p - 1 = 0
    roots = np.roots([1.0, -0.81, -1.0])
    p_star = float(max(roots.real))
    sol = numerics.riccati_fixed_point([[0.9]], [[1.0]], [[1.0]], [[1.0]])
    assert sol.P_star[0, 0] == pytest.approx(p_star, rel=1e-10)
    assert sol.F_star[0, 0] == pytest.approx(0.9 * p_star / (p_star + 1.0), rel=1e-10)
    assert sol.Sigma_E[0, 0] == pytest.approx(p_star + 1.0, rel=1e-10)
    assert sol.residual <= 1e-12


def test_riccati_matches_scipy_dare():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((3, 3))
    A *= 0.95 / numerics.spectral_radius(A)
    C = rng.standard_normal((2, 3))
    SW = np.eye(3) * 0.5
    SV = np.eye(2)
    sol = numerics.riccati_fixed_point(A, C, SW, SV)
    P = scipy.linalg.solve_discrete_are(A.T, C.T, SW, SV)
    np.testing.assert_allclose(sol.P_star, P, rtol=1e-8, atol=1e-10)
    # Sigma_E - Sigma_V = C P C^T is PSD
    assert np.linalg.eigvalsh(sol.Sigma_E - SV)[0] >= -1e-12
    # substituting back reproduces P
    np.testing.assert_allclose(numerics.riccati_operator(sol.P_star, A, C, SW, SV), sol.P_star, atol=1e-11)
    assert numerics.spectral_radius(A - sol.F_star @ C) < 1


def test_riccati_nonconvergence_carries_residual():
    with pytest.raises(ConvergenceError) as info:
        numerics.riccati_fixed_point([[0.99]], [[1.0]], [[1.0]], [[1.0]], max_iter=3)
    assert info.value.residual > 0
    assert info.value.iterations == 3


def test_riccati_requires_pd_measurement_noise():
    with pytest.raises(ContractError):
        numerics.riccati_fixed_point([[0.5]], [[1.0]], [[1.0]], [[0.0]])


def test_spectral_radius_examples():
    assert numerics.spectral_radius([[0.9]]) == pytest.approx(0.9)
    assert numerics.spectral_radius([[0.0, -1.0], [1.0, 0.0]]) == pytest.approx(1.0)
    comp = np.array([[0.5, 0.3], [1.0, 0.0]])
    assert numerics.spectral_radius(comp) == pytest.approx((0.5 + math.sqrt(0.25 + 1.2)) / 2)
