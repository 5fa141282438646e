import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ligme.fused import build_D, build_synthesis
from ligme.gme import (
    DesignError, GmeDesign, GmePenalty, bivariate_subspace_basis, design_gme_bivariate,
    design_gme_direct, gme_eval, gme_penalty_restriction_check, verify_overall_convexity,
)
from ligme.linops import DenseMatrix, Identity, Scaled, Zero
from ligme.prox import DirectSum, Indicator, L1Norm, Singleton

from oracles import dense_bivariate_quadratic, grid_gme_2d, huber_gme_scalar


def test_gme_zero_matrix_is_base_penalty(rng):
    z = rng.standard_normal(5)
    assert gme_eval(GmePenalty(L1Norm(5), Zero(5)), z) == pytest.approx(np.abs(z).sum())
    assert gme_eval(GmePenalty(L1Norm(3), DenseMatrix(np.eye(3))), np.zeros(3)) == 0.0


def test_gme_scalar_closed_form():
    p = GmePenalty(L1Norm(1), DenseMatrix([[1.0]]))
    assert gme_eval(p, np.array([2.0])) == pytest.approx(0.5, abs=1e-8)
    for z, b in [(0.3, 1.0), (-1.7, 0.6), (4.0, 2.0), (0.05, 3.0)]:
        p = GmePenalty(L1Norm(1), DenseMatrix([[b]]))
        assert gme_eval(p, np.array([z])) == pytest.approx(huber_gme_scalar(z, b), abs=1e-8)


def test_gme_scalar_grid_crosscheck():
    v = np.linspace(-10, 10, 2_000_001)
    inner = np.min(np.abs(v) + 0.5 * (2.0 - v) ** 2)
    assert 2.0 - inner == pytest.approx(0.5, abs=1e-6)


def test_gme_2d_grid_oracle(rng):
    for _ in range(20):
        B = rng.standard_normal((2, 2))
        z = 2 * rng.standard_normal(2)
        val = gme_eval(GmePenalty(L1Norm(2), DenseMatrix(B)), z)
        assert val == pytest.approx(grid_gme_2d(z, B), abs=1e-4)


def test_gme_requires_finite_base():
    p = GmePenalty(DirectSum([Indicator(Singleton(np.zeros(1))), L1Norm(1)]), Identity(2))
    with pytest.raises(ValueError, match="not finite"):
        gme_eval(p, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        GmePenalty(L1Norm(2), Identity(3))


def test_gme_batched_columns(rng):
    p = GmePenalty(L1Norm(3), DenseMatrix(rng.standard_normal((3, 3))))
    Z = rng.standard_normal((3, 4))
    vals = gme_eval(p, Z)
    assert np.allclose(vals, [gme_eval(p, Z[:, k]) for k in range(4)], atol=1e-9)


def test_verify_convexity_examples(rng):
    A = DenseMatrix(rng.standard_normal((6, 4)))
    lam = np.linalg.eigvalsh(A.materialize().T @ A.materialize())[0]
    assert verify_overall_convexity(A, [(1.0, Zero(4), Identity(4))]) == pytest.approx(lam)
    one = Identity(1)
    B = DenseMatrix([[math.sqrt(0.99)]])
    assert verify_overall_convexity(one, [(1.0, B, one)], 1.0) == pytest.approx(0.01, abs=1e-12)


def test_design_direct():
    B = design_gme_direct(Identity(2), 1.0, 1.0, 0.99)
    assert np.allclose(B.materialize(), math.sqrt(0.99) * np.eye(2))
    assert np.allclose(design_gme_direct(Identity(2), 1.0, 1.0, 1e-12).materialize(), 0, atol=1e-5)
    with pytest.raises(ValueError):
        design_gme_direct(Identity(2), 1.0, 0.0, 0.5)


def test_design_direct_certificate(rng):
    for _ in range(10):
        A = DenseMatrix(rng.standard_normal((8, 5)))
        mu, mu1 = rng.uniform(0.2, 2, size=2)
        B = design_gme_direct(A, mu, mu1, 0.99)
        cert = verify_overall_convexity(A, [(mu1, B, Identity(5))], mu)
        lam = np.linalg.eigvalsh(A.materialize().T @ A.materialize())[0]
        assert cert == pytest.approx(0.01 * lam, abs=1e-8)
        assert cert >= -1e-10


def _design(N, L, mu1=0.3, mu2=0.9, omega=(0.5, 0.5), A=None, **kw):
    A = Identity(N) if A is None else A
    return design_gme_bivariate(A, build_D(N), build_synthesis(N, L), 1.0, mu1, mu2,
                                theta=0.99, omega1=omega[0], omega2=omega[1], **kw)


@pytest.mark.parametrize("N,L", [(10, 3), (20, 3)])
def test_design_bivariate_certified_by_dense_oracle(N, L):
    des = _design(N, L)
    assert des.certificate >= -1e-8
    Q = dense_bivariate_quadratic(np.eye(N), N, L, 1.0, 0.3, 0.9,
                                  des.B1.materialize(), des.B2.materialize())
    basis = bivariate_subspace_basis(N, L * (N - L))
    U, _ = np.linalg.qr(basis)
    lam = np.linalg.eigvalsh(U.T @ Q @ U)[0]
    assert lam >= -1e-8
    assert des.certificate == pytest.approx(lam, abs=1e-9)


def test_design_bivariate_structure():
    N, L = 10, 3
    des = _design(N, L, omega=(0.0, 1.0), mu1=0.0, mu2=1.0)
    assert isinstance(des.B1, Zero)
    B2 = des.B2.materialize()
    assert not B2[:, :N - 1].any()
    des2 = _design(N, L, omega=(0.5, 0.5))
    assert not des2.B1.materialize()[:, :N - 1].any()
    assert (des2.omega1, des2.omega2, des2.theta) == (0.5, 0.5, 0.99)


def test_design_bivariate_is_strictly_nonconvex_on_full_space():
    # certification on the full space fails; the subspace is what makes it convex
    N, L = 10, 3
    des = _design(N, L)
    Q = dense_bivariate_quadratic(np.eye(N), N, L, 1.0, 0.3, 0.9,
                                  des.B1.materialize(), des.B2.materialize())
    assert np.linalg.eigvalsh(Q)[0] < -1e-3


def test_design_factors_share_gram():
    N, L = 12, 3
    a = _design(N, L, factor="sqrt")
    b = _design(N, L, factor="direct")
    for Ba, Bb in ((a.B1, b.B1), (a.B2, b.B2)):
        Ma, Mb = Ba.materialize(), Bb.materialize()
        assert np.allclose(Ma.T @ Ma, Mb.T @ Mb, atol=1e-9)
    assert a.gram_coefficients == pytest.approx(b.gram_coefficients)


def test_design_general_operator_backtracks(rng):
    N, L = 10, 3
    A = DenseMatrix(rng.standard_normal((N, N)))
    des = _design(N, L, A=A)
    assert des.scale < 1.0
    assert des.certificate >= -1e-8
    Q = dense_bivariate_quadratic(A.materialize(), N, L, 1.0, 0.3, 0.9,
                                  des.B1.materialize(), des.B2.materialize())
    U, _ = np.linalg.qr(bivariate_subspace_basis(N, L * (N - L)))
    assert np.linalg.eigvalsh(U.T @ Q @ U)[0] >= -1e-8


def test_design_errors():
    with pytest.raises(ValueError):
        _design(10, 3, omega=(0.7, 0.7))
    with pytest.raises(ValueError):
        design_gme_bivariate(Identity(10), build_D(10), build_synthesis(10, 3), 1.0, 0.3, 0.9,
                             theta=1.0)
    A = DenseMatrix(np.random.default_rng(0).standard_normal((10, 10)))
    with pytest.raises(DesignError):
        _design(10, 3, A=A, max_halvings=2)


def test_design_json_round_trip():
    des = _design(8, 2)
    data = json.loads(des.to_json())
    assert data["N"] == 8 and data["L"] == 2 and data["theta"] == 0.99
    assert data["omega"] == [0.5, 0.5] and data["certificate"] == des.certificate
    back = GmeDesign.from_dict(data)
    assert np.allclose(back.B1.materialize(), des.B1.materialize(), atol=1e-14)
    assert np.allclose(back.B2.materialize(), des.B2.materialize(), atol=1e-14)
    assert back.gram_coefficients is None


def test_restriction_check_examples(rng):
    N, L = 20, 3
    K = L * (N - L)
    assert gme_penalty_restriction_check(Zero(N - 1 + K), np.full(N, 2.0), np.zeros(K)) == (0, 0)
    d = rng.standard_normal(K)
    first, second = gme_penalty_restriction_check(Zero(N - 1 + K), np.zeros(N), d)
    assert first == pytest.approx(np.abs(d).sum()) and second == pytest.approx(np.abs(d).sum())
    with pytest.raises(ValueError):
        gme_penalty_restriction_check(Zero(N - 1 + K), np.arange(N, dtype=float), d)


def test_restriction_identity_random(rng):
    N, L = 20, 3
    K = L * (N - L)
    des = _design(N, L)
    for _ in range(20):
        b = np.full(N, rng.standard_normal())
        d = rng.standard_normal(K) * (rng.random(K) < 0.3)
        first, second = gme_penalty_restriction_check(des.B2, b, d)
        assert abs(first - second) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3))
def test_gme_bounds_and_monotone_in_scale(seed, dim):
    rng = np.random.default_rng(seed)
    B = DenseMatrix(rng.standard_normal((dim, dim)))
    z = 2 * rng.standard_normal(dim)
    c = float(rng.uniform(0, 1))
    full = gme_eval(GmePenalty(L1Norm(dim), B), z, inner_tol=1e-13)
    scaled = gme_eval(GmePenalty(L1Norm(dim), Scaled(c, B)), z, inner_tol=1e-13)
    assert -1e-9 <= full <= np.abs(z).sum() + 1e-9
    # a smaller matrix subtracts less
    assert scaled >= full - 1e-8
