import math

import numpy as np
import pytest

from robust_doa.lyapunov import (FixedLyapunov, LyapunovSOS, basis, check_full_rank,
                                 poly_eval)

Q_STAR = np.array([[0.3587, 0.9232], [1.0, 0.8249]])


def test_basis_sizes_and_order():
    b = basis(1, 2)
    assert b.r == 2 and b.exponents.tolist() == [[1], [2]]
    assert basis(2, 1).exponents.tolist() == [[1, 0], [0, 1]]
    b22 = basis(2, 2)
    assert b22.r == math.comb(4, 2) - 1 == 5
    assert b22.exponents.tolist() == [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    b33 = basis(3, 3)
    assert b33.r == math.comb(6, 3) - 1
    assert len({tuple(e) for e in b33.exponents}) == b33.r
    with pytest.raises(ValueError):
        basis(0, 2)
    with pytest.raises(ValueError):
        basis(10, 10, max_size=100)


def test_eval_examples():
    L = LyapunovSOS.from_matrix(np.eye(2), 1, 2)
    assert L([[0.0]])[0] == 0.0
    assert L([[2.0]])[0] == pytest.approx(20.0)


def test_optimum_coefficients():
    coeffs = LyapunovSOS.from_matrix(Q_STAR, 1, 2).coefficients()
    assert coeffs[(4,)] == pytest.approx(1.5327, abs=5e-4)
    assert coeffs[(3,)] == pytest.approx(2.3121, abs=5e-4)
    assert coeffs[(2,)] == pytest.approx(1.1286, abs=5e-4)


def test_full_rank_check():
    assert check_full_rank(np.eye(3))
    assert not check_full_rank(np.zeros((2, 2)))
    assert not check_full_rank(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert check_full_rank(Q_STAR)
    assert np.linalg.det(Q_STAR) == pytest.approx(0.3587 * 0.8249 - 0.9232, abs=1e-12)
    assert np.linalg.det(Q_STAR) == pytest.approx(-0.6273, abs=1e-4)


def test_positive_definite_on_random_points(rng):
    Q = rng.normal(size=(5, 5))
    assert check_full_rank(Q)
    L = LyapunovSOS.from_matrix(Q, 2, 2)
    X = rng.uniform(-3, 3, (10_000, 2))
    assert np.all(L(X) > 0)


def test_expansion_matches_quadratic_form(rng):
    for n, d in [(1, 2), (2, 2), (2, 3), (3, 2)]:
        b = basis(n, d)
        L = LyapunovSOS(b, rng.normal(size=(b.r, b.r)))
        X = rng.uniform(-2, 2, (2000, n))
        direct = L(X)
        expanded = poly_eval(L.coefficients(), X)
        assert np.allclose(expanded, direct, rtol=1e-10, atol=1e-12)


def test_scaling_property(rng):
    b = basis(2, 2)
    Q = rng.normal(size=(b.r, b.r))
    X = rng.uniform(-2, 2, (10_000, 2))
    base = LyapunovSOS(b, Q)(X)
    for c in (-3.0, 0.1, 7.5):
        scaled = LyapunovSOS(b, c * Q)(X)
        assert np.max(np.abs(scaled - c * c * base) / (c * c * base)) < 1e-10


def test_fixed_candidate():
    L = FixedLyapunov.parse("x1^2", 1)
    assert np.array_equal(L([[0.0], [3.0]]), [0.0, 9.0])
    with pytest.raises(ValueError, match="origin"):
        FixedLyapunov.parse("x1^2 + 1", 1)
    bad = FixedLyapunov.parse("x1^3", 1)
    with pytest.raises(ValueError, match="positive"):
        bad([[-1.0]])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        LyapunovSOS(basis(1, 2), np.eye(3))
