import math

import numpy as np
import pytest

from engine import sh


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_basis_columns_above_degree_are_zero(degree):
    basis = sh.sh_basis(fibonacci_sphere(50), degree)
    assert basis.shape == (50, 16)
    used = sh.coeff_count(degree)
    assert np.all(basis[:, used:] == 0.0)
    assert np.all(basis[:, 0] == sh.SH_C0)


def test_basis_is_orthonormal_on_the_sphere():
    dirs = fibonacci_sphere(40000)
    basis = sh.sh_basis(dirs, 3)
    gram = 4.0 * math.pi * (basis.T @ basis) / dirs.shape[0]
    assert np.allclose(gram, np.eye(16), atol=5e-3)


def test_degree1_sign_convention():
    basis = sh.sh_basis(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), 1)
    assert basis[0, 3] == pytest.approx(-sh.SH_C1)
    assert basis[1, 1] == pytest.approx(-sh.SH_C1)
    assert basis[2, 2] == pytest.approx(sh.SH_C1)


def test_stack_coefficients_layout():
    dc = np.array([[1.0, 2.0, 3.0]])
    rest = np.arange(45, dtype=np.float64).reshape(1, 45)
    coeffs = sh.stack_coefficients(dc, rest)
    assert coeffs.shape == (1, 3, 16)
    assert list(coeffs[0, :, 0]) == [1.0, 2.0, 3.0]
    assert coeffs[0, 1, 1] == 15.0
    assert coeffs[0, 2, 15] == 44.0


def test_evaluate_dc_only():
    dc = np.array([[0.5, -0.25, 1.0]])
    coeffs = sh.stack_coefficients(dc, np.zeros((1, 45)))
    color = sh.evaluate(coeffs, sh.sh_basis(np.array([[0.0, 0.6, 0.8]]), 3))
    assert np.allclose(color, dc * sh.SH_C0)


def test_degree3_columns():
    assert sh.DEGREE3_COLUMNS == slice(9, 16)
    assert sh.coeff_count(3) - sh.coeff_count(2) == 7
