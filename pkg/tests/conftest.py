import numpy as np
import pytest
from numpy.polynomial.legendre import Legendre, leggauss


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def shen_poly(k: int):
    """Independent realization of the modal basis via numpy's Legendre
    polynomial objects (used as the oracle against the package's recurrences)."""
    g = 1.0 / np.sqrt(4.0 * k + 6.0)
    return (Legendre.basis(k) - Legendre.basis(k + 2)) * g


def quad_gram(order: int, deriv: bool = False, n_quad: int | None = None) -> np.ndarray:
    """Brute-force Gram matrix of the modal basis (or its derivatives) on
    [-1, 1] by Gauss quadrature: the oracle for mass_1d / stiffness_1d."""
    n_quad = n_quad or order + 2
    x, w = leggauss(n_quad)
    funcs = []
    for k in range(order - 1):
        p = shen_poly(k)
        funcs.append(p.deriv()(x) if deriv else p(x))
    funcs = np.array(funcs)
    return np.einsum("q,mq,kq->mk", w, funcs, funcs)
