"""Small complex linear-algebra helpers shared across the package.

Positive-definite systems are handled through Cholesky factorizations
(never explicit inverses), and log-determinants through the Cholesky
diagonal.
"""

import numpy as np
import scipy.linalg as sla


def crandn(rng, shape):
    """Circularly-symmetric complex Gaussian entries, zero mean, unit variance.

    Real and imaginary parts are each N(0, 1/2).
    """
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def hermitian_part(a):
    return 0.5 * (a + a.conj().T)


def is_hermitian(a, tol):
    return bool(np.all(np.abs(a - a.conj().T) <= tol))


def chol_logdet(a):
    """log det of a Hermitian positive definite matrix (natural log)."""
    a = np.asarray(a)
    if a.shape[0] == 0:
        return 0.0
    c = np.linalg.cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(c).real)))


def solve_psd(a, b):
    """Solve a @ x = b for Hermitian positive definite a."""
    c, low = sla.cho_factor(a, lower=True, check_finite=False)
    return sla.cho_solve((c, low), b, check_finite=False)


def min_eigval(a):
    """Smallest eigenvalue of the Hermitian part of a."""
    return float(np.linalg.eigvalsh(hermitian_part(np.asarray(a)))[0])


def vec(a):
    """Column-major (column-stacking) vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(x, rows, cols):
    """Inverse of :func:`vec`."""
    return np.asarray(x).reshape(rows, cols, order="F")
