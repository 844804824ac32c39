"""3x2 / 3x3 deformation-gradient blocks.

Matrices are plain float64 numpy arrays of shape ``(..., 3, 2)`` and
``(..., 3, 3)``; rows are spatial components, columns in-plane (and
transverse) derivatives. Leading axes broadcast, so every helper works on a
single matrix or on a stack of quadrature-point values.
"""

import numpy as np


def mat3x2(entries=None):
    if entries is None:
        return np.zeros((3, 2))
    m = np.asarray(entries, dtype=float).reshape(3, 2)
    if not np.all(np.isfinite(m)):
        raise ValueError("Mat3x2 entries must be finite")
    return m


def mat3x3(entries=None):
    if entries is None:
        return np.zeros((3, 3))
    m = np.asarray(entries, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise ValueError("Mat3x3 entries must be finite")
    return m


def planar_embedding():
    """The 3x2 block ((1,0),(0,1),(0,0)), i.e. D_alpha of (x1, x2, 0)."""
    return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def unit(i, j):
    """e_i (x) e_j as a 3x2 block, zero-based indices."""
    m = np.zeros((3, 2))
    m[i, j] = 1.0
    return m


def compose(xi_bar, z):
    """Append ``z`` as third column: (xi_bar | z)."""
    xi_bar = np.asarray(xi_bar, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.concatenate([xi_bar, z[..., None]], axis=-1)


def frobenius(m):
    m = np.asarray(m, dtype=float)
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))
