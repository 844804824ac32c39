"""Trilinear hexahedra on uniform structured grids.

Nodal fields are arrays of shape ``(nx, ny, nz, 3)``. Gradients are
evaluated at the 2x2x2 Gauss points of every element and returned with
shape ``(ex, ey, ez, 8, 3, 3)`` (component, derivative direction).
"""

import itertools

import numpy as np

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)
CORNERS = list(itertools.product((0, 1), repeat=3))


def _reference_derivatives():
    """dN_a/dr_k at the 8 Gauss points, reference cube [-1, 1]^3."""
    gauss = np.array(list(itertools.product(GAUSS_1D, repeat=3)))
    dn = np.zeros((8, 8, 3))
    for a, corner in enumerate(CORNERS):
        sign = 2.0 * np.array(corner) - 1.0
        for g, r in enumerate(gauss):
            f = 0.5 * (1.0 + sign * r)
            dn[g, a] = 0.5 * sign * np.array([f[1] * f[2], f[0] * f[2], f[0] * f[1]])
    values = np.zeros((8, 8))
    for a, corner in enumerate(CORNERS):
        sign = 2.0 * np.array(corner) - 1.0
        values[:, a] = np.prod(0.5 * (1.0 + sign * gauss), axis=1)
    return gauss, dn, values


_GAUSS, _DN_REF, _N_VALUES = _reference_derivatives()


class HexGrid:
    """Uniform grid of ``nodes = (nx, ny, nz)`` nodes with ``spacing = (hx, hy, hz)``."""

    def __init__(self, nodes, spacing, origin=(0.0, 0.0, 0.0)):
        self.nodes = tuple(int(n) for n in nodes)
        if min(self.nodes) < 2:
            raise ValueError("a hex grid needs at least two nodes per direction")
        self.spacing = np.asarray(spacing, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.elements = tuple(n - 1 for n in self.nodes)
        self.dn = _DN_REF * (2.0 / self.spacing)
        self.shape_values = _N_VALUES
        self.weight = float(np.prod(self.spacing)) / 8.0

    @property
    def n_elements(self):
        return int(np.prod(self.elements))

    def node_coordinates(self):
        axes = [self.origin[k] + self.spacing[k] * np.arange(self.nodes[k]) for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def gauss_coordinates(self):
        """Physical Gauss-point coordinates, shape ``(ex, ey, ez, 8, 3)``.

        Built from integer element indices so that grids shifted by whole
        cells reproduce identical fractional offsets.
        """
        idx = np.stack(np.meshgrid(*[np.arange(e) for e in self.elements], indexing="ij"), axis=-1)
        local = 0.5 * (1.0 + _GAUSS)
        return self.origin + (idx[..., None, :] + local) * self.spacing

    def _corner(self, field, corner):
        ex, ey, ez = self.elements
        i, j, k = corner
        return field[i:i + ex, j:j + ey, k:k + ez]

    def _gather(self, u):
        # (ex, ey, ez, 3, 8): nodal values of every element, corner-last
        return np.stack([self._corner(u, c) for c in CORNERS], axis=-1)

    @property
    def _dn_matrix(self):
        # (corner, gauss * direction)
        return self.dn.transpose(1, 0, 2).reshape(8, 24)

    def gradient(self, u):
        g = self._gather(u) @ self._dn_matrix
        g = g.reshape(self.elements + (3, 8, 3))
        return np.ascontiguousarray(g.transpose(0, 1, 2, 4, 3, 5))

    def interpolate(self, u):
        """Nodal field values at Gauss points, shape ``(ex, ey, ez, 8, 3)``."""
        v = self._gather(u) @ self.shape_values.T
        return np.ascontiguousarray(np.swapaxes(v, -1, -2))

    def _scatter(self, f):
        # f: (ex, ey, ez, 3, 8) per-element nodal contributions
        out = np.zeros(self.nodes + (3,))
        ex, ey, ez = self.elements
        for a, (i, j, k) in enumerate(CORNERS):
            out[i:i + ex, j:j + ey, k:k + ez] += f[..., a]
        return out

    def scatter_gradient(self, stress):
        """Adjoint of :meth:`gradient`: sum_g stress_g : dN_a/dx at each node."""
        s = stress.transpose(0, 1, 2, 4, 3, 5).reshape(self.elements + (3, 24))
        return self._scatter(s @ self._dn_matrix.T)

    def scatter_values(self, load):
        """Adjoint of :meth:`interpolate`."""
        return self._scatter(np.swapaxes(load, -1, -2) @ self.shape_values)


def _quad_reference():
    corners = list(itertools.product((0, 1), repeat=2))
    gauss = np.array(list(itertools.product(GAUSS_1D, repeat=2)))
    dn = np.zeros((4, 4, 2))
    values = np.zeros((4, 4))
    for a, corner in enumerate(corners):
        sign = 2.0 * np.array(corner) - 1.0
        f = 0.5 * (1.0 + sign * gauss)
        values[:, a] = f[:, 0] * f[:, 1]
        dn[:, a, 0] = 0.5 * sign[0] * f[:, 1]
        dn[:, a, 1] = 0.5 * sign[1] * f[:, 0]
    return corners, gauss, dn, values


QUAD_CORNERS, _QGAUSS, _QDN_REF, _QN_VALUES = _quad_reference()


class QuadGrid:
    """Bilinear quadrilaterals on a uniform 2D grid; vector fields have 3 components."""

    def __init__(self, nodes, spacing, origin=(0.0, 0.0)):
        self.nodes = tuple(int(n) for n in nodes)
        if min(self.nodes) < 2:
            raise ValueError("a quad grid needs at least two nodes per direction")
        self.spacing = np.asarray(spacing, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.elements = tuple(n - 1 for n in self.nodes)
        self.dn = _QDN_REF * (2.0 / self.spacing)
        self.shape_values = _QN_VALUES
        self.weight = float(np.prod(self.spacing)) / 4.0

    def node_coordinates(self):
        axes = [self.origin[k] + self.spacing[k] * np.arange(self.nodes[k]) for k in range(2)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def gauss_coordinates(self):
        idx = np.stack(np.meshgrid(*[np.arange(e) for e in self.elements], indexing="ij"), axis=-1)
        return self.origin + (idx[..., None, :] + 0.5 * (1.0 + _QGAUSS)) * self.spacing

    def _gather(self, v):
        ex, ey = self.elements
        return np.stack([v[i:i + ex, j:j + ey] for i, j in QUAD_CORNERS], axis=-1)

    def _scatter(self, f):
        out = np.zeros(self.nodes + (3,))
        ex, ey = self.elements
        for a, (i, j) in enumerate(QUAD_CORNERS):
            out[i:i + ex, j:j + ey] += f[..., a]
        return out

    def gradient(self, v):
        """Shape ``(ex, ey, 4, 3, 2)``."""
        g = self._gather(v) @ self.dn.transpose(1, 0, 2).reshape(4, 8)
        g = g.reshape(self.elements + (3, 4, 2))
        return np.ascontiguousarray(g.transpose(0, 1, 3, 2, 4))

    def interpolate(self, v):
        """Shape ``(ex, ey, 4, 3)``."""
        return np.ascontiguousarray(np.swapaxes(self._gather(v) @ self.shape_values.T, -1, -2))

    def scatter_gradient(self, stress):
        s = stress.transpose(0, 1, 3, 2, 4).reshape(self.elements + (3, 8))
        return self._scatter(s @ self.dn.transpose(1, 0, 2).reshape(4, 8).T)

    def scatter_values(self, load):
        return self._scatter(np.swapaxes(load, -1, -2) @ self.shape_values)
