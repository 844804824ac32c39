"""Limiting 2D membrane problem.

Minimizes ``2 * int W_hom(x_alpha; D_alpha v) - int r . v`` over bilinear
fields ``v`` with ``v = (x_alpha, 0)`` on the boundary of a rectangle,
where ``r = fbar + g_plus + g_minus`` is the reduced load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import LineSearchStall, NonConvergence
from .fem import QuadGrid
from .optimize import MinimizeOptions, lbfgs

FD_STEP = 1e-4


class MembraneMesh:
    def __init__(self, n_x=8, n_y=8, domain=((0.0, 1.0), (0.0, 1.0))):
        (x0, x1), (y0, y1) = domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("membrane domain must have positive area")
        if n_x < 2 or n_y < 2:
            raise ValueError("membrane mesh needs n_x, n_y >= 2")
        self.n_x, self.n_y = int(n_x), int(n_y)
        self.domain = ((float(x0), float(x1)), (float(y0), float(y1)))
        self.grid = QuadGrid((n_x + 1, n_y + 1), ((x1 - x0) / n_x, (y1 - y0) / n_y), (x0, y0))
        self.free = np.zeros((n_x + 1, n_y + 1), dtype=bool)
        self.free[1:-1, 1:-1] = True

    @property
    def area(self):
        (x0, x1), (y0, y1) = self.domain
        return (x1 - x0) * (y1 - y0)

    def coordinates(self):
        return self.grid.node_coordinates()

    def affine_state(self):
        """Boundary-compatible field v = (x_alpha, 0) at every node."""
        x = self.coordinates()
        return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)

    def to_dict(self):
        return {"n_x": self.n_x, "n_y": self.n_y, "domain": [list(self.domain[0]), list(self.domain[1])]}


@dataclass
class LoadSpec:
    """Body force ``f(x) -> R^3`` on the rescaled film and tractions on its faces.

    Each entry is a vectorized callable or None (zero). ``f`` takes points
    of shape (N, 3); ``g_plus`` / ``g_minus`` take in-plane points (N, 2).
    """

    f: object = None
    g_plus: object = None
    g_minus: object = None


class AffineLoad:
    """Closed-form load ``const + x1 a + x2 b (+ x3 d)``, vectorized over points.

    Works for in-plane points (N, 2) and film points (N, 3); the x3 term is
    ignored for in-plane points.
    """

    def __init__(self, const=(0.0, 0.0, 0.0), x1=None, x2=None, x3=None):
        self.const = np.asarray(const, dtype=float)
        self.terms = [None if t is None else np.asarray(t, dtype=float) for t in (x1, x2, x3)]

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        out = np.broadcast_to(self.const, points.shape[:-1] + (3,)).copy()
        for k, t in enumerate(self.terms):
            if t is not None and k < points.shape[-1]:
                out += points[..., k:k + 1] * t
        return out

    def to_dict(self):
        d = {"const": self.const.tolist()}
        for name, t in zip(("x1", "x2", "x3"), self.terms):
            if t is not None:
                d[name] = t.tolist()
        return d


class SampledLoad:
    """Grid-sampled load with (multi)linear interpolation between samples.

    ``axes`` is a tuple of 1D coordinate arrays, ``values`` has shape
    ``tuple(len(a) for a in axes) + (3,)``.
    """

    def __init__(self, axes, values):
        self.axes = tuple(np.asarray(a, float) for a in axes)
        self.values = np.asarray(values, float)
        self._interp = RegularGridInterpolator(self.axes, self.values)

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, points.shape[-1])
        return self._interp(flat).reshape(points.shape[:-1] + (3,))


def reduce_loads(loads, quadrature_n=4):
    """Membrane load ``x_alpha -> fbar + g_plus + g_minus``.

    ``fbar`` is half the integral of ``f`` across the thickness, computed
    with ``quadrature_n``-point Gauss-Legendre (exact for polynomials in x3
    up to degree ``2 quadrature_n - 1``).
    """
    if quadrature_n < 2:
        raise ValueError("quadrature_n must be >= 2")
    nodes, weights = np.polynomial.legendre.leggauss(quadrature_n)

    def reduced(x_alpha):
        x_alpha = np.asarray(x_alpha, dtype=float)
        out = np.zeros(x_alpha.shape[:-1] + (3,))
        if loads.f is not None:
            for x3, w in zip(nodes, weights):
                pts = np.concatenate([x_alpha, np.full(x_alpha.shape[:-1] + (1,), x3)], axis=-1)
                out += 0.5 * w * np.asarray(loads.f(pts))
        for g in (loads.g_plus, loads.g_minus):
            if g is not None:
                out += np.asarray(g(x_alpha))
        return out

    return reduced


class QuadraticWhom:
    """Closed-form effective density ``scale * |xi_bar|^2`` (the homogeneous quadratic case)."""

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def __call__(self, x_alpha, xi_bar):
        xi_bar = np.asarray(xi_bar, dtype=float)
        return self.scale * np.sum(xi_bar * xi_bar, axis=(-2, -1))


class MembraneProblem:
    def __init__(self, provider, mesh, reduced_loads=None):
        self.provider = provider
        self.mesh = mesh
        grid = mesh.grid
        self.x_q = grid.gauss_coordinates()  # (ex, ey, 4, 2)
        self.load_q = None
        if reduced_loads is not None:
            self.load_q = np.asarray(reduced_loads(self.x_q.reshape(-1, 2)), float).reshape(self.x_q.shape[:-1] + (3,))
        self.free = mesh.free

    def _whom_and_derivative(self, xi):
        """Values and central-difference xi-derivatives at every quadrature point."""
        flat = xi.reshape(-1, 3, 2)
        n = flat.shape[0]
        x = self.x_q.reshape(-1, 2)
        step = FD_STEP * (1.0 + np.sqrt(np.sum(flat * flat, axis=(1, 2))))
        probes = [flat]
        for i in range(3):
            for j in range(2):
                for sign in (1.0, -1.0):
                    p = flat.copy()
                    p[:, i, j] += sign * step
                    probes.append(p)
        vals = np.asarray(self.provider(np.tile(x, (len(probes), 1)), np.concatenate(probes)), float)
        vals = vals.reshape(len(probes), n)
        deriv = np.zeros((n, 3, 2))
        k = 1
        for i in range(3):
            for j in range(2):
                deriv[:, i, j] = (vals[k] - vals[k + 1]) / (2.0 * step)
                k += 2
        return vals[0], deriv

    def parts(self, v):
        grid = self.mesh.grid
        xi = grid.gradient(v)
        w = np.asarray(self.provider(self.x_q.reshape(-1, 2), xi.reshape(-1, 3, 2)), float)
        energy = 2.0 * grid.weight * float(np.sum(w))
        work = 0.0
        if self.load_q is not None:
            work = grid.weight * float(np.sum(self.load_q * grid.interpolate(v)))
        return energy, work

    def energy_and_gradient(self, v):
        grid = self.mesh.grid
        xi = grid.gradient(v)
        w, dw = self._whom_and_derivative(xi)
        total = 2.0 * grid.weight * float(np.sum(w))
        grad = 2.0 * grid.weight * grid.scatter_gradient(dw.reshape(xi.shape))
        if self.load_q is not None:
            total -= grid.weight * float(np.sum(self.load_q * grid.interpolate(v)))
            grad -= grid.weight * grid.scatter_values(self.load_q)
        grad[~self.free] = 0.0
        return total, grad

    def field(self, vec, base):
        v = base.copy()
        v[self.free] = vec.reshape(-1, 3)
        return v

    def fun_grad_factory(self, base):
        def fun_grad(vec):
            e, g = self.energy_and_gradient(self.field(vec, base))
            return e, g[self.free].ravel()
        return fun_grad


@dataclass
class MembraneState:
    mesh: MembraneMesh
    v: np.ndarray
    energy: float
    load_work: float
    total: float
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    status: str = "converged"

    def __post_init__(self):
        base = self.mesh.affine_state()
        if not np.array_equal(self.v[~self.mesh.free], base[~self.mesh.free]):
            raise ValueError("membrane boundary nodes must carry v = (x_alpha, 0)")

    def deviation(self):
        return self.v - self.mesh.affine_state()

    def interpolate(self, points):
        """Bilinear interpolation of ``v`` at in-plane points (N, 2)."""
        (x0, x1), (y0, y1) = self.mesh.domain
        axes = (np.linspace(x0, x1, self.mesh.n_x + 1), np.linspace(y0, y1, self.mesh.n_y + 1))
        interp = RegularGridInterpolator(axes, self.v)
        return interp(np.clip(points, [x0, y0], [x1, y1]))

    def raise_for_status(self):
        if self.status == "max_iters":
            raise NonConvergence(f"membrane solve stopped at grad norm {self.grad_norm:.3e}")
        if self.status == "line_search_stall":
            raise LineSearchStall(f"membrane line search stalled at grad norm {self.grad_norm:.3e}")

    def to_dict(self):
        return {
            "mesh": self.mesh.to_dict(),
            "coordinates": self.mesh.coordinates().reshape(-1, 2).tolist(),
            "v": self.v.reshape(-1, 3).tolist(),
            "energy": self.energy,
            "load_work": self.load_work,
            "total": self.total,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "status": self.status,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def v3_csv(self):
        """v3 along the horizontal mesh lines: one row per node."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["line", "node", "x1", "x2", "v3"])
        x = self.mesh.coordinates()
        for j in range(x.shape[1]):
            for i in range(x.shape[0]):
                out.writerow([j, i, repr(float(x[i, j, 0])), repr(float(x[i, j, 1])), repr(float(self.v[i, j, 2]))])
        return buf.getvalue()


def state_from_field(provider, mesh, v, reduced_loads=None):
    energy, work = MembraneProblem(provider, mesh, reduced_loads).parts(v)
    return MembraneState(mesh, v, energy, work, energy - work)


def membrane_energy(provider, mesh, state_or_field, reduced_loads=None):
    v = state_or_field.v if isinstance(state_or_field, MembraneState) else np.asarray(state_or_field, float)
    energy, work = MembraneProblem(provider, mesh, reduced_loads).parts(v)
    return energy - work


def membrane_gradient(provider, mesh, v, reduced_loads=None):
    return MembraneProblem(provider, mesh, reduced_loads).energy_and_gradient(np.asarray(v, float))[1]


def solve_membrane(provider, mesh, reduced_loads=None, opts=None, callback=None):
    """Minimize the membrane energy from the affine state, boundary pinned."""
    opts = opts or MinimizeOptions()
    problem = MembraneProblem(provider, mesh, reduced_loads)
    base = mesh.affine_state()
    fun_grad = problem.fun_grad_factory(base)
    res = lbfgs(fun_grad, base[mesh.free].ravel(), grad_tol=opts.grad_tol, max_iters=opts.max_iters,
                memory=opts.memory, first_step=0.1,
                callback=None if callback is None else (lambda x, f: callback(problem.field(x, base), f)))
    v = problem.field(res.x, base)
    energy, work = problem.parts(v)
    return MembraneState(mesh, v, energy, work, energy - work, res.iterations, res.grad_norm,
                         res.converged, res.status)
