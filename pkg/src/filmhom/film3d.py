"""Rescaled 3D film energy and the epsilon-sweep against the membrane limit.

On ``Omega = omega x (-1, 1)`` the energy of a deformation ``u`` is

    int W(x, x_alpha/eps; D_alpha u | D_3 u / eps) - int f.u - int_{x3=+-1} g.u

with ``u = (x_alpha, eps x3)`` pinned on the lateral boundary.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .fem import HexGrid, QuadGrid
from .material import CheckerboardPower, LaminateQuadratic, MacroModulated
from .membrane import LoadSpec
from .optimize import MinimizeOptions, lbfgs


class FilmMesh:
    def __init__(self, n_x, n_y, n_z, domain=((0.0, 1.0), (0.0, 1.0))):
        (x0, x1), (y0, y1) = domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("film domain must have positive area")
        if n_x < 1 or n_y < 1 or n_z < 2:
            raise ValueError("film mesh needs n_x, n_y >= 1 and n_z >= 2")
        self.n_x, self.n_y, self.n_z = int(n_x), int(n_y), int(n_z)
        self.domain = ((float(x0), float(x1)), (float(y0), float(y1)))
        spacing = ((x1 - x0) / n_x, (y1 - y0) / n_y, 2.0 / n_z)
        self.grid = HexGrid((n_x + 1, n_y + 1, n_z + 1), spacing, (x0, y0, -1.0))
        self.face = QuadGrid((n_x + 1, n_y + 1), spacing[:2], (x0, y0))
        self.free = np.zeros(self.grid.nodes, dtype=bool)
        self.free[1:-1, 1:-1, :] = True

    @property
    def volume(self):
        (x0, x1), (y0, y1) = self.domain
        return 2.0 * (x1 - x0) * (y1 - y0)

    def pinned_state(self, eps):
        """The field (x_alpha, eps x3) at every node."""
        x = self.grid.node_coordinates()
        return np.concatenate([x[..., :2], eps * x[..., 2:]], axis=-1)

    def to_dict(self):
        return {"n_x": self.n_x, "n_y": self.n_y, "n_z": self.n_z,
                "domain": [list(self.domain[0]), list(self.domain[1])]}


@dataclass
class FilmState:
    mesh: FilmMesh
    u: np.ndarray
    eps: float
    energy: float = 0.0
    load_work: float = 0.0
    total: float = 0.0
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    status: str = "converged"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        pinned = self.mesh.pinned_state(self.eps)
        lateral = ~self.mesh.free
        if self.u.shape != pinned.shape or not np.array_equal(self.u[lateral], pinned[lateral]):
            raise ValueError("lateral nodes must carry u = (x_alpha, eps x3)")


class FilmProblem:
    def __init__(self, law, eps, mesh, loads=None):
        self.law, self.eps, self.mesh = law, float(eps), mesh
        self.loads = loads or LoadSpec()
        gp = mesh.grid.gauss_coordinates()
        self.x = gp.reshape(-1, 3)
        self.y = self.x[:, :2] / self.eps
        self.body = None
        if self.loads.f is not None:
            self.body = np.asarray(self.loads.f(self.x), float).reshape(gp.shape[:-1] + (3,))
        xf = mesh.face.gauss_coordinates()
        self.top = None if self.loads.g_plus is None else np.asarray(self.loads.g_plus(xf.reshape(-1, 2)), float).reshape(xf.shape[:-1] + (3,))
        self.bottom = None if self.loads.g_minus is None else np.asarray(self.loads.g_minus(xf.reshape(-1, 2)), float).reshape(xf.shape[:-1] + (3,))
        self.free = mesh.free

    def _xi(self, u):
        xi = self.mesh.grid.gradient(u)
        xi[..., 2] /= self.eps
        return xi

    def _work(self, u):
        grid, face = self.mesh.grid, self.mesh.face
        work = 0.0
        if self.body is not None:
            work += grid.weight * float(np.sum(self.body * grid.interpolate(u)))
        if self.top is not None:
            work += face.weight * float(np.sum(self.top * face.interpolate(u[:, :, -1])))
        if self.bottom is not None:
            work += face.weight * float(np.sum(self.bottom * face.interpolate(u[:, :, 0])))
        return work

    def parts(self, u):
        xi = self._xi(u).reshape(-1, 3, 3)
        energy = self.mesh.grid.weight * float(np.sum(self.law._energy(self.x, self.y, xi)))
        return energy, self._work(u)

    def energy_and_gradient(self, u):
        grid, face = self.mesh.grid, self.mesh.face
        xi = self._xi(u)
        flat = xi.reshape(-1, 3, 3)
        total = grid.weight * float(np.sum(self.law._energy(self.x, self.y, flat))) - self._work(u)
        stress = self.law._stress(self.x, self.y, flat).reshape(xi.shape)
        stress[..., 2] /= self.eps
        grad = grid.weight * grid.scatter_gradient(stress)
        if self.body is not None:
            grad -= grid.weight * grid.scatter_values(self.body)
        if self.top is not None:
            grad[:, :, -1] -= face.weight * face.scatter_values(self.top)
        if self.bottom is not None:
            grad[:, :, 0] -= face.weight * face.scatter_values(self.bottom)
        grad[~self.free] = 0.0
        return total, grad

    def field(self, vec, base):
        u = base.copy()
        u[self.free] = vec.reshape(-1, 3)
        return u


def film_energy(law, eps, mesh, state, loads=None):
    energy, work = FilmProblem(law, eps, mesh, loads).parts(state.u)
    return energy - work


def film_gradient(law, eps, mesh, u, loads=None):
    return FilmProblem(law, eps, mesh, loads).energy_and_gradient(np.asarray(u, float))[1]


def solve_eps(law, eps, mesh, loads=None, opts=None):
    """Quasi-Newton minimization from the pinned state (x_alpha, eps x3)."""
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    opts = opts or MinimizeOptions()
    problem = FilmProblem(law, eps, mesh, loads)
    base = mesh.pinned_state(eps)

    def fun_grad(vec):
        e, g = problem.energy_and_gradient(problem.field(vec, base))
        return e, g[problem.free].ravel()

    res = lbfgs(fun_grad, base[problem.free].ravel(), grad_tol=opts.grad_tol, max_iters=opts.max_iters,
                memory=opts.memory, first_step=0.1 * eps)
    u = problem.field(res.x, base)
    energy, work = problem.parts(u)
    return FilmState(mesh, u, eps, energy, work, energy - work, res.iterations, res.grad_norm,
                     res.converged, res.status)


def almost_minimizer_gap(state, reference_min):
    return max(0.0, state.total - reference_min)


def lp_distance(state, membrane_state, p=2.0):
    """L^p(Omega) distance between u_eps and the membrane field extended constantly in x3."""
    grid = state.mesh.grid
    gp = grid.gauss_coordinates()
    u_q = grid.interpolate(state.u)
    v_q = membrane_state.interpolate(gp[..., :2].reshape(-1, 2)).reshape(u_q.shape)
    d = np.linalg.norm(u_q - v_q, axis=-1)
    return float((grid.weight * np.sum(d ** p)) ** (1.0 / p))


def transverse_flatness(state, p=2.0):
    """L^p norm of u minus its x3-average (trapezoid rule across nodes)."""
    grid = state.mesh.grid
    u = state.u
    w = np.ones(u.shape[2])
    w[[0, -1]] = 0.5
    mean = np.tensordot(u, w / w.sum(), axes=([2], [0]))
    d = np.linalg.norm(grid.interpolate(u - mean[:, :, None, :]), axis=-1)
    return float((grid.weight * np.sum(d ** p)) ** (1.0 / p))


def reciprocal_integer(eps):
    k = round(1.0 / eps)
    if k < 1 or abs(1.0 / k - eps) > 1e-12 * max(eps, 1e-300):
        raise ConfigError(f"eps={eps!r} is not the reciprocal of an integer")
    return k


def check_alignment(law, eps, mesh):
    """Microstructure interfaces at x_alpha/eps must fall on element faces."""
    k = reciprocal_integer(eps)
    base = law.base if isinstance(law, MacroModulated) else law
    if getattr(base, "mollify", 0.0) > 0:
        return
    if isinstance(base, LaminateQuadratic):
        cells = mesh.n_x / k
        if mesh.n_x % k or abs(cells * base.theta - round(cells * base.theta)) > 1e-9:
            raise ConfigError(f"n_x={mesh.n_x} does not align laminate interfaces at eps=1/{k}")
    elif isinstance(base, CheckerboardPower):
        if mesh.n_x % (2 * k) or mesh.n_y % (2 * k):
            raise ConfigError(f"mesh {mesh.n_x}x{mesh.n_y} does not align checkerboard at eps=1/{k}")


@dataclass
class MeshBuilder:
    """n_z = max(4, ceil(4/eps)) capped at ``nz_cap``."""

    n_x: int = 16
    n_y: int = 16
    nz_cap: int = 64
    domain: tuple = ((0.0, 1.0), (0.0, 1.0))

    def n_z(self, eps):
        return min(max(4, math.ceil(4.0 / eps - 1e-9)), self.nz_cap)

    def __call__(self, eps):
        return FilmMesh(self.n_x, self.n_y, self.n_z(eps), self.domain)


@dataclass
class GammaRow:
    eps: float
    min_total: float
    gap_to_membrane: float
    lp_distance: float
    iterations: int
    converged: bool
    flatness: float
    n_z: int
    status: str


@dataclass
class GammaReport:
    rows: list
    membrane_total: float
    p: float
    gap_decreasing: bool | None = None
    totals_decreasing: bool | None = None
    flatness_decreasing: bool | None = None
    failures: list = field(default_factory=list)

    CSV_COLUMNS = ("eps", "min_total", "gap_to_membrane", "lp_distance", "iterations", "converged")

    def to_csv(self):
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            out.writerow([repr(r.eps), repr(r.min_total), repr(r.gap_to_membrane), repr(r.lp_distance),
                          r.iterations, "true" if r.converged else "false"])
        return buf.getvalue()

    def to_dict(self):
        return {
            "rows": [asdict(r) for r in self.rows],
            "membrane_total": self.membrane_total,
            "p": self.p,
            "gap_decreasing": self.gap_decreasing,
            "totals_decreasing": self.totals_decreasing,
            "flatness_decreasing": self.flatness_decreasing,
            "failures": self.failures,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _run_eps(args):
    law, eps, mesh, loads, opts, membrane_state, p = args
    state = solve_eps(law, eps, mesh, loads, opts)
    return state, lp_distance(state, membrane_state, p), transverse_flatness(state, p)


def _strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def gamma_experiment(law, eps_list, mesh_builder, loads, membrane_result, opts=None, workers=1):
    """Film minima along ``eps_list`` compared with the membrane minimum.

    ``membrane_result`` is a :class:`~filmhom.membrane.MembraneState` for the
    same law and loads. Trend flags are None when only one eps is given.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps_list is empty")
    if not _strictly_decreasing(eps_list):
        raise ValueError("eps_list must be strictly decreasing")
    opts = opts or MinimizeOptions()
    p = float(law.p)
    jobs = []
    for eps in eps_list:
        mesh = mesh_builder(eps)
        check_alignment(law, eps, mesh)
        jobs.append((law, eps, mesh, loads, opts, membrane_result, p))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_eps, job) for job in jobs]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except (ValueError, ArithmeticError) as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append(_run_eps(job))
            except (ValueError, ArithmeticError) as exc:
                outcomes.append(exc)

    rows, failures = [], []
    m_total = membrane_result.total
    for eps, out in zip(eps_list, outcomes):
        if isinstance(out, Exception):
            failures.append({"eps": eps, "error": f"{type(out).__name__}: {out}"})
            continue
        state, dist, flat = out
        rows.append(GammaRow(eps, state.total, state.total - m_total, dist, state.iterations,
                             state.converged, flat, state.mesh.n_z, state.status))
    report = GammaReport(rows, m_total, p, failures=failures)
    if len(rows) > 1:
        report.gap_decreasing = _strictly_decreasing([abs(r.gap_to_membrane) for r in rows])
        report.totals_decreasing = _strictly_decreasing([r.min_total for r in rows])
        report.flatness_decreasing = _strictly_decreasing([r.flatness for r in rows])
    return report
