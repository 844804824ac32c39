"""Discrete cell problem for the homogenized membrane density.

For a frozen macroscopic point ``x_alpha`` and in-plane gradient ``xi_bar``
the cell energy of a corrector ``phi`` on ``(0, T)^2 x (-1, 1)`` is

    1/(2 T^2) * integral of W(x_alpha, y3, y_alpha; xi_bar + D_alpha phi | D_3 phi)

with ``phi = 0`` on the lateral faces. Its infimum, over ``T`` along the
doubling sequence 1, 2, 4, ..., estimates W_hom(x_alpha; xi_bar).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import BudgetExceeded, LineSearchStall, NonConvergence
from .fem import HexGrid
from .optimize import MinimizeOptions, lbfgs
from .tensor import frobenius

log = logging.getLogger(__name__)

DEFAULT_MAX_NODES = 500_000


@dataclass(frozen=True)
class CellGrid:
    T: int
    n_per_unit: int = 8
    n_thick: int = 3

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("cell side T must be >= 1")
        if self.n_per_unit < 2:
            raise ValueError("n_per_unit must be >= 2")
        if self.n_thick < 3:
            raise ValueError("n_thick must be >= 3")

    @property
    def h_alpha(self):
        return 1.0 / self.n_per_unit

    @property
    def h3(self):
        return 2.0 / (self.n_thick - 1)

    @property
    def n_inplane(self):
        return self.T * self.n_per_unit + 1

    @property
    def node_count(self):
        return self.n_inplane ** 2 * self.n_thick

    def doubled(self):
        return CellGrid(2 * self.T, self.n_per_unit, self.n_thick)

    @cached_property
    def hex(self):
        n = self.n_inplane
        return HexGrid((n, n, self.n_thick), (self.h_alpha, self.h_alpha, self.h3), (0.0, 0.0, -1.0))

    @cached_property
    def free_mask(self):
        """True at nodes off the lateral boundary (top/bottom faces are free)."""
        n = self.n_inplane
        m = np.zeros((n, n, self.n_thick), dtype=bool)
        m[1:-1, 1:-1, :] = True
        return m

    def signature(self):
        return (self.n_per_unit, self.n_thick)


@dataclass
class CorrectorField:
    values: np.ndarray
    grid: CellGrid

    def __post_init__(self):
        expected = (self.grid.n_inplane, self.grid.n_inplane, self.grid.n_thick, 3)
        if self.values.shape != expected:
            raise ValueError(f"corrector shape {self.values.shape} does not match grid {expected}")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.n_inplane, grid.n_inplane, grid.n_thick, 3)), grid)

    def lateral_is_zero(self):
        return not np.any(self.values[~self.grid.free_mask])


@dataclass
class CellResult:
    value: float
    corrector: CorrectorField
    iterations: int
    grad_norm: float
    converged: bool
    status: str = "converged"
    starts: list = field(default_factory=list)

    def raise_for_status(self):
        if self.status == "max_iters":
            raise NonConvergence(f"cell solve stopped at grad norm {self.grad_norm:.3e}")
        if self.status == "line_search_stall":
            raise LineSearchStall(f"cell line search stalled at grad norm {self.grad_norm:.3e}")


class CellProblem:
    """Energy and gradient of the discrete cell functional on a fixed grid."""

    def __init__(self, law, x_alpha, xi_bar, grid):
        self.law = law
        self.grid = grid
        self.xi_bar = np.asarray(xi_bar, dtype=float).reshape(3, 2)
        hexg = grid.hex
        gp = hexg.gauss_coordinates().reshape(-1, 3)
        self.y = gp[:, :2]
        x_alpha = np.asarray(x_alpha, dtype=float)
        self.x = np.column_stack([np.broadcast_to(x_alpha, (gp.shape[0], 2)), gp[:, 2]])
        self.scale = hexg.weight / (2.0 * grid.T ** 2)
        self.free = grid.free_mask

    def _xi(self, phi):
        g = self.grid.hex.gradient(phi)
        g[..., :2] += self.xi_bar
        return g

    def energy(self, phi):
        xi = self._xi(phi)
        return float(self.scale * np.sum(self.law._energy(self.x, self.y, xi.reshape(-1, 3, 3))))

    def energy_and_gradient(self, phi):
        xi = self._xi(phi)
        flat = xi.reshape(-1, 3, 3)
        e = float(self.scale * np.sum(self.law._energy(self.x, self.y, flat)))
        stress = self.law._stress(self.x, self.y, flat).reshape(xi.shape)
        grad = self.grid.hex.scatter_gradient(stress) * self.scale
        grad[~self.free] = 0.0
        return e, grad

    def free_vector(self, phi):
        return phi[self.free].ravel()

    def field(self, vec):
        phi = np.zeros(self.free.shape + (3,))
        phi[self.free] = vec.reshape(-1, 3)
        return phi

    def fun_grad(self, vec):
        e, g = self.energy_and_gradient(self.field(vec))
        return e, g[self.free].ravel()


def _check_field(phi, grid):
    if phi.grid != grid:
        raise ValueError("corrector grid does not match the requested grid")


def cell_energy(law, x_alpha, xi_bar, phi):
    return CellProblem(law, x_alpha, xi_bar, phi.grid).energy(phi.values)


def cell_gradient(law, x_alpha, xi_bar, phi):
    _, g = CellProblem(law, x_alpha, xi_bar, phi.grid).energy_and_gradient(phi.values)
    return CorrectorField(g, phi.grid)


def _start_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def minimize_cell(law, x_alpha, xi_bar, grid, opts=None, initial=None):
    """Best local minimizer of the cell energy over lateral-zero correctors.

    Starts from ``phi = 0``, then from any ``initial`` correctors supplied by
    the caller, then from ``opts.multistart - 1`` seeded random fields of
    amplitude ``0.1 (1 + |xi_bar|)``. The lowest energy wins.
    """
    opts = opts or MinimizeOptions()
    problem = CellProblem(law, x_alpha, xi_bar, grid)
    n_free = int(problem.free.sum()) * 3
    starts = [("zero", np.zeros(n_free))]
    for k, phi in enumerate(initial or []):
        _check_field(phi, grid)
        starts.append((f"initial{k}", problem.free_vector(phi.values)))
    amplitude = 0.1 * (1.0 + float(frobenius(problem.xi_bar)))
    for k in range(1, opts.multistart):
        rng = _start_rng(opts.seed, k)
        starts.append((f"random{k}", rng.uniform(-amplitude, amplitude, n_free)))

    best = None
    summary = []
    for label, x0 in starts:
        res = lbfgs(problem.fun_grad, x0, grad_tol=opts.grad_tol, max_iters=opts.max_iters,
                    memory=opts.memory, first_step=amplitude)
        summary.append({"start": label, "value": res.fun, "iterations": res.iterations, "status": res.status})
        if best is None or res.fun < best.fun:
            best = res
    result = CellResult(
        value=best.fun,
        corrector=CorrectorField(problem.field(best.x), grid),
        iterations=best.iterations,
        grad_norm=best.grad_norm,
        converged=best.converged,
        status=best.status,
        starts=summary,
    )
    if not result.converged:
        log.warning("cell solve T=%d ended with status %s (grad %.2e)", grid.T, best.status, best.grad_norm)
    return result


def tile_corrector(phi):
    """Four shifted copies of a T-corrector, admissible on the 2T cell."""
    grid = phi.grid
    big = grid.doubled()
    m = grid.n_inplane - 1
    out = np.zeros((big.n_inplane, big.n_inplane, grid.n_thick, 3))
    for i in (0, m):
        for j in (0, m):
            # shared edges carry zeros in every copy, so assignment is exact
            out[i:i + m + 1, j:j + m + 1] += phi.values
    return CorrectorField(out, big)


@dataclass
class TraceRow:
    T: int
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    status: str


@dataclass
class WHomEstimate:
    value: float
    trace: list
    converged_in_T: bool
    converged_at_T: int | None
    corrector: CorrectorField | None = None

    @property
    def all_converged(self):
        return all(row.converged for row in self.trace)


def _doubling(T_max):
    if T_max < 1 or T_max & (T_max - 1):
        raise ValueError("T_max must be a power of two")
    Ts = [1]
    while Ts[-1] < T_max:
        Ts.append(2 * Ts[-1])
    return Ts


def whom_estimate(law, x_alpha, xi_bar, T_max, rtol=1e-3, opts=None, n_per_unit=8, n_thick=3,
                  max_nodes=DEFAULT_MAX_NODES, warm_start=True):
    """Estimate W_hom by cell solves at T = 1, 2, ..., T_max on nested grids.

    The answer is the minimum over the trace. With ``warm_start`` each solve
    also starts from the tiled corrector of the previous T, which makes the
    trace nonincreasing up to optimizer tolerance.
    """
    if not rtol > 0:
        raise ValueError("rtol must be positive")
    Ts = _doubling(T_max)
    top = CellGrid(T_max, n_per_unit, n_thick)
    if top.node_count > max_nodes:
        raise BudgetExceeded(f"T={T_max} needs {top.node_count} nodes, cap is {max_nodes}")
    opts = opts or MinimizeOptions()
    trace = []
    best_value, best_phi = None, None
    previous = None
    converged_at = None
    for T in Ts:
        grid = CellGrid(T, n_per_unit, n_thick)
        initial = [tile_corrector(previous)] if (warm_start and previous is not None) else None
        res = minimize_cell(law, x_alpha, xi_bar, grid, opts, initial=initial)
        if trace and converged_at is None:
            v_prev = trace[-1].value
            if abs(res.value - v_prev) <= rtol * (1.0 + abs(v_prev)):
                converged_at = T
        trace.append(TraceRow(T, res.value, res.iterations, res.grad_norm, res.converged, res.status))
        if best_value is None or res.value < best_value:
            best_value, best_phi = res.value, res.corrector
        previous = res.corrector
    return WHomEstimate(best_value, trace, converged_at is not None, converged_at, best_phi)


@dataclass
class SubadditivityResult:
    lhs: float
    rhs: float
    holds: bool
    slack: float
    value_T: float
    value_2T: float
    tiled_value: float
    tiling_rel_error: float


def subadditivity_check(law, x_alpha, xi_bar, T, opts=None, n_per_unit=8, n_thick=3):
    """Compare mu((0,2T)^2) with 4 mu((0,T)^2) on nested grids.

    ``mu(A)`` here is the unnormalized half-integral, i.e. ``T^2`` times the
    cell value. The tiled T-corrector is admissible on the 2T cell, is used
    as an extra starting point there, and its energy must reproduce the T
    value.
    """
    opts = opts or MinimizeOptions()
    grid = CellGrid(T, n_per_unit, n_thick)
    small = minimize_cell(law, x_alpha, xi_bar, grid, opts)
    tiled = tile_corrector(small.corrector)
    tiled_value = cell_energy(law, x_alpha, xi_bar, tiled)
    big = minimize_cell(law, x_alpha, xi_bar, grid.doubled(), opts, initial=[tiled])
    lhs = (2 * T) ** 2 * big.value
    rhs = 4 * T ** 2 * small.value
    slack = 4.0 * opts.grad_tol * (1.0 + abs(rhs))
    rel = abs(tiled_value - small.value) / max(abs(small.value), 1e-300)
    return SubadditivityResult(lhs, rhs, lhs <= rhs + slack, slack, small.value, big.value, tiled_value, rel)
