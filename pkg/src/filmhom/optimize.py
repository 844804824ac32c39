"""Limited-memory BFGS with Armijo backtracking."""

from collections import deque
from dataclasses import dataclass

import numpy as np

ARMIJO = 1e-4
MIN_STEP = 1e-14


@dataclass
class MinimizeOptions:
    grad_tol: float = 1e-8
    max_iters: int = 5000
    memory: int = 10
    multistart: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.memory < 1 or self.multistart < 1:
            raise ValueError("memory and multistart must be >= 1")


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    status: str  # "converged" | "max_iters" | "line_search_stall"

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def grad_norm(self):
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def lbfgs(fun_grad, x0, grad_tol=1e-8, max_iters=5000, memory=10, first_step=0.1, callback=None):
    """Minimize ``fun_grad(x) -> (f, g)`` from ``x0``.

    Stops when ``max|g| <= grad_tol * (1 + |f|)``. Every accepted step
    satisfies the Armijo condition, so ``f`` never increases. The first trial
    step moves the largest entry by ``first_step``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    hist = deque(maxlen=memory)
    it = 0
    status = "max_iters"
    while True:
        if x.size == 0 or np.max(np.abs(g)) <= grad_tol * (1.0 + abs(f)):
            status = "converged"
            break
        if it >= max_iters:
            break
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in reversed(hist):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q = q - a * y
        if hist:
            s, y, _ = hist[-1]
            q = q * (np.dot(s, y) / np.dot(y, y))
        else:
            q = q * (first_step / np.max(np.abs(g)))
        for (s, y, rho), a in zip(hist, reversed(alphas)):
            b = rho * np.dot(y, q)
            q = q + (a - b) * s
        d = q
        slope = np.dot(g, d)
        if slope >= 0:
            # not a descent direction; restart from steepest descent
            hist.clear()
            d = -g * (first_step / np.max(np.abs(g)))
            slope = np.dot(g, d)

        step = 1.0
        while True:
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if f_new <= f + ARMIJO * step * slope:
                break
            step *= 0.5
            if step < MIN_STEP:
                f_new = None
                break
        if f_new is None:
            status = "line_search_stall"
            break
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-300:
            hist.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        it += 1
        if callback is not None:
            callback(x, f)
    return OptResult(x=x, fun=float(f), grad=g, iterations=it, status=status)
