"""Memoized W_hom evaluation, 2D slice tables and regularity probes."""

from __future__ import annotations

import json
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cell import DEFAULT_MAX_NODES, whom_estimate
from .errors import FilmHomError, FingerprintMismatch, ParseError, SchemaMismatch
from .material import law_from_dict
from .optimize import MinimizeOptions
from .tensor import frobenius

SCHEMA_VERSION = 1


@dataclass
class CacheEntry:
    value: float
    trace: list
    converged_in_T: bool


class WHomCache:
    """Exact-key memo of W_hom estimates for one law.

    Keys are the raw float64 bytes of ``(x_alpha, xi_bar)`` plus the grid
    signature; no quantization. For laws that do not depend on the
    macroscopic point, ``x_alpha`` is dropped from the key.
    """

    def __init__(self, law, T_max=4, rtol=1e-3, n_per_unit=8, n_thick=3, opts=None,
                 max_nodes=DEFAULT_MAX_NODES):
        self.law = law
        self.fingerprint = law.fingerprint()
        self.T_max = T_max
        self.rtol = rtol
        self.n_per_unit = n_per_unit
        self.n_thick = n_thick
        self.opts = opts or MinimizeOptions()
        self.max_nodes = max_nodes
        self.entries = {}
        self.solves = 0
        self._lock = threading.Lock()

    def grid_dict(self):
        return {"T_max": self.T_max, "n_per_unit": self.n_per_unit, "n_thick": self.n_thick,
                "rtol": self.rtol}

    def key(self, x_alpha, xi_bar):
        xi = np.ascontiguousarray(xi_bar, dtype=np.float64).reshape(3, 2)
        parts = [xi.tobytes()]
        if self.law.depends_on_x:
            parts.append(np.ascontiguousarray(x_alpha, dtype=np.float64).reshape(2).tobytes())
        return (b"".join(parts), self.T_max, self.n_per_unit, self.n_thick, self.rtol)

    def get(self, key):
        with self._lock:
            return self.entries.get(key)

    def put(self, key, entry):
        with self._lock:
            self.entries[key] = entry

    def solve(self, x_alpha, xi_bar):
        est = whom_estimate(self.law, x_alpha, xi_bar, self.T_max, self.rtol, self.opts,
                            self.n_per_unit, self.n_thick, self.max_nodes)
        with self._lock:
            self.solves += 1
        return CacheEntry(est.value, est.trace, est.converged_in_T)

    def __len__(self):
        return len(self.entries)


def whom(cache, law, x_alpha, xi_bar):
    """W_hom(x_alpha; xi_bar) through ``cache``; solves on a miss."""
    if law.fingerprint() != cache.fingerprint:
        raise FingerprintMismatch("law does not match the cache it was queried with")
    key = cache.key(x_alpha, xi_bar)
    entry = cache.get(key)
    if entry is None:
        entry = cache.solve(np.asarray(x_alpha, float), np.asarray(xi_bar, float).reshape(3, 2))
        cache.put(key, entry)
    return entry.value


class CellWhom:
    """Vectorized W_hom provider for the membrane solver, backed by a cache."""

    def __init__(self, cache):
        self.cache = cache

    def __call__(self, x_alpha, xi_bar):
        x_alpha = np.asarray(x_alpha, dtype=float).reshape(-1, 2)
        xi_bar = np.asarray(xi_bar, dtype=float).reshape(-1, 3, 2)
        x_alpha = np.broadcast_to(x_alpha, (xi_bar.shape[0], 2))
        return np.array([whom(self.cache, self.cache.law, x, xi) for x, xi in zip(x_alpha, xi_bar)])


@dataclass
class SliceSpec:
    base: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    s_range: tuple = (-1.0, 1.0)
    t_range: tuple = (-1.0, 1.0)
    n: int = 5

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float).reshape(3, 2)
        self.d1 = np.asarray(self.d1, dtype=float).reshape(3, 2)
        self.d2 = np.asarray(self.d2, dtype=float).reshape(3, 2)
        self.s_range = tuple(float(v) for v in self.s_range)
        self.t_range = tuple(float(v) for v in self.t_range)
        if self.n < 2:
            raise ValueError("slice resolution n must be >= 2")
        if self.s_range[1] < self.s_range[0] or self.t_range[1] < self.t_range[0]:
            raise ValueError("slice ranges must be (low, high)")
        if np.linalg.matrix_rank(np.stack([self.d1.ravel(), self.d2.ravel()])) < 2:
            raise ValueError("slice directions must be linearly independent")

    @property
    def s_values(self):
        return np.linspace(*self.s_range, self.n)

    @property
    def t_values(self):
        return np.linspace(*self.t_range, self.n)

    def point(self, s, t):
        return self.base + s * self.d1 + t * self.d2

    def to_dict(self):
        return {"base": self.base.ravel().tolist(), "d1": self.d1.ravel().tolist(),
                "d2": self.d2.ravel().tolist(), "s_range": list(self.s_range),
                "t_range": list(self.t_range), "n": self.n}


@dataclass
class WHomTable:
    law: dict
    x_alpha: np.ndarray
    slice: SliceSpec
    grid: dict
    values: np.ndarray
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def interpolate(self, s, t):
        """Bilinear interpolation inside the slice rectangle."""
        sv, tv = self.slice.s_values, self.slice.t_values
        if not (sv[0] <= s <= sv[-1] and tv[0] <= t <= tv[-1]):
            raise ValueError("point outside the tabulated rectangle")
        i = min(int(np.searchsorted(sv, s, side="right")) - 1, len(sv) - 2)
        j = min(int(np.searchsorted(tv, t, side="right")) - 1, len(tv) - 2)
        a = (s - sv[i]) / (sv[i + 1] - sv[i])
        b = (t - tv[j]) / (tv[j + 1] - tv[j])
        v = self.values
        return float((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
                     + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])

    def to_dict(self):
        values = [[None if not np.isfinite(v) else float(v) for v in row] for row in self.values]
        return {
            "schema_version": SCHEMA_VERSION,
            "law": self.law,
            "x_alpha": [float(v) for v in self.x_alpha],
            "slice": self.slice.to_dict(),
            "grid": self.grid,
            "values": values,
            "failures": self.failures,
            "metadata": self.metadata,
        }

    def __eq__(self, other):
        if not isinstance(other, WHomTable):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def derive_seed(seed, *task):
    """Per-task seed drawn from the run seed; independent of scheduling."""
    return int(np.random.SeedSequence([int(seed), *task]).generate_state(1)[0])


def _solve_point(args):
    law_dict, x_alpha, xi_bar, grid, opts = args
    law = law_from_dict(law_dict)
    est = whom_estimate(law, x_alpha, xi_bar, grid["T_max"], grid["rtol"], opts,
                        grid["n_per_unit"], grid["n_thick"], grid.get("max_nodes", DEFAULT_MAX_NODES))
    return est.value, est.all_converged


def tabulate_slice(law, x_alpha, spec, T_max=4, rtol=1e-3, n_per_unit=8, n_thick=3, opts=None,
                   workers=1, max_nodes=DEFAULT_MAX_NODES):
    """W_hom on the grid ``base + s_i d1 + t_j d2``.

    Node solves are independent; ``workers > 1`` farms them out to a process
    pool. Each node seeds its multistart from ``(opts.seed, i, j)``, so
    results do not depend on the worker count. Failed nodes are stored as NaN and listed in ``failures``.
    """
    opts = opts or MinimizeOptions()
    grid = {"T_max": T_max, "n_per_unit": n_per_unit, "n_thick": n_thick, "rtol": rtol}
    run_grid = dict(grid, max_nodes=max_nodes)
    x_alpha = np.asarray(x_alpha, dtype=float)
    jobs, index = [], []
    for i, s in enumerate(spec.s_values):
        for j, t in enumerate(spec.t_values):
            node_opts = replace(opts, seed=derive_seed(opts.seed, i, j))
            jobs.append((law.to_dict(), x_alpha, spec.point(s, t), run_grid, node_opts))
            index.append((i, j))

    def run(job):
        try:
            return _solve_point(job)
        except (FilmHomError, ValueError, FloatingPointError) as exc:
            return exc

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_solve_point, job) for job in jobs]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except (FilmHomError, ValueError, FloatingPointError) as exc:
                    outcomes.append(exc)
    else:
        outcomes = [run(job) for job in jobs]

    values = np.full((spec.n, spec.n), np.nan)
    failures, unconverged = [], []
    for (i, j), out in zip(index, outcomes):
        if isinstance(out, Exception):
            failures.append({"i": i, "j": j, "error": f"{type(out).__name__}: {out}"})
            continue
        values[i, j] = out[0]
        if not out[1]:
            unconverged.append([i, j])
    finite = np.where(np.isfinite(values), values, np.nan)
    with np.errstate(invalid="ignore"):
        steps = [np.abs(np.diff(finite, axis=0)), np.abs(np.diff(finite, axis=1))]
    modulus = max((float(np.nanmax(d)) for d in steps if np.isfinite(d).any()), default=0.0)
    metadata = {"mesh_modulus": modulus, "unconverged": unconverged, "solves": len(jobs)}
    return WHomTable(law.to_dict(), x_alpha, spec, grid, values, failures, metadata)


def save_table(table, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(table.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_table(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        d = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError("table file is not UTF-8", exc.start) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed table file: {exc.msg}", exc.pos) from None
    if not isinstance(d, dict) or "schema_version" not in d:
        raise ParseError("table file lacks schema_version", 0)
    if d["schema_version"] != SCHEMA_VERSION:
        raise SchemaMismatch(f"schema_version {d['schema_version']!r}, expected {SCHEMA_VERSION}")
    try:
        spec = SliceSpec(**d["slice"])
        values = np.array([[np.nan if v is None else v for v in row] for row in d["values"]], dtype=float)
        return WHomTable(d["law"], np.array(d["x_alpha"], dtype=float), spec, d["grid"], values,
                         d.get("failures", []), d.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"table file has missing or invalid fields: {exc}", 0) from None


@dataclass
class ProbeResult:
    max_ratio: float
    samples: list  # (s, value) along the segment
    ratios: list


def continuity_probe(cache, x_alpha, xi_bar_a, xi_bar_b, n_points):
    """Largest p-Lipschitz quotient of W_hom along the segment [a, b].

    For consecutive samples the quotient is
    |dW| / ((1 + |xi1|^(p-1) + |xi2|^(p-1)) |xi1 - xi2|).
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    a = np.asarray(xi_bar_a, dtype=float).reshape(3, 2)
    b = np.asarray(xi_bar_b, dtype=float).reshape(3, 2)
    law = cache.law
    p = law.p
    s_values = np.linspace(0.0, 1.0, n_points)
    points = [a + s * (b - a) for s in s_values]
    values = [whom(cache, law, x_alpha, xi) for xi in points]
    ratios = []
    for k in range(n_points - 1):
        step = float(frobenius(points[k + 1] - points[k]))
        if step == 0.0:
            ratios.append(0.0)
            continue
        weight = 1.0 + frobenius(points[k]) ** (p - 1) + frobenius(points[k + 1]) ** (p - 1)
        ratios.append(abs(values[k + 1] - values[k]) / (weight * step))
    return ProbeResult(max(ratios), list(zip(s_values.tolist(), values)), ratios)
