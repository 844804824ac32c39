"""Stored-energy densities W(x, y_alpha; xi) and their checks.

Every law is evaluated on stacks: ``x`` has shape ``(N, 3)`` (macroscopic
point in the rescaled film ``omega x I``), ``y`` has shape ``(N, 2)``
(the oscillating in-plane variable, unit-periodic) and ``xi`` has shape
``(N, 3, 3)``. Single points are accepted by :func:`evaluate` and
:func:`gradient_xi` and broadcast.

Piecewise-constant coefficients are indexed through ``frac(y) = y - floor(y)``
with jumps assigned to the left-closed interval, so integer shifts of ``y``
reproduce values exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, HypothesisFailure

# beta is made valid on |xi| <= BETA_RADIUS for laws without global p-growth
BETA_RADIUS = 1.0e6


def _frac(y):
    return y - np.floor(y)


def _ramp(d, s):
    if s > 0:
        return np.clip(d / s + 0.5, 0.0, 1.0)
    return (d >= 0).astype(float)


def _indicator(u, theta, s):
    """Unit-periodic indicator of [theta, 1) evaluated at u in [0, 1).

    With ``s > 0`` both jumps are replaced by linear ramps of width ``s``.
    """
    return _ramp(u - theta, s) - _ramp(u, s) + 1.0 - _ramp(u - 1.0, s)


def _interface_distance_1d(u, points):
    d = np.full(u.shape, np.inf)
    for c in points:
        for shift in (-1.0, 0.0, 1.0):
            d = np.minimum(d, np.abs(u - (c + shift)))
    return d


class MaterialLaw:
    """Base class; subclasses provide ``_energy`` and ``_stress``."""

    family = "abstract"
    p = 2.0
    depends_on_x = False

    def __init__(self):
        self._beta_override = None

    @property
    def beta(self):
        if self._beta_override is not None:
            return self._beta_override
        return self._natural_beta()

    def with_beta(self, beta):
        """Copy of this law declaring a different growth constant (used to build
        deliberately inconsistent laws for negative tests)."""
        law = law_from_dict(self.to_dict())
        law._beta_override = float(beta)
        return law

    def _natural_beta(self):
        raise NotImplementedError

    def _energy(self, x, y, xi):
        raise NotImplementedError

    def _stress(self, x, y, xi):
        raise NotImplementedError

    def interface_distance(self, y):
        """Distance from each ``y`` to the nearest coefficient jump (inf if none)."""
        return np.full(np.shape(y)[:-1], np.inf)

    def params(self):
        return {}

    def to_dict(self):
        d = {"family": self.family, **self.params()}
        if self._beta_override is not None:
            d["beta"] = self._beta_override
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, MaterialLaw) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.fingerprint())

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


class HomogeneousQuadratic(MaterialLaw):
    family = "HomogeneousQuadratic"

    def _natural_beta(self):
        return 1.0

    def _energy(self, x, y, xi):
        return np.einsum("nij,nij->n", xi, xi)

    def _stress(self, x, y, xi):
        return 2.0 * xi


class LaminateQuadratic(MaterialLaw):
    """a(y1) |xi|^2 with a = a1 on [0, theta), a2 on [theta, 1)."""

    family = "LaminateQuadratic"

    def __init__(self, a1, a2, theta, mollify=0.0):
        super().__init__()
        if a1 <= 0 or a2 <= 0:
            raise ConfigError("laminate coefficients must be positive")
        if not 0.0 < theta < 1.0:
            raise ConfigError("volume fraction theta must lie in (0, 1)")
        if not 0.0 <= mollify <= 0.05:
            raise ConfigError("mollify width must lie in [0, 0.05]")
        self.a1, self.a2, self.theta, self.mollify = float(a1), float(a2), float(theta), float(mollify)

    def params(self):
        return {"a1": self.a1, "a2": self.a2, "theta": self.theta, "mollify": self.mollify}

    def _natural_beta(self):
        return max(self.a1, self.a2, 1.0 / min(self.a1, self.a2))

    def coefficient(self, y):
        chi = _indicator(_frac(y[..., 0]), self.theta, self.mollify)
        return self.a1 + (self.a2 - self.a1) * chi

    def _energy(self, x, y, xi):
        return self.coefficient(y) * np.einsum("nij,nij->n", xi, xi)

    def _stress(self, x, y, xi):
        return 2.0 * self.coefficient(y)[:, None, None] * xi

    def interface_distance(self, y):
        if self.mollify > 0:
            return super().interface_distance(y)
        return _interface_distance_1d(_frac(y[..., 0]), (0.0, self.theta))


class CheckerboardPower(MaterialLaw):
    """a(y) |xi|^p with a 2x2 checkerboard coefficient on the unit cell."""

    family = "CheckerboardPower"

    def __init__(self, a1, a2, p=2, mollify=0.0):
        super().__init__()
        if a1 <= 0 or a2 <= 0:
            raise ConfigError("checkerboard coefficients must be positive")
        if p not in (2, 4):
            raise ConfigError("supported growth exponents are 2 and 4")
        if not 0.0 <= mollify <= 0.05:
            raise ConfigError("mollify width must lie in [0, 0.05]")
        self.a1, self.a2, self.p, self.mollify = float(a1), float(a2), float(p), float(mollify)

    def params(self):
        return {"a1": self.a1, "a2": self.a2, "p": int(self.p), "mollify": self.mollify}

    def _natural_beta(self):
        return max(self.a1, self.a2, 1.0 / min(self.a1, self.a2))

    def coefficient(self, y):
        c1 = _indicator(_frac(y[..., 0]), 0.5, self.mollify)
        c2 = _indicator(_frac(y[..., 1]), 0.5, self.mollify)
        chi = c1 + c2 - 2.0 * c1 * c2
        return self.a1 + (self.a2 - self.a1) * chi

    def _energy(self, x, y, xi):
        sq = np.einsum("nij,nij->n", xi, xi)
        return self.coefficient(y) * sq ** (self.p / 2.0)

    def _stress(self, x, y, xi):
        sq = np.einsum("nij,nij->n", xi, xi)
        scale = self.coefficient(y) * self.p * sq ** (self.p / 2.0 - 1.0)
        return scale[:, None, None] * xi

    def interface_distance(self, y):
        if self.mollify > 0:
            return super().interface_distance(y)
        return np.minimum(
            _interface_distance_1d(_frac(y[..., 0]), (0.0, 0.5)),
            _interface_distance_1d(_frac(y[..., 1]), (0.0, 0.5)),
        )


def _double_well_beta(c, convexified):
    # W depends on t = xi11^2 and |xi|^2 = s^2 only.
    s = np.concatenate([np.linspace(0.0, 10.0, 20001), np.geomspace(10.0, BETA_RADIUS, 20001)])
    s2 = s * s
    # upper bracket: W is convex in t, so its max over t in [0, s^2] sits at an endpoint
    w_end = (s2 - 1.0) ** 2
    if convexified:
        w_end = np.where(s2 <= 1.0, 0.0, w_end)
    upper = np.max(np.maximum(1.0 + c * s2, w_end) / (1.0 + s2 * s2))
    # lower bracket: smallest W at given |xi| = s
    t = np.clip(1.0 + c / 2.0, 0.0, s2)
    well = (t - 1.0) ** 2
    if convexified:
        well = np.where(t <= 1.0, 0.0, well)
        t_in = np.minimum(1.0, s2)
        g = np.minimum(well + c * (s2 - t), c * (s2 - t_in))
    else:
        g = well + c * (s2 - t)
    lower = np.max((-g + np.sqrt(g * g + 4.0 * s2 * s2)) / 2.0)
    return float(max(upper, lower) * (1.0 + 1e-9))


class DoubleWell11(MaterialLaw):
    """(xi11^2 - 1)^2 + c (|xi|^2 - xi11^2): nonconvex in the (1,1) entry only."""

    family = "DoubleWell11"
    p = 4.0
    convexified = False

    def __init__(self, c=1.0):
        super().__init__()
        if c <= 0:
            raise ConfigError("rest weight c must be positive")
        self.c = float(c)

    def params(self):
        return {"c": self.c}

    def _natural_beta(self):
        return _double_well_beta(self.c, self.convexified)

    def _well(self, t):
        return (t * t - 1.0) ** 2

    def _well_slope(self, t):
        return 4.0 * t * (t * t - 1.0)

    def _energy(self, x, y, xi):
        t = xi[:, 0, 0]
        rest = np.einsum("nij,nij->n", xi, xi) - t * t
        return self._well(t) + self.c * rest

    def _stress(self, x, y, xi):
        g = 2.0 * self.c * xi
        g[:, 0, 0] = self._well_slope(xi[:, 0, 0])
        return g


class RelaxedDoubleWell11(DoubleWell11):
    """Closed-form quasiconvex envelope of :class:`DoubleWell11`."""

    family = "RelaxedDoubleWell11"
    convexified = True

    def _well(self, t):
        return np.where(np.abs(t) <= 1.0, 0.0, (t * t - 1.0) ** 2)

    def _well_slope(self, t):
        return np.where(np.abs(t) <= 1.0, 0.0, 4.0 * t * (t * t - 1.0))


class MacroModulated(MaterialLaw):
    """m(x_alpha) W_base(y; xi) with m = m0 (1 + amp sin(2 pi x1) sin(2 pi x2))."""

    family = "MacroModulated"
    depends_on_x = True

    def __init__(self, base, m0=1.0, amp=0.5):
        super().__init__()
        if isinstance(base, MacroModulated):
            raise ConfigError("MacroModulated cannot wrap another MacroModulated law")
        if m0 <= 0 or not abs(amp) < 1.0:
            raise ConfigError("modulation must stay positive: m0 > 0, |amp| < 1")
        self.base, self.m0, self.amp = base, float(m0), float(amp)
        self.p = base.p

    def params(self):
        return {"base": self.base.to_dict(), "m0": self.m0, "amp": self.amp}

    def modulation(self, x_alpha):
        x_alpha = np.asarray(x_alpha, dtype=float)
        return self.m0 * (
            1.0 + self.amp * np.sin(2 * np.pi * x_alpha[..., 0]) * np.sin(2 * np.pi * x_alpha[..., 1])
        )

    def _natural_beta(self):
        m_max = self.m0 * (1.0 + abs(self.amp))
        m_min = self.m0 * (1.0 - abs(self.amp))
        return self.base.beta * max(m_max, 1.0 / m_min)

    def _energy(self, x, y, xi):
        return self.modulation(x[:, :2]) * self.base._energy(x, y, xi)

    def _stress(self, x, y, xi):
        return self.modulation(x[:, :2])[:, None, None] * self.base._stress(x, y, xi)

    def interface_distance(self, y):
        return self.base.interface_distance(y)


FAMILIES = {
    cls.family: cls
    for cls in (HomogeneousQuadratic, LaminateQuadratic, CheckerboardPower, DoubleWell11,
                RelaxedDoubleWell11, MacroModulated)
}


def law_from_dict(d):
    """Build a law from its JSON block, e.g. ``{"family": "LaminateQuadratic", "a1": 1, ...}``."""
    d = dict(d)
    try:
        family = d.pop("family")
        cls = FAMILIES[family]
    except KeyError as exc:
        raise ConfigError(f"unknown or missing law family: {d.get('family', exc)}") from None
    beta = d.pop("beta", None)
    if cls is MacroModulated:
        d["base"] = law_from_dict(d["base"])
    try:
        law = cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {family}: {exc}") from None
    if beta is not None:
        law._beta_override = float(beta)
    return law


def relaxed_double_well(c):
    """Quasiconvexification of ``DoubleWell11(c)``.

    The nonconvexity lives in the rank-one direction e1 (x) e1 and the law is
    separable in that entry, so the quasiconvex, rank-one convex and convex
    envelopes all reduce to the 1D convex hull of t -> (t^2 - 1)^2.
    """
    return RelaxedDoubleWell11(c)


def _as_stacks(x, y_alpha, xi):
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 2
    xi = xi.reshape(-1, 3, 3)
    n = xi.shape[0]
    x = np.broadcast_to(np.asarray(x, dtype=float), (n, 3)) if np.ndim(x) == 1 else np.asarray(x, float)
    y = np.asarray(y_alpha, dtype=float)
    y = np.broadcast_to(y, (n, 2)) if y.ndim == 1 else y
    if not np.all(np.isfinite(xi)):
        raise ValueError("non-finite deformation gradient passed to a material law")
    return x, y, xi, single


def evaluate(law, x, y_alpha, xi):
    x, y, xi, single = _as_stacks(x, y_alpha, xi)
    w = law._energy(x, y, xi)
    return float(w[0]) if single else w


def gradient_xi(law, x, y_alpha, xi):
    x, y, xi, single = _as_stacks(x, y_alpha, xi)
    g = law._stress(x, y, np.array(xi))
    return g[0] if single else g


@dataclass
class HypothesisReport:
    law: dict
    sample_count: int
    passed: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    skipped_h1: int = 0

    @property
    def all_passed(self):
        return all(self.passed.values())

    def raise_if_failed(self):
        for name, ok in self.passed.items():
            if not ok:
                raise HypothesisFailure(name, self.witnesses[name])

    def to_dict(self):
        return {
            "law": self.law,
            "sample_count": self.sample_count,
            "passed": self.passed,
            "witnesses": self.witnesses,
            "skipped_h1": self.skipped_h1,
            "all_passed": self.all_passed,
        }


def _witness(x, y, xi, **extra):
    return {"x": x.tolist(), "y_alpha": y.tolist(), "xi": xi.tolist(),
            **{k: float(v) for k, v in extra.items()}}


def check_hypotheses(law, sample_count=100, seed=0):
    """Sample-based check of the growth bracket, periodicity and continuity.

    Samples ``x`` in the closure of (0,1)^2 x (-1,1), ``y_alpha`` in [-2, 2]^2
    and ``xi`` with |xi| <= 10.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = sample_count
    x = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n), rng.uniform(-1, 1, n)])
    y = rng.uniform(-2, 2, (n, 2))
    direction = rng.normal(size=(n, 3, 3))
    direction /= np.linalg.norm(direction, axis=(1, 2))[:, None, None]
    xi = direction * rng.uniform(0, 10, n)[:, None, None]

    report = HypothesisReport(law=law.to_dict(), sample_count=n)
    w = law._energy(x, y, xi)
    norm_p = np.linalg.norm(xi, axis=(1, 2)) ** law.p
    beta = law.beta
    tol = 1e-12 * (1.0 + np.abs(w))
    bad = (w < norm_p / beta - beta - tol) | (w > beta * (1.0 + norm_p) + tol) | ~np.isfinite(w)
    report.passed["H3"] = not bad.any()
    if bad.any():
        i = int(np.argmax(bad))
        report.witnesses["H3"] = _witness(x[i], y[i], xi[i], W=w[i], lower=norm_p[i] / beta - beta,
                                          upper=beta * (1 + norm_p[i]), beta=beta)
    else:
        report.witnesses["H3"] = None

    ok = True
    report.witnesses["H4"] = None
    for shift in ((1.0, 0.0), (0.0, 1.0), (2.0, -3.0)):
        ws = law._energy(x, y + np.array(shift), xi)
        bad = np.abs(ws - w) > 1e-12 * (1.0 + np.abs(w))
        if bad.any():
            i = int(np.argmax(bad))
            ok = False
            report.witnesses["H4"] = _witness(x[i], y[i], xi[i], W=w[i], W_shifted=ws[i],
                                              shift_1=shift[0], shift_2=shift[1])
            break
    report.passed["H4"] = ok

    dy = rng.normal(size=(n, 2))
    dy /= np.linalg.norm(dy, axis=1)[:, None]
    dxi = rng.normal(size=(n, 3, 3))
    dxi /= np.linalg.norm(dxi, axis=(1, 2))[:, None, None]
    deltas = 10.0 ** -np.arange(1, 7)
    # a probe segment of length delta_min must not straddle a declared jump
    keep = law.interface_distance(y) > deltas[-1] + 1e-9
    report.skipped_h1 = int(np.count_nonzero(~keep))
    diffs = np.stack([np.abs(law._energy(x, y + d * dy, xi + d * dxi) - w) for d in deltas])
    final_ok = diffs[-1] <= 1e-3 * (1.0 + np.abs(w))
    trend_ok = diffs[-1] <= diffs[0] + 1e-12 * (1.0 + np.abs(w))
    bad = keep & ~(final_ok & trend_ok)
    report.passed["H1"] = not bad.any()
    report.witnesses["H1"] = None
    if bad.any():
        i = int(np.argmax(bad))
        report.witnesses["H1"] = _witness(x[i], y[i], xi[i], W=w[i], diff_final=diffs[-1, i])
    return report
