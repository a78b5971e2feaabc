"""Spectral geometry of the dressing construction.

Houses the amplitude profile C(s), the phase function f(p, q, y), the
domain Omega = {eps <= q <= h(p)} in the upper half plane, the spectral
measure, and validators for the admissibility conditions A-C.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize
from scipy.interpolate import make_interp_spline

CURVATURE_FLOOR = -1.0 / 24.0
ROOF_MODES = ("paper_locus", "max_consistent")


class SpectralError(ValueError):
    """Inconsistent spectral data (negative radicand, folded roof, ...)."""


def phase(p, q, y):
    """f(p, q, y) = q^2 - 3p^2 + p y / 2 - y^2 / 48."""
    return q * q - 3.0 * p * p + p * y / 2.0 - y * y / 48.0


@dataclass(frozen=True)
class SpectralPoint:
    p: float
    q: float


@dataclass(frozen=True)
class AmplitudeProfile:
    """The function C(s) with its first two derivatives.

    ``kind`` is one of ``constant`` (C = b^2, coeffs = (b,)), ``quadratic``
    (C = a2 s^2 + a0, coeffs = (a2, a0)) or ``tabulated`` (interpolating
    spline through ``samples``).
    """

    kind: str
    coeffs: tuple = ()
    delta: float = 0.0
    epsilon: float = 0.0
    samples: tuple = ()
    spline_order: int = 3
    s_range: tuple = (-6.0, 6.0)

    def __post_init__(self):
        if self.kind not in ("constant", "quadratic", "tabulated"):
            raise SpectralError(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated" and len(self.samples[0]) < self.spline_order + 1:
            raise SpectralError("tabulated profile needs more samples than the spline order")

    @classmethod
    def constant(cls, b, delta=None, epsilon=0.5, s_range=(-6.0, 6.0)):
        return cls("constant", (float(b),), b * b if delta is None else delta, epsilon, s_range=s_range)

    @classmethod
    def quadratic(cls, a2, a0, delta=None, epsilon=0.1, s_range=(-6.0, 6.0)):
        return cls("quadratic", (float(a2), float(a0)), a0 if delta is None else delta, epsilon,
                   s_range=s_range)

    @classmethod
    def tabulated(cls, s, c, delta, epsilon, spline_order=3):
        s = tuple(float(v) for v in s)
        c = tuple(float(v) for v in c)
        return cls("tabulated", (), delta, epsilon, samples=(s, c), spline_order=spline_order,
                   s_range=(s[0], s[-1]))

    @property
    def quadratic_coeffs(self):
        """(a2, a0) for closed-form kinds, None for tabulated profiles."""
        if self.kind == "constant":
            return 0.0, self.coeffs[0] ** 2
        if self.kind == "quadratic":
            return self.coeffs
        return None

    @cached_property
    def _spline(self):
        s, c = self.samples
        return make_interp_spline(np.asarray(s), np.asarray(c), k=self.spline_order)

    def C(self, s):
        qc = self.quadratic_coeffs
        if qc is not None:
            return qc[0] * np.asarray(s, dtype=float) ** 2 + qc[1]
        return self._spline(s)

    def dC(self, s):
        qc = self.quadratic_coeffs
        if qc is not None:
            return 2.0 * qc[0] * np.asarray(s, dtype=float)
        return self._spline.derivative(1)(s)

    def d2C(self, s):
        qc = self.quadratic_coeffs
        if qc is not None:
            return np.full_like(np.asarray(s, dtype=float), 2.0 * qc[0])
        return self._spline.derivative(2)(s)

    def to_dict(self):
        d = {"kind": self.kind, "delta": self.delta, "epsilon": self.epsilon,
             "s_range": list(self.s_range)}
        if self.kind == "constant":
            d["b"] = self.coeffs[0]
        elif self.kind == "quadratic":
            d["a2"], d["a0"] = self.coeffs
        else:
            d["s"], d["c"] = list(self.samples[0]), list(self.samples[1])
            d["spline_order"] = self.spline_order
        return d


def tangency_point(profile: AmplitudeProfile, y: float) -> SpectralPoint:
    """Printed touching point (C'(y) + y/12, sqrt(C(y) + 3 C'(y)^2))."""
    c, dc = float(profile.C(y)), float(profile.dC(y))
    rad = c + 3.0 * dc * dc
    if rad <= 0:
        raise SpectralError(f"C(y) + 3C'(y)^2 = {rad:g} <= 0 at y={y:g}")
    return SpectralPoint(dc + y / 12.0, math.sqrt(rad))


# -- roof curve -------------------------------------------------------------

def _locus_parameter(profile, p):
    """Solve C'(s) + s/12 = p for s (the locus parameter of the printed touching points)."""
    g = lambda s: float(profile.dC(s)) + s / 12.0 - p
    lo, hi = 12.0 * p - 1.0, 12.0 * p + 1.0
    for _ in range(200):
        if g(lo) <= 0.0 <= g(hi):
            break
        step = hi - lo
        lo, hi = lo - step, hi + step
    else:
        raise SpectralError(f"cannot bracket the locus parameter for p={p:g}")
    return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def _envelope_objective(profile, p):
    return lambda s: float(profile.C(s)) + 3.0 * p * p - p * s / 2.0 + s * s / 48.0


def _bracket_min(fun, x0, step=1.0):
    """Expand a bracket (a, b, c) with f(b) <= f(a), f(c) around x0; ties move left."""
    a, b = x0 - step, x0
    fa, fb = fun(a), fun(b)
    if fa <= fb:
        a, b, fa, fb = b, a, fb, fa
    c = b + (b - a)
    fc = fun(c)
    for _ in range(200):
        if fb < fc:
            break
        a, b, fa, fb = b, c, fb, fc
        c = b + 2.0 * (b - a)
        fc = fun(c)
    else:
        raise SpectralError("envelope objective is unbounded below")
    return (a, b, c) if a < c else (c, b, a)


def _golden_min(fun, bracket, rtol=1e-12):
    """Golden-section refinement of a bracketing triple."""
    a, _, c = bracket
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    f1, f2 = fun(x1), fun(x2)
    while abs(c - a) > rtol * max(1.0, abs(x1) + abs(x2)):
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - invphi * (c - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (c - a)
            f2 = fun(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def envelope_height(profile: AmplitudeProfile, mode: str, p: float) -> float:
    """Roof height h(p) computed numerically.

    ``paper_locus`` inverts the locus of printed touching points,
    ``max_consistent`` uses h(p)^2 = min_s [C(s) + 3p^2 - p s/2 + s^2/48].
    """
    if mode == "paper_locus":
        d2 = profile.d2C(np.linspace(*profile.s_range, 2001)) + 1.0 / 12.0
        if np.any(d2 <= 0):
            s_bad = np.linspace(*profile.s_range, 2001)[np.argmax(d2 <= 0)]
            raise SpectralError(f"touching-point locus folds near s={s_bad:g}")
        s = _locus_parameter(profile, p)
        return float(tangency_point(profile, s).q)
    if mode == "max_consistent":
        fun = _envelope_objective(profile, p)
        _, val = _golden_min(fun, _bracket_min(fun, 12.0 * p))
        if val <= 0:
            raise SpectralError(f"envelope h(p)^2 = {val:g} <= 0 at p={p:g}")
        return math.sqrt(val)
    raise SpectralError(f"unknown roof mode {mode!r}")


def _closed_form_roof(profile, mode, p):
    a2, a0 = profile.quadratic_coeffs
    p = np.asarray(p, dtype=float)
    if mode == "paper_locus":
        s = p / (2.0 * a2 + 1.0 / 12.0)
        return np.sqrt(a2 * s * s + a0 + 3.0 * (2.0 * a2 * s) ** 2)
    s = p / (4.0 * (a2 + 1.0 / 48.0))
    return np.sqrt(a2 * s * s + a0 + 3.0 * p * p - p * s / 2.0 + s * s / 48.0)


@dataclass(frozen=True)
class SpectralDomain:
    """Omega = {(p, q): p in p_range, eps <= q <= h(p)}."""

    profile: AmplitudeProfile
    roof_mode: str = "paper_locus"
    p_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.roof_mode not in ROOF_MODES:
            raise SpectralError(f"unknown roof mode {self.roof_mode!r}")
        if not self.p_range[0] < self.p_range[1]:
            raise SpectralError("empty p_range")

    @property
    def epsilon(self):
        return self.profile.epsilon

    def roof(self, p):
        """Vectorised h(p); closed forms for constant/quadratic profiles."""
        if self.profile.quadratic_coeffs is not None:
            return _closed_form_roof(self.profile, self.roof_mode, p)
        p = np.asarray(p, dtype=float)
        h = np.vectorize(lambda v: envelope_height(self.profile, self.roof_mode, v))(p)
        return h if h.ndim else float(h)

    def roof_curvature(self, p, step=1e-3):
        """h''(p) by the 5-point stencil."""
        h = self.roof(p + step * np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
        return float((-h[0] + 16 * h[1] - 30 * h[2] + 16 * h[3] - h[4]) / (12 * step * step))

    def contains(self, pt: SpectralPoint, strict=False):
        h = float(self.roof(pt.p))
        lo, hi = self.p_range
        if strict:
            return lo < pt.p < hi and self.epsilon < pt.q < h
        return lo <= pt.p <= hi and self.epsilon <= pt.q <= h


@dataclass(frozen=True)
class MaxPoint:
    point: SpectralPoint
    value: float
    C: float
    excess: float
    violation: bool


def max_point(domain: SpectralDomain, y: float, tol=1e-8) -> MaxPoint:
    """argmax of f(., ., y) over Omega; searched on the roof since f grows with q."""
    lo, hi = domain.p_range
    ps = np.linspace(lo, hi, 4001)
    vals = phase(ps, domain.roof(ps), y)
    i = int(np.argmax(vals))  # first index on ties: smaller p wins
    a, b = ps[max(i - 1, 0)], ps[min(i + 1, ps.size - 1)]
    obj = lambda p: -float(phase(p, domain.roof(p), y))
    res = optimize.minimize_scalar(obj, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, abs(ps[i]))})
    p_best, v_best = (res.x, -res.fun) if -res.fun >= vals[i] else (ps[i], vals[i])
    c = float(domain.profile.C(y))
    pt = SpectralPoint(float(p_best), float(domain.roof(p_best)))
    return MaxPoint(pt, float(v_best), c, float(v_best - c), bool(v_best - c > tol))


# -- measure ---------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    p: float
    q: float
    weight: float


def _density_gaussian_p(k=12.0, amp=1.0):
    la = math.log(amp)
    return lambda p, q: la - (k * p) ** 2 + 0.0 * q


def _density_gaussian_pq(a_p=18.0, a_q=2.0, c0=0.5):
    return lambda p, q: -(a_p * p * p + a_q * q * q - c0)


def _density_algebraic_p(k=12.0, alpha=4):
    return lambda p, q: -np.log1p((k * p) ** (2 * alpha)) + 0.0 * q


def _density_growing_p(k=1.0):
    return lambda p, q: (k * p) ** 2 + 0.0 * q


DENSITIES: dict[str, Callable] = {
    "gaussian_p": _density_gaussian_p,      # exp(-(k p)^2)
    "gaussian_pq": _density_gaussian_pq,    # exp(-(a_p p^2 + a_q q^2 - c0))
    "algebraic_p": _density_algebraic_p,    # 1 / (1 + (k p)^(2 alpha))
    "growing_p": _density_growing_p,        # exp(+(k p)^2), inadmissible on purpose
}


@dataclass(frozen=True)
class Density:
    """Smooth density g~(p, q) given by a registry id and parameters."""

    id: str
    params: tuple = ()

    def __post_init__(self):
        if self.id not in DENSITIES:
            raise SpectralError(f"unknown density id {self.id!r}")

    @cached_property
    def _log(self):
        return DENSITIES[self.id](**dict(self.params))

    def log_density(self, p, q):
        return self._log(np.asarray(p, dtype=float), np.asarray(q, dtype=float))

    def __call__(self, p, q):
        return np.exp(self.log_density(p, q))


@dataclass(frozen=True)
class MeasureSpec:
    """d mu = sum of weighted Dirac atoms + density dp dq on Omega.

    ``moment`` selects the integrability check: ``exponential`` uses the
    exponential moments for each a in ``moment_a``; ``weak`` uses
    int d mu / (1 + (k p)^(2 alpha)) < inf.
    """

    atoms: tuple = ()
    density: Density | None = None
    moment: str = "exponential"
    moment_a: tuple = (1.0, 4.0)
    weak_alpha: int = 4
    weak_k: float = 12.0
    g_bound: float | None = None

    @property
    def is_zero(self):
        return not self.atoms and self.density is None


def normalization_g(measure: MeasureSpec, profile: AmplitudeProfile, y):
    """g(y): density at the touching point (p0(y), q0(y))."""
    if measure.density is None:
        raise SpectralError("g(y) is only defined for measures with a density")
    pt = tangency_point(profile, y)
    return float(measure.density(pt.p, pt.q))


# -- validation ------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    fatal: bool = True


@dataclass
class ConditionsReport:
    checks: list = field(default_factory=list)
    tail_bound: float = 0.0

    @property
    def ok(self):
        return all(c.passed for c in self.checks if c.fatal)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, detail="", fatal=True):
        self.checks.append(Check(name, bool(passed), detail, fatal))

    def lines(self):
        out = []
        for c in self.checks:
            tag = "PASS" if c.passed else ("FAIL" if c.fatal else "WARN")
            out.append(f"[{tag}] {c.name}: {c.detail}")
        out.append(f"tail bound on truncated p_range: {self.tail_bound:.3e}")
        return out


def _omega_rule(domain, p_lo, p_hi, n_panels=64, order=16):
    """Tensor Gauss-Legendre nodes on {p_lo <= p <= p_hi, eps <= q <= h(p)}."""
    x, w = leggauss(order)
    edges = np.linspace(p_lo, p_hi, n_panels + 1)
    mid, half = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    p = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wp = (half[:, None] * w[None, :]).ravel()
    h = domain.roof(p)
    eps = domain.epsilon
    u = (x + 1.0) / 2.0
    q = eps + (h - eps)[:, None] * u[None, :]
    wq = ((h - eps) / 2.0)[:, None] * w[None, :]
    return np.repeat(p, order), q.ravel(), (wp[:, None] * wq).ravel()


def moment_integral(measure, domain, a, p_lo, p_hi, weak=False):
    """Integral of the moment weight against the density over part of Omega."""
    p, q, w = _omega_rule(domain, p_lo, p_hi)
    logd = measure.density.log_density(p, q)
    if weak:
        logm = -np.log1p((measure.weak_k * p) ** (2 * measure.weak_alpha))
    else:
        logm = a * (q + np.abs(p))
    total = float(np.sum(w * np.exp(np.minimum(logd + logm, 700.0))))
    atoms = 0.0
    for at in measure.atoms:
        if p_lo <= at.p <= p_hi:
            atoms += at.weight * (1.0 / (1 + (measure.weak_k * at.p) ** (2 * measure.weak_alpha))
                                  if weak else math.exp(a * (at.q + abs(at.p))))
    return total + atoms


def _tail_fraction(measure, domain, a, weak, doublings=6):
    """Relative tail of the moment integral beyond p_range and a divergence flag.

    Shells [lo - w_k, lo - w_(k-1)] and [hi + w_(k-1), hi + w_k] with doubling
    widths are integrated separately; growing or stagnating shells signal
    divergence.
    """
    lo, hi = domain.p_range
    span = hi - lo
    core = moment_integral(measure, domain, a, lo, hi, weak)
    shells = []
    inner = 0.0
    for k in range(doublings):
        outer = span * 2 ** k / 2
        shells.append(moment_integral(measure, domain, a, lo - outer, lo - inner, weak)
                      + moment_integral(measure, domain, a, hi + inner, hi + outer, weak))
        inner = outer
    total = core + sum(shells)
    diverging = bool(shells[-1] > 1e-8 * total and shells[-1] >= 0.5 * shells[-2])
    return (sum(shells) / total if total > 0 else 0.0), diverging


def validate_conditions(profile, domain, measure, n_s=201, grid=200, n_s_max=50,
                        tol=1e-8, tail_target=1e-12) -> ConditionsReport:
    """Check Conditions A-C on samples; report-only, never raises."""
    rep = ConditionsReport()
    eps, delta = profile.epsilon, profile.delta
    s = np.linspace(*profile.s_range, n_s)

    # Condition A
    c = profile.C(s)
    rep.add("A.delta_gt_eps2", delta > eps * eps, f"delta={delta:g}, eps^2={eps * eps:g}")
    bad = np.flatnonzero(c < delta)
    rep.add("A.C_ge_delta", bad.size == 0,
            "min C = %.6g" % c.min() + (f"; witness s={s[bad[0]]:g}" if bad.size else ""))
    d2 = profile.d2C(s)
    bad = np.flatnonzero(d2 <= CURVATURE_FLOOR)
    rep.add("A.curvature", bad.size == 0,
            "min C'' = %.6g" % d2.min()
            + (f"; witness s={s[bad[0]]:g}, C''={d2[bad[0]]:g} <= -1/24" if bad.size else ""))

    # Condition B
    try:
        ps = np.linspace(*domain.p_range, grid)
        h = domain.roof(ps)
        bad = np.flatnonzero(h <= eps)
        rep.add("B.roof_above_floor", bad.size == 0,
                "min h = %.6g" % h.min() + (f"; witness p={ps[bad[0]]:g}" if bad.size else ""))
        qs = eps + (h - eps)[:, None] * np.linspace(0.0, 1.0, grid)[None, :]
        s_chk = np.linspace(*profile.s_range, n_s_max)
        excess = max(float(np.max(phase(ps[:, None], qs, sv) - profile.C(sv))) for sv in s_chk)
        rep.add("B.max_consistency", excess <= tol,
                f"max_(p,q,s) f - C(s) = {excess:.3e}",
                fatal=domain.roof_mode == "max_consistent")
    except SpectralError as exc:
        rep.add("B.roof", False, str(exc))

    # Condition C
    for at in measure.atoms:
        inside = domain.contains(SpectralPoint(at.p, at.q), strict=True)
        rep.add("C.atom_inside", inside and at.weight > 0, f"atom {at}")
    if measure.density is not None:
        try:
            ps = np.linspace(*domain.p_range, grid)
            qs = eps + (domain.roof(ps) - eps)[:, None] * np.linspace(0.0, 1.0, 50)[None, :]
            vals = measure.density(ps[:, None], qs)
            rep.add("C.density_positive", bool(np.all(vals > 0) and np.all(np.isfinite(vals))),
                    "min density = %.3e" % np.min(vals))
            if measure.moment == "weak":
                cases = [(None, True)]
            else:
                cases = [(a, False) for a in measure.moment_a]
            worst = 0.0
            for a, weak in cases:
                tail, diverging = _tail_fraction(measure, domain, a, weak)
                name = "C.weak_moment" if weak else f"C.moment[a={a:g}]"
                rep.add(name, not diverging, f"relative tail beyond p_range = {tail:.3e}")
                rep.add(name + ".truncation", diverging or tail < tail_target,
                        f"tail {tail:.3e} vs target {tail_target:.0e}", fatal=False)
                worst = max(worst, tail)
            rep.tail_bound = worst
            if measure.g_bound is not None:
                gs = np.array([normalization_g(measure, profile, v) for v in s])
                rep.add("C.g_bounded", bool(np.all(gs < measure.g_bound)),
                        f"max g = {gs.max():.4g} vs A = {measure.g_bound:g}")
        except SpectralError as exc:
            rep.add("C.density", False, str(exc))
    return rep
