"""The JE-I field v(x, y, t), closed-form solitons, PDE residuals and KP maps.

The field is v = 2 d/dx K(x, x, y, t).  It solves

    (v_t + v_xxx / 4 + 3/2 v v_x + v / 2t)_x = (12 / t^2) v_yy

and is related to a KP-I field u(xi, eta, tau) by a coordinate change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import marchenko
from .kernel import build_rule, window_refs
from .spectral import Atom, MeasureSpec

SOURCES = ("marchenko", "one_soliton", "asymptotic_train", "logdet")
DEFAULT_STEPS = {"h_x": 1e-2, "h_y": 1e-2, "h_t": 1e-3}


@dataclass(frozen=True)
class FieldSample:
    x: float
    y: float
    t: float
    v: float
    source: str
    reality_resid: float = 0.0
    cond_est: float = math.nan
    quad_err: float = 0.0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class SolitonAtomParams:
    """Parameters (p, q, c) of the closed-form soliton."""

    p: float
    q: float
    c: float

    def __post_init__(self):
        if not (self.q > 0 and self.c > 0):
            raise ValueError("soliton needs q > 0 and c > 0")

    def to_atom(self) -> Atom:
        # the closed form carries -py/2 in its velocity, the kernel +py/2: flip p
        return Atom(-self.p, self.q, self.c)

    def measure(self) -> MeasureSpec:
        return MeasureSpec(atoms=(self.to_atom(),))


def sech2(a):
    """1/cosh(a)^2 without overflow."""
    e = np.exp(-2.0 * np.abs(a))
    return 4.0 * e / (1.0 + e) ** 2


def one_soliton(params: SolitonAtomParams, x, y, t):
    """v = 2q^2 / cosh^2[q(x - (q^2 - 3p^2 - y^2/48 - py/2) t - ln(c/2q) / 2q)]."""
    p, q, c = params.p, params.q, params.c
    x, y, t = (np.asarray(a, dtype=float) for a in (x, y, t))
    vel = q * q - 3 * p * p - y * y / 48 - p * y / 2
    arg = q * (x - vel * t - math.log(c / (2 * q)) / (2 * q))
    out = 2 * q * q * sech2(arg)
    return out if out.ndim else float(out)


def one_soliton_peak(params: SolitonAtomParams, y, t):
    p, q, c = params.p, params.q, params.c
    return (q * q - 3 * p * p - y * y / 48 - p * y / 2) * t + math.log(c / (2 * q)) / (2 * q)


def eval_v(measure, domain, x, y, t, **solver_kw) -> FieldSample:
    """v = 2 Re dK(x, x)/dx from a full Marchenko solve."""
    if t <= 0:
        raise ValueError("t must be positive")
    if measure.is_zero:
        return FieldSample(x, y, t, 0.0, "marchenko", 0.0, 1.0, 0.0)
    sol = marchenko.solve(measure, domain, x, y, t, **solver_kw)
    return FieldSample(float(x), float(y), float(t), 2.0 * sol.K_diag_dx.real, "marchenko",
                       abs(sol.K_diag_dx.imag), sol.cond_estimate, 0.0)


class MarchenkoField:
    """Marchenko sampler with one kernel rule and one truncation length.

    Freezing the node set and L keeps v a smooth function of (x, y, t)
    near the anchor, which finite-difference residuals rely on.
    """

    def __init__(self, measure, domain, x, y, t, span=1.0, n_nodes=64, L=None, rtol=1e-9,
                 edge_tol=1e-12, rule=None):
        self.measure, self.domain = measure, domain
        self.n_nodes = n_nodes
        self.L = L if L is not None else marchenko.choose_truncation(measure, domain, x - span, y, t,
                                                                      edge_tol)
        if rule is None:
            rule = build_rule(measure, domain, y, t,
                              window_refs(x - span - 0.5, x + span + self.L + 0.5), rtol=rtol)
        self.rule = rule
        self.quad_err = rule.rel_err + rule.skipped_bound
        self._table = None

    @property
    def table(self):
        if self._table is None:
            self._table = marchenko.TranslationTable(self.rule, self.L, self.n_nodes)
        return self._table

    def solve(self, x, y, t, diagnostics=False):
        return marchenko.solve_rule(self.rule, x, y, t, self.L, self.n_nodes,
                                    diagnostics=diagnostics, table=self.table)

    def __call__(self, x, y, t):
        if self.rule.is_empty:
            return 0.0
        return 2.0 * marchenko.k_diag_dx(self.rule, x, y, t, self.L, self.n_nodes, self.table).real

    def sample(self, x, y, t) -> FieldSample:
        if self.rule.is_empty:
            return FieldSample(float(x), float(y), float(t), 0.0, "marchenko", 0.0, 1.0, 0.0)
        sol = self.solve(x, y, t, diagnostics=True)
        return FieldSample(float(x), float(y), float(t), 2.0 * sol.K_diag_dx.real, "marchenko",
                           abs(sol.K_diag_dx.imag), sol.cond_estimate, self.quad_err)


# -- finite differences ------------------------------------------------------

_D1 = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
_D2 = ((-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12))
_D3 = ((-3, 1 / 8), (-2, -1.0), (-1, 13 / 8), (1, -13 / 8), (2, 1.0), (3, -1 / 8))


def _diff(fun, v, h, stencil, power):
    return sum(c * fun(v + k * h) for k, c in stencil) / h ** power


def _memo(sampler):
    return lru_cache(maxsize=None)(lambda x, y, t: float(sampler(x, y, t)))


def je_residual(sampler, x, y, t, h_x=1e-2, h_y=1e-2, h_t=1e-3):
    """(v_t + v_xxx/4 + 3/2 v v_x + v/2t)_x - (12/t^2) v_yy by fourth-order differences."""
    if t <= 0:
        raise ValueError("t must be positive")
    v = _memo(sampler)

    def inner(xx):
        vt = _diff(lambda s: v(xx, y, s), t, h_t, _D1, 1)
        vx = _diff(lambda s: v(s, y, t), xx, h_x, _D1, 1)
        vxxx = _diff(lambda s: v(s, y, t), xx, h_x, _D3, 3)
        val = v(xx, y, t)
        return vt + vxxx / 4 + 1.5 * val * vx + val / (2 * t)

    lhs = _diff(inner, x, h_x, _D1, 1)
    vyy = _diff(lambda s: v(x, s, t), y, h_y, _D2, 2)
    return lhs - 12.0 / (t * t) * vyy


def kp_residual(sampler, xi, eta, tau, h_x=1e-2, h_y=1e-2, h_t=1e-3):
    """(u_tau + u_xixixi/4 + 3/2 u u_xi)_xi - 3/4 u_etaeta (KP-I)."""
    u = _memo(sampler)

    def inner(s0):
        ut = _diff(lambda s: u(s0, eta, s), tau, h_t, _D1, 1)
        ux = _diff(lambda s: u(s, eta, tau), s0, h_x, _D1, 1)
        uxxx = _diff(lambda s: u(s, eta, tau), s0, h_x, _D3, 3)
        return ut + uxxx / 4 + 1.5 * u(s0, eta, tau) * ux

    lhs = _diff(inner, xi, h_x, _D1, 1)
    uyy = _diff(lambda s: u(xi, s, tau), eta, h_y, _D2, 2)
    return lhs - 0.75 * uyy


# -- KP <-> JE ---------------------------------------------------------------

def kp_from_je(v):
    """u(xi, eta, tau) = v(xi - eta^2 / 3tau, 4 eta / tau, tau)."""
    return lambda xi, eta, tau: v(xi - eta * eta / (3 * tau), 4 * eta / tau, tau)


def je_from_kp(u):
    """v(x, y, t) = u(x + y^2 t / 48, y t / 4, t)."""
    return lambda x, y, t: u(x + y * y * t / 48, y * t / 4, t)
