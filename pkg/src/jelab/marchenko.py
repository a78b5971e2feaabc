"""Nystrom solution of the Marchenko equation on a truncated half-line.

    K(x, z) + F(x, z) + int_x^inf K(x, s) F(s, z) ds = 0,   z >= x

z is the running variable, x a parameter.  The half-line is cut at x + L
and discretised with composite Gauss-Legendre nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numpy.polynomial.legendre import leggauss
from scipy.linalg import blas, lapack

from .kernel import KernelRule, atom_rule, build_rule, feature_map, window_refs

LADDER = tuple(float(v) for v in np.sqrt(2.0) ** np.arange(0, 15))  # 1 .. 128
PANEL_ORDER = 16


class TruncationError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class MarchenkoSolution:
    base_x: float
    nodes: np.ndarray
    weights: np.ndarray
    K_row: np.ndarray
    F_row: np.ndarray
    K_diag: complex
    K_diag_dx: complex
    cond_estimate: float
    min_eig: float
    truncation_L: float

    @property
    def edge_value(self):
        return abs(self.K_row[-1]) if self.K_row.size else 0.0


def composite_gl(a, b, n_nodes, panel_order=PANEL_ORDER):
    if n_nodes % panel_order:
        raise ValueError(f"n_nodes must be a multiple of {panel_order}")
    x, w = leggauss(panel_order)
    edges = np.linspace(a, b, n_nodes // panel_order + 1)
    mid, half = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _diag_F(rule, x, y, t):
    if rule.is_empty:
        return 0.0
    phi = feature_map(rule, [x], y, t)
    return float(np.sum(np.abs(phi) ** 2))


def choose_truncation(measure, domain, x, y, t, edge_tol=1e-12, rule=None, abs_floor=1e-300):
    """Smallest ladder L with F(x+L, x+L) < edge_tol * F(x, x)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if rule is None and measure.density is None:
        rule = atom_rule(measure, y, t)
    if rule is not None:
        diag = lambda xx: _diag_F(rule, xx, y, t)
    else:
        def diag(xx):
            r = build_rule(measure, domain, y, t, [[2 * xx, 0.0]], rtol=1e-4)
            return _diag_F(r, xx, y, t)
    f0 = diag(x)
    if f0 <= abs_floor:
        return LADDER[0]
    ratio = math.inf
    for L in LADDER:
        ratio = diag(x + L) / f0
        if ratio < edge_tol:
            return L
    raise TruncationError(f"truncation ladder exhausted at L={LADDER[-1]:g}; ratio {ratio:.3e}")


class TranslationTable:
    """exp(lambda_k z_i) on reference nodes z_i in [0, L] for a fixed rule.

    The Nystrom nodes at base x are x + z_i, so the features there factor as
    phi_k(x) exp(lambda_k z_i); the table is shared by every base point,
    y and t that use the same rule, L and node count.
    """

    def __init__(self, rule, L, n_nodes):
        self.rule, self.L, self.n_nodes = rule, float(L), n_nodes
        self.z, self.w = composite_gl(0.0, self.L, n_nodes)
        lam = 1j * rule.p - rule.q
        self.sw = np.sqrt(self.w)
        # sqrt(w_i) exp(lambda_k z_i); row-major, see _gram
        self.EW = self.sw[:, None] * np.exp(np.outer(self.z, lam))

    def matches(self, rule, L, n_nodes):
        return self.rule is rule and self.L == float(L) and self.n_nodes == n_nodes


def _gram(G):
    """G G^H through the Hermitian rank-k update (upper half), mirrored.

    A row-major G is a column-major G^T, so zherk forms conj(G G^H) as
    (G^T)^H G^T without copying.
    """
    if G.shape[1] == 0:
        return np.zeros((G.shape[0], G.shape[0]), dtype=complex)
    U = blas.zherk(1.0, np.ascontiguousarray(G).T, trans=2).conj()
    return np.triu(U) + np.triu(U, 1).conj().T


class _Nystrom:
    """Discrete Marchenko system at one base point."""

    def __init__(self, rule, x, y, t, L, n_nodes, table=None):
        if table is None or not table.matches(rule, L, n_nodes):
            table = TranslationTable(rule, L, n_nodes)
        self.nodes, self.w, self.sw = x + table.z, table.w, table.sw
        if rule.is_empty:
            phi_x = np.zeros(0, dtype=complex)
        else:
            phi_x = feature_map(rule, [x], y, t)[0]
        G = table.EW * phi_x                          # W^1/2 times features at the nodes
        self.S = _gram(G)                             # W^1/2 F W^1/2, Hermitian PSD
        self.f_row = (G @ phi_x.conj()).conj() / self.sw  # F(x, z_j)
        self.F_xx = float(np.sum(np.abs(phi_x) ** 2))
        M = np.eye(n_nodes) + self.S
        try:
            self.lu = sla.lu_factor(M, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"Marchenko system factorisation failed: {exc}") from exc
        self.anorm = float(np.max(np.sum(np.abs(M), axis=0)))

    def solve(self):
        # k (I + W F) = -f  <=>  m (I + S) = -f W^1/2 with m = k W^1/2
        m = sla.lu_solve(self.lu, -(self.f_row * self.sw), trans=1)
        if not np.all(np.isfinite(m)):
            raise SolverError("singular Marchenko system")
        k = m / self.sw
        K_diag = -self.F_xx - np.sum(self.w * k * self.f_row.conj())
        return k, complex(K_diag)

    def diagnostics(self):
        rcond, info = lapack.zgecon(self.lu[0], self.anorm, norm="1")
        cond = 1.0 / rcond if rcond > 0 else math.inf
        min_eig = float(np.linalg.eigvalsh(self.S)[0]) if self.S.size else 0.0
        return cond, min_eig


def k_diag(rule, x, y, t, L, n_nodes, table=None):
    return _Nystrom(rule, x, y, t, L, n_nodes, table).solve()[1]


def richardson_dx(fun, x, h):
    """d/dx fun at x: central differences at h, h/2, h/4 with two Richardson sweeps."""
    D = [(fun(x + s) - fun(x - s)) / (2 * s) for s in (h, h / 2, h / 4)]
    R1 = [(4 * D[1] - D[0]) / 3, (4 * D[2] - D[1]) / 3]
    return (16 * R1[1] - R1[0]) / 15


def default_step(rule, L, n_nodes):
    """Richardson step: below the node spacing and the kernel's decay length."""
    qmax = float(np.max(rule.q)) if rule.size else 1.0
    return min(0.5 * L / n_nodes, 0.1 / max(qmax, 1e-3))


def k_diag_dx(rule, x, y, t, L, n_nodes, table=None, h=None):
    """d/dx K(x, x) alone: the six Richardson re-solves, no solve at x itself."""
    if table is None or not table.matches(rule, L, n_nodes):
        table = TranslationTable(rule, L, n_nodes)
    h = default_step(rule, L, n_nodes) if h is None else h
    return complex(richardson_dx(lambda xx: k_diag(rule, xx, y, t, L, n_nodes, table), x, h))


def solve_rule(rule: KernelRule, x, y, t, L, n_nodes=96, h=None, diagnostics=True, table=None):
    """Solve at base x with a prebuilt kernel rule and fixed truncation."""
    if n_nodes < 16:
        raise ValueError("n_nodes must be >= 16")
    if table is None or not table.matches(rule, L, n_nodes):
        table = TranslationTable(rule, L, n_nodes)
    sys_ = _Nystrom(rule, x, y, t, L, n_nodes, table)
    k, kd = sys_.solve()
    kdx = k_diag_dx(rule, x, y, t, L, n_nodes, table, h)
    cond, min_eig = sys_.diagnostics() if diagnostics else (math.nan, math.nan)
    return MarchenkoSolution(float(x), sys_.nodes, sys_.w, k, sys_.f_row, kd, complex(kdx),
                             cond, min_eig, float(L))


def solve(measure, domain, x, y, t, n_nodes=96, L=None, rule=None, edge_tol=1e-12,
          rtol=1e-9, stabilise=1e-8, max_doublings=2):
    """Full solve: truncation, kernel rule and node doubling until K(x, x) settles."""
    if t <= 0:
        raise ValueError("t must be positive")
    if L is None:
        L = choose_truncation(measure, domain, x, y, t, edge_tol)
    if rule is None:
        rule = build_rule(measure, domain, y, t, window_refs(x - 0.5, x + L + 0.5), rtol=rtol)
    sol = solve_rule(rule, x, y, t, L, n_nodes)
    for _ in range(max_doublings):
        if stabilise is None:
            break
        n_nodes *= 2
        finer = solve_rule(rule, x, y, t, L, n_nodes)
        done = abs(finer.K_diag - sol.K_diag) < stabilise * max(1.0, abs(sol.K_diag))
        sol = finer
        if done:
            break
    else:
        if stabilise is not None and max_doublings:
            raise SolverError("K(x, x) did not stabilise under node doubling")
    return sol


def hermitian_energy_check(sol: MarchenkoSolution) -> float:
    """Im int_x^inf F(x, s) conj K(x, s) ds on the Nystrom nodes (zero in theory)."""
    return float(np.imag(np.sum(sol.weights * sol.F_row * sol.K_row.conj())))
