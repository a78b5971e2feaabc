"""The Marchenko kernel F(x, z, y, t) and its spectral quadrature.

F is the superposition of exponentials exp[ip(x-z) - q(x+z) + 2q f t]
against the spectral measure.  A ``KernelRule`` is a positive-weight node
set (p_k, q_k, log w_k) covering the atoms and the density; the kernel is
then F(x, z) = sum_k phi_k(x) conj(phi_k(z)), which keeps every discretised
operator Hermitian and positive semi-definite.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .spectral import MeasureSpec, SpectralDomain, phase

ALPHA = 1j  # JE-I branch
OVERFLOW_EXPONENT = 340.0


class QuadratureError(RuntimeError):
    def __init__(self, msg, worst_panel=None):
        super().__init__(msg)
        self.worst_panel = worst_panel


class KernelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class KernelRule:
    """Nodes and log-weights of the spectral quadrature; atoms come first."""

    p: np.ndarray
    q: np.ndarray
    logw: np.ndarray
    n_atoms: int = 0
    rel_err: float = 0.0
    skipped_bound: float = 0.0
    n_panels: int = 0
    y: float = 0.0
    t: float = 1.0

    @property
    def size(self):
        return self.p.size

    @property
    def is_empty(self):
        return self.p.size == 0

    def arrays(self):
        return {"p": self.p, "q": self.q, "logw": self.logw,
                "meta": np.array([self.n_atoms, self.rel_err, self.skipped_bound,
                                  self.n_panels, self.y, self.t])}

    @classmethod
    def from_arrays(cls, d):
        n_atoms, rel_err, skipped, n_panels, y, t = d["meta"]
        return cls(np.asarray(d["p"]), np.asarray(d["q"]), np.asarray(d["logw"]), int(n_atoms),
                   float(rel_err), float(skipped), int(n_panels), float(y), float(t))


def _gl(n, _cache={}):
    if n not in _cache:
        _cache[n] = leggauss(n)
    return _cache[n]


def atom_rule(measure: MeasureSpec, y=0.0, t=1.0) -> KernelRule:
    p = np.array([a.p for a in measure.atoms], dtype=float)
    q = np.array([a.q for a in measure.atoms], dtype=float)
    lw = np.log(np.array([a.weight for a in measure.atoms], dtype=float))
    return KernelRule(p, q, lw, len(measure.atoms), y=y, t=t)


class _PanelIntegrand:
    """Density integrand on (p, u) panels, q = eps + (h(p) - eps) u."""

    def __init__(self, measure, domain, y, t, refs, order):
        self.density = measure.density
        self.domain = domain
        self.eps = domain.epsilon
        self.y, self.t = y, t
        self.refs = np.atleast_2d(np.asarray(refs, dtype=float))  # rows (s = x+z, d = x-z)
        self.order = order
        self.lo = max(order // 2, 2)
        self.shift = np.zeros(len(self.refs))

    def exponent(self, p, u):
        """Complex exponent per ref (last axis) plus log of the node Jacobian."""
        h = self.domain.roof(p)
        q = self.eps + (h - self.eps) * u
        base = self.density.log_density(p, q) + np.log(h - self.eps) + 2 * q * phase(p, q, self.y) * self.t
        s, d = self.refs[:, 0], self.refs[:, 1]
        e = base[..., None] - q[..., None] * s + 1j * p[..., None] * d
        return e, q

    def scan_max(self, n=241):
        """Set per-ref log shifts; return the distinct dominant (p, u) points."""
        lo, hi = self.domain.p_range
        p = np.linspace(lo, hi, n)
        u = np.linspace(0.0, 1.0, n)
        P, U = np.meshgrid(p, u, indexing="ij")
        e, _ = self.exponent(P, U)
        re = e.real.reshape(-1, len(self.refs))
        self.shift = re.max(axis=0)
        ks = np.unique(np.argmax(re, axis=0))
        return P.ravel()[ks], U.ravel()[ks]

    def _tensor(self, panel, np_, nu):
        pa, pb, ua, ub = panel
        xp, wp = _gl(np_)
        xu, wu = _gl(nu)
        p = (pa + pb) / 2 + (pb - pa) / 2 * xp
        u = (ua + ub) / 2 + (ub - ua) / 2 * xu
        P, U = np.meshgrid(p, u, indexing="ij")
        W = np.outer(wp * (pb - pa) / 2, wu * (ub - ua) / 2)
        return P, U, W

    def panel(self, panel):
        """Integral, abs-integral and split-direction error estimates for one panel."""
        n, m = self.order, self.lo
        out = []
        for np_, nu in ((n, n), (m, n), (n, m)):
            P, U, W = self._tensor(panel, np_, nu)
            e, _ = self.exponent(P, U)
            val = np.exp(e - self.shift)
            out.append((np.tensordot(W, val, axes=([0, 1], [0, 1])),
                        np.tensordot(W, np.abs(val), axes=([0, 1], [0, 1])),
                        float(np.max(e.real - self.shift))))
        (i_hh, a_hh, emax), (i_lh, _, _), (i_hl, _, _) = out
        return i_hh, a_hh, np.abs(i_hh - i_lh), np.abs(i_hh - i_hl), emax

    def nodes(self, panel, gap):
        """Panel nodes with log-weights; nodes ``gap`` below every ref's peak are pruned."""
        P, U, W = self._tensor(panel, self.order, self.order)
        e, q = self.exponent(P, U)
        rel = e.real - self.shift
        keep = np.max(rel, axis=-1) >= -gap
        pruned = np.sum(W[..., None] * np.exp(rel) * ~keep[..., None], axis=(0, 1))
        h = self.domain.roof(P)
        logw = np.log(W) + np.log(h - self.eps) + self.density.log_density(P, q)
        return P[keep], q[keep], logw[keep], pruned


def _graded_breaks(lo, hi, centres, n_uniform, depth):
    """Uniform breaks refined geometrically toward each centre."""
    pts = set(np.linspace(lo, hi, n_uniform + 1).tolist())
    width = (hi - lo) / n_uniform
    for c in np.unique(np.round(centres, 12)):
        for k in range(depth + 1):
            for sgn in (-1.0, 1.0):
                v = c + sgn * width * 2.0 ** (-k)
                if lo < v < hi:
                    pts.add(float(v))
        if lo < c < hi:
            pts.add(float(c))
    return np.array(sorted(pts))


def build_rule(measure: MeasureSpec, domain: SpectralDomain, y: float, t: float, refs,
               rtol=1e-9, order=10, max_panels=20000, skip_gap=60.0, prune_gap=45.0,
               grading=(2, 3, 2, 4)) -> KernelRule:
    """Adaptive tensor Gauss-Legendre rule for the density part of the kernel.

    ``refs`` are (x+z, x-z) pairs the rule must integrate to relative
    accuracy ``rtol`` (measured against the abs-integral).  Panels whose
    largest exponent lies ``skip_gap`` below the global maximum are dropped;
    their summed contribution is kept as ``skipped_bound``, together with
    individual nodes lying ``prune_gap`` below it.
    """
    if t <= 0:
        raise KernelDomainError(f"t must be positive, got {t}")
    atoms = atom_rule(measure, y, t)
    if measure.density is None:
        return atoms
    f = _PanelIntegrand(measure, domain, y, t, refs, order)
    p_star, u_star = f.scan_max()
    lo, hi = domain.p_range
    n_p, d_p, n_u, d_u = grading
    pb = _graded_breaks(lo, hi, p_star, n_p, d_p)
    ub = _graded_breaks(0.0, 1.0, u_star, n_u, d_u)

    store = {}
    counter = 0

    def add(panel):
        nonlocal counter
        store[counter] = (panel, *f.panel(panel))
        counter += 1
        return counter - 1

    for i in range(pb.size - 1):
        for j in range(ub.size - 1):
            add((pb[i], pb[i + 1], ub[j], ub[j + 1]))

    def totals():
        vals = list(store.values())
        tot_a = np.sum([v[2] for v in vals], axis=0)
        tot_e = np.sum([v[3] + v[4] for v in vals], axis=0)
        return np.where(tot_a > 0, tot_a, 1.0), tot_e

    scale, tot_e = totals()
    key = lambda k: -float(np.max((store[k][3] + store[k][4]) / scale))
    heap = [(key(k), k) for k in store]
    heapq.heapify(heap)
    it = 0
    while float(np.max(tot_e / scale)) > rtol:
        if len(store) >= max_panels:
            worst = store[heap[0][1]][0]
            raise QuadratureError(f"kernel quadrature did not converge: rel err "
                                  f"{float(np.max(tot_e / scale)):.2e} with {len(store)} panels",
                                  worst_panel=worst)
        _, k = heapq.heappop(heap)
        panel, _, _, ep, eu, _ = store.pop(k)
        tot_e = tot_e - ep - eu
        pa, pb_, ua, ub_ = panel
        if np.max(ep / scale) >= np.max(eu / scale):
            pm = (pa + pb_) / 2
            kids = [(pa, pm, ua, ub_), (pm, pb_, ua, ub_)]
        else:
            um = (ua + ub_) / 2
            kids = [(pa, pb_, ua, um), (pa, pb_, um, ub_)]
        for c in kids:
            kk = add(c)
            tot_e = tot_e + store[kk][3] + store[kk][4]
            heapq.heappush(heap, (key(kk), kk))
        it += 1
        if it % 512 == 0:
            scale, tot_e = totals()
            heap = [(key(k), k) for k in store]
            heapq.heapify(heap)

    tot_a = sum(v[2] for v in store.values())
    tot_e = sum(v[3] + v[4] for v in store.values())
    scale = np.where(tot_a > 0, tot_a, 1.0)
    ps, qs, ws = [atoms.p], [atoms.q], [atoms.logw]
    skipped = np.zeros(len(f.refs))
    for panel, _, a_hh, _, _, emax in store.values():
        if emax < -skip_gap:
            skipped += a_hh
            continue
        p, q, lw, pruned = f.nodes(panel, prune_gap)
        skipped += pruned
        ps.append(p)
        qs.append(q)
        ws.append(lw)
    return KernelRule(np.concatenate(ps), np.concatenate(qs), np.concatenate(ws), atoms.n_atoms,
                      float(np.max(tot_e / scale)), float(np.max(skipped / scale)), len(store),
                      float(y), float(t))


def window_refs(x_lo, x_hi):
    """Reference (x+z, x-z) pairs covering all kernel entries with x, z in [x_lo, x_hi]."""
    L = x_hi - x_lo
    mid = x_lo + x_hi
    return np.array([[2 * x_lo, 0.0], [mid, 0.0], [2 * x_hi, 0.0],
                     [mid, L / 2], [mid, L], [x_lo + 0.5 * L + x_lo, L / 2]])


# -- evaluation --------------------------------------------------------------

def feature_map(rule: KernelRule, xs, y, t, order=0):
    """phi_k(x) = exp[(ip_k - q_k) x + q_k f_k t + logw_k / 2] (times (ip - q)^order)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    lam = 1j * rule.p - rule.q
    base = rule.q * phase(rule.p, rule.q, y) * t + rule.logw / 2
    e = np.outer(xs, lam) + base
    if e.size and float(np.max(e.real)) > OVERFLOW_EXPONENT:
        raise OverflowError("kernel exponent overflow: evaluation point lies far behind the front")
    phi = np.exp(e)
    if order:
        phi = phi * lam ** order
    return phi


def kernel_matrix(rule, xs, zs, y, t, dx=0, dz=0):
    """F(x_i, z_j) (or its (dx, dz) partials) for the rule's node set."""
    if t <= 0:
        raise KernelDomainError(f"t must be positive, got {t}")
    xs, zs = np.atleast_1d(xs), np.atleast_1d(zs)
    if rule.is_empty:
        return np.zeros((xs.size, zs.size), dtype=complex)
    return feature_map(rule, xs, y, t, dx) @ feature_map(rule, zs, y, t, dz).conj().T


@dataclass
class KernelField:
    value: complex
    dx: list
    dz: list
    quad_error: float
    contributions: tuple


def eval_kernel(measure, domain, x, z, y, t, max_deriv_order=0, rule=None, rtol=1e-9) -> KernelField:
    """F(x, z, y, t) with x- and z-partials up to ``max_deriv_order`` (<= 3)."""
    if t <= 0:
        raise KernelDomainError(f"t must be positive, got {t}")
    if max_deriv_order > 3:
        raise ValueError("derivative order is limited to 3 per variable")
    if rule is None:
        rule = build_rule(measure, domain, y, t, [[x + z, x - z]], rtol=rtol)
    na = rule.n_atoms
    lam = 1j * rule.p - rule.q
    e = lam * x + np.conj(lam) * z + 2 * rule.q * phase(rule.p, rule.q, y) * t + rule.logw
    terms = np.exp(e)
    value = complex(terms.sum())
    dx = [complex(np.sum(terms * lam ** k)) for k in range(1, max_deriv_order + 1)]
    dz = [complex(np.sum(terms * np.conj(lam) ** k)) for k in range(1, max_deriv_order + 1)]
    dens = complex(terms[na:].sum())
    qerr = (rule.rel_err + rule.skipped_bound) * float(np.abs(terms[na:]).sum())
    return KernelField(value, dx, dz, qerr, (complex(terms[:na].sum()), dens))


def _d1(fun, v, h):
    return (fun(v - 2 * h) - 8 * fun(v - h) + 8 * fun(v + h) - fun(v + 2 * h)) / (12 * h)


def linear_system_residual(rule, x, z, y, t, h_t=1e-3, h_y=1e-3):
    """Residuals of the linear system satisfied by F with alpha = i.

    x, z partials are analytic; t and y partials use fourth-order central
    differences with steps h_t, h_y.
    """
    if rule.is_empty:
        return 0j, 0j
    F = lambda xx, zz, yy, tt, a=0, b=0: complex(kernel_matrix(rule, [xx], [zz], yy, tt, a, b)[0, 0])
    Ft = _d1(lambda tt: F(x, z, y, tt), t, h_t)
    Fy = _d1(lambda yy: F(x, z, yy, t), y, h_y)
    Fx, Fz = F(x, z, y, t, 1, 0), F(x, z, y, t, 0, 1)
    Fxx, Fzz = F(x, z, y, t, 2, 0), F(x, z, y, t, 0, 2)
    Fxxx, Fzzz = F(x, z, y, t, 3, 0), F(x, z, y, t, 0, 3)
    a = ALPHA
    res1 = Ft + y * y / (48 * a * a) * (Fx + Fz) + y / (4 * a) * (Fxx - Fzz) + Fxxx + Fzzz
    res2 = a * Fy + y * t / (24 * a) * (Fx + Fz) + t / 4 * (Fxx - Fzz)
    return res1, res2
