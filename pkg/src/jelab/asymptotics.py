"""Large-t asymptotics near the front: soliton trains and the log-determinant model.

Close to the front x ~ C(y) t the kernel is replaced by a degenerate one
built from the Taylor data of the phase at the touching point.  The
Marchenko equation then reduces to an N x N system and

    v ~ 2 d^2/dx^2 ln det(I + A(x - C(y) t, y, t)),

which in turn splits into a train of sech^2 pulses v_n.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .solution import sech2
from .spectral import AmplitudeProfile, SpectralDomain, SpectralError, normalization_g, tangency_point

NORMALIZATIONS = ("theorem", "example", "gram")


class FrontDomainWarning(UserWarning):
    pass


# -- Gram determinants --------------------------------------------------------

def _exact_det(rows):
    """Determinant of a square matrix of Fractions by fraction-exact elimination."""
    a = [list(r) for r in rows]
    n = len(a)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if a[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            if f:
                for k in range(c, n):
                    a[r][k] -= f * a[c][k]
    return det


def _half_gamma(m):
    """Gamma(m + 1/2) / sqrt(pi) as a Fraction."""
    return Fraction(math.factorial(2 * m), 4 ** m * math.factorial(m))


def gamma_matrix_rational(n):
    """Entries Gamma((i+k+1)/2)(1 + (-1)^(i+k)) / sqrt(pi); zero when i+k is odd."""
    return [[2 * _half_gamma((i + k) // 2) if (i + k) % 2 == 0 else Fraction(0)
             for k in range(n)] for i in range(n)]


def q_matrix(n):
    return [[Fraction(math.factorial(i + k)) for k in range(n)] for i in range(n)]


@dataclass(frozen=True)
class GramPair:
    n: int
    gamma_det: float
    q_det: float
    gamma_rational: Fraction   # gamma_det = pi^(n/2) * gamma_rational
    q_exact: int


@lru_cache(maxsize=None)
def gram_pair(n: int) -> GramPair:
    if n < 0:
        raise ValueError("n must be >= 0")
    g = _exact_det(gamma_matrix_rational(n))
    q = _exact_det(q_matrix(n))
    assert q.denominator == 1
    return GramPair(n, math.pi ** (n / 2) * float(g), float(q), g, int(q))


# -- touching-point geometry ---------------------------------------------------

@dataclass(frozen=True)
class FrontGeometry:
    """Data of the degenerate kernel at one y."""

    y: float
    p0: float
    q0: float
    C: float
    g: float
    j0: float
    a: float
    h_pp: float
    psi: np.ndarray


def psi_and_geometry(domain: SpectralDomain, g: Callable, y, N=4) -> FrontGeometry:
    """a(y), j0(y) and the N x N matrix psi_nj(y)."""
    prof = domain.profile
    pt = tangency_point(prof, y)
    p0, q0 = pt.p, pt.q
    d = 12 * p0 - y
    j0 = 1.0 / (q0 * math.sqrt(16 * q0 * q0 + d * d))
    h_pp = domain.roof_curvature(p0)
    den = 48 * q0 * q0 - d * d - 16 * h_pp * q0 ** 3
    if den <= 0:
        raise SpectralError(f"a(y): 48q0^2 - (12p0 - y)^2 - 16 h''(p0) q0^3 = {den:g} <= 0 at y={y:g}")
    a = math.sqrt((16 * q0 * q0 + d * d) / (2 * q0 * den))
    gy = float(g(y))
    psi = np.zeros((N, N))
    for n in range(N):
        for j in range(N):
            if (n + j) % 2 == 0:
                psi[n, j] = (gy * j0 * a ** (n + j + 1) / (2 * math.factorial(n) * math.factorial(j))
                             * math.gamma((n + j + 1) / 2) * 2)
    return FrontGeometry(float(y), p0, q0, float(prof.C(y)), gy, j0, a, h_pp, psi)


# -- phase shifts -------------------------------------------------------------

def _gram_ratio(n):
    gp, gm = gram_pair(n), gram_pair(n - 1)
    return gp.gamma_det * gp.q_det / (gm.gamma_det * gm.q_det)


def phi_n(profile: AmplitudeProfile, n, y, normalization="theorem", domain=None, g=None):
    """Phase-shift factor of the n-th soliton.

    ``theorem``: closed form in C, C', C'';
    ``example``: Q Gamma ratio / (q0^(3(n-1/2)) ((n-1)!)^2);
    ``gram``: ratio of leading minors of the log-determinant model (needs domain and g).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c, dc, d2c = float(profile.C(y)), float(profile.dC(y)), float(profile.d2C(y))
    fact = math.factorial(n - 1) ** 2
    if normalization == "theorem":
        base1, base2 = 1 + 24 * d2c, c + 12 * dc * dc
        if base1 <= 0 or base2 <= 0:
            raise SpectralError(f"phi_n: non-positive base (1 + 24C'' = {base1:g}, C + 12C'^2 = {base2:g})")
        return ((c + 48 * dc * dc) ** (n - 1) * base1 ** (n - 0.5) * _gram_ratio(n)
                / (2 ** ((2 * n + 5) / 2) * fact * base2 ** ((10 * n - 3) / 4)))
    if normalization == "example":
        q0 = tangency_point(profile, y).q
        return _gram_ratio(n) / (q0 ** (3 * (n - 0.5)) * fact)
    if normalization == "gram":
        if domain is None:
            raise ValueError("gram normalization needs the spectral domain")
        geo = psi_and_geometry(domain, g if g is not None else (lambda s: 1.0), y, 1)
        return (geo.j0 * geo.a ** (2 * n - 1) * _gram_ratio(n)
                / (2 * (2 * geo.q0) ** (2 * n - 1) * fact))
    raise ValueError(f"unknown normalization {normalization!r}")


# -- soliton train ------------------------------------------------------------

@dataclass(frozen=True)
class SolitonTrain:
    domain: SpectralDomain
    g: Callable
    M: float = 3.5
    normalization: str = "theorem"

    def __post_init__(self):
        if self.M <= 2:
            raise ValueError("M must exceed 2")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def profile(self):
        return self.domain.profile

    @property
    def n_terms(self):
        return math.floor(self.M - 1)

    def q0(self, y):
        return tangency_point(self.profile, y).q

    def C(self, y):
        return float(self.profile.C(y))

    def phi(self, n, y):
        return phi_n(self.profile, n, y, self.normalization, self.domain, self.g)

    def peak(self, n, y, t):
        """x where the n-th pulse peaks."""
        q0 = self.q0(y)
        return self.C(y) * t - ((n + 0.5) * math.log(t) - math.log(self.g(y))
                                - math.log(self.phi(n, y))) / (2 * q0)

    def term(self, n, x, y, t):
        q0 = self.q0(y)
        shift = ((n + 0.5) * math.log(t) - math.log(self.g(y)) - math.log(self.phi(n, y))) / (2 * q0)
        return 2 * q0 * q0 * sech2(q0 * (np.asarray(x, dtype=float) - self.C(y) * t + shift))

    def sum(self, x, y, t, warn=True):
        if warn and not np.all(in_front_domain(self.profile, self.g, self.M, x, y, t)):
            warnings.warn("train evaluated outside the front domain", FrontDomainWarning, stacklevel=2)
        return sum(self.term(n, x, y, t) for n in range(1, self.n_terms + 1))


def soliton_term(train: SolitonTrain, n, x, y, t):
    return train.term(n, x, y, t)


def train_sum(train: SolitonTrain, x, y, t):
    return train.sum(x, y, t)


def in_front_domain(profile, g, M, x, y, t):
    """|ln g(y)| < ln t and x > C(y) t - ln(t^(M+1)) / 2q0(y)."""
    if t <= 1 or M <= 2:
        raise ValueError("need t > 1 and M > 2")
    q0 = tangency_point(profile, y).q
    lg = math.log(g(y))
    return (abs(lg) < math.log(t)) & (np.asarray(x) > float(profile.C(y)) * t
                                      - (M + 1) * math.log(t) / (2 * q0))


def subdomain_bounds(q0, g, t, M, eps=0.05):
    """[(n, lo, hi)] covering in xi = x - C t; the bounds overlap by eps."""
    m = math.floor(M - 1)
    b = lambda power: -(power * math.log(t) - math.log(g)) / (2 * q0)
    out = []
    for n in range(1, m + 1):
        lo = b(M) if n == m else b(n + 1 + eps)
        hi = math.inf if n == 1 else b(n - eps)
        out.append((n, lo, hi))
    return out


def subdomain_index(profile, g, M, x, y, t, eps=0.05):
    """Index n of the subdomain holding xi = x - C(y) t; smaller n on overlaps."""
    q0 = tangency_point(profile, y).q
    xi = x - float(profile.C(y)) * t
    for n, lo, hi in subdomain_bounds(q0, g(y), t, M, eps):
        if lo < xi < hi:
            return n
    return None


# -- log-determinant model ----------------------------------------------------

def front_order(M):
    """N = floor((4M - 5) / 2)."""
    return math.floor((4 * M - 5) / 2)


def incomplete_moments(kmax, xi, q0):
    """I_k = int_xi^inf s^k exp(-2 q0 s) ds for k = 0..kmax."""
    e = math.exp(-2 * q0 * xi)
    out = [e / (2 * q0)]
    for k in range(1, kmax + 1):
        out.append((xi ** k * e + k * out[-1]) / (2 * q0))
    return np.array(out)


@dataclass
class DegenerateKernelModel:
    domain: SpectralDomain
    g: Callable
    M: float = 3.5

    def __post_init__(self):
        self._geo = {}

    @property
    def N(self):
        return front_order(self.M)

    def geometry(self, y) -> FrontGeometry:
        if y not in self._geo:
            self._geo[y] = psi_and_geometry(self.domain, self.g, y, self.N)
        return self._geo[y]

    def matrix(self, xi, y, t):
        geo = self.geometry(y)
        N = self.N
        I = incomplete_moments(2 * N - 2, xi, geo.q0)
        A = np.zeros((N, N))
        for n in range(N):
            for m in range(N):
                A[n, m] = sum(geo.psi[n, j] * t ** (-(n + j + 3) / 2) * I[j + m]
                              for j in range(N - n))
        return A

    def logdet(self, xi, y, t):
        sign, val = np.linalg.slogdet(np.eye(self.N) + self.matrix(xi, y, t))
        if sign <= 0:
            raise ArithmeticError(f"det(I + A) <= 0 at xi={xi:g}")
        return val


def logdet_v(model: DegenerateKernelModel, x, y, t, h=1e-2):
    """2 d^2/dx^2 ln det(I + A) with the five-point fourth-order stencil."""
    xi = x - model.geometry(y).C * t
    f = [model.logdet(xi + k * h, y, t) for k in (-2, -1, 0, 1, 2)]
    return 2 * (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)


def g_from_measure(measure, profile):
    """y -> g(y), the density at the touching point."""
    return lambda y: normalization_g(measure, profile, y)
