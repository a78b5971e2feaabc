import numpy as np
import pytest
from hypothesis import given, strategies as st

from jelab import marchenko
from jelab.kernel import atom_rule, build_rule, window_refs
from jelab.spectral import AmplitudeProfile, Atom, Density, MeasureSpec, SpectralDomain, phase

DOM = SpectralDomain(AmplitudeProfile.constant(1.0, epsilon=0.5), "paper_locus", (-0.6, 0.6))


def logdet_oracle(atoms, x, y, t):
    """K(x, x) and its x-derivative from d/dx log det(I + A) for a finite-rank kernel."""
    lam = np.array([1j * a.p - a.q for a in atoms])
    w = np.array([a.weight * np.exp(2 * a.q * phase(a.p, a.q, y) * t) for a in atoms])
    s = lam.conj()[:, None] + lam[None, :]
    E = np.sqrt(np.outer(w, w)) * np.exp(s * x)
    A = -E / s
    B = np.linalg.inv(np.eye(len(atoms)) + A)
    d1, d2 = -E, -E * s
    k = np.trace(B @ d1)
    kx = np.trace(B @ d2) - np.trace(B @ d1 @ B @ d1)
    return k, kx


atom_st = st.builds(Atom, st.floats(-0.8, 0.8), st.floats(0.4, 1.2), st.floats(0.2, 3))


def test_one_atom_closed_form():
    a = Atom(0.3, 0.7, 1.5)
    x, y, t = 0.4, 0.2, 1.0
    sol = marchenko.solve(MeasureSpec(atoms=(a,)), DOM, x, y, t)
    w = a.weight * np.exp(2 * a.q * phase(a.p, a.q, y) * t - 2 * a.q * x) / (2 * a.q)
    assert sol.K_diag.real == pytest.approx(-2 * a.q * w / (1 + w), rel=1e-11)


@given(st.lists(atom_st, min_size=1, max_size=3), st.floats(-1, 2), st.floats(-1, 1), st.floats(0.5, 2))
def test_atoms_match_log_determinant(atoms, x, y, t):
    sol = marchenko.solve(MeasureSpec(atoms=tuple(atoms)), DOM, x, y, t, n_nodes=64)
    k, kx = logdet_oracle(atoms, x, y, t)
    assert abs(sol.K_diag - k) < 1e-9 * max(1.0, abs(k))
    assert abs(sol.K_diag_dx - kx) < 1e-7 * max(1.0, abs(kx))


@given(st.lists(atom_st, min_size=1, max_size=3), st.floats(-1, 2), st.floats(0.5, 2))
def test_system_is_hermitian_positive(atoms, x, t):
    sol = marchenko.solve(MeasureSpec(atoms=tuple(atoms)), DOM, x, 0.3, t, n_nodes=64)
    assert sol.min_eig > -1e-10
    assert abs(sol.K_diag.imag) < 1e-10 * max(1.0, abs(sol.K_diag))
    assert abs(marchenko.hermitian_energy_check(sol)) < 1e-10 * max(1.0, abs(sol.K_diag))
    assert 1 <= sol.cond_estimate < 1e8


def test_density_diagonal_is_real_and_converged():
    meas = MeasureSpec(density=Density("gaussian_p", (("k", 12.0),)))
    sol = marchenko.solve(meas, DOM, 2.0, 0.0, 3.0)
    assert abs(sol.K_diag.imag) < 1e-11
    assert abs(sol.K_diag_dx.imag) < 1e-10
    assert sol.min_eig > -1e-12
    assert sol.edge_value < 1e-5 * abs(sol.K_diag)


def test_truncation_meets_edge_tolerance():
    meas = MeasureSpec(atoms=(Atom(0.0, 0.8, 1.0),))
    rule = atom_rule(meas, 0.0, 1.0)
    L = marchenko.choose_truncation(meas, DOM, 0.0, 0.0, 1.0, edge_tol=1e-12)
    assert L in marchenko.LADDER
    f = lambda xx: marchenko._diag_F(rule, xx, 0.0, 1.0)
    assert f(L) < 1e-12 * f(0.0)
    smaller = [v for v in marchenko.LADDER if v < L]
    assert not smaller or f(smaller[-1]) >= 1e-12 * f(0.0)


def test_truncation_ladder_exhausted():
    meas = MeasureSpec(atoms=(Atom(0.0, 0.01, 1.0),))
    with pytest.raises(marchenko.TruncationError):
        marchenko.choose_truncation(meas, DOM, 0.0, 0.0, 1.0, edge_tol=1e-14)


def test_translation_table_reuse_gives_same_answer():
    meas = MeasureSpec(density=Density("gaussian_p", (("k", 12.0),)))
    y, t, L = 0.0, 3.0, 16.0
    rule = build_rule(meas, DOM, y, t, window_refs(1.0, 3.0 + L), rtol=1e-9)
    table = marchenko.TranslationTable(rule, L, 64)
    for x in (1.5, 2.5):
        a = marchenko.solve_rule(rule, x, y, t, L, 64, table=table)
        b = marchenko.solve_rule(rule, x, y, t, L, 64)
        assert a.K_diag == pytest.approx(b.K_diag, rel=1e-13)
    assert not table.matches(rule, L, 128)


def test_richardson_exact_for_quintic():
    f = lambda x: x ** 5 - 2 * x ** 3
    assert marchenko.richardson_dx(f, 0.7, 0.1) == pytest.approx(5 * 0.7 ** 4 - 6 * 0.7 ** 2, rel=1e-12)


def test_solve_rejects_bad_input():
    meas = MeasureSpec(atoms=(Atom(0.0, 1.0, 1.0),))
    with pytest.raises(ValueError):
        marchenko.solve(meas, DOM, 0.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        marchenko.solve_rule(atom_rule(meas), 0.0, 0.0, 1.0, 4.0, n_nodes=8)
    with pytest.raises(ValueError):
        marchenko.composite_gl(0, 1, 40)


def test_zero_measure_solution_vanishes():
    sol = marchenko.solve(MeasureSpec(), DOM, 0.0, 0.0, 1.0)
    assert sol.K_diag == 0 and sol.K_diag_dx == 0
