"""Acceptance criteria 1-8, one PASS/FAIL line each (run with -s to see them inline)."""
import math
import time
import warnings

import numpy as np
import pytest
from scipy import optimize

from jelab import marchenko
from jelab.asymptotics import (DegenerateKernelModel, SolitonTrain, g_from_measure, gram_pair, logdet_v,
                               phi_n, subdomain_bounds)
from jelab.cli import main
from jelab.kernel import atom_rule, build_rule, linear_system_residual, window_refs
from jelab.solution import (MarchenkoField, SolitonAtomParams, je_from_kp, je_residual, kp_from_je,
                            kp_residual, one_soliton, one_soliton_peak)
from jelab.spectral import AmplitudeProfile, Density, MeasureSpec, SpectralDomain

PROF2 = AmplitudeProfile.constant(1.0, epsilon=0.5)
DOM2 = SpectralDomain(PROF2, "paper_locus", (-0.6, 0.6))
MEAS2 = MeasureSpec(density=Density("gaussian_p", (("k", 12.0),)))
G2 = g_from_measure(MEAS2, PROF2)


def random_soliton_cases(n=50, seed=1, p=1.0, q=(0.3, 2.0), y=2.0, t=(0.5, 20.0)):
    rng = np.random.default_rng(seed)
    return [(SolitonAtomParams(rng.uniform(-p, p), rng.uniform(*q), rng.uniform(0.1, 10.0)),
             rng.uniform(-y, y), rng.uniform(*t)) for _ in range(n)]


# pulses the default finite-difference steps resolve; steeper ones (q ~ 2, t ~ 20)
# carry stencil truncation error well above 1e-5 at h_x = h_y = 1e-2, h_t = 1e-3
MODERATE = {"p": 0.8, "q": (0.3, 1.2), "y": 1.0, "t": (0.5, 5.0)}


def closed_form_residual(cases):
    return max(abs(je_residual(lambda a, b, c, p=prm: one_soliton(p, a, b, c),
                               one_soliton_peak(prm, y, t) + 0.4 / prm.q, y, t)) for prm, y, t in cases)


@pytest.fixture(scope="module")
def soliton_runs():
    out = []
    for prm, y, t in random_soliton_cases():
        x0 = one_soliton_peak(prm, y, t)
        xs = x0 + np.linspace(-3, 3, 21) / prm.q
        sols = [marchenko.solve(prm.measure(), DOM2, x, y, t) for x in xs]
        out.append((prm, y, t, xs, sols))
    return out


def example2_front_solutions(t, offsets):
    y = 0.0
    xs = t + np.asarray(offsets)
    L = marchenko.choose_truncation(MEAS2, DOM2, xs[0], y, t)
    rule = build_rule(MEAS2, DOM2, y, t, window_refs(xs[0] - 0.5, xs[-1] + L + 0.5))
    return rule, L, [marchenko.solve_rule(rule, x, y, t, L, 96) for x in xs]


def test_criterion_1_one_soliton_equivalence(soliton_runs, report):
    worst = 0.0
    for prm, y, t, xs, sols in soliton_runs:
        ref = one_soliton(prm, xs, y, t)
        num = np.array([2 * s.K_diag_dx.real for s in sols])
        worst = max(worst, float(np.max(np.abs(num / ref - 1))))
    ok = report("criterion 1 one-soliton oracle", worst < 1e-7,
                f"max rel err {worst:.2e} over 50 cases x 21 points (tol 1e-7)")
    assert ok


def test_criterion_2_operator_diagnostics(soliton_runs, report):
    sols = [s for *_, ss in soliton_runs for s in ss]
    for t in (100.0, 1000.0):
        sols += example2_front_solutions(t, np.linspace(-8, 1, 10))[2]
    min_eig = min(s.min_eig for s in sols)
    im = max(abs(s.K_diag.imag) for s in sols)
    ok = report("criterion 2 operator diagnostics", min_eig >= -1e-10 and im < 1e-10,
                f"min_eig {min_eig:.2e} (>= -1e-10), max |Im K(x,x)| {im:.2e} (< 1e-10) on {len(sols)} solves")
    assert ok


def test_criterion_3_pde_residuals(report):
    t0 = time.perf_counter()
    closed = closed_form_residual(random_soliton_cases(20, seed=3, **MODERATE))
    steep = closed_form_residual(random_soliton_cases(10, seed=3))
    t = 5.0
    fld = MarchenkoField(MEAS2, DOM2, t - 1.5, 0.0, t, span=2.5)
    field = max(abs(je_residual(fld, x, 0.0, t)) for x in t + np.linspace(-4, 1, 10))
    lin = 0.0
    for prm, y, tt in random_soliton_cases(20, seed=4, **MODERATE):
        rule = atom_rule(prm.measure(), y, tt)
        x0 = one_soliton_peak(prm, y, tt)
        scale = float(np.exp(rule.logw[0] + 2 * prm.q * (prm.q ** 2 - 3 * prm.p ** 2 - y * y / 48
                                                          - prm.p * y / 2) * tt - 2 * prm.q * x0))
        r1, r2 = linear_system_residual(rule, x0, x0 + 0.3, y, tt)
        lin = max(lin, abs(r1) / scale, abs(r2) / scale)
    dt = time.perf_counter() - t0
    ok = report("criterion 3 PDE residuals", closed < 1e-5 and field < 1e-4 and lin < 1e-8 and dt < 60,
                f"closed form {closed:.1e} (< 1e-5), Marchenko t=5 {field:.1e} (< 1e-4), "
                f"linear system {lin:.1e} (< 1e-8, relative to F(x,x)), {dt:.1f}s (< 60s); "
                f"info: closed form over the full criterion-1 range {steep:.1e}")
    assert ok


def leibniz_q(n):
    import itertools
    tot = 0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        tot += (-1) ** inv * math.prod(math.factorial(i + perm[i]) for i in range(n))
    return tot


def test_criterion_4_gram_identities(report):
    sp = math.sqrt(math.pi)
    errs = [abs(gram_pair(n).gamma_det / want - 1) for n, want in ((1, 2 * sp), (2, 2 * math.pi), (3, 2 * sp ** 3))]
    errs += [abs(gram_pair(n).q_det / math.prod(math.factorial(k) ** 2 for k in range(n)) - 1) for n in range(1, 9)]
    brute = all(gram_pair(n).q_exact == leibniz_q(n) for n in range(1, 9))
    pos = all(gram_pair(n).gamma_det > 0 and gram_pair(n).q_det > 0 for n in range(1, 11))
    ok = report("criterion 4 Gram determinants", max(errs) < 1e-12 and brute and pos,
                f"max rel err {max(errs):.1e}, brute-force Q agrees n<=8: {brute}, positive n<=10: {pos}")
    assert ok


def leading_pulse(t, y=0.0):
    rule, L, _ = example2_front_solutions(t, [-9.0, 0.0])
    v = lambda x: 2 * marchenko.solve_rule(rule, x, y, t, L, 96, diagnostics=False).K_diag_dx.real
    xs = t + np.linspace(-9, 0, 37)
    vs = np.array([v(x) for x in xs])
    k = max(i for i in range(1, len(xs) - 1) if vs[i] >= vs[i - 1] and vs[i] >= vs[i + 1] and vs[i] > 0.5)
    r = optimize.minimize_scalar(lambda x: -v(x), bounds=(xs[k - 1], xs[k + 1]), method="bounded",
                                 options={"xatol": 1e-7})
    return r.x - t, -r.fun


@pytest.fixture(scope="module")
def pulses():
    return {t: leading_pulse(t) for t in (100.0, 300.0, 1000.0)}


def test_criterion_5_asymptotic_splitting(pulses, report):
    q0 = 1.0
    amp = {t: abs(pulses[t][1] / 2.0 - 1) for t in pulses}
    ts = np.array(sorted(pulses))
    xi = np.array([pulses[t][0] for t in ts])
    slope, const = np.linalg.lstsq(np.vstack([np.log(ts), np.ones(3)]).T, xi, rcond=None)[0]
    want = -3 / (4 * q0)
    fixed = float(np.mean(xi - want * np.log(ts)))
    cands = {nm: (math.log(G2(0.0)) + math.log(phi_n(PROF2, 1, 0.0, nm, DOM2, G2))) / (2 * q0)
             for nm in ("theorem", "example", "gram")}
    closer = min(("theorem", "example"), key=lambda nm: abs(cands[nm] - fixed))
    ok_amp = amp[100.0] < 0.15 and amp[1000.0] < 0.05
    ok_slope = abs(slope / want - 1) < 0.10
    ok = report("criterion 5 asymptotic splitting", ok_amp and ok_slope,
                f"amplitude err {amp[100.0]:.3f} at t=1e2 (< 0.15), {amp[1000.0]:.3f} at t=1e3 (< 0.05); "
                f"ln t slope {slope:.4f} vs {want:.4f} ({abs(slope / want - 1):.1%}, < 10%); "
                f"constant {fixed:.3f} with slope fixed: theorem {cands['theorem']:.3f}, "
                f"example {cands['example']:.3f} -> closer: {closer} "
                f"(supplementary gram {cands['gram']:.3f})")
    assert ok


def train_logdet_sups(normalization):
    model = DegenerateKernelModel(DOM2, G2, 3.5)
    train = SolitonTrain(DOM2, G2, 3.5, normalization)
    sups = {}
    for t in (100.0, 1000.0):
        lo = subdomain_bounds(1.0, G2(0.0), t, 3.5)[0][1]
        xs = t + np.linspace(lo, lo + 25, 801)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sups[t] = max(abs(logdet_v(model, x, 0.0, t) - train.sum(x, 0.0, t)) for x in xs)
    K = sups[100.0] * math.sqrt(100.0)
    return sups, K, sups[1000.0] <= 2 * K / math.sqrt(1000.0)


def test_criterion_6_train_logdet_cross_check(report):
    sups, K, ok = train_logdet_sups("theorem")
    report("criterion 6 train vs logdet", ok,
           f"theorem phase shift: sup_a1 {sups[100.0]:.3e} at t=1e2 (K={K:.3f}), {sups[1000.0]:.3e} at t=1e3 "
           f"vs bound 2K/sqrt(1e3) = {2 * K / math.sqrt(1000.0):.3e}")
    assert ok


def test_criterion_6_supplementary_gram_shift(report):
    sups, K, ok = train_logdet_sups("gram")
    report("criterion 6 (supplementary, gram shift)", ok,
           f"sup_a1 {sups[100.0]:.3e} at t=1e2 (K={K:.3f}), {sups[1000.0]:.3e} at t=1e3 "
           f"vs bound {2 * K / math.sqrt(1000.0):.3e}")
    assert ok


def test_criterion_7_kp_round_trip(report):
    rng = np.random.default_rng(7)
    prm = SolitonAtomParams(0.3, 0.8, 1.3)
    v = lambda x, y, t: one_soliton(prm, x, y, t)
    back = je_from_kp(kp_from_je(v))
    pts = np.column_stack([rng.uniform(-5, 5, 100), rng.uniform(-3, 3, 100), rng.uniform(0.5, 10, 100)])
    ident = max(abs(back(*p) - v(*p)) for p in pts)
    u = kp_from_je(v)
    kp = max(abs(kp_residual(u, xi, eta, tau)) for xi, eta, tau in ((1.5, 0.4, 2.0), (0.7, -0.6, 3.0), (2.4, 1.0, 2.5)))
    ok = report("criterion 7 KP round trip", ident < 1e-12 and kp < 1e-5,
                f"round trip {ident:.1e} at 100 points (< 1e-12), KP residual {kp:.1e} (< 1e-5)")
    assert ok


def test_criterion_8_determinism_and_cache(tmp_path, report, capsys):
    import json
    base = ["run", "example2", "--no-plots", "--cache-dir", str(tmp_path / "cache")]
    assert main(base + ["--out", str(tmp_path / "cold")]) == 0
    assert main(base + ["--out", str(tmp_path / "warm")]) == 0
    capsys.readouterr()
    cold, warm = (tmp_path / d for d in ("cold", "warm"))
    same = (cold / "example2.csv").read_bytes() == (warm / "example2.csv").read_bytes()
    tk = [json.loads((d / "example2_summary.json").read_text())["timings"]["kernel"] for d in (cold, warm)]
    speed = tk[0] / max(tk[1], 1e-9)
    ok = report("criterion 8 determinism and cache", same and speed >= 5,
                f"CSV byte-identical: {same}; kernel stage {tk[0]:.3f}s cold vs {tk[1]:.4f}s warm "
                f"({speed:.0f}x, >= 5x)")
    assert ok
