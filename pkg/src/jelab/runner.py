"""Grid sweeps over (x, y, t) for every requested evaluation path."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import marchenko
from .asymptotics import (DegenerateKernelModel, SolitonTrain, g_from_measure, in_front_domain, logdet_v,
                          subdomain_bounds)
from .cache import RuleCache
from .kernel import KernelDomainError, QuadratureError, build_rule, window_refs
from .scenario import Scenario, kernel_key
from .solution import SolitonAtomParams, one_soliton
from .spectral import tangency_point, validate_conditions

CSV_HEADER = "x,y,t,path,v,reality_resid,quad_err,cond_est"
NUMERIC_ERRORS = (marchenko.SolverError, marchenko.TruncationError, QuadratureError,
                  KernelDomainError, OverflowError, ArithmeticError, np.linalg.LinAlgError)


@dataclass
class Row:
    x: float
    y: float
    t: float
    path: str
    v: float
    reality_resid: float = 0.0
    quad_err: float = 0.0
    cond_est: float = math.nan
    error: str = ""

    def key(self):
        return (self.t, self.y, self.x, self.path)

    def csv(self):
        vals = (self.x, self.y, self.t)
        head = ",".join("%.17g" % v for v in vals)
        tail = ",".join("%.17g" % v for v in (self.v, self.reality_resid, self.quad_err, self.cond_est))
        return f"{head},{self.path},{tail}"


@dataclass
class RunRecord:
    scenario_hash: str
    rows: list
    summary: dict = field(default_factory=dict)

    def csv_text(self):
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    @property
    def n_errors(self):
        return sum(1 for r in self.rows if r.error)


def _pick_nodes(rule, x, y, t, L, n0, n_max, tol):
    """Double the Nystrom node count until K(x, x) settles at the probe point."""
    n = n0
    prev = marchenko.k_diag(rule, x, y, t, L, n)
    while n < n_max:
        kd = marchenko.k_diag(rule, x, y, t, L, 2 * n)
        n *= 2
        if abs(kd - prev) < tol * max(1.0, abs(prev)):
            return n // 2
        prev = kd
    return n


def _kernel_stage(sc: Scenario, y, t, xs, cache):
    tol = sc.tolerances

    def build():
        L = max(marchenko.choose_truncation(sc.measure, sc.domain, float(xv), y, t, tol["edge"])
                for xv in (xs[0], xs[-1]))
        rule = build_rule(sc.measure, sc.domain, y, t, window_refs(xs[0] - 1.0, xs[-1] + L + 1.0),
                          rtol=tol["quadrature"])
        return rule, L

    if cache is None:
        return build()
    return cache.get_or_build(kernel_key(sc, y, t, (xs[0], xs[-1])), build)


def _marchenko_rows(sc, y, t, xs, cache, timings):
    t0 = time.perf_counter()
    try:
        rule, L = _kernel_stage(sc, y, t, xs, cache)
    except NUMERIC_ERRORS as exc:
        timings["kernel"] += time.perf_counter() - t0
        return [Row(x, y, t, "marchenko", math.nan, error=f"kernel: {exc}") for x in xs]
    timings["kernel"] += time.perf_counter() - t0
    t0 = time.perf_counter()
    rows = []
    qerr = rule.rel_err + rule.skipped_bound
    try:
        solver = sc.solver
        n = _pick_nodes(rule, xs[0], y, t, L, int(solver["n_nodes"]), int(solver["max_nodes"]),
                        float(solver["stabilise"]))
        table = marchenko.TranslationTable(rule, L, n)
    except NUMERIC_ERRORS as exc:
        timings["solve"] += time.perf_counter() - t0
        return [Row(x, y, t, "marchenko", math.nan, error=f"solver: {exc}") for x in xs]
    for x in xs:
        try:
            s = marchenko.solve_rule(rule, x, y, t, L, n, table=table)
            rows.append(Row(x, y, t, "marchenko", 2 * s.K_diag_dx.real,
                            max(abs(s.K_diag_dx.imag), abs(s.K_diag.imag)), qerr, s.cond_estimate))
        except NUMERIC_ERRORS as exc:
            rows.append(Row(x, y, t, "marchenko", math.nan, error=str(exc)))
    timings["solve"] += time.perf_counter() - t0
    return rows


def run_column(sc: Scenario, y, t, cache_dir=None):
    """All requested paths on one (y, t) column of the grid."""
    y, t = float(y), float(t)
    xs = sc.x_values(y, t)
    timings = {"kernel": 0.0, "solve": 0.0, "asymptotic": 0.0}
    cache = RuleCache(cache_dir) if cache_dir is not None else None
    rows = []
    if "marchenko" in sc.paths:
        if sc.measure.is_zero:
            rows += [Row(x, y, t, "marchenko", 0.0, cond_est=1.0) for x in xs]
        else:
            rows += _marchenko_rows(sc, y, t, xs, cache, timings)
    if "one_soliton" in sc.paths:
        a = sc.measure.atoms[0]
        prm = SolitonAtomParams(-a.p, a.q, a.weight)
        rows += [Row(x, y, t, "one_soliton", float(one_soliton(prm, x, y, t))) for x in xs]
    t0 = time.perf_counter()
    if {"asymptotic_train", "logdet"} & set(sc.paths):
        g = g_from_measure(sc.measure, sc.profile)
        if "asymptotic_train" in sc.paths:
            train = SolitonTrain(sc.domain, g, sc.M, sc.normalization)
            try:
                vals = train.sum(xs, y, t, warn=False)
                rows += [Row(x, y, t, "asymptotic_train", float(v)) for x, v in zip(xs, vals)]
            except (ValueError, ArithmeticError) as exc:
                rows += [Row(x, y, t, "asymptotic_train", math.nan, error=str(exc)) for x in xs]
        if "logdet" in sc.paths:
            model = DegenerateKernelModel(sc.domain, g, sc.M)
            for x in xs:
                try:
                    rows.append(Row(x, y, t, "logdet", float(logdet_v(model, x, y, t, sc.steps["h_x"]))))
                except (ValueError, ArithmeticError, OverflowError) as exc:
                    rows.append(Row(x, y, t, "logdet", math.nan, error=str(exc)))
    timings["asymptotic"] += time.perf_counter() - t0
    hits = (cache.hits, cache.misses) if cache else (0, 0)
    return rows, timings, hits


def _column_job(args):
    data, y, t, cache_dir = args
    return run_column(Scenario.from_dict(data), y, t, cache_dir)


def leading_peak(xs, vs):
    """Rightmost interior local maximum, refined by a parabola through three samples."""
    xs, vs = np.asarray(xs), np.asarray(vs)
    idx = [k for k in range(1, len(xs) - 1)
           if np.isfinite(vs[k - 1:k + 2]).all() and vs[k] >= vs[k - 1] and vs[k] > vs[k + 1]
           and vs[k] > 0.1 * np.nanmax(vs)]
    if not idx:
        return None
    k = idx[-1]
    y0, y1, y2 = vs[k - 1], vs[k], vs[k + 1]
    h = xs[k + 1] - xs[k]
    den = y0 - 2 * y1 + y2
    off = 0.5 * h * (y0 - y2) / den if den != 0 else 0.0
    return float(xs[k] + off), float(y1 - 0.25 * (y0 - y2) * off / h)


def summarize(sc: Scenario, rows, timings):
    by = {}
    for r in rows:
        by.setdefault((r.t, r.y, r.path), []).append(r)
    rtol = float(sc.tolerances["reality"])
    flagged = [r for r in rows if r.error or not math.isfinite(r.v) or r.reality_resid > rtol]
    out = {"scenario": sc.name, "hash": sc.hash(), "rows": len(rows), "flagged_rows": len(flagged),
           "errors": sorted({r.error for r in rows if r.error})[:20],
           "max_reality_resid": max((r.reality_resid for r in rows if r.path == "marchenko"), default=0.0),
           "max_cond_est": max((r.cond_est for r in rows if r.path == "marchenko"
                                and math.isfinite(r.cond_est)), default=None),
           "timings": {k: round(v, 4) for k, v in timings.items()}, "columns": []}
    g = g_from_measure(sc.measure, sc.profile) if sc.measure.density is not None else None
    for t in sc.t_values:
        for y in sc.y_values:
            col = {"t": float(t), "y": float(y), "peaks": {}, "subdomains": []}
            for path in sc.paths:
                rs = by.get((float(t), float(y), path), [])
                pk = leading_peak([r.x for r in rs], [r.v for r in rs]) if rs else None
                if pk:
                    col["peaks"][path] = {"x": pk[0], "xi": pk[0] - float(sc.profile.C(y)) * t,
                                          "v": pk[1]}
            num = by.get((float(t), float(y), "marchenko"))
            if num and g is not None and t > 1:
                q0 = tangency_point(sc.profile, y).q
                xi = np.array([r.x for r in num]) - float(sc.profile.C(y)) * t
                vn = np.array([r.v for r in num])
                for n, lo, hi in subdomain_bounds(q0, g(y), t, sc.M):
                    mask = (xi > lo) & (xi < hi)
                    entry = {"n": n, "xi_lo": lo, "xi_hi": hi, "samples": int(mask.sum())}
                    for path in ("asymptotic_train", "logdet"):
                        other = by.get((float(t), float(y), path))
                        if other and mask.any():
                            vo = np.array([r.v for r in other])
                            entry[f"sup_vs_{path}"] = float(np.nanmax(np.abs(vn - vo)[mask]))
                    col["subdomains"].append(entry)
                col["in_front_domain"] = int(np.sum(in_front_domain(
                    sc.profile, g, sc.M, np.array([r.x for r in num]), y, t)))
            out["columns"].append(col)
    return out


def run(sc: Scenario, workers=None, cache_dir=None):
    """Evaluate the scenario; rows come back sorted by (t, y, x, path)."""
    jobs = [(sc.data, float(y), float(t), cache_dir) for t in sc.t_values for y in sc.y_values]
    workers = workers or os.cpu_count() or 1
    t0 = time.perf_counter()
    if workers == 1 or len(jobs) == 1:
        results = [_column_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_column_job, jobs))
    rows, timings, hits, misses = [], {"kernel": 0.0, "solve": 0.0, "asymptotic": 0.0}, 0, 0
    for r, tm, (h, m) in results:
        rows += r
        for k, v in tm.items():
            timings[k] += v
        hits += h
        misses += m
    rows.sort(key=Row.key)
    timings["wall"] = time.perf_counter() - t0
    summary = summarize(sc, rows, timings)
    summary["cache"] = {"hits": hits, "misses": misses}
    return RunRecord(sc.hash(), rows, summary)


def validate(sc: Scenario):
    return validate_conditions(sc.profile, sc.domain, sc.measure)
