"""Command-line front end: ``jelab validate|run|compare|dump-builtin``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .cache import default_dir
from .scenario import BUILTINS, Scenario, ScenarioError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _load(ref):
    try:
        return Scenario.load(ref)
    except (ScenarioError, ValueError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return None


def _validate(sc, quiet=False):
    rep = runner.validate(sc)
    if not quiet or not rep.ok:
        print("\n".join(rep.lines()))
    return rep.ok


def cmd_validate(args):
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    ok = _validate(sc)
    print("conditions: " + ("OK" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_INVALID


def _cache_dir(args, sc):
    if args.no_cache:
        return None
    return str(args.cache_dir or sc.outputs.get("cache_dir") or default_dir())


def _execute(sc, args, plots=True):
    if not _validate(sc, quiet=True):
        return None, EXIT_INVALID
    rec = runner.run(sc, workers=args.workers, cache_dir=_cache_dir(args, sc))
    out = Path(args.out or Path("runs") / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    outs = sc.outputs
    csv_path = out / (outs.get("csv") or f"{sc.name}.csv")
    csv_path.write_text(rec.csv_text())
    summary_path = out / (outs.get("summary") or f"{sc.name}_summary.json")
    written = [csv_path, summary_path]
    if plots and not args.no_plots:
        from . import plots as plotting
        stem = Path(outs.get("plot") or sc.name).stem
        written += plotting.profile_plots(rec, sc, out, stem)
        written.append(plotting.front_plot(rec.summary, sc, out, stem))
    summary_path.write_text(json.dumps(rec.summary, indent=2, default=float) + "\n")
    for p in written:
        print(f"wrote {p}")
    return rec, EXIT_NUMERIC if rec.n_errors else EXIT_OK


def cmd_run(args):
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    rec, code = _execute(sc, args)
    if rec is not None:
        s = rec.summary
        print(f"rows {s['rows']}, flagged {s['flagged_rows']}, timings {s['timings']}, cache {s['cache']}")
    return code


def cmd_compare(args):
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    data = dict(sc.data)
    data["paths"] = [p for p in ("marchenko", "asymptotic_train", "logdet")
                     if p != "asymptotic_train" or sc.measure.density is not None]
    if sc.measure.density is None:
        print("compare needs a measure with a density", file=sys.stderr)
        return EXIT_INVALID
    if args.normalization:
        data["normalization"] = args.normalization
    sc = Scenario.from_dict(data)
    rec, code = _execute(sc, args, plots=False)
    if rec is None:
        return code
    print(f"{'t':>8} {'y':>6} {'n':>2} {'xi range':>22} {'|num-train|':>12} {'|num-logdet|':>12}")
    for col in rec.summary["columns"]:
        for e in col["subdomains"]:
            rng = f"({e['xi_lo']:.2f}, {e['xi_hi']:.2f})"
            print(f"{col['t']:8g} {col['y']:6g} {e['n']:2d} {rng:>22} "
                  f"{e.get('sup_vs_asymptotic_train', float('nan')):12.4e} "
                  f"{e.get('sup_vs_logdet', float('nan')):12.4e}")
        for path, pk in col["peaks"].items():
            print(f"{'':8} {'':6} leading peak [{path}] xi = {pk['xi']:.4f}, v = {pk['v']:.4f}")
    return code


def cmd_dump(args):
    if args.name not in BUILTINS:
        print(f"unknown built-in {args.name!r}; choose from {sorted(BUILTINS)}", file=sys.stderr)
        return EXIT_INVALID
    sys.stdout.write(Scenario.from_dict(BUILTINS[args.name]).dump())
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="jelab", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    v = sub.add_parser("validate", help="check the admissibility conditions")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    for name, func, hlp in (("run", cmd_run, "sweep the grid and write CSV, summary and plots"),
                            ("compare", cmd_compare, "numeric field against the asymptotic paths")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("scenario")
        p.add_argument("--out", help="output directory (default runs/<name>)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
        p.add_argument("--cache-dir", help="kernel cache directory (env JELAB_CACHE_DIR)")
        p.add_argument("--no-cache", action="store_true")
        p.add_argument("--no-plots", action="store_true")
        if name == "compare":
            p.add_argument("--normalization", choices=("theorem", "example", "gram"))
        p.set_defaults(func=func)

    d = sub.add_parser("dump-builtin", help="print a built-in scenario as YAML")
    d.add_argument("name")
    d.set_defaults(func=cmd_dump)
    return ap


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
