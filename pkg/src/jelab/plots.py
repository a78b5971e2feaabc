"""SVG output for sweeps: v against x per (y, t), and leading-peak drift."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {"marchenko": "-", "one_soliton": "--", "asymptotic_train": ":", "logdet": "-."}
SVG_META = {"Date": None}


def _save(fig, path):
    plt.rcParams["svg.hashsalt"] = "jelab"
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def profile_plots(record, scenario, out_dir: Path, stem: str):
    """One file per (y, t) column; returns the paths written."""
    by = {}
    for r in record.rows:
        by.setdefault((r.t, r.y), {}).setdefault(r.path, []).append(r)
    written = []
    for (t, y), paths in sorted(by.items()):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for path, rows in sorted(paths.items()):
            ax.plot([r.x for r in rows], [r.v for r in rows], STYLE.get(path, "-"), label=path)
        ax.set_xlabel("x")
        ax.set_ylabel("v")
        ax.set_title(f"{scenario.name}: y = {y:g}, t = {t:g}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / f"{stem}_y{y:g}_t{t:g}.svg"
        _save(fig, p)
        written.append(p)
    return written


def front_plot(summary, scenario, out_dir: Path, stem: str):
    """Leading-peak offset x - C(y) t against ln t, one line per (path, y)."""
    lines = {}
    for col in summary["columns"]:
        for path, pk in col["peaks"].items():
            lines.setdefault((path, col["y"]), []).append((math.log(col["t"]), pk["xi"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (path, y), pts in sorted(lines.items()):
        pts.sort()
        ax.plot([a for a, _ in pts], [b for _, b in pts], STYLE.get(path, "-"), marker="o",
                label=f"{path}, y={y:g}")
    ax.set_xlabel("ln t")
    ax.set_ylabel("leading peak x - C(y) t")
    if lines:
        ax.legend(fontsize=8)
    fig.tight_layout()
    p = out_dir / f"{stem}_front.svg"
    _save(fig, p)
    return p
