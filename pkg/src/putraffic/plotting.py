"""Render result tables to figure files.

One panel per experiment: Monte Carlo curves with error bars, closed
form / CR-bound references as lines.  Output is written next to the
delimited data by the CLI's figure command.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import ResultTable, _SWEEP_AXIS, curve_key

_AXIS_LABEL = {"n": "number of samples N", "t": "observation window T (s)",
               "u": "duty cycle u"}


def render_table(table: ResultTable, path, title: str = "") -> None:
    """Draw every curve of the table into one PNG."""
    axis = _SWEEP_AXIS.get(table.metadata.get("kind", "custom"), "n")
    curves = {}
    for row in table.rows:
        curves.setdefault(curve_key(row, axis), []).append(row)
    fig, ax = plt.subplots(figsize=(7.2, 4.8))
    colors = plt.cm.tab20(range(20))
    for i, (label, rows) in enumerate(sorted(curves.items())):
        rows = sorted(rows, key=lambda r: getattr(r, axis))
        color = colors[i % len(colors)]
        xs = [getattr(r, axis) for r in rows if r.mc_rms is not None]
        ys = [r.mc_rms for r in rows if r.mc_rms is not None]
        es = [r.mc_se or 0.0 for r in rows if r.mc_rms is not None]
        if xs:
            ax.errorbar(xs, ys, yerr=es, marker="o", ms=3, lw=1.0,
                        color=color, label=label)
        ref = [(getattr(r, axis), r.cf_rms if r.cf_rms is not None else r.crb_rms)
               for r in rows if (r.cf_rms is not None or r.crb_rms is not None)]
        if ref:
            rx, ry = zip(*ref)
            ax.plot(rx, ry, ls="--", lw=1.0, color=color,
                    label=None if xs else label)
    ax.set_xlabel(_AXIS_LABEL.get(axis, axis))
    ax.set_ylabel("RMS estimation error")
    if all(r.mc_rms or r.cf_rms or r.crb_rms for r in table.rows):
        ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=6, ncol=2)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
