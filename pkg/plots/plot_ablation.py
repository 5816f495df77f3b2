"""Grouped bars of local scores and published references per ablation run.

Input schema: ablation.csv
(run,alpha,weighted,objectives,val_top5,test_top5,ref_public,ref_private).
Local top-5 fractions go on the left axis; the published reference scores
(percent) go on the right axis with hatching, so nothing is rescaled and
every bar shows its CSV value verbatim.
"""

from __future__ import annotations

import argparse

import numpy as np

from _common import dump_data, parse_float, read_report, save_figure
import matplotlib.pyplot as plt


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="infile", required=True, help="ablation.csv")
    parser.add_argument("--out", required=True, help="output image (suffix selects format, SVG default)")
    parser.add_argument("--dump-data", help="write the plotted series as JSON (testing hook)")
    args = parser.parse_args(argv)

    rows = read_report(args.infile, ("run", "val_top5", "ref_public", "ref_private"))
    runs = [r["run"] for r in rows]
    local = [parse_float(r, "val_top5", args.infile) for r in rows]
    ref_public = [parse_float(r, "ref_public", args.infile) if r["ref_public"] else None for r in rows]
    ref_private = [parse_float(r, "ref_private", args.infile) if r["ref_private"] else None for r in rows]

    x = np.arange(len(runs))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(7, 1.6 * len(runs)), 4.4))
    ax.bar(x - width, local, width, label="local val top-5 (fraction)", color="#1f4e79")
    ax2 = ax.twinx()
    for offset, series, label, color in (
        (0.0, ref_public, "published public (%)", "#c28e0e"),
        (width, ref_private, "published private (%)", "#7a1f1f"),
    ):
        xs = [xi + offset for xi, v in zip(x, series) if v is not None]
        vals = [v for v in series if v is not None]
        if xs:
            ax2.bar(xs, vals, width, label=label, color=color, hatch="//", alpha=0.85)
    ax.set_xticks(x, runs, rotation=20, ha="right")
    ax.set_ylabel("local val top-5 (fraction)")
    ax2.set_ylabel("published reference top-5 (%)")
    ax.set_title("Ablation: local scores vs published references")
    handles1, labels1 = ax.get_legend_handles_labels()
    handles2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(handles1 + handles2, labels1 + labels2, loc="upper right", fontsize=8)
    fig.tight_layout()
    save_figure(fig, args.out)
    dump_data(
        {"run": runs, "val_top5": local, "ref_public": ref_public, "ref_private": ref_private},
        args.dump_data,
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
