"""Line chart of top-1/top-5 accuracy against the mixup concentration.

Input schema: alpha_sweep.csv (alpha,val_top1,val_top5). An optional
--baseline value draws a horizontal rule for the no-mixup reference.
"""

from __future__ import annotations

import argparse

from _common import dump_data, fail, parse_float, read_report, save_figure
import matplotlib.pyplot as plt


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="infile", required=True, help="alpha_sweep.csv")
    parser.add_argument("--out", required=True, help="output image (suffix selects format, SVG default)")
    parser.add_argument("--baseline", type=float, help="no-mixup top-5 reference, drawn as a horizontal rule")
    parser.add_argument("--dump-data", help="write the plotted series as JSON (testing hook)")
    args = parser.parse_args(argv)

    rows = read_report(args.infile, ("alpha", "val_top1", "val_top5"))
    alphas = [parse_float(r, "alpha", args.infile) for r in rows]
    top1 = [parse_float(r, "val_top1", args.infile) for r in rows]
    top5 = [parse_float(r, "val_top5", args.infile) for r in rows]
    if any(a <= 0 for a in alphas):
        fail(f"{args.infile}: alpha values must be positive")

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(alphas, top5, marker="o", label="top-5")
    ax.plot(alphas, top1, marker="s", label="top-1")
    if args.baseline is not None:
        ax.axhline(args.baseline, color="gray", linestyle="--", label="baseline top-5")
    ax.set_xlabel("mixup alpha")
    ax.set_ylabel("validation accuracy")
    ax.set_title("Effect of mixup concentration on top-k accuracy")
    ax.set_xlim(min(alphas) - 0.02, max(alphas) + 0.02)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    save_figure(fig, args.out)
    dump_data({"alpha": alphas, "val_top1": top1, "val_top5": top5, "baseline": args.baseline}, args.dump_data)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
