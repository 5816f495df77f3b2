"""Scatter of per-class training frequency against top-5 accuracy.

Input schema: class_freq.csv (class_id,frequency,top5_acc). Points are
alpha-blended, so the pile-ups at accuracy 0.0 and 1.0 among rare classes
show up as darker bands.
"""

from __future__ import annotations

import argparse

from _common import dump_data, fail, parse_float, read_report, save_figure
import matplotlib.pyplot as plt


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="infile", required=True, help="class_freq.csv")
    parser.add_argument("--out", required=True, help="output image (suffix selects format, SVG default)")
    parser.add_argument("--dump-data", help="write the plotted series as JSON (testing hook)")
    args = parser.parse_args(argv)

    rows = read_report(args.infile, ("class_id", "frequency", "top5_acc"))
    freq = [parse_float(r, "frequency", args.infile) for r in rows]
    acc = [parse_float(r, "top5_acc", args.infile) for r in rows]
    if any(f < 0 or f != int(f) for f in freq):
        fail(f"{args.infile}: frequencies must be nonnegative integers")
    if any(not 0.0 <= a <= 1.0 for a in acc):
        fail(f"{args.infile}: top5_acc values must lie in [0, 1]")

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.scatter(freq, acc, alpha=0.35, edgecolors="none", s=36, color="#1f4e79")
    ax.set_xlabel("class frequency (images)")
    ax.set_ylabel("top-5 accuracy")
    ax.set_title("Class frequency vs top-5 accuracy")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    save_figure(fig, args.out)
    dump_data({"frequency": freq, "top5_acc": acc}, args.dump_data)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
