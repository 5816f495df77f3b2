"""Training loss and validation top-5 per epoch, from a training log.

Input schema: trainlog.csv
(epoch,train_loss,val_top5,w_category,w_poisonous,w_genus,w_species,seconds).
When the GradNorm weight columns are populated they get a second panel.
"""

from __future__ import annotations

import argparse

from _common import dump_data, parse_float, read_report, save_figure
import matplotlib.pyplot as plt

WEIGHT_COLUMNS = ("w_category", "w_poisonous", "w_genus", "w_species")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="infile", required=True, help="trainlog.csv")
    parser.add_argument("--out", required=True, help="output image (suffix selects format, SVG default)")
    parser.add_argument("--dump-data", help="write the plotted series as JSON (testing hook)")
    args = parser.parse_args(argv)

    rows = read_report(args.infile, ("epoch", "train_loss", "val_top5"))
    epochs = [int(parse_float(r, "epoch", args.infile)) for r in rows]
    loss = [parse_float(r, "train_loss", args.infile) for r in rows]
    top5 = [parse_float(r, "val_top5", args.infile) for r in rows]
    weights = {
        col: [float(r[col]) for r in rows]
        for col in WEIGHT_COLUMNS
        if all(r.get(col) for r in rows)
    }

    panels = 2 if weights else 1
    fig, axes = plt.subplots(panels, 1, figsize=(7, 3.4 * panels), sharex=True, squeeze=False)
    ax = axes[0][0]
    ax.plot(epochs, loss, marker="o", color="#7a1f1f", label="train loss")
    ax.set_ylabel("train loss")
    ax.grid(alpha=0.3)
    ax_acc = ax.twinx()
    ax_acc.plot(epochs, top5, marker="s", color="#1f4e79", label="val top-5")
    ax_acc.set_ylabel("val top-5")
    ax_acc.set_ylim(0, 1.05)
    handles1, labels1 = ax.get_legend_handles_labels()
    handles2, labels2 = ax_acc.get_legend_handles_labels()
    ax.legend(handles1 + handles2, labels1 + labels2, loc="center right", fontsize=8)
    ax.set_title("Training curves")

    if weights:
        ax_w = axes[1][0]
        for col, series in weights.items():
            ax_w.plot(epochs, series, marker=".", label=col)
        ax_w.set_ylabel("task weight")
        ax_w.set_xlabel("epoch")
        ax_w.grid(alpha=0.3)
        ax_w.legend(fontsize=8)
    else:
        ax.set_xlabel("epoch")

    fig.tight_layout()
    save_figure(fig, args.out)
    dump_data({"epoch": epochs, "train_loss": loss, "val_top5": top5, "weights": weights}, args.dump_data)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
