"""Shared plumbing for the report plot scripts.

Each script reads one CSV report emitted by the training/evaluation CLI,
validates its schema, and renders a figure. Inputs are never modified and
rendering is deterministic: a fixed SVG hash salt and no embedded
timestamps make repeated runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "mycoprobe-plots"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def fail(message: str, code: int = 2) -> None:
    print(f"error: {message}", file=sys.stderr)
    sys.exit(code)


def read_report(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        fail(f"no such report: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            fail(f"{path} lacks required columns {missing} (found {fields})")
        rows = list(reader)
    if not rows:
        fail(f"{path} has no data rows")
    return rows


def parse_float(row: dict, key: str, path) -> float:
    try:
        return float(row[key])
    except (ValueError, TypeError):
        fail(f"{path}: column {key!r} has non-numeric value {row[key]!r}")


def save_figure(fig, out: str | Path) -> None:
    out = Path(out)
    fmt = (out.suffix[1:] or "svg").lower()
    if fmt == "svg":
        fig.savefig(out, format="svg", metadata={"Date": None})
    else:
        fig.savefig(out, format=fmt)
    plt.close(fig)


def dump_data(payload: dict, path: str | Path | None) -> None:
    """Machine-readable record of exactly what was plotted (for tests)."""
    if path is None:
        return
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
