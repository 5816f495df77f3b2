"""Embedding tables on disk: the EMB1 binary format and CSV ingestion.

Builds a tiny table, round-trips it through EMB1, and shows that the
round trip is bitwise exact.
"""

import tempfile
from pathlib import Path

import numpy as np

from mycoprobe import EmbeddingTable, read_embedding_table, write_embedding_table

workdir = Path(tempfile.mkdtemp(prefix="mycoprobe-demo-"))

table = EmbeddingTable(
    dim=4,
    rows=np.array(
        [
            [0.5, -1.25, 3.0, 0.0],
            [2.0, 2.0, -0.5, 1.5],
            [1.0, 0.0, 0.0, -2.0],
        ],
        dtype=np.float32,
    ),
    row_ids=["obs-001", "obs-002", "obs-003"],
)

path = workdir / "demo.emb1"
write_embedding_table(table, path)
print(f"wrote {path} ({path.stat().st_size} bytes)")
print("layout: EMB1 magic, u32 rows, u32 dim, NUL-terminated ids, f32 payload")

back = read_embedding_table(path)
print(f"read back: {len(back)} rows, dim {back.dim}, ids {back.row_ids}")
print("bitwise equal payload:", back.rows.tobytes() == table.rows.tobytes())

# the first 16 bytes, annotated
raw = path.read_bytes()
print("magic:", raw[:4], "| row count:", int.from_bytes(raw[4:8], "little"), "| dim:", int.from_bytes(raw[8:12], "little"))
