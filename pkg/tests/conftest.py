from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mycoprobe.dataio import EmbeddingTable


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)


def random_table(rng: np.random.Generator, n_rows: int | None = None, dim: int | None = None) -> EmbeddingTable:
    n = int(rng.integers(0, 8)) if n_rows is None else n_rows
    d = int(rng.integers(1, 12)) if dim is None else dim
    rows = rng.normal(size=(n, d)).astype(np.float32)
    ids = [f"row-{i:03d}" for i in range(n)]
    return EmbeddingTable(dim=d, rows=rows, row_ids=ids)
