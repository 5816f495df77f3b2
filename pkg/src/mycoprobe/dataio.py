"""On-disk formats, label spaces, taxonomy trees, and synthetic long-tail data.

The package consumes two file kinds (see README for the byte-level layout):

* EMB1 embedding tables: magic ``EMB1``, little-endian u32 row count and
  dimension, null-terminated UTF-8 row ids, then the float32 payload.
* Metadata: UTF-8 line-delimited JSON, one observation record per line.

Everything here is pure or read-only, so calls are safe from multiple
threads on distinct inputs.
"""

from __future__ import annotations

import csv
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateRowId,
    EmptyTrainingSet,
    InconsistentTaxonomy,
    IoFailure,
    MagicMismatch,
    NonFiniteValue,
    SchemaViolation,
    UnknownSplit,
)
from .rng import stream_rng

EMB1_MAGIC = b"EMB1"
SPLITS = ("train", "val", "test")

_METADATA_KEYS = ("observation_id", "category_id", "species", "genus", "family", "poisonous", "split")


@dataclass
class EmbeddingTable:
    """Dense float32 feature matrix with one string id per row."""

    dim: int
    rows: np.ndarray
    row_ids: list[str]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.size == 0:
            self.rows = self.rows.reshape(0, self.dim)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.dim:
            raise DimMismatch(
                f"rows have shape {self.rows.shape}, expected (n, {self.dim})"
            )
        self.row_ids = [str(r) for r in self.row_ids]
        if len(self.row_ids) != self.rows.shape[0]:
            raise DimMismatch(
                f"{len(self.row_ids)} row ids for {self.rows.shape[0]} rows"
            )
        if not np.isfinite(self.rows).all():
            raise NonFiniteValue("embedding rows contain NaN or infinity")
        if len(set(self.row_ids)) != len(self.row_ids):
            dup = next(k for k, n in Counter(self.row_ids).items() if n > 1)
            raise DuplicateRowId(f"row id {dup!r} appears more than once")

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class ObservationRecord:
    """One observation's identifiers, label fields, and split tag."""

    observation_id: str
    category_id: str | None
    split: str
    species: str | None = None
    genus: str | None = None
    family: str | None = None
    poisonous: bool | None = None


@dataclass
class LabelSpace:
    """Bijection between raw category ids and dense class indices."""

    classes: list[str]
    index_of: dict[str, int]
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def indices_for(self, records: list[ObservationRecord]) -> np.ndarray:
        """Dense class index per record, in order."""
        out = np.empty(len(records), dtype=np.int64)
        for i, rec in enumerate(records):
            if rec.category_id is None or rec.category_id not in self.index_of:
                raise KeyError(f"record {rec.observation_id!r} has unknown category {rec.category_id!r}")
            out[i] = self.index_of[rec.category_id]
        return out


@dataclass
class TaxonomyTree:
    """family -> genus -> species hierarchy with species-to-class mapping."""

    families: set[str]
    genera_of: dict[str, set[str]]
    species_of: dict[str, set[str]]
    class_of_species: dict[str, int]

    @property
    def all_species(self) -> set[str]:
        out: set[str] = set()
        for sp in self.species_of.values():
            out |= sp
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated long-tail dataset for desk-scale experiments."""

    num_classes: int
    dim: int
    head_count: int
    tail_count: int
    cluster_spread: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not (self.head_count >= self.tail_count >= 1):
            raise ValueError("need head_count >= tail_count >= 1")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be nonnegative")


# ---------------------------------------------------------------------------
# EMB1 binary format
# ---------------------------------------------------------------------------

def write_embedding_table(table: EmbeddingTable, path: str | Path) -> None:
    """Serialize a table; the file parses back bitwise-equal."""
    out = bytearray()
    out += EMB1_MAGIC
    out += struct.pack("<II", len(table.row_ids), table.dim)
    for rid in table.row_ids:
        encoded = rid.encode("utf-8")
        if b"\x00" in encoded:
            raise IoFailure(f"row id {rid!r} contains a NUL byte")
        out += encoded + b"\x00"
    out += np.ascontiguousarray(table.rows, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(bytes(out))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_embedding_table(path: str | Path) -> EmbeddingTable:
    """Parse an EMB1 file; row order equals file order."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if blob[:4] != EMB1_MAGIC:
        raise MagicMismatch(f"{path} does not start with {EMB1_MAGIC!r}")
    if len(blob) < 12:
        raise DimMismatch(f"{path}: truncated header")
    n_rows, dim = struct.unpack_from("<II", blob, 4)
    offset = 12
    row_ids = []
    for _ in range(n_rows):
        end = blob.find(b"\x00", offset)
        if end < 0:
            raise DimMismatch(f"{path}: truncated id section")
        row_ids.append(blob[offset:end].decode("utf-8"))
        offset = end + 1
    payload = blob[offset:]
    expected = n_rows * dim * 4
    if len(payload) != expected:
        raise DimMismatch(
            f"{path}: payload holds {len(payload) // 4} floats, header promises {n_rows}x{dim}"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(n_rows, dim).copy()
    if not np.isfinite(rows).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or infinity")
    if len(set(row_ids)) != len(row_ids):
        dup = next(k for k, n in Counter(row_ids).items() if n > 1)
        raise DuplicateRowId(f"{path}: row id {dup!r} appears more than once")
    return EmbeddingTable(dim=dim, rows=rows, row_ids=row_ids)


def read_embedding_csv(path: str | Path) -> EmbeddingTable:
    """CSV interoperability: first column is the row id, the rest are floats.

    A first line whose leading cell is exactly ``id`` is treated as a header.
    """
    rows: list[list[float]] = []
    row_ids: list[str] = []
    dim: int | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells:
                continue
            if lineno == 1 and cells[0].strip().lower() == "id":
                continue
            rid, values = cells[0], cells[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise DimMismatch(f"{path}: line {lineno} has no feature columns")
            elif len(values) != dim:
                raise DimMismatch(
                    f"{path}: line {lineno} has {len(values)} features, expected {dim}"
                )
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise SchemaViolation(f"non-numeric feature: {exc}", line=lineno) from exc
            row_ids.append(rid)
    if dim is None:
        raise SchemaViolation(f"{path}: no data rows")
    return EmbeddingTable(dim=dim, rows=np.array(rows, dtype=np.float32), row_ids=row_ids)


# ---------------------------------------------------------------------------
# Metadata
# ---------------------------------------------------------------------------

def _parse_record(obj: dict, lineno: int) -> ObservationRecord:
    if not isinstance(obj, dict):
        raise SchemaViolation("record is not a JSON object", line=lineno)
    unknown_ok = True  # extra keys (location, substrate, ...) are tolerated
    obs = obj.get("observation_id")
    if not isinstance(obs, str) or not obs:
        raise SchemaViolation("observation_id must be a non-empty string", line=lineno)
    split = obj.get("split")
    if split not in SPLITS:
        raise UnknownSplit(f"split {split!r} not in {SPLITS}", line=lineno)
    category = obj.get("category_id")
    if category is not None and not isinstance(category, str):
        raise SchemaViolation("category_id must be a string or null", line=lineno)
    if split in ("train", "val") and not category:
        raise SchemaViolation(f"{split} record lacks category_id", line=lineno)
    fields = {}
    for key in ("species", "genus", "family"):
        value = obj.get(key)
        if value is not None and not isinstance(value, str):
            raise SchemaViolation(f"{key} must be a string or null", line=lineno)
        fields[key] = value
    poisonous = obj.get("poisonous")
    if poisonous is not None and not isinstance(poisonous, bool):
        raise SchemaViolation("poisonous must be a boolean or null", line=lineno)
    return ObservationRecord(
        observation_id=obs,
        category_id=category or None,
        split=split,
        poisonous=poisonous,
        **fields,
    )


def read_metadata(path: str | Path) -> list[ObservationRecord]:
    """Parse line-delimited JSON metadata, one record per non-empty line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from exc
            records.append(_parse_record(obj, lineno))
    return records


def read_metadata_extras(path: str | Path, keys: tuple[str, ...] = ("location", "substrate", "season", "image")) -> list[dict]:
    """Per-line dict of optional extra keys, aligned with read_metadata output.

    The schema tolerates extra keys on each line; the zero-shot runner uses
    location/substrate/season for prompts and image for attachments.
    """
    extras = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            extras.append({k: obj[k] for k in keys if k in obj and obj[k] is not None})
    return extras


def write_metadata(records: list[ObservationRecord], path: str | Path) -> None:
    """Emit records as line-delimited JSON in the documented schema."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                obj = {
                    "observation_id": rec.observation_id,
                    "category_id": rec.category_id,
                    "species": rec.species,
                    "genus": rec.genus,
                    "family": rec.family,
                    "poisonous": rec.poisonous,
                    "split": rec.split,
                }
                fh.write(json.dumps(obj, sort_keys=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_metadata_csv(path: str | Path) -> list[ObservationRecord]:
    """CSV interoperability for metadata; empty cells become nulls."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [k for k in _METADATA_KEYS if k not in (reader.fieldnames or [])]
        if missing:
            raise SchemaViolation(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            obj: dict = {k: (row[k] or None) for k in _METADATA_KEYS}
            if obj["poisonous"] is not None:
                lowered = str(obj["poisonous"]).strip().lower()
                if lowered in ("true", "1", "yes"):
                    obj["poisonous"] = True
                elif lowered in ("false", "0", "no"):
                    obj["poisonous"] = False
                else:
                    raise SchemaViolation(f"bad poisonous value {obj['poisonous']!r}", line=lineno)
            records.append(_parse_record(obj, lineno))
    return records


# ---------------------------------------------------------------------------
# Label space and taxonomy
# ---------------------------------------------------------------------------

def build_label_space(records: list[ObservationRecord]) -> LabelSpace:
    """Class universe from train records; indices are lexicographic over raw ids.

    Counts are per image (one record = one image), so the result does not
    depend on the order records arrive in.
    """
    counter: Counter[str] = Counter()
    for rec in records:
        if rec.split != "train":
            continue
        if not rec.category_id:
            raise SchemaViolation(f"train record {rec.observation_id!r} lacks category_id")
        counter[rec.category_id] += 1
    if not counter:
        raise EmptyTrainingSet("no train-split records")
    classes = sorted(counter)
    counts = np.array([counter[c] for c in classes], dtype=np.int64)
    return LabelSpace(classes=classes, index_of={c: i for i, c in enumerate(classes)}, counts=counts)


def build_taxonomy(records: list[ObservationRecord], labels: LabelSpace) -> TaxonomyTree:
    """family -> genus -> species tree over train records.

    Rejects records missing any rank and corpora where a species sits under
    two genera (or a genus under two families). When one species carries
    several category ids, the most frequent one (ties: lexicographically
    smallest) becomes its class index.
    """
    genus_of_species: dict[str, str] = {}
    family_of_genus: dict[str, str] = {}
    category_votes: dict[str, Counter[str]] = {}
    for rec in records:
        if rec.split != "train":
            continue
        if not (rec.species and rec.genus and rec.family):
            raise SchemaViolation(
                f"train record {rec.observation_id!r} lacks species/genus/family"
            )
        seen_genus = genus_of_species.get(rec.species)
        if seen_genus is not None and seen_genus != rec.genus:
            raise InconsistentTaxonomy(
                f"species {rec.species!r} under both {seen_genus!r} and {rec.genus!r}"
            )
        genus_of_species[rec.species] = rec.genus
        seen_family = family_of_genus.get(rec.genus)
        if seen_family is not None and seen_family != rec.family:
            raise InconsistentTaxonomy(
                f"genus {rec.genus!r} under both {seen_family!r} and {rec.family!r}"
            )
        family_of_genus[rec.genus] = rec.family
        if rec.category_id:
            category_votes.setdefault(rec.species, Counter())[rec.category_id] += 1
    if not genus_of_species:
        raise EmptyTrainingSet("no train-split records with taxonomy")

    families = set(family_of_genus.values())
    genera_of: dict[str, set[str]] = {f: set() for f in families}
    for genus, fam in family_of_genus.items():
        genera_of[fam].add(genus)
    species_of: dict[str, set[str]] = {g: set() for g in family_of_genus}
    for species, genus in genus_of_species.items():
        species_of[genus].add(species)

    class_of_species = {}
    for species, votes in category_votes.items():
        max_count = max(votes.values())
        best = min(cat for cat, n in votes.items() if n == max_count)
        class_of_species[species] = labels.index_of[best]
    return TaxonomyTree(
        families=families,
        genera_of=genera_of,
        species_of=species_of,
        class_of_species=class_of_species,
    )


# ---------------------------------------------------------------------------
# Synthetic long-tail data
# ---------------------------------------------------------------------------

def synthetic_class_counts(spec: SyntheticSpec) -> np.ndarray:
    """Per-class counts interpolating geometrically from head to tail."""
    k = spec.num_classes
    ratio = (spec.tail_count / spec.head_count) ** (1.0 / (k - 1))
    counts = np.rint(spec.head_count * ratio ** np.arange(k)).astype(np.int64)
    counts = np.maximum(counts, spec.tail_count)
    counts[0] = spec.head_count
    counts[-1] = spec.tail_count
    return counts


def _class_means(spec: SyntheticSpec) -> np.ndarray:
    means = stream_rng(spec.seed, "synthetic-means").standard_normal((spec.num_classes, spec.dim))
    return means


def _category_of(c: int) -> str:
    return f"cat-{c:04d}"


def _record_for(obs_id: str, c: int, split: str) -> ObservationRecord:
    # 3 species per genus, 3 genera per family: a small but real hierarchy
    return ObservationRecord(
        observation_id=obs_id,
        category_id=_category_of(c),
        split=split,
        species=f"species-{c:04d}",
        genus=f"genus-{c // 3:03d}",
        family=f"family-{c // 9:03d}",
        poisonous=(c % 5 == 0),
    )


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingTable, list[ObservationRecord]]:
    """Long-tail train split: Gaussian clusters with geometric class counts.

    Deterministic given the seed. With cluster_spread 0 every row equals its
    class mean, so a linear classifier separates the data perfectly.
    """
    counts = synthetic_class_counts(spec)
    means = _class_means(spec)
    noise_rng = stream_rng(spec.seed, "synthetic-rows")
    rows, row_ids, records = [], [], []
    for c in range(spec.num_classes):
        noise = noise_rng.standard_normal((counts[c], spec.dim))
        rows.append(means[c] + spec.cluster_spread * noise)
        for i in range(counts[c]):
            obs_id = f"syn-{c:04d}-{i:04d}"
            row_ids.append(obs_id)
            records.append(_record_for(obs_id, c, "train"))
    table = EmbeddingTable(
        dim=spec.dim,
        rows=np.concatenate(rows, axis=0).astype(np.float32),
        row_ids=row_ids,
    )
    return table, records


def generate_eval_split(
    spec: SyntheticSpec, per_class: int, split: str = "val"
) -> tuple[EmbeddingTable, list[ObservationRecord]]:
    """Extra rows from the same class means, for validation or test splits.

    Uses a noise stream disjoint from the train rows so evaluation data is
    fresh yet reproducible.
    """
    if split not in SPLITS:
        raise UnknownSplit(f"split {split!r} not in {SPLITS}")
    means = _class_means(spec)
    noise_rng = stream_rng(spec.seed, "synthetic-eval", split)
    rows, row_ids, records = [], [], []
    for c in range(spec.num_classes):
        noise = noise_rng.standard_normal((per_class, spec.dim))
        rows.append(means[c] + spec.cluster_spread * noise)
        for i in range(per_class):
            obs_id = f"syn-{split}-{c:04d}-{i:04d}"
            row_ids.append(obs_id)
            records.append(_record_for(obs_id, c, split))
    table = EmbeddingTable(
        dim=spec.dim,
        rows=np.concatenate(rows, axis=0).astype(np.float32),
        row_ids=row_ids,
    )
    return table, records


def align_records(table: EmbeddingTable, records: list[ObservationRecord]) -> list[ObservationRecord]:
    """Reorder records to match table rows by observation id."""
    by_id: dict[str, ObservationRecord] = {}
    for rec in records:
        if rec.observation_id in by_id:
            raise DuplicateRowId(f"record id {rec.observation_id!r} appears more than once")
        by_id[rec.observation_id] = rec
    out = []
    for rid in table.row_ids:
        if rid not in by_id:
            raise SchemaViolation(f"no metadata record for row {rid!r}")
        out.append(by_id[rid])
    return out
