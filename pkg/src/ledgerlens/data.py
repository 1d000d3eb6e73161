"""Journal-entry ingestion and one-hot encoding of categorical attributes."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError

MISSING = "⟂MISSING⟂"
ENTRY_ID_COLUMN = "entry_id"
LABEL_COLUMN = "label"


class Label(enum.Enum):
    REGULAR = "regular"
    GLOBAL = "global"
    LOCAL = "local"
    UNLABELED = "unlabeled"

    @property
    def is_anomaly(self) -> bool:
        return self in (Label.GLOBAL, Label.LOCAL)

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower()
        if key == "":
            return cls.UNLABELED
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown label {text!r}; expected regular, global or local") from None


@dataclass(frozen=True)
class JournalEntry:
    entry_id: str
    values: tuple[str, ...]
    label: Label = Label.UNLABELED

    def __post_init__(self):
        if any(v == "" for v in self.values):
            raise DataError(f"entry {self.entry_id}: empty attribute value (use {MISSING!r})")


def load_csv(path, schema: Sequence[str] | None = None,
             label_column: str | None = LABEL_COLUMN) -> tuple[list[str], list[JournalEntry]]:
    """Read journal entries from a header-first CSV file.

    ``schema`` names the attribute columns in order. When omitted, every column
    other than the label column and an optional ``entry_id`` column is treated
    as an attribute. Entries without an ``entry_id`` column are numbered by
    their 1-based data row.

    Returns the attribute names and the entries.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        header = [h.strip() for h in header]
        position = {name: i for i, name in enumerate(header)}

        has_label = label_column is not None and label_column in position
        if schema is None:
            skip = {ENTRY_ID_COLUMN}
            if label_column is not None:
                skip.add(label_column)
            schema = [h for h in header if h not in skip]
            if not schema:
                raise SchemaError(f"{path}: no attribute columns")
        for name in schema:
            if name not in position:
                raise SchemaError(f"{path}: missing column {name!r}")
        attr_idx = [position[name] for name in schema]
        id_idx = position.get(ENTRY_ID_COLUMN)
        label_idx = position[label_column] if has_label else None

        entries = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            values = tuple(row[i] if row[i] != "" else MISSING for i in attr_idx)
            entry_id = row[id_idx] if id_idx is not None else str(len(entries) + 1)
            label = Label.UNLABELED
            if label_idx is not None:
                try:
                    label = Label.parse(row[label_idx])
                except DataError as exc:
                    raise DataError(f"{path}:{line}: {exc}") from None
            entries.append(JournalEntry(entry_id, values, label))
    return list(schema), entries


def write_csv(path, attributes: Sequence[str], entries: Iterable[JournalEntry],
              with_labels: bool = True, with_ids: bool = False) -> None:
    header = ([ENTRY_ID_COLUMN] if with_ids else []) + list(attributes)
    if with_labels:
        header.append(LABEL_COLUMN)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for e in entries:
            row = ([e.entry_id] if with_ids else []) + list(e.values)
            if with_labels:
                row.append(e.label.value)
            writer.writerow(row)


@dataclass(frozen=True)
class AttributeVocabulary:
    """Distinct values per attribute, in first-seen order, with column offsets."""

    attributes: tuple[str, ...]
    values: tuple[tuple[str, ...], ...]
    _lookup: tuple[dict, ...] = field(init=False, repr=False, compare=False)
    offsets: tuple[int, ...] = field(init=False, compare=False)

    def __post_init__(self):
        if len(self.attributes) != len(self.values):
            raise DataError("attribute names and value lists differ in length")
        lookup, offsets, start = [], [], 0
        for name, vals in zip(self.attributes, self.values):
            if len(set(vals)) != len(vals):
                raise DataError(f"attribute {name!r}: duplicate vocabulary values")
            lookup.append({v: i for i, v in enumerate(vals)})
            offsets.append(start)
            start += len(vals)
        object.__setattr__(self, "_lookup", tuple(lookup))
        object.__setattr__(self, "offsets", tuple(offsets))

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def dim(self) -> int:
        return sum(len(v) for v in self.values)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.values)

    @property
    def blocks(self) -> list[slice]:
        return [slice(o, o + n) for o, n in zip(self.offsets, self.sizes)]

    def column(self, j: int, value: str) -> int:
        return self.offsets[j] + self._lookup[j][value]

    def __contains__(self, item) -> bool:
        j, value = item
        return value in self._lookup[j]

    def to_json(self) -> dict:
        return {name: list(vals) for name, vals in zip(self.attributes, self.values)}

    @classmethod
    def from_json(cls, doc: dict) -> "AttributeVocabulary":
        return cls(tuple(doc), tuple(tuple(v) for v in doc.values()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=1) + "\n",
                              encoding="utf-8")


def build_vocabulary(entries: Sequence[JournalEntry],
                     attributes: Sequence[str] | None = None) -> AttributeVocabulary:
    if not entries:
        raise DataError("cannot build a vocabulary from zero entries")
    k = len(entries[0].values)
    if attributes is None:
        attributes = [f"attr_{j + 1}" for j in range(k)]
    if len(attributes) != k:
        raise DataError(f"{len(attributes)} attribute names for entries with {k} values")
    seen = [dict() for _ in range(k)]
    for e in entries:
        if len(e.values) != k:
            raise DataError(f"entry {e.entry_id}: {len(e.values)} attributes, expected {k}")
        for j, v in enumerate(e.values):
            seen[j].setdefault(v, None)
    return AttributeVocabulary(tuple(attributes), tuple(tuple(s) for s in seen))


@dataclass(frozen=True)
class EncodedMatrix:
    """Binary one-hot matrix (N x D, uint8) with its labels and vocabulary."""

    x: np.ndarray
    vocab: AttributeVocabulary
    entry_ids: tuple[str, ...]
    labels: tuple[Label, ...]

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise DataError("encoded matrix must be a non-empty 2-D array")
        if self.x.shape[1] != self.vocab.dim:
            raise DataError(f"matrix has {self.x.shape[1]} columns, vocabulary has {self.vocab.dim}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def anomaly_mask(self) -> np.ndarray:
        return np.array([lab.is_anomaly for lab in self.labels], dtype=bool)

    def indices(self) -> np.ndarray:
        """Sparse form: the K hot column indices of each row, shape (N, K)."""
        rows, cols = np.nonzero(self.x)
        return cols.reshape(self.n, self.vocab.n_attributes)

    @classmethod
    def from_indices(cls, indices: np.ndarray, vocab: AttributeVocabulary,
                     entry_ids, labels) -> "EncodedMatrix":
        indices = np.asarray(indices)
        x = np.zeros((indices.shape[0], vocab.dim), dtype=np.uint8)
        np.put_along_axis(x, indices, 1, axis=1)
        return cls(x, vocab, tuple(entry_ids), tuple(labels))


def encode_indices(entries: Sequence[JournalEntry], vocab: AttributeVocabulary) -> np.ndarray:
    out = np.empty((len(entries), vocab.n_attributes), dtype=np.int64)
    for i, e in enumerate(entries):
        if len(e.values) != vocab.n_attributes:
            raise DataError(f"entry {e.entry_id}: {len(e.values)} attributes, "
                            f"vocabulary has {vocab.n_attributes}")
        for j, v in enumerate(e.values):
            try:
                out[i, j] = vocab.column(j, v)
            except KeyError:
                raise DataError(f"entry {e.entry_id}: value {v!r} of attribute "
                                f"{vocab.attributes[j]!r} is not in the vocabulary") from None
    return out


def one_hot_encode(entries: Sequence[JournalEntry], vocab: AttributeVocabulary) -> EncodedMatrix:
    idx = encode_indices(entries, vocab)
    return EncodedMatrix.from_indices(idx, vocab, [e.entry_id for e in entries],
                                      [e.label for e in entries])


def decode(row, vocab: AttributeVocabulary) -> tuple[str, ...]:
    row = np.asarray(row)
    if row.shape != (vocab.dim,):
        raise DataError(f"row has shape {row.shape}, expected ({vocab.dim},)")
    if not np.isin(row, (0, 1)).all():
        raise DataError("row is not binary")
    out = []
    for j, blk in enumerate(vocab.blocks):
        hot = np.flatnonzero(row[blk])
        if hot.size != 1:
            raise DataError(f"attribute {vocab.attributes[j]!r}: {hot.size} hot bits, expected 1")
        out.append(vocab.values[j][hot[0]])
    return tuple(out)


def load_encoded(path, schema=None, label_column=LABEL_COLUMN,
                 vocab: AttributeVocabulary | None = None) -> tuple[list[JournalEntry], EncodedMatrix]:
    """Load a CSV and one-hot encode it over its own vocabulary (or ``vocab``)."""
    attributes, entries = load_csv(path, schema, label_column)
    if vocab is None:
        vocab = build_vocabulary(entries, attributes)
    elif tuple(attributes) != vocab.attributes:
        raise DataError(f"dataset attributes {attributes} differ from vocabulary {list(vocab.attributes)}")
    return entries, one_hot_encode(entries, vocab)
