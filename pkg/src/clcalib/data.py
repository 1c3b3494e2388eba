"""Clustered two-group count data and its CSV formats."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    sizes: tuple[int, ...]
    events: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.events):
            raise InputError(f"study {self.study_id}: sizes and events differ in length")
        for n, y in zip(self.sizes, self.events):
            if n < 0 or y < 0 or y > n:
                raise DomainError(f"study {self.study_id}: need 0 <= y <= n, got y={y}, n={n}")


@dataclass(frozen=True)
class MetaDataset:
    """N independent study clusters with K treatment groups each.

    ``sizes`` and ``events`` are integer arrays of shape (N, K).
    """

    sizes: np.ndarray
    events: np.ndarray
    study_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        events = np.asarray(self.events, dtype=np.int64)
        if sizes.ndim != 2 or sizes.shape != events.shape:
            raise InputError("sizes and events must be (N, K) arrays of equal shape")
        if sizes.shape[0] < 1:
            raise InputError("a dataset needs at least one study")
        if np.any(events < 0) or np.any(events > sizes):
            raise DomainError("event counts must satisfy 0 <= y <= n")
        sizes.setflags(write=False)
        events.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "events", events)
        ids = tuple(self.study_ids) or tuple(str(i + 1) for i in range(sizes.shape[0]))
        if len(ids) != sizes.shape[0]:
            raise InputError("one study id per study required")
        object.__setattr__(self, "study_ids", ids)

    @property
    def n_studies(self) -> int:
        return self.sizes.shape[0]

    @property
    def n_groups(self) -> int:
        return self.sizes.shape[1]

    @classmethod
    def from_records(cls, records: list[StudyRecord]) -> MetaDataset:
        if not records:
            raise InputError("a dataset needs at least one study")
        k = {len(r.sizes) for r in records}
        if len(k) != 1:
            raise InputError("all studies must have the same number of groups")
        return cls(
            sizes=np.array([r.sizes for r in records]),
            events=np.array([r.events for r in records]),
            study_ids=tuple(r.study_id for r in records),
        )

    def records(self) -> list[StudyRecord]:
        return [
            StudyRecord(sid, tuple(int(v) for v in n), tuple(int(v) for v in y))
            for sid, n, y in zip(self.study_ids, self.sizes, self.events)
        ]

    def concat(self, other: MetaDataset) -> MetaDataset:
        return MetaDataset(
            np.vstack([self.sizes, other.sizes]),
            np.vstack([self.events, other.events]),
            self.study_ids + other.study_ids,
        )

    def to_csv(self) -> str:
        k = self.n_groups
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["study"]
        for j in range(1, k + 1):
            header += [f"n{j}", f"y{j}"]
        writer.writerow(header)
        for sid, n, y in zip(self.study_ids, self.sizes, self.events):
            row = [sid]
            for j in range(k):
                row += [int(n[j]), int(y[j])]
            writer.writerow(row)
        return buf.getvalue()


def _parse_int(text: str, what: str, lineno: int) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise InputError(f"line {lineno}: {what} is not an integer: {text!r}") from None
    return value


def _group_columns(header: list[str], prefixes: tuple[str, ...], lineno: int = 1) -> int:
    """Return K after checking the header is ``study`` followed by per-group columns."""
    if not header or header[0].strip() != "study":
        raise InputError(f"line {lineno}: header must start with 'study'")
    width = len(prefixes)
    rest = [h.strip() for h in header[1:]]
    if not rest or len(rest) % width:
        raise InputError(f"line {lineno}: expected columns {','.join(p + '1' for p in prefixes)},...")
    k = len(rest) // width
    expected = [f"{p}{j}" for j in range(1, k + 1) for p in prefixes]
    if rest != expected:
        raise InputError(f"line {lineno}: expected header study,{','.join(expected)}")
    return k


def parse_dataset_csv(text: str) -> MetaDataset:
    """Parse ``study,n1,y1,n2,y2`` (any K) into a dataset.

    Errors carry the 1-based line number of the offending row.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise InputError("empty dataset file")
    k = _group_columns(rows[0][1], ("n", "y"), rows[0][0])
    records = []
    for lineno, row in rows[1:]:
        if len(row) != 1 + 2 * k:
            raise InputError(f"line {lineno}: expected {1 + 2 * k} fields, got {len(row)}")
        sizes = tuple(_parse_int(row[1 + 2 * j], f"n{j + 1}", lineno) for j in range(k))
        events = tuple(_parse_int(row[2 + 2 * j], f"y{j + 1}", lineno) for j in range(k))
        try:
            records.append(StudyRecord(row[0].strip(), sizes, events))
        except InputError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
    if not records:
        raise InputError("dataset file has a header but no studies")
    return MetaDataset.from_records(records)


def read_dataset_csv(path: str | Path) -> MetaDataset:
    return parse_dataset_csv(Path(path).read_text())


def parse_size_table_csv(text: str) -> np.ndarray:
    """Parse a ``study,n1,n2`` size table into an (N, K) integer array."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise InputError("empty size table")
    k = _group_columns(rows[0][1], ("n",), rows[0][0])
    sizes = []
    for lineno, row in rows[1:]:
        if len(row) != 1 + k:
            raise InputError(f"line {lineno}: expected {1 + k} fields, got {len(row)}")
        vals = [_parse_int(row[1 + j], f"n{j + 1}", lineno) for j in range(k)]
        if any(v < 1 for v in vals):
            raise InputError(f"line {lineno}: group sizes must be positive")
        sizes.append(vals)
    if not sizes:
        raise InputError("size table has a header but no rows")
    return np.array(sizes, dtype=np.int64)


def read_size_table_csv(path: str | Path) -> np.ndarray:
    return parse_size_table_csv(Path(path).read_text())
