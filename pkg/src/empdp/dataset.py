"""Collections of databases that share a global notion of individual identity."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

ID_COLUMN = "individual_id"
DB_COLUMN = "database_id"


class DataError(ValueError):
    """Raised when input data cannot be turned into a valid collection."""


@dataclass(frozen=True, eq=False)
class Database:
    """One sampled database: rows keyed by individual id plus numeric columns.

    ``columns`` maps column name to a float array aligned with ``individual_ids``.
    Instances are treated as immutable; arrays are made read-only on construction.
    """

    id: str
    individual_ids: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = np.asarray(self.individual_ids, dtype=object)
        if ids.ndim != 1:
            raise DataError("individual_ids must be one-dimensional")
        ids = np.array([str(v).strip() for v in ids], dtype=object)
        if any(v == "" for v in ids):
            raise DataError(f"database {self.id!r}: empty individual_id")
        cols = {}
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.shape != ids.shape:
                raise DataError(f"database {self.id!r}: column {name!r} has wrong length")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"database {self.id!r}: column {name!r} has non-finite values")
            arr.setflags(write=False)
            cols[name] = arr
        ids.setflags(write=False)
        object.__setattr__(self, "individual_ids", ids)
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return len(self.individual_ids)

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Database):
            return NotImplemented
        return (
            self.id == other.id
            and self.schema == other.schema
            and np.array_equal(self.individual_ids, other.individual_ids)
            and all(np.array_equal(self.columns[c], other.columns[c]) for c in self.schema)
        )

    def select(self, mask: np.ndarray) -> "Database":
        return Database(
            self.id,
            self.individual_ids[mask],
            {name: values[mask] for name, values in self.columns.items()},
        )


@dataclass(frozen=True)
class DatabaseCollection:
    """An ordered list of at least two databases sharing one column schema."""

    databases: tuple[Database, ...]
    schema: tuple[str, ...]

    def __post_init__(self):
        dbs = tuple(self.databases)
        if len(dbs) < 2:
            raise DataError("fewer than 2 databases")
        ids = [d.id for d in dbs]
        if len(set(ids)) != len(ids):
            raise DataError("database ids are not unique")
        schema = tuple(self.schema)
        for d in dbs:
            if d.schema != schema:
                raise DataError(
                    f"schema mismatch: database {d.id!r} has {list(d.schema)}, expected {list(schema)}"
                )
        object.__setattr__(self, "databases", dbs)
        object.__setattr__(self, "schema", schema)

    def __len__(self) -> int:
        return len(self.databases)

    def __iter__(self):
        return iter(self.databases)

    def subset(self, indices: Iterable[int]) -> "DatabaseCollection":
        return DatabaseCollection(tuple(self.databases[i] for i in indices), self.schema)


def individuals(c: DatabaseCollection) -> list[str]:
    """Sorted union of individual ids over all databases."""
    seen: set[str] = set()
    for d in c.databases:
        seen.update(d.individual_ids.tolist())
    return sorted(seen)


def drop_individual(d: Database, i: str) -> Database:
    """Return a copy of ``d`` without any of the rows belonging to ``i``."""
    return d.select(d.individual_ids != str(i).strip())


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _frame_to_database(db_id: str, frame: pd.DataFrame, schema: Sequence[str]) -> Database:
    columns = {}
    for name in schema:
        raw = frame[name]
        if raw.isna().any() or (raw.astype(str).str.strip() == "").any():
            raise DataError(f"database {db_id!r}: missing value in column {name!r}")
        text = raw.astype(str).str.strip().tolist()
        try:
            # numpy's parser is correctly rounded; pandas' fast path is not
            columns[name] = np.array(text, dtype=float)
        except ValueError:
            bad = next(t for t in text if not _is_number(t))
            raise DataError(f"database {db_id!r}: non-numeric value {bad!r} in column {name!r}") from None
    return Database(db_id, frame[ID_COLUMN].to_numpy(dtype=object), columns)


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    if ID_COLUMN not in frame.columns:
        raise DataError(f"{path}: missing {ID_COLUMN} column")
    return frame


def load_collection(source, layout: str | None = None) -> DatabaseCollection:
    """Load a collection from a directory of CSV files or one long-format CSV.

    Args:
        source: A directory (one CSV per database, database id = file stem, files
            taken in sorted name order) or a CSV file with a ``database_id`` column
            (databases in order of first appearance).
        layout: ``"dir"`` or ``"long"``; inferred from ``source`` when omitted.

    Raises:
        DataError: on any missing column, schema mismatch, non-numeric or missing
            value, or when fewer than two databases are found.
    """
    path = Path(source)
    if not path.exists():
        raise DataError(f"input {path} does not exist")
    if layout is None:
        layout = "dir" if path.is_dir() else "long"
    if layout == "dir":
        if not path.is_dir():
            raise DataError(f"{path} is not a directory")
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".csv")
        dbs = []
        schema = None
        for f in files:
            frame = _read_csv(f)
            cols = tuple(c for c in frame.columns if c != ID_COLUMN)
            if schema is None:
                schema = cols
            elif cols != schema:
                raise DataError(f"schema mismatch: {f.name} has {list(cols)}, expected {list(schema)}")
            dbs.append(_frame_to_database(f.stem, frame, schema))
        if len(dbs) < 2:
            raise DataError("fewer than 2 databases")
        return DatabaseCollection(tuple(dbs), schema)
    if layout == "long":
        if not path.is_file():
            raise DataError(f"{path} is not a file")
        frame = _read_csv(path)
        if DB_COLUMN not in frame.columns:
            raise DataError(f"{path}: missing {DB_COLUMN} column")
        schema = tuple(c for c in frame.columns if c not in (ID_COLUMN, DB_COLUMN))
        frame[DB_COLUMN] = frame[DB_COLUMN].str.strip()
        order = list(dict.fromkeys(frame[DB_COLUMN].tolist()))
        if len(order) < 2:
            raise DataError("fewer than 2 databases")
        groups = frame.groupby(DB_COLUMN, sort=False)
        dbs = [_frame_to_database(k, groups.get_group(k), schema) for k in order]
        return DatabaseCollection(tuple(dbs), schema)
    raise ValueError(f"unknown layout {layout!r}")


def save_collection(c: DatabaseCollection, target, layout: str = "long") -> None:
    """Write ``c`` in either input layout; values use ``repr`` precision so they round-trip."""
    target = Path(target)

    def frame(d: Database) -> pd.DataFrame:
        data = {ID_COLUMN: d.individual_ids.tolist()}
        for name in c.schema:
            data[name] = [repr(float(v)) for v in d.columns[name]]
        return pd.DataFrame(data, columns=[ID_COLUMN, *c.schema])

    if layout == "dir":
        target.mkdir(parents=True, exist_ok=True)
        # reloading takes files in sorted-name order, not collection order
        for d in c.databases:
            frame(d).to_csv(target / f"{d.id}.csv", index=False)
    elif layout == "long":
        parts = []
        for d in c.databases:
            f = frame(d)
            f.insert(0, DB_COLUMN, d.id)
            parts.append(f)
        pd.concat(parts, ignore_index=True).to_csv(target, index=False)
    else:
        raise ValueError(f"unknown layout {layout!r}")


def from_records(records: dict[str, Sequence[tuple]], schema: Sequence[str]) -> DatabaseCollection:
    """Build a collection from ``{database_id: [(individual_id, v1, v2, ...), ...]}``."""
    dbs = []
    for db_id, rows in records.items():
        ids = [r[0] for r in rows]
        cols = {name: [r[k + 1] for r in rows] for k, name in enumerate(schema)}
        dbs.append(Database(str(db_id), np.array(ids, dtype=object), cols))
    return DatabaseCollection(tuple(dbs), tuple(schema))
