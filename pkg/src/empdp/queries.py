"""Deterministic statistical queries evaluated per database.

Built-in kinds are ``sum``, ``mean``, ``count``, ``quantile`` and ``joint`` (a pair of
one-dimensional queries). Further one-dimensional kinds can be added in-process
with :func:`register_query`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from empdp.dataset import Database, DatabaseCollection, drop_individual


class QueryError(ValueError):
    """A query could not be evaluated on some database."""


@dataclass(frozen=True)
class QuerySpec:
    kind: str
    column: str | None = None
    q: float | None = None
    parts: tuple["QuerySpec", ...] = ()
    params: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.kind == "joint":
            if len(self.parts) != 2:
                raise ValueError("joint query needs exactly two parts")
            if any(p.kind == "joint" for p in self.parts):
                raise ValueError("joint queries cannot be nested")
            return
        if self.kind not in _REGISTRY:
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.kind in ("sum", "mean", "quantile") and not self.column:
            raise ValueError(f"{self.kind} query needs a column")
        if self.kind == "quantile":
            if self.q is None or not 0.0 < float(self.q) < 1.0:
                raise ValueError("quantile fraction q must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "joint" else 1

    @classmethod
    def from_dict(cls, obj) -> "QuerySpec":
        if isinstance(obj, (list, tuple)):
            if len(obj) != 2:
                raise ValueError("joint query must be a two-element array")
            return cls("joint", parts=(cls.from_dict(obj[0]), cls.from_dict(obj[1])))
        if not isinstance(obj, dict):
            raise ValueError(f"cannot parse query spec from {obj!r}")
        unknown = set(obj) - {"kind", "column", "q", "parts", "params"}
        if unknown:
            raise ValueError(f"unknown query keys: {sorted(unknown)}")
        if "kind" not in obj:
            raise ValueError("query spec needs a 'kind'")
        if obj["kind"] == "joint":
            return cls.from_dict(list(obj.get("parts", ())))
        q = obj.get("q")
        return cls(
            obj["kind"],
            column=obj.get("column"),
            q=None if q is None else float(q),
            params=dict(obj.get("params", {})),
        )

    def to_dict(self):
        if self.kind == "joint":
            return [p.to_dict() for p in self.parts]
        out: dict[str, Any] = {"kind": self.kind}
        if self.column is not None:
            out["column"] = self.column
        if self.q is not None:
            out["q"] = self.q
        if self.params:
            out["params"] = dict(self.params)
        return out

    def __str__(self) -> str:
        if self.kind == "joint":
            return f"joint({self.parts[0]}, {self.parts[1]})"
        args = [a for a in (self.column, None if self.q is None else f"q={self.q}") if a]
        return f"{self.kind}({', '.join(args)})"


def parse_query(text: str) -> QuerySpec:
    """Parse the short CLI form, e.g. ``mean:precip``, ``quantile:v:0.9``, ``count``,
    ``sum:v,count`` (joint). JSON objects/arrays are also accepted."""
    text = text.strip()
    if text.startswith("{") or text.startswith("["):
        import json

        return QuerySpec.from_dict(json.loads(text))
    if "," in text:
        a, b = text.split(",", 1)
        return QuerySpec("joint", parts=(parse_query(a), parse_query(b)))
    bits = text.split(":")
    kind = bits[0]
    column = bits[1] if len(bits) > 1 and bits[1] else None
    q = float(bits[2]) if len(bits) > 2 else None
    return QuerySpec(kind, column=column, q=q)


@dataclass(frozen=True)
class QuerySampleSet:
    """Query responses, one row per database in collection order."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] not in (1, 2):
            raise ValueError("sample points must have dimension 1 or 2")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuerySampleSet):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


def _column(d: Database, spec: QuerySpec) -> np.ndarray:
    if spec.column not in d.columns:
        raise QueryError(f"unknown column {spec.column!r}")
    return d.columns[spec.column]


def _sum(d: Database, spec: QuerySpec) -> float:
    return float(np.add.reduce(_column(d, spec))) if len(d) else 0.0


def _count(d: Database, spec: QuerySpec) -> float:
    if spec.column is not None:
        _column(d, spec)
    return float(len(d))


def _mean(d: Database, spec: QuerySpec) -> float:
    values = _column(d, spec)
    if len(values) == 0:
        raise QueryError("empty database")
    return float(np.add.reduce(values)) / len(values)


def _quantile(d: Database, spec: QuerySpec) -> float:
    values = _column(d, spec)
    if len(values) == 0:
        raise QueryError("empty database")
    ordered = np.sort(values, kind="stable")
    rank = max(1, math.ceil(float(spec.q) * len(ordered)))
    return float(ordered[rank - 1])


QueryFn = Callable[[Database, QuerySpec], float]

_REGISTRY: dict[str, QueryFn] = {
    "sum": _sum,
    "count": _count,
    "mean": _mean,
    "quantile": _quantile,
}


def register_query(kind: str, fn: QueryFn) -> None:
    """Add a one-dimensional query kind. ``fn(database, spec)`` must be pure."""
    if kind == "joint":
        raise ValueError("'joint' is reserved")
    _REGISTRY[kind] = fn


def unregister_query(kind: str) -> None:
    if kind in ("sum", "count", "mean", "quantile"):
        raise ValueError(f"cannot remove built-in query {kind!r}")
    _REGISTRY.pop(kind, None)


def evaluate(q: QuerySpec, d: Database) -> np.ndarray:
    if q.kind == "joint":
        return np.concatenate([evaluate(p, d) for p in q.parts])
    return np.array([_REGISTRY[q.kind](d, q)], dtype=float)


def eval_all(q: QuerySpec, c: DatabaseCollection) -> QuerySampleSet:
    rows = []
    for d in c.databases:
        try:
            rows.append(evaluate(q, d))
        except QueryError as exc:
            raise QueryError(f"database {d.id!r}: {exc}") from exc
    return QuerySampleSet(np.vstack(rows))


def eval_all_without(q: QuerySpec, c: DatabaseCollection, i: str) -> QuerySampleSet:
    """Responses after removing every row of individual ``i`` from every database."""
    rows = []
    for d in c.databases:
        try:
            rows.append(evaluate(q, drop_individual(d, i)))
        except QueryError as exc:
            raise QueryError(f"database {d.id!r} without {i!r}: {exc}") from exc
    return QuerySampleSet(np.vstack(rows))


_DECOMPOSABLE = ("sum", "count", "mean")


def _is_decomposable(q: QuerySpec) -> bool:
    if q.kind == "joint":
        return all(_is_decomposable(p) for p in q.parts)
    return q.kind in _DECOMPOSABLE


class LeaveOneOut:
    """Leave-one-individual-out responses for every individual of a collection.

    Sums, counts and means are updated from per-individual subtotals, so the cost
    is linear in the data instead of quadratic. Other kinds fall back to
    :func:`eval_all_without`. The fast path agrees with the direct recomputation
    up to floating-point rounding of the subtraction.
    """

    def __init__(self, q: QuerySpec, c: DatabaseCollection):
        self.query = q
        self.collection = c
        self.full = eval_all(q, c)
        self._fast = _is_decomposable(q)
        if self._fast:
            self._prepare()

    def _prepare(self):
        c = self.collection
        ids = sorted({v for d in c.databases for v in d.individual_ids.tolist()})
        self._index = {v: k for k, v in enumerate(ids)}
        m = len(ids)
        leaves = list(self.query.parts) if self.query.kind == "joint" else [self.query]
        columns = sorted({p.column for p in leaves if p.kind in ("sum", "mean")})
        n = len(c)
        self._counts = np.zeros((n, m))
        self._row_counts = np.zeros(n)
        self._sums = {col: np.zeros((n, m)) for col in columns}
        self._totals = {col: np.zeros(n) for col in columns}
        for j, d in enumerate(c.databases):
            codes = np.array([self._index[v] for v in d.individual_ids.tolist()], dtype=np.int64)
            self._counts[j] = np.bincount(codes, minlength=m)
            self._row_counts[j] = len(d)
            for col in columns:
                if col not in d.columns:
                    raise QueryError(f"database {d.id!r}: unknown column {col!r}")
                values = d.columns[col]
                self._sums[col][j] = np.bincount(codes, weights=values, minlength=m)
                self._totals[col][j] = np.add.reduce(values) if len(values) else 0.0

    def _leaf(self, p: QuerySpec, k: int, i: str) -> np.ndarray:
        count = self._row_counts - self._counts[:, k]
        if p.kind == "count":
            return count
        total = self._totals[p.column] - self._sums[p.column][:, k]
        if p.kind == "sum":
            return total
        if np.any(count == 0):
            bad = self.collection.databases[int(np.argmax(count == 0))].id
            raise QueryError(f"database {bad!r} without {i!r}: empty database")
        return total / count

    def without(self, i: str) -> QuerySampleSet:
        if not self._fast:
            return eval_all_without(self.query, self.collection, i)
        k = self._index.get(str(i).strip())
        if k is None:
            return self.full
        if not np.any(self._counts[:, k]):
            return self.full
        leaves = list(self.query.parts) if self.query.kind == "joint" else [self.query]
        return QuerySampleSet(np.column_stack([self._leaf(p, k, i) for p in leaves]))
