"""Per-individual failure probabilities, total risk and their aggregation.

For every individual ``i`` the query is evaluated with and without ``i``'s rows,
densities are fitted to both response samples, and ``delta_i`` is the larger of
the two positive-part integrals ``int (p - e^eps p_i)_+`` and
``int (p_i - e^eps p)_+``. The reported ``delta`` is the worst ``delta_i`` and
``delta_star = 1 - prod(1 - delta_i)`` is the total risk.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from empdp.dataset import DatabaseCollection, individuals
from empdp.density import (
    DensityError,
    DensityModel,
    FitConfig,
    IntegrationGrid,
    ModelSpec,
    density_on_grid,
    integration_grid,
    select_spec,
)
from empdp.queries import LeaveOneOut, QueryError, QuerySampleSet, QuerySpec, eval_all

log = logging.getLogger(__name__)

LOW_SAMPLE_FLOOR = 10


class PrivacyError(RuntimeError):
    """The privacy analysis as a whole could not be carried out."""


@dataclass(frozen=True)
class PairDensities:
    """Densities with and without one individual, tabulated on a shared grid."""

    grid: IntegrationGrid
    p: np.ndarray
    p_i: np.ndarray
    model: DensityModel
    model_i: DensityModel
    spec: ModelSpec
    flags: tuple[str, ...] = ()
    density_floor: float = 1e-30

    def delta(self, eps: float) -> float:
        if not eps >= 0:
            raise ValueError("epsilon must be nonnegative")
        factor = math.exp(eps)
        # both densities negligible: the ratio is meaningless there, count nothing
        live = (self.p >= self.density_floor) | (self.p_i >= self.density_floor)
        forward = np.where(live, np.maximum(self.p - factor * self.p_i, 0.0), 0.0)
        backward = np.where(live, np.maximum(self.p_i - factor * self.p, 0.0), 0.0)
        value = max(self.grid.integrate(forward), self.grid.integrate(backward))
        return min(max(value, 0.0), 1.0)


def _pooled(q: QuerySampleSet, q_i: QuerySampleSet) -> np.ndarray:
    pts = np.vstack([q.points, q_i.points])
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def fit_pair(q: QuerySampleSet, q_i: QuerySampleSet, cfg: FitConfig | None = None) -> PairDensities:
    """Fit both densities with one shared specification and tabulate them.

    The specification is ``cfg.fixed`` when given, otherwise it is selected on the
    pooled samples (in canonical sorted order), so the result does not depend on
    which of the two sets is passed first.
    """
    cfg = cfg or FitConfig()
    if q.dim != q_i.dim:
        raise ValueError("sample sets have different dimensions")
    flags: tuple[str, ...] = ()
    if cfg.fixed is not None:
        spec = cfg.fixed
    elif cfg.estimator == "ecdf_diff":
        spec = ModelSpec(estimator="ecdf_diff")
    else:
        sel = select_spec(_pooled(q, q_i), cfg)
        spec, flags = sel.spec, sel.flags
    model = spec.fit(q)
    model_i = spec.fit(q_i)
    grid = integration_grid([model, model_i], cfg)
    flags = tuple(dict.fromkeys(flags + model.flags + model_i.flags))
    return PairDensities(
        grid,
        density_on_grid(model, grid),
        density_on_grid(model_i, grid),
        model,
        model_i,
        spec,
        flags,
        cfg.density_floor,
    )


def infer_privacy_risk(
    q: QuerySampleSet, q_i: QuerySampleSet, eps: float, cfg: FitConfig | None = None
) -> float:
    """``delta_i`` for one individual given the two response samples."""
    if not eps >= 0:
        raise ValueError("epsilon must be nonnegative")
    if q == q_i:
        return 0.0
    return fit_pair(q, q_i, cfg).delta(eps)


def total_risk(deltas: Sequence[float]) -> float:
    """``1 - prod(1 - delta_i)``, accumulated in log space."""
    d = np.asarray(list(deltas), dtype=float)
    if np.any((d < 0) | (d > 1)) or np.any(~np.isfinite(d)):
        raise ValueError("individual deltas must lie in [0, 1]")
    if np.any(d == 1.0):
        return 1.0
    value = -math.expm1(float(np.sum(np.log1p(-d))))
    return min(max(value, 0.0), 1.0)


@dataclass
class PrivacyReport:
    epsilon: float
    delta: float
    delta_star: float
    per_individual: list[tuple[str, float]]
    model: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    n_databases: int = 0

    def nonzero(self, threshold: float = 0.0) -> list[tuple[str, float]]:
        return [(i, d) for i, d in self.per_individual if d > threshold]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "delta_star": self.delta_star,
            "n_databases": self.n_databases,
            "individuals": [{"id": i, "delta_i": d} for i, d in self.per_individual],
            "flags": list(self.flags),
            "model": self.model,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


@dataclass
class RiskCurve:
    points: list[tuple[float, float, float]]
    reports: list[PrivacyReport] = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        lines = ["epsilon,delta,delta_star"]
        lines += [f"{e!r},{d!r},{s!r}" for e, d, s in self.points]
        return "\n".join(lines) + "\n"


@dataclass
class _Outcome:
    individual: str
    deltas: np.ndarray
    spec: ModelSpec | None
    flags: tuple[str, ...]
    error: str | None = None


def _aggregate(
    outcomes: list[_Outcome], eps_index: int, eps: float, n: int, extra_flags: list[str], model: dict
) -> PrivacyReport:
    table = [(o.individual, float(o.deltas[eps_index])) for o in outcomes]
    # fixed reduction order: sorted individual ids
    table_by_id = sorted(table)
    deltas = [d for _, d in table_by_id]
    per = sorted(table, key=lambda t: (-t[1], t[0]))
    return PrivacyReport(
        epsilon=float(eps),
        delta=max(deltas) if deltas else 0.0,
        delta_star=total_risk(deltas),
        per_individual=per,
        model=model,
        flags=list(extra_flags),
        n_databases=n,
    )


def _summarize(outcomes: list[_Outcome], reference: dict) -> tuple[dict, list[str]]:
    specs = [o.spec for o in outcomes if o.spec is not None]
    flags: list[str] = []
    counts: dict[str, int] = {}
    for o in outcomes:
        for f in o.flags:
            counts[f] = counts.get(f, 0) + 1
        if o.error:
            flags.append(f"individual {o.individual}: fit failed ({o.error}); delta_i set to 1")
    for f, k in sorted(counts.items()):
        flags.append(f"{f}: {k} individual(s)")
    model = {"reference": reference}
    kde = [s for s in specs if s.estimator == "kde"]
    if kde:
        scales = np.array([s.scale[0] for s in kde])
        model["per_individual"] = {
            "count": len(kde),
            "kernels": {k: sum(s.kernel == k for s in kde) for k in sorted({s.kernel for s in kde})},
            "variable": sum(s.variable for s in kde),
            "scale_min": float(scales.min()),
            "scale_max": float(scales.max()),
        }
    return model, flags


def _reference_model(q: QuerySampleSet, cfg: FitConfig) -> dict:
    if cfg.fixed is not None:
        return {**cfg.fixed.to_dict(), "source": "fixed"}
    if cfg.estimator == "ecdf_diff":
        return {"estimator": "ecdf_diff"}
    try:
        sel = select_spec(q, cfg)
    except DensityError as exc:
        return {"error": str(exc)}
    return {**sel.spec.to_dict(), "cv_log_likelihood": sel.score, "flags": list(sel.flags), "source": "selected"}


class Analysis:
    """Leave-one-out samples for a query over a collection, ready for any epsilon."""

    def __init__(self, c: DatabaseCollection, q: QuerySpec, cfg: FitConfig | None = None):
        self.collection = c
        self.query = q
        self.cfg = cfg or FitConfig()
        self.loo = LeaveOneOut(q, c)
        self.samples = self.loo.full
        self.individuals = individuals(c)
        if len(self.individuals) < 2:
            raise PrivacyError("need at least 2 distinct individuals")

    def pair(self, i: str) -> PairDensities:
        return fit_pair(self.samples, self.loo.without(i), self.cfg)

    def _one(self, i: str, eps_grid: np.ndarray) -> _Outcome:
        try:
            q_i = self.loo.without(i)
            if q_i == self.samples:
                return _Outcome(i, np.zeros(len(eps_grid)), None, ())
            pair = fit_pair(self.samples, q_i, self.cfg)
            deltas = np.array([pair.delta(e) for e in eps_grid])
            return _Outcome(i, deltas, pair.spec, pair.flags)
        except (DensityError, QueryError, ValueError, FloatingPointError) as exc:
            log.warning("individual %s failed: %s", i, exc)
            return _Outcome(i, np.ones(len(eps_grid)), None, (), error=str(exc))

    def run(self, eps_grid: Sequence[float], threads: int = 1) -> RiskCurve:
        eps_grid = np.asarray(list(eps_grid), dtype=float)
        if len(eps_grid) == 0:
            raise ValueError("epsilon grid is empty")
        if np.any(eps_grid < 0) or not np.all(np.isfinite(eps_grid)):
            raise ValueError("epsilon values must be finite and nonnegative")
        if np.any(np.diff(eps_grid) <= 0):
            raise ValueError("epsilon grid must be strictly increasing")
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(lambda i: self._one(i, eps_grid), self.individuals))
        else:
            outcomes = [self._one(i, eps_grid) for i in self.individuals]
        self.outcomes = outcomes
        model, flags = _summarize(outcomes, _reference_model(self.samples, self.cfg))
        n = len(self.collection)
        if n < LOW_SAMPLE_FLOOR:
            flags.insert(0, f"low_sample: only {n} databases (< {LOW_SAMPLE_FLOOR})")
        model["query"] = self.query.to_dict()
        reports = [_aggregate(outcomes, k, e, n, flags, model) for k, e in enumerate(eps_grid)]
        return RiskCurve([(r.epsilon, r.delta, r.delta_star) for r in reports], reports)


def empirical_privacy(
    c: DatabaseCollection, q: QuerySpec, eps: float, cfg: FitConfig | None = None, threads: int = 1
) -> PrivacyReport:
    """Run the leave-one-out analysis for every individual at one epsilon."""
    if not eps >= 0:
        raise ValueError("epsilon must be nonnegative")
    return Analysis(c, q, cfg).run([eps], threads).reports[0]


def risk_curve(
    c: DatabaseCollection,
    q: QuerySpec,
    eps_grid: Sequence[float],
    cfg: FitConfig | None = None,
    threads: int = 1,
) -> RiskCurve:
    """delta and delta_star over an increasing epsilon grid; densities are fitted once."""
    return Analysis(c, q, cfg).run(eps_grid, threads)


def joint_privacy(
    c: DatabaseCollection,
    f1: QuerySpec,
    f2: QuerySpec,
    eps: float,
    cfg: FitConfig | None = None,
    threads: int = 1,
) -> PrivacyReport:
    """Privacy of releasing ``f1`` and ``f2`` together, using 2-D densities."""
    if f1.dim != 1 or f2.dim != 1:
        raise ValueError("joint analysis takes two one-dimensional queries")
    return empirical_privacy(c, QuerySpec("joint", parts=(f1, f2)), eps, cfg, threads)


@dataclass
class BucketReport:
    index: int
    lower: float
    upper: float
    n_databases: int
    report: PrivacyReport | None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bucket": self.index,
            "lower": self.lower,
            "upper": self.upper,
            "n_databases": self.n_databases,
            "report": None if self.report is None else self.report.to_dict(),
            "flags": self.flags,
        }


@dataclass
class ConditionalReport:
    epsilon: float
    buckets: list[BucketReport]
    worst: int
    flags: list[str] = field(default_factory=list)

    @property
    def delta(self) -> float:
        return self.buckets[self.worst].report.delta

    @property
    def delta_star(self) -> float:
        return self.buckets[self.worst].report.delta_star

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "delta_star": self.delta_star,
            "worst_bucket": self.worst,
            "buckets": [b.to_dict() for b in self.buckets],
            "flags": self.flags,
        }


def quantile_buckets(values: np.ndarray, bucket_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Bucket index per value from empirical quantile edges; ties share a bucket."""
    if bucket_count < 1:
        raise ValueError("bucket_count must be at least 1")
    values = np.asarray(values, dtype=float)
    edges = np.quantile(values, np.linspace(0.0, 1.0, bucket_count + 1))
    index = np.searchsorted(edges[1:-1], values, side="right")
    return index, edges


def conditional_privacy(
    c: DatabaseCollection,
    f: QuerySpec,
    g: QuerySpec,
    bucket_count: int,
    eps: float,
    cfg: FitConfig | None = None,
    min_bucket_samples: int = LOW_SAMPLE_FLOOR,
    threads: int = 1,
) -> ConditionalReport:
    """Privacy of ``f`` conditional on quantile buckets of adversary knowledge ``g``.

    Databases are grouped by the bucket of ``g(X)``; the leave-one-out analysis
    then runs within each group. Buckets with fewer than ``min_bucket_samples``
    databases are flagged and left out of the headline maximum.
    """
    cfg = cfg or FitConfig()
    if g.dim != 1:
        raise ValueError("adversary query must be one-dimensional")
    g_values = eval_all(g, c).points[:, 0]
    index, edges = quantile_buckets(g_values, bucket_count)
    floor = max(min_bucket_samples, 2)
    buckets = []
    flags = []
    for b in range(bucket_count):
        members = np.flatnonzero(index == b)
        entry = BucketReport(b, float(edges[b]), float(edges[b + 1]), len(members), None)
        if len(members) < floor:
            entry.flags.append(f"insufficient data: {len(members)} databases (< {floor})")
            flags.append(f"bucket {b} excluded: insufficient data")
        else:
            sub = c.subset(members.tolist())
            try:
                entry.report = empirical_privacy(sub, f, eps, cfg, threads)
            except (PrivacyError, DensityError, QueryError) as exc:
                entry.flags.append(f"analysis failed: {exc}")
                flags.append(f"bucket {b} excluded: analysis failed")
        buckets.append(entry)
    usable = [b for b in buckets if b.report is not None]
    if not usable:
        raise PrivacyError("every bucket is below the sample floor")
    worst = max(usable, key=lambda b: (b.report.delta, b.report.delta_star, -b.index)).index
    if len(usable) < len(buckets):
        log.warning("%d of %d buckets excluded", len(buckets) - len(usable), len(buckets))
    return ConditionalReport(float(eps), buckets, worst, flags)
