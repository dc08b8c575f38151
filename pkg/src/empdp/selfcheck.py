"""Built-in consistency checks run by ``empdp self-check``.

Each check compares a fast path with an independent slow one on synthetic data
and reports the worst observed error against its tolerance. ``tolerance_scale``
multiplies every tolerance; 0 makes every check fail, which is how the harness
itself is exercised.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from empdp.density import FitConfig
from empdp.noise import (
    KernelSpec,
    DeconvolutionGrid,
    deconvolve,
    hausdorff,
    matching_distance,
    verify_epsilon,
)
from empdp.oracle import DiscretePmf, discrete_delta, exhaustive_hausdorff, numeric_convolve
from empdp.privacy import fit_pair
from empdp.queries import QuerySampleSet


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _pmf_of(model, edges):
    cdf_edges = np.concatenate([[0.0], np.cumsum(model.values * np.diff(model.edges))])
    cdf = lambda t: np.interp(t, model.edges, cdf_edges, left=0.0, right=1.0)
    return DiscretePmf.from_cdf(cdf, edges)


def ecdf_oracle_gap(q, q_i, eps, bins: int = 1 << 20) -> tuple[float, float]:
    """(fast delta, discrete-oracle delta) for piecewise-constant ECDF densities."""
    q = QuerySampleSet(q)
    q_i = QuerySampleSet(q_i)
    pair = fit_pair(q, q_i, FitConfig(estimator="ecdf_diff"))
    lo = min(pair.model.edges[0], pair.model_i.edges[0])
    hi = max(pair.model.edges[-1], pair.model_i.edges[-1])
    edges = np.linspace(lo, hi, bins + 1)
    oracle = discrete_delta(_pmf_of(pair.model, edges), _pmf_of(pair.model_i, edges), eps)
    return pair.delta(eps), oracle


def check_oracle_equivalence(rng, cases: int = 20, tolerance: float = 1e-3) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(8, 120))
        q = rng.normal(0.0, 1.0, n)
        q_i = q + rng.normal(rng.uniform(-1, 1), 0.3, n)
        eps = float(rng.uniform(0.05, 2.0))
        fast, slow = ecdf_oracle_gap(q, q_i, eps, bins=1 << 18)
        worst = max(worst, abs(fast - slow))
    return CheckResult("oracle_equivalence", worst, tolerance, cases)


def check_hausdorff(rng, cases: int = 200, tolerance: float = 1e-12) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        a = rng.uniform(-10, 10, int(rng.integers(1, 30)))
        b = rng.uniform(-10, 10, int(rng.integers(1, 30)))
        worst = max(worst, abs(hausdorff(a, b) - exhaustive_hausdorff(a, b)))
    return CheckResult("hausdorff_vs_exhaustive", worst, tolerance, cases)


def check_laplace_bound(rng, cases: int = 50, tolerance: float = 1e-9) -> CheckResult:
    """Laplace-KDE log-ratio stays within eps at the calibrated scale (matching distance)."""
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(5, 100))
        a = rng.uniform(0, 10, n)
        b = a + rng.exponential(1.0, n) * (rng.random(n) < 0.5)
        eps = float(rng.choice([0.1, 0.5, 1.0, 2.0]))
        lam = matching_distance(a, b) / eps
        res = verify_epsilon(a, b, eps, lam=lam, points=20_000)
        worst = max(worst, res.supremum / eps - 1.0)
    return CheckResult("laplace_bound_matching", max(worst, 0.0), tolerance, cases)


def check_deconvolution(tolerance: float = 1e-3) -> CheckResult:
    lam = 1.0
    worst = 0.0
    dx = lam / 200
    nodes = np.arange(-8000, 8001) * dx
    target = np.exp(-np.abs(nodes) / lam) / (2 * lam)
    for ratio in (0.1, 0.5, 0.9):
        k = KernelSpec("laplace", ratio * lam)
        h = deconvolve(k, lam)
        values = h.pdf_continuous(nodes)
        values[8000] += h.weight / dx
        l1 = float(np.sum(np.abs(numeric_convolve(values, k, nodes) - target)) * dx)
        tab = deconvolve(k, lam, DeconvolutionGrid(points=1 << 14), tabulate=True)
        ks = float(np.max(np.abs(tab._cdf - h.cdf(tab._edges))))
        worst = max(worst, l1, ks)
    return CheckResult("deconvolution_round_trip", worst, tolerance, 3)


def run_self_check(seed: int = 0, tolerance_scale: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        check_oracle_equivalence(rng),
        check_hausdorff(rng),
        check_laplace_bound(rng),
        check_deconvolution(),
    ]
    for r in results:
        r.tolerance *= tolerance_scale
    return results
