"""Density estimators for query-response samples.

Two estimators are available: kernel density estimates (Gaussian or Laplace
kernels, fixed or k-nearest-neighbour variable bandwidth, product kernels in two
dimensions) and a piecewise-constant estimate obtained by finite differencing the
empirical CDF. :func:`select_model` picks a kernel configuration by maximizing
cross-validated held-out log-likelihood.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from empdp.queries import QuerySampleSet

KERNELS = ("gaussian", "laplace")
ESTIMATORS = ("kde", "ecdf_diff")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_CHUNK = 1 << 22


class DensityError(ValueError):
    """Raised when a density model cannot be fitted or evaluated."""


def _as_points(s) -> np.ndarray:
    if isinstance(s, QuerySampleSet):
        return s.points
    pts = np.asarray(s, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def _log_kernel(kernel: str, u: np.ndarray) -> np.ndarray:
    """Log of the unit-scale kernel at standardized offsets ``u``."""
    if kernel == "gaussian":
        return -0.5 * u * u - _LOG_SQRT_2PI
    if kernel == "laplace":
        return -np.abs(u) - math.log(2.0)
    raise DensityError(f"unknown kernel {kernel!r}")


@dataclass(frozen=True)
class ModelSpec:
    """A sample-independent density configuration that can be fitted to any sample.

    ``scale`` holds one bandwidth per response dimension, in data units.
    """

    estimator: str = "kde"
    kernel: str = "laplace"
    scale: tuple[float, ...] = (1.0,)
    variable: bool = False
    k_nn: int = 5

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise DensityError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "kde":
            if self.kernel not in KERNELS:
                raise DensityError(f"unknown kernel {self.kernel!r}")
            scale = tuple(float(v) for v in np.atleast_1d(self.scale))
            if any(not v > 0 or not math.isfinite(v) for v in scale):
                raise DensityError("scale must be positive")
            object.__setattr__(self, "scale", scale)

    def fit(self, s) -> "DensityModel":
        if self.estimator == "ecdf_diff":
            return ecdf_density(s)
        pts = _as_points(s)
        scale = np.asarray(self.scale)
        if len(scale) == 1 and pts.shape[1] == 2:
            scale = np.repeat(scale, 2)
        factors = None
        if self.variable:
            k = min(self.k_nn, len(pts) - 1)
            factors = local_bandwidth_factors(pts, k, axis_scales=scale)
        return fit_kde(pts, self.kernel, scale, factors)

    def to_dict(self) -> dict:
        out = {"estimator": self.estimator}
        if self.estimator == "kde":
            out.update(kernel=self.kernel, scale=list(self.scale), variable=self.variable)
            if self.variable:
                out["k_nn"] = self.k_nn
        return out


@dataclass(frozen=True)
class DensityModel:
    """A fitted density. Immutable; safe to share between threads.

    For ``kde`` the per-sample bandwidth along axis ``a`` is
    ``scale[a] * local_factors[j]`` (factor 1 when ``local_factors`` is None).
    For ``ecdf_diff`` the density is ``values[k]`` on ``[edges[k], edges[k+1])``.
    """

    estimator: str
    samples: np.ndarray
    kernel: str | None = None
    scale: np.ndarray | None = None
    local_factors: np.ndarray | None = None
    edges: np.ndarray | None = None
    values: np.ndarray | None = None
    support: tuple[float, float] | None = None
    flags: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def global_scale(self) -> float:
        if self.scale is None:
            return float("nan")
        return float(self.scale[0])

    def bandwidths(self) -> np.ndarray:
        """Per-sample, per-axis bandwidths, shape ``(n, dim)``."""
        factors = np.ones(len(self.samples)) if self.local_factors is None else self.local_factors
        return factors[:, None] * self.scale[None, :]

    def spec(self) -> ModelSpec:
        if self.estimator == "ecdf_diff":
            return ModelSpec(estimator="ecdf_diff")
        return ModelSpec(
            kernel=self.kernel,
            scale=tuple(self.scale.tolist()),
            variable=self.local_factors is not None,
        )


def silverman_scale(s) -> float:
    """Rule-of-thumb Gaussian bandwidth ``1.06 * sigma * n**(-1/5)`` for 1-D samples."""
    x = _as_points(s)[:, 0]
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-0.2)


def fit_kde(s, kernel: str, scale, local_factors=None) -> DensityModel:
    """Kernel density estimate ``(1/n) sum_j K((x - s_j)/h_j) / h_j``.

    Args:
        s: Samples, a :class:`QuerySampleSet` or array of shape ``(n,)``/``(n, dim)``.
        kernel: ``"gaussian"`` or ``"laplace"``; product kernel in 2-D.
        scale: Global bandwidth (scalar, or one value per axis).
        local_factors: Optional per-sample multipliers of ``scale``.
    """
    pts = _as_points(s)
    if len(pts) < 1:
        raise DensityError("need at least one sample to fit a density")
    if kernel not in KERNELS:
        raise DensityError(f"unknown kernel {kernel!r}")
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    if len(scale) == 1 and pts.shape[1] > 1:
        scale = np.repeat(scale, pts.shape[1])
    if len(scale) != pts.shape[1]:
        raise DensityError("scale has the wrong number of axes")
    if not np.all(scale > 0) or not np.all(np.isfinite(scale)):
        raise DensityError("scale must be positive")
    factors = None
    if local_factors is not None:
        factors = np.asarray(local_factors, dtype=float)
        if factors.shape != (len(pts),):
            raise DensityError("local_factors must have one entry per sample")
        if not np.all(factors > 0):
            raise DensityError("local_factors must be positive")
        factors = factors.copy()
        factors.setflags(write=False)
    pts = pts.copy()
    pts.setflags(write=False)
    scale = scale.copy()
    scale.setflags(write=False)
    return DensityModel("kde", pts, kernel=kernel, scale=scale, local_factors=factors)


def local_bandwidth_factors(s, k_nn: int, axis_scales=None) -> np.ndarray:
    """Breiman-style bandwidth multipliers from k-th nearest-neighbour distances.

    Distances are measured in coordinates divided by ``axis_scales`` (2-D only).
    Zero distances are replaced by the smallest nonzero one; the result is
    normalized to geometric mean 1. All-identical samples give all ones.
    """
    pts = _as_points(s)
    n = len(pts)
    if not 1 <= k_nn < n:
        raise DensityError(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    if axis_scales is not None and pts.shape[1] > 1:
        pts = pts / np.asarray(axis_scales, dtype=float)[None, :]
    if pts.shape[1] == 1:
        dist = _knn_distance_1d(pts[:, 0], k_nn)
    else:
        dist, _ = cKDTree(pts).query(pts, k=k_nn + 1)
        dist = dist[:, k_nn]
    positive = dist[dist > 0]
    if len(positive) == 0:
        return np.ones(n)
    dist = np.where(dist > 0, dist, positive.min())
    logs = np.log(dist)
    return np.exp(logs - logs.mean())


def _knn_distance_1d(x: np.ndarray, k: int) -> np.ndarray:
    # k-th nearest other point lies within k positions of x in sorted order
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(xs)
    idx = np.arange(n)
    cand = []
    for off in range(-k, k + 1):
        if off == 0:
            continue
        j = idx + off
        d = np.full(n, np.inf)
        ok = (j >= 0) & (j < n)
        d[ok] = np.abs(xs[j[ok]] - xs[ok])
        cand.append(d)
    dist_sorted = np.sort(np.vstack(cand), axis=0)[k - 1]
    out = np.empty(n)
    out[order] = dist_sorted
    return out


def ecdf_density(s) -> DensityModel:
    """Piecewise-constant density from symmetric finite differences of the ECDF.

    Each distinct sample value owns the cell between the midpoints to its
    neighbours (end cells extend by half the adjacent gap). The cell density is
    the fraction of order statistics in a window of ``w = round(sqrt(n))`` ranks
    centred on the value, divided by the spread of that window. The result is
    renormalized to unit mass. The density is zero outside the cells; the stated
    ``support`` pads the sample range by one window width on each side.
    """
    pts = _as_points(s)
    if pts.shape[1] != 1:
        raise DensityError("ecdf_diff supports one-dimensional samples only")
    n = len(pts)
    if n < 4:
        raise DensityError("ecdf_diff needs at least 4 samples")
    xs = np.sort(pts[:, 0])
    w = max(2, int(round(math.sqrt(n))))
    half = max(1, w // 2)
    uniq, first, counts = np.unique(xs, return_index=True, return_counts=True)
    m = len(uniq)
    flags: tuple[str, ...] = ()
    if m == 1:
        width = 1e-6 * max(1.0, abs(float(uniq[0])))
        edges = np.array([uniq[0] - width / 2, uniq[0] + width / 2])
        values = np.array([1.0 / width])
        flags = ("degenerate_sample",)
        pad = width
    else:
        gaps = np.diff(uniq)
        mids = uniq[:-1] + gaps / 2
        edges = np.concatenate([[uniq[0] - gaps[0] / 2], mids, [uniq[-1] + gaps[-1] / 2]])
        last = first + counts - 1
        lo = np.maximum(first - half, 0)
        hi = np.minimum(last + half, n - 1)
        spread = xs[hi] - xs[lo]
        values = (hi - lo) / n / spread
        pad = float(xs[min(w, n - 1)] - xs[0] + xs[-1] - xs[max(n - 1 - w, 0)]) / 2
    widths = np.diff(edges)
    values = values / np.sum(values * widths)
    pts = pts.copy()
    pts.setflags(write=False)
    support = (float(xs[0] - pad), float(xs[-1] + pad))
    return DensityModel(
        "ecdf_diff", pts, edges=edges, values=values, support=support, flags=flags
    )


def density_at(m: DensityModel, x) -> np.ndarray:
    """Density values at points ``x`` (shape ``(k, dim)``, ``(k,)`` in 1-D, or one point)."""
    pts, scalar = _query_points(m, x)
    if m.estimator == "ecdf_diff":
        out = _ecdf_eval(m, pts[:, 0])
    else:
        out = _kde_eval(m, pts)
    return out[0] if scalar else out


def log_density_at(m: DensityModel, x) -> np.ndarray:
    """Natural log of the density, via log-sum-exp for kernel estimates."""
    pts, scalar = _query_points(m, x)
    if m.estimator == "ecdf_diff":
        with np.errstate(divide="ignore"):
            out = np.log(_ecdf_eval(m, pts[:, 0]))
    else:
        out = _kde_logeval(m, pts)
    return out[0] if scalar else out


def _query_points(m: DensityModel, x):
    arr = np.asarray(x, dtype=float)
    scalar = False
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        scalar = True
    elif arr.ndim == 1:
        if m.dim == 1:
            arr = arr[:, None]
        else:
            arr = arr[None, :]
            scalar = True
    if arr.ndim != 2 or arr.shape[1] != m.dim:
        raise DensityError(f"expected points of dimension {m.dim}")
    return arr, scalar


def _ecdf_eval(m: DensityModel, x: np.ndarray) -> np.ndarray:
    k = np.searchsorted(m.edges, x, side="right") - 1
    inside = (k >= 0) & (k < len(m.values))
    out = np.zeros(len(x))
    out[inside] = m.values[k[inside]]
    return out


def _kde_terms(m: DensityModel, pts: np.ndarray) -> np.ndarray:
    """Log kernel contributions, shape ``(len(pts), n)``, without the 1/n factor."""
    bw = m.bandwidths()
    total = np.zeros((len(pts), len(m.samples)))
    for a in range(m.dim):
        u = (pts[:, a, None] - m.samples[None, :, a]) / bw[None, :, a]
        total += _log_kernel(m.kernel, u) - np.log(bw[None, :, a])
    return total


def _kde_logeval(m: DensityModel, pts: np.ndarray) -> np.ndarray:
    n = len(m.samples)
    out = np.empty(len(pts))
    step = max(1, _CHUNK // n)
    for start in range(0, len(pts), step):
        terms = _kde_terms(m, pts[start : start + step])
        out[start : start + step] = logsumexp(terms, axis=1) - math.log(n)
    return out


def _kde_eval(m: DensityModel, pts: np.ndarray) -> np.ndarray:
    n = len(m.samples)
    out = np.empty(len(pts))
    step = max(1, _CHUNK // n)
    for start in range(0, len(pts), step):
        terms = _kde_terms(m, pts[start : start + step])
        out[start : start + step] = np.exp(terms).sum(axis=1) / n
    return out


def _axis_kernel_matrix(m: DensityModel, axis: int, nodes: np.ndarray) -> np.ndarray:
    bw = m.bandwidths()[:, axis]
    u = (nodes[:, None] - m.samples[None, :, axis]) / bw[None, :]
    return np.exp(_log_kernel(m.kernel, u)) / bw[None, :]


def density_on_grid(m: DensityModel, grid: "IntegrationGrid") -> np.ndarray:
    """Density on every grid node; shape ``(len(x),)`` or ``(len(x), len(y))`` in 2-D."""
    if m.estimator == "ecdf_diff":
        return _ecdf_eval(m, grid.axes[0])
    if m.dim == 1:
        return _kde_eval(m, grid.axes[0][:, None])
    kx = _axis_kernel_matrix(m, 0, grid.axes[0])
    ky = _axis_kernel_matrix(m, 1, grid.axes[1])
    return kx @ ky.T / len(m.samples)


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class IntegrationGrid:
    """Quadrature nodes and weights per axis; 2-D grids are tensor products."""

    axes: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return len(self.axes)

    def integrate(self, values: np.ndarray) -> float:
        if self.dim == 1:
            return float(np.dot(values, self.weights[0]))
        return float(self.weights[0] @ values @ self.weights[1])


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.zeros(len(nodes))
    gaps = np.diff(nodes)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


# local node spacing in bandwidths: the Laplace cusp makes trapezoid error ~ step^2 / 12
_LOCAL_STEP = {"gaussian": 0.5, "laplace": 0.1}
_LOCAL_STEP_2D = {"gaussian": 1.0, "laplace": 0.25}
_MAX_AXIS_NODES_2D = 3000


def _kde_axis_nodes(models, axis, base_points, tail, local_step):
    samples = np.concatenate([m.samples[:, axis] for m in models])
    bws = np.concatenate([m.bandwidths()[:, axis] for m in models])
    lo = float(np.min(samples - tail * bws))
    hi = float(np.max(samples + tail * bws))
    base = np.linspace(lo, hi, base_points)
    step = (hi - lo) / (base_points - 1)
    parts = [base, samples]
    # refine around samples whose kernels the base lattice would under-resolve
    narrow = bws < step / local_step
    if np.any(narrow):
        offsets = np.linspace(-tail, tail, 2 * int(math.ceil(tail / local_step)) + 1)
        local = samples[narrow, None] + bws[narrow, None] * offsets[None, :]
        parts.append(local.ravel())
    nodes = np.unique(np.concatenate(parts))
    return nodes[(nodes >= lo) & (nodes <= hi)]


def integration_grid(models: Sequence[DensityModel], cfg: "FitConfig | None" = None) -> IntegrationGrid:
    """A grid shared by all ``models``.

    Kernel estimates use trapezoid weights on a uniform lattice covering every
    sample +- ``tail_bandwidths`` bandwidths, with the sample points themselves
    added as nodes and extra nodes around kernels narrower than a few lattice
    steps. Piecewise-constant estimates use the midpoints of the merged cell
    edges with the cell widths as weights, which integrates them exactly.
    """
    cfg = cfg or FitConfig()
    kinds = {m.estimator for m in models}
    if len(kinds) != 1:
        raise DensityError("models on one grid must share an estimator")
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise DensityError("models on one grid must share a dimension")
    dim = dims.pop()
    if kinds == {"ecdf_diff"}:
        edges = np.unique(np.concatenate([m.edges for m in models]))
        mids = (edges[:-1] + edges[1:]) / 2
        return IntegrationGrid((mids,), (np.diff(edges),))
    local_step = min(_LOCAL_STEP[m.kernel] for m in models)
    if dim == 1:
        nodes = _kde_axis_nodes(models, 0, cfg.grid_points, cfg.tail_bandwidths, local_step)
        return IntegrationGrid((nodes,), (_trapezoid_weights(nodes),))
    axes = []
    for a in range(dim):
        # coarser in 2-D, where the node count enters squared
        step = min(_LOCAL_STEP_2D[m.kernel] for m in models)
        nodes = _kde_axis_nodes(models, a, cfg.grid_points_2d, cfg.tail_bandwidths, step)
        while len(nodes) > _MAX_AXIS_NODES_2D and step < 2.0:
            step *= 1.5
            nodes = _kde_axis_nodes(models, a, cfg.grid_points_2d, cfg.tail_bandwidths, step)
        axes.append(nodes)
    return IntegrationGrid(tuple(axes), tuple(_trapezoid_weights(x) for x in axes))


def total_mass(m: DensityModel, cfg: "FitConfig | None" = None) -> float:
    grid = integration_grid([m], cfg)
    return grid.integrate(density_on_grid(m, grid))


# ----------------------------------------------------------------------- selection


@dataclass(frozen=True)
class FitConfig:
    """Density-estimation settings shared by every fit in one privacy run.

    ``scale_grid`` holds bandwidth candidates as multiples of each axis' sample
    standard deviation. When ``fixed`` is set, selection is skipped and that
    specification is fitted directly.
    """

    estimator: str = "kde"
    kernels: tuple[str, ...] = KERNELS
    scale_grid: tuple[float, ...] = tuple(np.logspace(-3, 0.5, 36).tolist())
    variable: tuple[bool, ...] = (False, True)
    k_nn: int = 5
    cv_folds: int = 5
    density_floor: float = 1e-30
    seed: int = 0
    min_scale: float = 1e-6
    grid_points: int = 4096
    grid_points_2d: int = 256
    tail_bandwidths: float = 10.0
    fixed: ModelSpec | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not self.kernels or any(k not in KERNELS for k in self.kernels):
            raise ValueError(f"kernels must be a non-empty subset of {KERNELS}")
        grid = tuple(float(v) for v in self.scale_grid)
        if not grid or any(not v > 0 for v in grid):
            raise ValueError("scale grid must be strictly positive")
        object.__setattr__(self, "scale_grid", grid)
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.k_nn < 1:
            raise ValueError("k_nn must be at least 1")
        if not 0 < self.density_floor < 1:
            raise ValueError("density_floor must lie in (0, 1)")
        if self.grid_points < 16 or self.grid_points_2d < 16:
            raise ValueError("integration grids need at least 16 points per axis")
        if not self.variable:
            raise ValueError("variable must offer at least one option")

    def with_fixed(self, spec: ModelSpec | None) -> "FitConfig":
        return replace(self, fixed=spec)


@dataclass(frozen=True)
class Selection:
    """Outcome of :func:`select_model`: the chosen spec, its CV score, and all scores."""

    spec: ModelSpec
    score: float
    scores: dict = field(default_factory=dict, compare=False)
    flags: tuple[str, ...] = ()


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def _cv_scores(pts, axis_sd, cfg: FitConfig) -> dict:
    n, dim = pts.shape
    folds = fold_assignment(n, cfg.cv_folds, cfg.seed)
    log_floor = math.log(cfg.density_floor)
    grid = np.asarray(cfg.scale_grid)
    log_sd = float(np.sum(np.log(axis_sd)))
    z = pts / axis_sd[None, :]
    totals = {
        (kernel, variable): np.zeros(len(grid))
        for kernel in cfg.kernels
        for variable in cfg.variable
    }
    for f in range(cfg.cv_folds):
        train_mask = folds != f
        test = z[~train_mask]
        if len(test) == 0:
            continue
        train = z[train_mask]
        diff = test[:, None, :] - train[None, :, :]
        # per kernel: exponent at unit bandwidth, -log K(u) up to the constant
        exponents = {}
        if "gaussian" in cfg.kernels:
            exponents["gaussian"] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
        if "laplace" in cfg.kernels:
            exponents["laplace"] = np.abs(diff).sum(axis=2)
        del diff
        log_train = math.log(len(train))
        for variable in cfg.variable:
            if variable and len(train) > 1:
                k = min(cfg.k_nn, len(train) - 1)
                factors = local_bandwidth_factors(pts[train_mask], k, axis_scales=axis_sd)
            else:
                factors = None
            for kernel in cfg.kernels:
                e = exponents[kernel]
                power = 2 if kernel == "gaussian" else 1
                const = dim * (_LOG_SQRT_2PI if kernel == "gaussian" else math.log(2.0)) + log_sd + log_train
                acc = totals[(kernel, variable)]
                if factors is None:
                    row_min = e.min(axis=1)
                    shifted = e - row_min[:, None]
                buf = np.empty_like(e)
                for c_idx, c in enumerate(grid):
                    if factors is None:
                        # common bandwidth: the row maximum of the log-kernel is known
                        np.multiply(shifted, -1.0 / c**power, out=buf)
                        np.exp(buf, out=buf)
                        ll = np.log(buf.sum(axis=1)) - row_min / c**power - dim * math.log(c) - const
                    else:
                        h = c * factors
                        log_norm = -dim * np.log(h)
                        # log-kernel <= log_norm.max(); rows that underflow are redone exactly
                        top = float(log_norm.max())
                        np.multiply(e, (-1.0 / h**power)[None, :], out=buf)
                        buf += (log_norm - top)[None, :]
                        np.exp(buf, out=buf)
                        total = buf.sum(axis=1)
                        low = total < 1e-250
                        with np.errstate(divide="ignore"):
                            ll = np.log(total) + top - const
                        if np.any(low):
                            exact = e[low] * (-1.0 / h**power)[None, :] + log_norm[None, :]
                            ll[low] = logsumexp(exact, axis=1) - const
                    acc[c_idx] += np.maximum(ll, log_floor).sum()
    scores = {}
    for (kernel, variable), acc in totals.items():
        for c_idx, c in enumerate(grid):
            scores[(kernel, variable, float(c))] = float(acc[c_idx] / n)
    return scores


def select_model(s, cfg: FitConfig | None = None) -> DensityModel:
    """Fit the kernel configuration with the best cross-validated log-likelihood."""
    cfg = cfg or FitConfig()
    sel = select_spec(s, cfg)
    model = sel.spec.fit(s)
    return replace(model, flags=tuple(dict.fromkeys(model.flags + sel.flags)))


def select_spec(s, cfg: FitConfig | None = None) -> Selection:
    """Exhaustive search over kernel x scale x {fixed, variable} bandwidth.

    Folds are assigned by a permutation drawn from ``cfg.seed``. Held-out
    log-densities are floored at ``log(density_floor)``. Near-ties (relative
    1e-9) resolve toward the larger scale and are flagged ``tie``.

    A sample with no spread falls back to a fixed Laplace kernel at
    ``min_scale * max(1, |value|)`` and is flagged ``degenerate_sample``.
    """
    cfg = cfg or FitConfig()
    pts = _as_points(s)
    n, dim = pts.shape
    if cfg.estimator == "ecdf_diff":
        return Selection(ModelSpec(estimator="ecdf_diff"), float("nan"))
    if n < cfg.cv_folds:
        raise DensityError(f"need at least cv_folds={cfg.cv_folds} samples, got {n}")
    sd = np.std(pts, axis=0, ddof=1)
    floor = cfg.min_scale * np.maximum(1.0, np.abs(pts).max(axis=0))
    flags: list[str] = []
    if np.all(sd == 0):
        spec = ModelSpec(kernel="laplace", scale=tuple(floor.tolist()), variable=False)
        return Selection(spec, float("nan"), flags=("degenerate_sample",))
    if np.any(sd == 0):
        flags.append("degenerate_axis")
        sd = np.where(sd == 0, floor, sd)
    scores = _cv_scores(pts, sd, cfg)
    best = max(scores.values())
    tol = 1e-9 * max(1.0, abs(best))
    tied = [key for key, v in scores.items() if v >= best - tol]
    kernel, variable, c = max(tied, key=lambda key: (key[2], key[0] == "laplace", not key[1]))
    if len({key[2] for key in tied}) > 1:
        flags.append("tie")
    spec = ModelSpec(
        kernel=kernel, scale=tuple((c * sd).tolist()), variable=variable, k_nn=cfg.k_nn
    )
    return Selection(spec, scores[(kernel, variable, c)], scores, tuple(flags))


def cv_log_likelihood(s, spec: ModelSpec, cfg: FitConfig | None = None) -> float:
    """Mean held-out log-likelihood of ``spec`` under the same folds used by selection."""
    cfg = cfg or FitConfig()
    pts = _as_points(s)
    folds = fold_assignment(len(pts), cfg.cv_folds, cfg.seed)
    total = 0.0
    for f in range(cfg.cv_folds):
        test = pts[folds == f]
        if len(test) == 0:
            continue
        model = replace(spec, k_nn=min(spec.k_nn, int(np.sum(folds != f)) - 1)).fit(pts[folds != f])
        ll = log_density_at(model, test)
        total += float(np.maximum(ll, math.log(cfg.density_floor)).sum())
    return total / len(pts)


def format_densities(grid: IntegrationGrid, columns: dict[str, np.ndarray]) -> str:
    """Density values on a grid as CSV text: ``x[,y],<name>...``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if grid.dim == 1:
        writer.writerow(["x", *columns])
        for k, x in enumerate(grid.axes[0]):
            writer.writerow([repr(float(x)), *(repr(float(v[k])) for v in columns.values())])
    else:
        writer.writerow(["x", "y", *columns])
        for a, x in enumerate(grid.axes[0]):
            for b, y in enumerate(grid.axes[1]):
                writer.writerow(
                    [repr(float(x)), repr(float(y)), *(repr(float(v[a, b])) for v in columns.values())]
                )
    return buf.getvalue()


def dump_densities(path, grid: IntegrationGrid, columns: dict[str, np.ndarray]) -> None:
    """Write :func:`format_densities` output to ``path``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_densities(grid, columns))
