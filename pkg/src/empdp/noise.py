"""Noise calibration by set-distance bandwidth selection and deconvolution.

Given a target epsilon, a Laplace scale ``lam = max_i dist(q, q_i) / eps`` is
chosen so that Laplace kernel density estimates of every pair of response
samples agree to within a factor ``e^eps``. If the curator's own estimate uses kernel ``k``, adding
noise drawn from ``h`` with ``k * h = laplace(lam)`` turns it into that Laplace
estimate. For a Laplace ``k`` of scale ``s`` the solution is the closed-form
mixture ``(s/lam)^2 delta_0 + (1 - (s/lam)^2) laplace(lam)``; other kernels go
through a regularized discrete Fourier division.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from empdp.dataset import DatabaseCollection
from empdp.queries import LeaveOneOut, QuerySpec


class NoiseError(ValueError):
    """A noise kernel cannot be built for the requested parameters."""


@dataclass(frozen=True)
class KernelSpec:
    """The curator's inference kernel ``k``."""

    family: str = "laplace"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "laplace"):
            raise NoiseError(f"unknown kernel family {self.family!r}")
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise NoiseError("kernel scale must be positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "laplace":
            return np.exp(-np.abs(x) / self.scale) / (2.0 * self.scale)
        return np.exp(-0.5 * (x / self.scale) ** 2) / (self.scale * math.sqrt(2.0 * math.pi))

    def transform(self, omega):
        """Characteristic function (real and even for both families)."""
        omega = np.asarray(omega, dtype=float)
        if self.family == "laplace":
            return 1.0 / (1.0 + (self.scale * omega) ** 2)
        return np.exp(-0.5 * (self.scale * omega) ** 2)


def hausdorff(a, b) -> float:
    """Hausdorff distance between two finite real sets in O((|A|+|B|) log) time."""
    a = np.sort(np.ravel(np.asarray(a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(b, dtype=float)))
    if len(a) == 0 or len(b) == 0:
        raise NoiseError("Hausdorff distance needs two non-empty sets")
    return max(_directed(a, b), _directed(b, a))


def _directed(a: np.ndarray, b_sorted: np.ndarray) -> float:
    k = np.searchsorted(b_sorted, a)
    left = b_sorted[np.clip(k - 1, 0, len(b_sorted) - 1)]
    right = b_sorted[np.clip(k, 0, len(b_sorted) - 1)]
    return float(np.max(np.minimum(np.abs(a - left), np.abs(a - right))))


@dataclass
class LambdaSelection:
    lam: float
    epsilon: float
    per_individual: list[tuple[str, float]]
    distance: str = "hausdorff"

    def extremes(self) -> dict:
        if not self.per_individual:
            return {}
        ordered = sorted(self.per_individual, key=lambda t: (-t[1], t[0]))
        return {
            "max": {"id": ordered[0][0], "lambda_i": ordered[0][1]},
            "min": {"id": ordered[-1][0], "lambda_i": ordered[-1][1]},
        }


def matching_distance(a, b) -> float:
    """Bottleneck distance between two equal-size multisets: pair them in sorted order.

    Pairing each Laplace term of one estimate with a term of the other shows that
    ``lam >= matching_distance(a, b) / eps`` bounds the log-ratio of the two Laplace
    estimates by ``eps`` everywhere. The Hausdorff distance never exceeds this one.
    """
    a = np.sort(np.ravel(np.asarray(a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(b, dtype=float)))
    if len(a) != len(b):
        raise NoiseError("matching distance needs sets of equal size")
    if len(a) == 0:
        raise NoiseError("matching distance needs non-empty sets")
    return float(np.max(np.abs(a - b)))


DISTANCES = {"hausdorff": hausdorff, "matching": matching_distance}


def select_lambda(
    c: DatabaseCollection, q: QuerySpec, eps: float, distance: str = "hausdorff"
) -> LambdaSelection:
    """``lam = max_i dist(responses, responses without i) / eps``.

    ``distance="hausdorff"`` is the set distance; ``"matching"`` is the sorted
    bottleneck distance, which is never smaller and always suffices (see
    :func:`matching_distance`). Hausdorff calibration can fall short of the
    target; :func:`verify_epsilon` checks a given scale directly.
    """
    if not eps > 0:
        raise NoiseError("epsilon must be positive")
    if q.dim != 1:
        raise NoiseError("noise calibration supports one-dimensional queries only")
    if distance not in DISTANCES:
        raise NoiseError(f"unknown distance {distance!r}")
    dist = DISTANCES[distance]
    loo = LeaveOneOut(q, c)
    full = loo.full.points[:, 0]
    table = []
    for i in sorted({v for d in c.databases for v in d.individual_ids.tolist()}):
        table.append((i, dist(full, loo.without(i).points[:, 0]) / eps))
    lam = max((v for _, v in table), default=0.0)
    return LambdaSelection(lam, float(eps), table, distance)


@dataclass(frozen=True)
class DeconvolutionGrid:
    """Discretization for the Fourier route: ``points`` nodes, Nyquist ``span / lam``."""

    points: int = 1 << 16
    span: float = 64.0
    reg_floor: float = 1e-12
    clip_budget: float = 0.01


@dataclass(frozen=True)
class NoiseKernel:
    """A sampleable noise distribution.

    ``analytic_mixture``: point mass ``weight`` at 0 plus ``1 - weight`` of
    Laplace(``lam``). ``tabulated``: density values on uniform nodes ``x``; the
    cumulative table lives on the cell edges ``x +- dx/2``.
    """

    form: str
    lam: float
    weight: float = 0.0
    x: np.ndarray | None = None
    density: np.ndarray | None = None
    residual: float = 0.0
    clipped_fraction: float = 0.0
    kernel: KernelSpec | None = None
    _edges: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cdf: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.form == "analytic_mixture":
            if not 0.0 <= self.weight <= 1.0:
                raise NoiseError("mixture weight must lie in [0, 1]")
            if self.weight < 1.0 and not self.lam > 0:
                raise NoiseError("Laplace scale must be positive")
        elif self.form == "tabulated":
            x = np.asarray(self.x, dtype=float)
            dens = np.asarray(self.density, dtype=float)
            if x.shape != dens.shape or x.ndim != 1 or len(x) < 2:
                raise NoiseError("tabulated kernel needs matching 1-D x and density arrays")
            dx = np.diff(x)
            if np.any(dx <= 0) or not np.allclose(dx, dx[0], rtol=1e-9, atol=0):
                raise NoiseError("tabulated kernel needs a uniform grid")
            if np.any(dens < 0):
                raise NoiseError("tabulated density must be nonnegative")
            step = float(dx[0])
            mass = float(dens.sum() * step)
            if abs(mass - 1.0) > 1e-6:
                raise NoiseError(f"tabulated density has mass {mass}, not 1")
            edges = np.concatenate([x - step / 2, [x[-1] + step / 2]])
            cdf = np.concatenate([[0.0], np.cumsum(dens * step)])
            cdf /= cdf[-1]
            object.__setattr__(self, "x", x)
            object.__setattr__(self, "density", dens)
            object.__setattr__(self, "_edges", edges)
            object.__setattr__(self, "_cdf", cdf)
        else:
            raise NoiseError(f"unknown kernel form {self.form!r}")

    @classmethod
    def laplace(cls, lam: float) -> "NoiseKernel":
        return cls("analytic_mixture", lam, weight=0.0)

    @classmethod
    def identity(cls) -> "NoiseKernel":
        return cls("analytic_mixture", 0.0, weight=1.0)

    @property
    def polar_moment(self) -> float:
        """Expected absolute noise ``int |x| h(x) dx``."""
        if self.form == "analytic_mixture":
            return (1.0 - self.weight) * self.lam
        step = float(self.x[1] - self.x[0])
        return float(np.sum(np.abs(self.x) * self.density) * step)

    def cdf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.form == "tabulated":
            return np.interp(t, self._edges, self._cdf, left=0.0, right=1.0)
        out = np.where(t >= 0, self.weight, 0.0)
        if self.weight < 1.0:
            tail = 0.5 * np.exp(-np.abs(t) / self.lam)
            lap = np.where(t < 0, tail, 1.0 - tail)
            out = out + (1.0 - self.weight) * lap
        return out

    def pdf_continuous(self, t) -> np.ndarray:
        """Density of the absolutely continuous part (excludes any point mass)."""
        t = np.asarray(t, dtype=float)
        if self.form == "tabulated":
            return np.interp(t, self.x, self.density, left=0.0, right=0.0)
        if self.weight >= 1.0:
            return np.zeros_like(t)
        return (1.0 - self.weight) * np.exp(-np.abs(t) / self.lam) / (2.0 * self.lam)

    def to_csv(self, half_width: float | None = None) -> str:
        """``x,density`` table. Analytic kernels are tabulated over +-``half_width``
        (default 40 lam) and the point mass is left to the metadata."""
        if self.form == "tabulated":
            x, dens = self.x, self.density
        else:
            lam = self.lam if self.lam > 0 else 1.0
            hw = half_width if half_width is not None else 40.0 * lam
            x = np.linspace(-hw, hw, 8001)
            dens = self.pdf_continuous(x)
        buf = io.StringIO()
        buf.write("x,density\n")
        for a, b in zip(x.tolist(), dens.tolist()):
            buf.write(f"{a!r},{b!r}\n")
        return buf.getvalue()

    def metadata(self) -> dict:
        out = {
            "form": self.form,
            "lambda": self.lam,
            "polar_moment": self.polar_moment,
            "regularization_residual": self.residual,
        }
        if self.form == "analytic_mixture":
            out["point_mass_weight"] = self.weight
        else:
            out["clipped_fraction"] = self.clipped_fraction
            out["grid_step"] = float(self.x[1] - self.x[0])
        if self.kernel is not None:
            out["inference_kernel"] = {"family": self.kernel.family, "scale": self.kernel.scale}
        return out


def kernel_hash(csv_text: str) -> str:
    return hashlib.sha256(csv_text.encode("utf-8")).hexdigest()


def kernel_from_table(csv_text: str, meta: dict) -> NoiseKernel:
    """Rebuild a kernel from its exported table and metadata."""
    if meta["form"] == "analytic_mixture":
        return NoiseKernel("analytic_mixture", float(meta["lambda"]), weight=float(meta["point_mass_weight"]))
    data = np.loadtxt(io.StringIO(csv_text), delimiter=",", skiprows=1, ndmin=2)
    x, dens = data[:, 0], data[:, 1]
    return NoiseKernel(
        "tabulated",
        float(meta["lambda"]),
        x=x,
        density=dens,
        residual=float(meta.get("regularization_residual", 0.0)),
        clipped_fraction=float(meta.get("clipped_fraction", 0.0)),
    )


def deconvolve(
    k: KernelSpec,
    lam: float,
    grid: DeconvolutionGrid | None = None,
    tabulate: bool | None = None,
) -> NoiseKernel:
    """Noise kernel ``h`` with ``k * h = laplace(lam)``.

    Laplace ``k`` yields the exact mixture unless ``tabulate=True`` forces the
    Fourier route (used to validate that route). Gaussian ``k`` always goes
    through the Fourier route: the ratio of transforms is evaluated on the
    discrete frequency lattice, ``k``'s transform is clipped below
    ``reg_floor``, negative lobes of the inverse are zeroed and the result is
    renormalized; the zeroed mass is reported as ``residual``.

    Raises:
        NoiseError: if ``k.scale >= lam`` (no proper noise density exists), if
            clipped frequencies carry more than ``clip_budget`` of the target
            spectrum, or if the zeroed negative mass exceeds ``clip_budget``.
    """
    grid = grid or DeconvolutionGrid()
    if not lam > 0:
        raise NoiseError("lambda must be positive")
    if k.family == "laplace" and k.scale > lam:
        raise NoiseError(f"kernel scale s={k.scale} must satisfy s < lambda={lam}")
    if k.family == "gaussian" and k.scale >= lam:
        raise NoiseError(f"kernel scale s={k.scale} must satisfy s < lambda={lam}")
    if tabulate is None:
        tabulate = k.family != "laplace"
    if not tabulate:
        w = (k.scale / lam) ** 2
        return NoiseKernel("analytic_mixture", lam, weight=min(w, 1.0), kernel=k)

    n = int(grid.points)
    dx = math.pi * lam / grid.span
    omega = 2.0 * math.pi * np.fft.fftfreq(n, d=dx)
    target = 1.0 / (1.0 + (lam * omega) ** 2)
    kt = k.transform(omega)
    clipped = kt < grid.reg_floor
    ratio = target / np.where(clipped, grid.reg_floor, kt)
    # share of the target spectrum sitting on frequencies where k had to be floored
    clip_fraction = float(target[clipped].sum() / target.sum())
    if clip_fraction > grid.clip_budget:
        raise NoiseError(
            f"regularization clipped {clip_fraction:.3%} of the spectrum "
            f"(budget {grid.clip_budget:.3%}); the kernel scale is too large relative to lambda"
        )
    h = np.fft.fftshift(np.fft.ifft(ratio).real) / dx
    x = (np.arange(n) - n // 2) * dx
    negative = float(-h[h < 0].sum() * dx)
    if negative > grid.clip_budget:
        raise NoiseError(
            f"nonnegative projection discarded {negative:.3g} of mass (budget {grid.clip_budget:.3%}); "
            "the kernel scale is too large relative to lambda for a proper noise density"
        )
    h = np.clip(h, 0.0, None)
    h /= h.sum() * dx
    return NoiseKernel(
        "tabulated", lam, x=x, density=h, residual=negative, clipped_fraction=clip_fraction, kernel=k
    )


def sample_noise(h: NoiseKernel, seed, count: int) -> np.ndarray:
    """``count`` i.i.d. draws from ``h``; identical for identical ``seed``."""
    rng = np.random.default_rng(seed)
    if h.form == "analytic_mixture":
        if h.weight >= 1.0:
            return np.zeros(count)
        atom = rng.random(count) < h.weight
        u = rng.random(count) - 0.5
        draws = -h.lam * np.sign(u) * np.log1p(-2.0 * np.abs(u))
        draws[atom] = 0.0
        return draws
    u = rng.random(count)
    return np.interp(u, h._cdf, h._edges)


def noised_response(f_value: float, h: NoiseKernel, seed) -> float:
    return float(f_value) + float(sample_noise(h, seed, 1)[0])


def noised_responses(values, h: NoiseKernel, seed) -> np.ndarray:
    """Add one independent draw of ``h`` to each value."""
    values = np.asarray(values, dtype=float)
    return values + sample_noise(h, seed, len(values))


def laplace_kde_logpdf(samples, lam: float, x) -> np.ndarray:
    """Log density of a Laplace KDE at sorted or unsorted points ``x``.

    Uses running log-sum-exp sums over the sorted samples, so the cost is
    O((n + m) log n) instead of O(nm).
    """
    a = np.sort(np.ravel(np.asarray(samples, dtype=float)))
    x = np.asarray(x, dtype=float)
    n = len(a)
    left_cum = np.logaddexp.accumulate(a / lam)  # log sum_{j<=k} e^{a_j/lam}
    right_cum = np.logaddexp.accumulate((-a / lam)[::-1])[::-1]  # log sum_{j>=k} e^{-a_j/lam}
    k = np.searchsorted(a, x, side="right")  # count of a_j <= x
    left = np.full(x.shape, -np.inf)
    has_left = k > 0
    left[has_left] = left_cum[k[has_left] - 1] - x[has_left] / lam
    right = np.full(x.shape, -np.inf)
    has_right = k < n
    right[has_right] = right_cum[k[has_right]] + x[has_right] / lam
    return np.logaddexp(left, right) - math.log(2.0 * lam * n)


@dataclass
class EpsilonCheck:
    supremum: float
    epsilon: float
    lam: float
    argmax: float

    @property
    def passed(self) -> bool:
        return self.supremum <= self.epsilon


def verify_epsilon(a, b, eps: float, lam: float | None = None, points: int = 100_000, span: float = 20.0) -> EpsilonCheck:
    """Largest ``|log alpha - log beta|`` over a dense grid, for Laplace KDEs of
    ``a`` and ``b`` at scale ``lam`` (default ``d_H(a, b) / eps``).

    The grid spans the pooled sample range extended by ``span * lam`` each side.
    """
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    if lam is None:
        lam = hausdorff(a, b) / eps
    if lam == 0:
        # identical sets: the estimators coincide
        return EpsilonCheck(0.0, eps, 0.0, float(a[0]))
    lo = min(a.min(), b.min()) - span * lam
    hi = max(a.max(), b.max()) + span * lam
    x = np.linspace(lo, hi, points)
    gap = np.abs(laplace_kde_logpdf(a, lam, x) - laplace_kde_logpdf(b, lam, x))
    k = int(np.argmax(gap))
    return EpsilonCheck(float(gap[k]), float(eps), float(lam), float(x[k]))
