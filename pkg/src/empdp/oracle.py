"""Slow, brute-force reference implementations.

These exist so the fast paths elsewhere in the package can be checked against
something that shares none of their code. None of them are tuned for speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiscretePmf:
    """Probability masses on uniform bins.

    Attributes:
        edges: Monotone bin edges, uniformly spaced, length ``len(probs) + 1``.
        probs: Nonnegative masses summing to one.
    """

    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if edges.ndim != 1 or probs.ndim != 1 or len(edges) != len(probs) + 1:
            raise ValueError("edges must have exactly one more entry than probs")
        widths = np.diff(edges)
        if np.any(widths <= 0) or not np.allclose(widths, widths[0], rtol=1e-9, atol=0):
            raise ValueError("bin edges must be strictly increasing and uniform")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_cdf(cls, cdf, edges) -> "DiscretePmf":
        """Bin a distribution given by a vectorized CDF; leftover tail mass is dropped
        and the result renormalized."""
        edges = np.asarray(edges, dtype=float)
        mass = np.diff(cdf(edges))
        mass = np.clip(mass, 0.0, None)
        return cls(edges, mass / mass.sum())

    @classmethod
    def from_samples(cls, samples, edges) -> "DiscretePmf":
        counts, _ = np.histogram(np.asarray(samples, dtype=float), bins=np.asarray(edges))
        if counts.sum() == 0:
            raise ValueError("no samples fall inside the bin range")
        return cls(np.asarray(edges, dtype=float), counts / counts.sum())


def discrete_delta(p: DiscretePmf, q: DiscretePmf, eps: float) -> float:
    """Exact two-sided hockey-stick divergence between two pmfs on matching bins."""
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise ValueError("pmfs are defined on different bins")
    scale = float(np.exp(eps))
    forward = 0.0
    backward = 0.0
    for pj, qj in zip(p.probs.tolist(), q.probs.tolist()):
        forward += max(pj - scale * qj, 0.0)
        backward += max(qj - scale * pj, 0.0)
    return min(max(forward, backward, 0.0), 1.0)


def exhaustive_hausdorff(a, b) -> float:
    """Hausdorff distance between two finite real sets by the O(|A||B|) double loop."""
    a = [float(v) for v in np.ravel(a)]
    b = [float(v) for v in np.ravel(b)]
    if not a or not b:
        raise ValueError("Hausdorff distance needs two non-empty sets")
    a_to_b = max(min(abs(x - y) for y in b) for x in a)
    b_to_a = max(min(abs(x - y) for x in a) for y in b)
    return max(a_to_b, b_to_a)


def numeric_convolve(h_values, kernel, grid) -> np.ndarray:
    """Direct-sum convolution of a tabulated density with a noise/inference kernel.

    ``grid`` must be uniform and contain 0 as a node so that a point mass can be
    represented as a single spike of height ``mass / dx``.

    Args:
        h_values: Density values of h at the grid nodes.
        kernel: Object with ``family`` and ``scale`` (see ``empdp.noise.KernelSpec``).
        grid: Uniform grid nodes.

    Returns:
        ``(h * k)(x)`` at each grid node, computed as a Riemann sum.
    """
    grid = np.asarray(grid, dtype=float)
    h_values = np.asarray(h_values, dtype=float)
    if h_values.shape != grid.shape:
        raise ValueError("h_values and grid have different shapes")
    dx = np.diff(grid)
    if np.any(dx <= 0) or not np.allclose(dx, dx[0], rtol=1e-9, atol=0):
        raise ValueError("convolution grid must be uniform")
    step = float(dx[0])
    zero = int(np.argmin(np.abs(grid)))
    if abs(grid[zero]) > 1e-9 * step:
        raise ValueError("convolution grid must contain 0 as a node")

    # out[n] = sum_i h[i] k((n - i) * step); lag index j maps to (j - (m - 1)) * step
    m = len(grid)
    lags = np.arange(-(m - 1), m) * step
    full = np.convolve(h_values, _kernel_pdf(kernel, lags)) * step
    return full[m - 1 : 2 * m - 1]


def _kernel_pdf(kernel, x):
    scale = float(kernel.scale)
    if kernel.family == "laplace":
        return np.exp(-np.abs(x) / scale) / (2.0 * scale)
    if kernel.family == "gaussian":
        return np.exp(-0.5 * (x / scale) ** 2) / (scale * np.sqrt(2.0 * np.pi))
    raise ValueError(f"unknown kernel family {kernel.family!r}")
