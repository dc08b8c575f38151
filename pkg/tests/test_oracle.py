import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from empdp.noise import KernelSpec, hausdorff
from empdp.oracle import DiscretePmf, discrete_delta, exhaustive_hausdorff, numeric_convolve

EDGES2 = np.array([0.0, 1.0, 2.0])

probs = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12).filter(lambda v: sum(v) > 1e-3)


def _pmf(values):
    v = np.asarray(values) / np.sum(values)
    return DiscretePmf(np.arange(len(v) + 1, dtype=float), v)


def test_identical_pmfs_give_zero():
    p = DiscretePmf(EDGES2, np.array([0.3, 0.7]))
    assert discrete_delta(p, p, 0.1) == 0.0


def test_disjoint_support_gives_one():
    p = DiscretePmf(EDGES2, np.array([1.0, 0.0]))
    q = DiscretePmf(EDGES2, np.array([0.0, 1.0]))
    assert discrete_delta(p, q, 5.0) == 1.0


def test_hand_computed_value_at_zero_epsilon():
    p = DiscretePmf(EDGES2, np.array([0.6, 0.4]))
    q = DiscretePmf(EDGES2, np.array([0.4, 0.6]))
    assert discrete_delta(p, q, 0.0) == pytest.approx(0.2, abs=1e-15)


@given(probs, probs, st.floats(0.0, 5.0))
def test_delta_symmetric_and_bounded(a, b, eps):
    n = min(len(a), len(b))
    if sum(a[:n]) < 1e-3 or sum(b[:n]) < 1e-3:
        return
    p, q = _pmf(a[:n]), _pmf(b[:n])
    d = discrete_delta(p, q, eps)
    assert 0.0 <= d <= 1.0
    assert d == discrete_delta(q, p, eps)


@given(probs, probs)
def test_delta_nonincreasing_in_epsilon(a, b):
    n = min(len(a), len(b))
    if sum(a[:n]) < 1e-3 or sum(b[:n]) < 1e-3:
        return
    p, q = _pmf(a[:n]), _pmf(b[:n])
    values = [discrete_delta(p, q, e) for e in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))


def test_pmf_validation():
    with pytest.raises(ValueError):
        DiscretePmf(EDGES2, np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscretePmf(np.array([0.0, 1.0, 3.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscretePmf(EDGES2, np.array([-0.1, 1.1]))


def test_pmf_from_cdf_and_samples():
    edges = np.linspace(-1, 1, 5)
    p = DiscretePmf.from_cdf(lambda t: np.clip((t + 1) / 2, 0, 1), edges)
    np.testing.assert_allclose(p.probs, 0.25)
    s = DiscretePmf.from_samples([0.1, 0.2, 0.9], np.linspace(0, 1, 3))
    np.testing.assert_allclose(s.probs, [2 / 3, 1 / 3])


def test_exhaustive_hausdorff_cases():
    assert exhaustive_hausdorff([1, 2, 3], [1, 2, 3]) == 0.0
    assert exhaustive_hausdorff([0], [3]) == 3.0
    assert exhaustive_hausdorff([0, 1], [0, 5]) == 4.0


def test_exhaustive_matches_fast_on_many_pairs(rng):
    for _ in range(1000):
        a = rng.normal(size=rng.integers(1, 20)) * 5
        b = rng.normal(size=rng.integers(1, 20)) * 5
        assert exhaustive_hausdorff(a, b) == hausdorff(a, b)
        assert exhaustive_hausdorff(a, b) == exhaustive_hausdorff(b, a)


def test_convolution_identity_and_mass():
    dx = 0.01
    grid = np.arange(-2000, 2001) * dx
    k = KernelSpec("laplace", 1.0)
    delta0 = np.zeros_like(grid)
    delta0[2000] = 1.0 / dx
    np.testing.assert_allclose(numeric_convolve(delta0, k, grid), k.pdf(grid), rtol=1e-9)
    g = KernelSpec("gaussian", 0.5)
    out = numeric_convolve(g.pdf(grid), k, grid)
    assert out.sum() * dx == pytest.approx(1.0, abs=1e-3)


def test_gaussian_convolution_adds_variances():
    dx = 0.005
    grid = np.arange(-3000, 3001) * dx
    out = numeric_convolve(KernelSpec("gaussian", 0.3).pdf(grid), KernelSpec("gaussian", 0.4), grid)
    expected = KernelSpec("gaussian", math.hypot(0.3, 0.4)).pdf(grid)
    assert np.abs(out - expected).sum() * dx < 1e-6
