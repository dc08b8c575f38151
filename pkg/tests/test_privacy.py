import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from empdp.dataset import from_records
from empdp.density import FitConfig, ModelSpec
from empdp.oracle import DiscretePmf, discrete_delta
from empdp.privacy import (
    conditional_privacy,
    empirical_privacy,
    fit_pair,
    infer_privacy_risk,
    joint_privacy,
    risk_curve,
    total_risk,
)
from empdp.queries import QuerySampleSet, QuerySpec, register_query, unregister_query
from empdp.selfcheck import ecdf_oracle_gap
from empdp.synthetic import whale_collection

SUM = QuerySpec("sum", "value")


@pytest.fixture(scope="module")
def whales():
    return whale_collection(n_databases=60, population=20, size=8, seed=5)


def test_identical_samples_zero(rng):
    q = QuerySampleSet(rng.normal(size=30))
    for eps in (0.0, 0.1, 2.0):
        assert infer_privacy_risk(q, q, eps) == 0.0


def test_separated_clusters_near_one(rng):
    q = QuerySampleSet(rng.normal(0, 0.1, 40))
    q_i = QuerySampleSet(rng.normal(100, 0.1, 40))
    cfg = FitConfig(fixed=ModelSpec(kernel="gaussian", scale=(0.2,)))
    d = infer_privacy_risk(q, q_i, 0.1, cfg)
    edges = np.arange(-10.0, 111.0)
    oracle = discrete_delta(
        DiscretePmf.from_samples(q.points[:, 0], edges), DiscretePmf.from_samples(q_i.points[:, 0], edges), 0.1
    )
    assert d >= 0.99
    assert d == pytest.approx(oracle, abs=1e-3)


def test_swap_symmetry(rng):
    a = QuerySampleSet(rng.normal(size=25))
    b = QuerySampleSet(rng.normal(0.3, 1.2, 25))
    assert infer_privacy_risk(a, b, 0.2) == infer_privacy_risk(b, a, 0.2)


@given(st.integers(0, 2**31 - 1))
def test_ecdf_matches_discrete_oracle(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(8, 80))
    q = r.normal(size=n)
    q_i = q + r.normal(0.2, 0.3, n)
    fast, slow = ecdf_oracle_gap(q, q_i, float(r.uniform(0.05, 2)), bins=1 << 17)
    assert abs(fast - slow) <= 1e-3


def test_total_risk_cases():
    assert total_risk([0.1, 0.2]) == pytest.approx(0.28, abs=1e-15)
    assert total_risk([0.0, 0.0]) == 0.0
    assert total_risk([0.3, 1.0]) == 1.0
    with pytest.raises(ValueError):
        total_risk([1.5])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
def test_total_risk_sandwich(deltas):
    t = total_risk(deltas)
    assert max(deltas) - 1e-12 <= t <= min(1.0, sum(deltas)) + 1e-12


def test_curve_monotone_and_vanishes(whales):
    curve = risk_curve(whales, SUM, [0.01, 0.05, 0.1, 0.5, 1.0, 3.0])
    deltas = [d for _, d, _ in curve.points]
    stars = [s for _, _, s in curve.points]
    assert all(x >= y - 1e-6 for x, y in zip(deltas, deltas[1:]))
    assert all(x >= y - 1e-6 for x, y in zip(stars, stars[1:]))
    for r in curve.reports:
        ds = [d for _, d in r.per_individual]
        assert max(ds) <= r.delta_star + 1e-12 <= min(1.0, sum(ds)) + 2e-12


def test_vanishes_once_epsilon_exceeds_ratio(rng):
    q = QuerySampleSet(rng.normal(size=40))
    q_i = QuerySampleSet(q.points[:, 0] + rng.normal(0, 0.2, 40))
    cfg = FitConfig(fixed=ModelSpec(kernel="laplace", scale=(0.5,)))
    pair = fit_pair(q, q_i, cfg)
    log_ratio = np.max(np.abs(np.log(pair.p) - np.log(pair.p_i)))
    assert pair.delta(log_ratio * 0.5) > 0
    assert pair.delta(log_ratio + 1e-9) == 0.0
    assert infer_privacy_risk(q, q_i, 20.0, cfg) == 0.0


def test_curve_rejects_bad_grids(whales):
    for grid in ([], [0.5, 0.1], [-1.0]):
        with pytest.raises(ValueError):
            risk_curve(whales, SUM, grid)


def test_whale_dominates(whales):
    r = empirical_privacy(whales, SUM, 0.1)
    assert r.per_individual[0][0] == "p0000"
    assert r.delta == r.per_individual[0][1] > 0.3


def test_zero_contribution_gives_zero():
    recs = {f"d{k}": [("a", float(k)), ("b", float(k % 3)), ("z", 0.0)] for k in range(12)}
    r = empirical_privacy(from_records(recs, ["value"]), SUM, 0.1)
    assert dict(r.per_individual)["z"] == 0.0


def test_low_sample_flag_and_json():
    recs = {f"d{k}": [("a", float(k)), ("b", float(k * k % 5))] for k in range(6)}
    r = empirical_privacy(from_records(recs, ["value"]), SUM, 0.5, FitConfig(cv_folds=3))
    assert any(f.startswith("low_sample") for f in r.flags)
    body = json.loads(r.to_json())
    assert {"epsilon", "delta", "delta_star", "individuals", "flags", "model"} <= set(body)
    assert body["model"]["reference"]["estimator"] == "kde"


def test_threads_do_not_change_results(whales):
    a = empirical_privacy(whales, SUM, 0.2, threads=1)
    b = empirical_privacy(whales, SUM, 0.2, threads=4)
    assert a.to_json() == b.to_json()


def test_conditional_one_bucket_reduces(whales):
    plain = empirical_privacy(whales, SUM, 0.1)
    cond = conditional_privacy(whales, SUM, QuerySpec("count"), 1, 0.1)
    assert cond.buckets[0].report.to_dict() == plain.to_dict()


def test_conditional_on_answer_leaks(whales):
    cond = conditional_privacy(whales, SUM, SUM, 4, 0.1, min_bucket_samples=10)
    assert max(b.report.delta for b in cond.buckets if b.report) > 0.9


def test_conditional_floor_excludes_buckets(whales):
    # the maximum is tied at the whale's value in many databases, so buckets are uneven
    g = QuerySpec("quantile", "value", q=0.99)
    cond = conditional_privacy(whales, SUM, g, 5, 0.1, min_bucket_samples=10)
    excluded = [b for b in cond.buckets if b.report is None]
    assert excluded and all("insufficient" in b.flags[0] for b in excluded)
    assert cond.buckets[cond.worst].report is not None


def test_joint_with_itself_close_to_marginal(whales):
    one = empirical_privacy(whales, SUM, 0.5)
    both = joint_privacy(whales, SUM, SUM, 0.5)
    assert both.delta == pytest.approx(one.delta, abs=0.25)


def test_joint_difference_attack():
    # f2 is the sum without individual "t"; f1 - f2 reveals t's value exactly
    rng = np.random.default_rng(9)
    target = "t"
    others = [f"o{k:02d}" for k in range(30)]
    values = dict(zip(others, rng.normal(10, 1, 30)))
    recs = {}
    for j in range(80):
        members = rng.choice(others, 14, replace=False)
        recs[f"d{j}"] = [(target, 2.0)] + [(m, values[m]) for m in members]
    c = from_records(recs, ["value"])

    def sum_except(d, spec):
        keep = d.individual_ids != spec.params["exclude"]
        return float(d.columns["value"][keep].sum())

    register_query("sum_except", sum_except)
    try:
        f2 = QuerySpec("sum_except", params={"exclude": target})
        joint = joint_privacy(c, SUM, f2, 0.5)
        marginal = empirical_privacy(c, SUM, 0.5)
    finally:
        unregister_query("sum_except")
    assert dict(joint.per_individual)[target] > 0.95
    assert dict(marginal.per_individual)[target] < 0.2
