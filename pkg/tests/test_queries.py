import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from empdp.dataset import Database, from_records
from empdp.queries import (
    LeaveOneOut,
    QueryError,
    QuerySampleSet,
    QuerySpec,
    eval_all,
    eval_all_without,
    evaluate,
    parse_query,
    register_query,
    unregister_query,
)

SUM = QuerySpec("sum", "v")
DB = Database("d", np.array(["a", "b"]), {"v": [1.5, 2.5]})


def test_sum_and_joint():
    assert evaluate(SUM, DB).tolist() == [4.0]
    joint = QuerySpec("joint", parts=(SUM, QuerySpec("count")))
    assert evaluate(joint, DB).tolist() == [4.0, 2.0]


def test_mean_of_empty_database():
    empty = Database("e", np.array([], dtype=object), {"v": []})
    with pytest.raises(QueryError, match="empty database"):
        evaluate(QuerySpec("mean", "v"), empty)
    assert evaluate(SUM, empty).tolist() == [0.0]


def test_nearest_rank_quantile():
    d = Database("d", np.array(list("abcde")), {"v": [5.0, 1.0, 4.0, 2.0, 3.0]})
    assert evaluate(QuerySpec("quantile", "v", q=0.5), d).tolist() == [3.0]
    assert evaluate(QuerySpec("quantile", "v", q=0.01), d).tolist() == [1.0]
    assert evaluate(QuerySpec("quantile", "v", q=0.99), d).tolist() == [5.0]


def test_eval_all_one_point_per_database():
    c = from_records({"x": [("a", 1.0)], "y": [("a", 2.0)], "z": []}, ["v"])
    assert len(eval_all(QuerySpec("count"), c)) == 3


def test_failing_database_named():
    c = from_records({"x": [("a", 1.0)], "bad_db": []}, ["v"])
    with pytest.raises(QueryError, match="bad_db"):
        eval_all(QuerySpec("mean", "v"), c)


def test_leave_one_out_sum_linear():
    c = from_records({k: [("i", 1.0), ("j", 3.0)] for k in "xyz"}, ["v"])
    full = eval_all(SUM, c).points[:, 0]
    np.testing.assert_array_equal(eval_all_without(SUM, c, "i").points[:, 0], full - 1)
    assert eval_all_without(SUM, c, "nobody") == eval_all(SUM, c)


def test_leave_one_out_mean_empties_database():
    c = from_records({"x": [("i", 1.0)], "y": [("i", 2.0), ("j", 3.0)]}, ["v"])
    with pytest.raises(QueryError):
        eval_all_without(QuerySpec("mean", "v"), c, "i")
    with pytest.raises(QueryError):
        LeaveOneOut(QuerySpec("mean", "v"), c).without("i")


records = st.dictionaries(
    st.sampled_from(["d1", "d2", "d3", "d4"]),
    st.lists(st.tuples(st.sampled_from("abcdef"), st.floats(-100, 100)), min_size=1, max_size=8),
    min_size=2,
)
queries = st.sampled_from(
    [
        QuerySpec("sum", "v"),
        QuerySpec("count"),
        QuerySpec("mean", "v"),
        QuerySpec("joint", parts=(QuerySpec("sum", "v"), QuerySpec("count"))),
    ]
)


@given(records, queries)
def test_fast_leave_one_out_matches_direct(recs, q):
    c = from_records(recs, ["v"])
    loo = LeaveOneOut(q, c)
    for i in "abcdefg":
        try:
            direct = eval_all_without(q, c, i).points
        except QueryError:
            with pytest.raises(QueryError):
                loo.without(i)
            continue
        np.testing.assert_allclose(loo.without(i).points, direct, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("mean:precip", QuerySpec("mean", "precip")),
        ("quantile:v:0.9", QuerySpec("quantile", "v", q=0.9)),
        ("count", QuerySpec("count")),
        ("sum:v,count", QuerySpec("joint", parts=(QuerySpec("sum", "v"), QuerySpec("count")))),
    ],
)
def test_parse_short_forms(text, expected):
    assert parse_query(text) == expected


def test_json_round_trip():
    q = parse_query("sum:v,quantile:v:0.25")
    assert QuerySpec.from_dict(json.loads(json.dumps(q.to_dict()))) == q
    with pytest.raises(ValueError):
        QuerySpec.from_dict({"kind": "sum", "column": "v", "extra": 1})


@pytest.mark.parametrize("bad", ["median:v", "sum", "quantile:v:1.5", "sum:v,count,count"])
def test_invalid_queries(bad):
    with pytest.raises(ValueError):
        parse_query(bad)


def test_registered_query():
    register_query("maxv", lambda d, spec: float(np.max(d.columns["v"])))
    try:
        assert evaluate(QuerySpec("maxv"), DB).tolist() == [2.5]
    finally:
        unregister_query("maxv")
    with pytest.raises(ValueError):
        QuerySpec("maxv")


def test_sample_set_validation():
    assert QuerySampleSet([1.0, 2.0]).dim == 1
    assert QuerySampleSet([[1.0, 2.0]]).dim == 2
    with pytest.raises(ValueError):
        QuerySampleSet([np.nan])
    with pytest.raises(ValueError):
        QuerySampleSet(np.zeros((2, 3)))
