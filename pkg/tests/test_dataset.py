import numpy as np
import pytest
from hypothesis import given, strategies as st

from empdp.dataset import (
    Database,
    DatabaseCollection,
    DataError,
    drop_individual,
    from_records,
    individuals,
    load_collection,
    save_collection,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_long_layout_parse(tmp_path):
    f = _write(
        tmp_path / "long.csv",
        "database_id,individual_id,v\nA,x,1\nA,y,2\nB,x,3\nC,y,4\nC,x,5\n",
    )
    c = load_collection(f)
    assert len(c) == 3
    assert [d.id for d in c.databases] == ["A", "B", "C"]
    assert all(len(d) <= 2 for d in c.databases)
    assert c.schema == ("v",)


def test_dir_layout_sorted_by_name(tmp_path):
    _write(tmp_path / "b.csv", "individual_id,v\nx,1\n")
    _write(tmp_path / "a.csv", "individual_id,v\nx,2\ny,3\n")
    _write(tmp_path / "notes.txt", "ignored")
    c = load_collection(tmp_path)
    assert [d.id for d in c.databases] == ["a", "b"]
    np.testing.assert_array_equal(c.databases[0].columns["v"], [2.0, 3.0])


def test_single_database_rejected(tmp_path):
    f = _write(tmp_path / "one.csv", "database_id,individual_id,v\nA,x,1\nA,y,2\n")
    with pytest.raises(DataError, match="fewer than 2 databases"):
        load_collection(f)


@pytest.mark.parametrize(
    "body, message",
    [
        ("database_id,v\nA,1\nB,2\n", "individual_id"),
        ("database_id,individual_id,v\nA,x,1\nB,x,\n", "missing value"),
        ("database_id,individual_id,v\nA,x,1\nB,x,abc\n", "non-numeric"),
        ("individual_id,v\nx,1\n", "database_id"),
    ],
)
def test_malformed_input(tmp_path, body, message):
    f = _write(tmp_path / "bad.csv", body)
    with pytest.raises(DataError, match=message):
        load_collection(f, "long")


def test_schema_mismatch(tmp_path):
    _write(tmp_path / "a.csv", "individual_id,v\nx,1\n")
    _write(tmp_path / "b.csv", "individual_id,w\nx,1\n")
    with pytest.raises(DataError, match="schema mismatch"):
        load_collection(tmp_path)


def test_missing_input(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_collection(tmp_path / "nope")


def test_individuals_union_and_empty_database():
    c = from_records({"d1": [("a", 1.0), ("b", 2.0)], "d2": [("b", 1.0), ("c", 0.0)], "d3": []}, ["v"])
    assert individuals(c) == ["a", "b", "c"]


def test_drop_individual_multiplicity():
    d = Database("d", np.array(["i", "j", "i", "k"]), {"v": [1.0, 2.0, 3.0, 4.0]})
    out = drop_individual(d, "i")
    assert len(out) == 2
    np.testing.assert_array_equal(out.columns["v"], [2.0, 4.0])
    assert drop_individual(d, "zzz") == d
    assert len(drop_individual(Database("e", np.array(["i", "j", "k"]), {"v": [1, 2, 3]}), "j")) == 2


def test_database_is_read_only():
    d = Database("d", np.array(["a"]), {"v": [1.0]})
    with pytest.raises(ValueError):
        d.columns["v"][0] = 5.0


def test_collection_requires_shared_schema():
    a = Database("a", np.array(["x"]), {"v": [1.0]})
    b = Database("b", np.array(["x"]), {"w": [1.0]})
    with pytest.raises(DataError):
        DatabaseCollection((a, b), ("v",))
    with pytest.raises(DataError):
        DatabaseCollection((a, a), ("v",))


ident = st.text("abcxyz0123_", min_size=1, max_size=5)
value = st.floats(-1e6, 1e6, allow_nan=False)
rows = st.lists(st.tuples(ident, value, value), min_size=1, max_size=6)


@given(st.lists(rows, min_size=2, max_size=4))
def test_round_trip_both_layouts(tmp_path_factory, databases):
    records = {f"db{k}": r for k, r in enumerate(databases)}
    c = from_records(records, ["v", "w"])
    base = tmp_path_factory.mktemp("rt")
    save_collection(c, base / "long.csv", "long")
    assert load_collection(base / "long.csv") == c
    save_collection(c, base / "dir", "dir")
    assert load_collection(base / "dir") == c
