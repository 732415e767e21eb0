import datetime

import pytest

from scanwheel.errors import ConfigError, DuplicateKeyError, NotFoundError
from scanwheel.store import AnalyticDocument, DocumentStore


def doc(scene="s1", analytic="a1", run="r1", body=None, produced_at=None):
    kwargs = {}
    if produced_at:
        kwargs["produced_at"] = produced_at
    return AnalyticDocument(
        scene_id=scene, analytic_id=analytic, run_id=run,
        body=body if body is not None else {"x": 1}, **kwargs,
    )


def test_put_then_query_by_scene(tmp_path):
    store = DocumentStore(tmp_path)
    store.put(doc())
    got = store.query(scene_id="s1")
    assert len(got) == 1
    assert got[0].key == ("s1", "a1", "r1")
    assert got[0].body == {"x": 1}


def test_query_empty_store(tmp_path):
    assert DocumentStore(tmp_path).query() == []


def test_duplicate_key_rejected(tmp_path):
    store = DocumentStore(tmp_path)
    store.put(doc())
    with pytest.raises(DuplicateKeyError):
        store.put(doc(body={"x": 2}))


def test_get_missing_raises(tmp_path):
    with pytest.raises(NotFoundError):
        DocumentStore(tmp_path).get("s", "a", "r")


def test_malformed_time_filter(tmp_path):
    store = DocumentStore(tmp_path)
    with pytest.raises(ConfigError):
        store.query(produced_from="not-a-time")
    with pytest.raises(ConfigError):
        store.query(produced_from="2024-01-02T00:00:00+00:00",
                    produced_to="2024-01-01T00:00:00+00:00")


def test_query_time_range_matches_brute_force(tmp_path):
    import random

    rng = random.Random(17)
    store = DocumentStore(tmp_path)
    base = datetime.datetime(2024, 3, 1, tzinfo=datetime.timezone.utc)
    docs = []
    for i in range(100):
        stamp = (base + datetime.timedelta(minutes=rng.randrange(10_000))).isoformat()
        d = doc(
            scene=f"s{rng.randrange(6)}", analytic=f"a{rng.randrange(4)}",
            run=f"r{i}", body={"i": i}, produced_at=stamp,
        )
        docs.append(d)
        store.put(d)

    t0 = (base + datetime.timedelta(minutes=2_000)).isoformat()
    t1 = (base + datetime.timedelta(minutes=7_000)).isoformat()
    got = store.query(produced_from=t0, produced_to=t1)
    want = sorted(
        (d for d in docs if t0 <= d.produced_at <= t1),
        key=lambda d: d.key,
    )
    assert [d.key for d in got] == [d.key for d in want]
    assert [d.body for d in got] == [d.body for d in want]


def test_query_sorted_and_filterable(tmp_path):
    store = DocumentStore(tmp_path)
    for scene in ("s2", "s1"):
        for analytic in ("b", "a"):
            store.put(doc(scene=scene, analytic=analytic))
    keys = [d.key for d in store.query()]
    assert keys == sorted(keys)
    assert [d.key for d in store.query(analytic_id="a")] == [
        ("s1", "a", "r1"), ("s2", "a", "r1")
    ]


def test_body_bytes_canonical(tmp_path):
    d = doc(body={"b": 1, "a": [1.5, None, "x"]})
    assert d.body_bytes() == b'{"a":[1.5,null,"x"],"b":1}'


def test_processed_ledger_round_trip(tmp_path):
    store = DocumentStore(tmp_path)
    assert store.processed_scenes() == {}
    store.mark_processed("s1", "r1")
    store.mark_processed("s2", "r1")
    ledger = store.processed_scenes()
    assert set(ledger) == {"s1", "s2"}
    assert ledger["s1"]["run_id"] == "r1"
