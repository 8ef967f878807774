import pytest

from labroute.telemetry import (
    SchemaError,
    TraceStore,
    event_template,
    hmac_canonical_id,
    prune_trace,
    read_trace,
    validate_event,
)


@pytest.fixture
def store(tmp_path):
    return TraceStore(tmp_path / "trace.jsonl", hmac_key=b"test-key")


def test_append_and_read_back(store):
    event = event_template(trace_id="t-1")
    store.append(event)
    (read,) = list(read_trace(store.path))
    assert read == event


def test_missing_field_rejected():
    event = event_template()
    del event["policy"]
    with pytest.raises(SchemaError, match="policy"):
        validate_event(event)


def test_invalid_enum_values_rejected():
    with pytest.raises(SchemaError, match="hint_granted"):
        validate_event(event_template(hint_granted="L7"))
    with pytest.raises(SchemaError, match="guardrail_result"):
        validate_event(event_template(guardrail_result="maybe"))


def test_turn_index_must_increase(store):
    store.append(event_template(turn_index=2, trace_id="a"))
    with pytest.raises(SchemaError, match="turn_index"):
        store.append(event_template(turn_index=2, trace_id="b"))


def test_hashed_privacy_stores_hmac(store):
    event = event_template(
        privacy_mode="hashed", canonical_ids=["rc_time_constant"], canonical_scores=[0.9]
    )
    store.append(event)
    (read,) = list(read_trace(store.path))
    stored_id = read["canonical_ids"][0]
    assert stored_id != "rc_time_constant"
    assert stored_id == hmac_canonical_id(b"test-key", "rc_time_constant")


def test_full_privacy_stores_plain(store):
    event = event_template(canonical_ids=["x"], canonical_scores=[0.9])
    store.append(event)
    (read,) = list(read_trace(store.path))
    assert read["canonical_ids"] == ["x"]


def test_filtered_read(store):
    store.append(event_template(session_id="a", trace_id="1"))
    store.append(event_template(session_id="b", trace_id="2"))
    assert len(store.read(session_id="a")) == 1
    assert len(store.read(policy="P1")) == 2
    assert store.read(policy="P2") == []


def test_prune_by_retention(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")
    now = 1_000_000.0
    store.append(event_template(session_id="a", turn_index=1, t=now - 40 * 86400))
    store.append(event_template(session_id="a", turn_index=2, t=now - 1 * 86400))
    removed = prune_trace(store.path, days=30, now=now)
    assert removed == 1
    assert len(list(read_trace(store.path))) == 1
