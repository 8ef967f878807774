"""Append-only telemetry trace store, schema v1.1 (JSON lines, one event/line).

Every routed turn produces exactly one event. Canonical ids are stored
HMAC-keyed whenever privacy_mode is not "full", so raw intent ids never
land on disk for privacy-sensitive deployments.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

SCHEMA_VERSION = "1.1"

# Table-derived dictionary plus the documented v1.1 additions.
REQUIRED_FIELDS = [
    "schema_version",
    "session_id",
    "lab_id",
    "policy",
    "step_id",
    "hint_req",
    "hint_granted",
    "justification_len",
    "model",
    "overlay_fingerprint",
    "canonical_ids",
    "canonical_scores",
    "canonical_reason",
    "tokens",
    "latency_ms",
    "est_cost_micro",
    "teacher_boost",
    "approval_id",
    "wait_ms",
    "privacy_mode",
    "scpi_retries",
    "range_changes",
    "integrity_flag",
    "step_pass",
    "rubric_score_blind",
    # v1.1 additions
    "turn_index",
    "tier",
    "fallback",
    "route_why",
    "guardrail_result",
    "ttft_ms",
    "plan_ms",
    "trace_id",
    "cohort_id",
    "seed",
]

OPTIONAL_FIELDS = ["action_ids", "t", "overlay_id"]

_HINT_LEVELS = {"L0", "L1", "L2", "L3"}
_POLICIES = {"P0", "P1", "P2"}
_PRIVACY_MODES = {"full", "hashed", "off"}
_GUARDRAIL_RESULTS = {"pass", "fail", "none"}


class SchemaError(Exception):
    """Raised when an event does not validate against the field dictionary."""


def validate_event(event: dict[str, Any]) -> None:
    for name in REQUIRED_FIELDS:
        if name not in event:
            raise SchemaError(f"missing field: {name}")
    if event["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"schema_version must be {SCHEMA_VERSION!r}")
    if event["policy"] not in _POLICIES:
        raise SchemaError(f"policy: invalid value {event['policy']!r}")
    for name in ("hint_req", "hint_granted"):
        if event[name] not in _HINT_LEVELS:
            raise SchemaError(f"{name}: invalid value {event[name]!r}")
    if event["privacy_mode"] not in _PRIVACY_MODES:
        raise SchemaError(f"privacy_mode: invalid value {event['privacy_mode']!r}")
    if event["guardrail_result"] not in _GUARDRAIL_RESULTS:
        raise SchemaError(f"guardrail_result: invalid value {event['guardrail_result']!r}")
    tokens = event["tokens"]
    if not isinstance(tokens, dict) or "prompt" not in tokens or "completion" not in tokens:
        raise SchemaError("tokens: must be a dict with prompt and completion")
    if not isinstance(event["canonical_ids"], list) or not isinstance(event["canonical_scores"], list):
        raise SchemaError("canonical_ids/canonical_scores: must be lists")
    if len(event["canonical_ids"]) != len(event["canonical_scores"]):
        raise SchemaError("canonical_ids and canonical_scores lengths differ")
    if not isinstance(event["turn_index"], int) or event["turn_index"] < 1:
        raise SchemaError("turn_index: must be a positive integer")


def hmac_canonical_id(key: bytes, canonical_id: str) -> str:
    return hmac_mod.new(key, canonical_id.encode("utf-8"), hashlib.sha256).hexdigest()


class TraceStore:
    """Durable append-only JSONL log with atomic per-event appends."""

    def __init__(self, path: str | Path | None, hmac_key: bytes = b"labroute-audit"):
        # path=None keeps the trace in memory (simulation jobs that only
        # need the events for metric reduction).
        self.path = Path(path) if path is not None else None
        self.hmac_key = hmac_key
        self._lock = threading.Lock()
        self._last_turn: dict[str, int] = {}
        self._memory: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: dict[str, Any]) -> dict[str, Any]:
        validate_event(event)
        record = dict(event)
        if record["privacy_mode"] != "full":
            record["canonical_ids"] = [
                hmac_canonical_id(self.hmac_key, cid) for cid in record["canonical_ids"]
            ]
        with self._lock:
            session = record["session_id"]
            last = self._last_turn.get(session)
            if last is not None and record["turn_index"] <= last:
                raise SchemaError(
                    f"turn_index must increase per session (got {record['turn_index']} after {last})"
                )
            self._last_turn[session] = record["turn_index"]
            if self.path is None:
                self._memory.append(record)
            else:
                with open(self.path, "a") as f:
                    f.write(json.dumps(record, sort_keys=True) + "\n")
        return record

    def read(
        self,
        session_id: str | None = None,
        lab_id: str | None = None,
        policy: str | None = None,
        seed: int | None = None,
    ) -> list[dict[str, Any]]:
        source = list(self._memory) if self.path is None else read_trace(self.path)
        return [
            e
            for e in source
            if (session_id is None or e["session_id"] == session_id)
            and (lab_id is None or e["lab_id"] == lab_id)
            and (policy is None or e["policy"] == policy)
            and (seed is None or e["seed"] == seed)
        ]


def read_trace(path: str | Path) -> Iterator[dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return iter(())

    def _iter():
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    yield json.loads(line)

    return _iter()


def write_trace(path: str | Path, events: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for event in events:
            f.write(json.dumps(event, sort_keys=True) + "\n")


def prune_trace(path: str | Path, days: float, now: float | None = None) -> int:
    """Drop events older than the retention window (by the `t` wall field).
    Returns the number of events removed."""
    now = time.time() if now is None else now
    cutoff = now - days * 86400
    events = list(read_trace(path))
    kept = [e for e in events if e.get("t", now) >= cutoff]
    write_trace(path, kept)
    return len(events) - len(kept)


@dataclass
class TeacherAction:
    """One instructor intervention, anchored at the turn it was issued."""

    action_id: str
    kind: str  # boost | freeze | policy_update | overlay_swap | approval_decision
    session_id: str | None
    t_turn: int
    payload: dict[str, Any] = field(default_factory=dict)


def event_template(**overrides: Any) -> dict[str, Any]:
    """A schema-complete event with neutral defaults; used by tests and the
    simulator to avoid repeating the 35-field dictionary."""
    event: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "session_id": "s-000",
        "lab_id": "rc_step",
        "policy": "P1",
        "step_id": "setup",
        "hint_req": "L1",
        "hint_granted": "L1",
        "justification_len": 0,
        "model": "openai/gpt-oss-20b",
        "overlay_fingerprint": "none",
        "canonical_ids": [],
        "canonical_scores": [],
        "canonical_reason": "",
        "tokens": {"prompt": 0, "completion": 0},
        "latency_ms": 0,
        "est_cost_micro": 0,
        "teacher_boost": False,
        "approval_id": None,
        "wait_ms": None,
        "privacy_mode": "full",
        "scpi_retries": 0,
        "range_changes": 0,
        "integrity_flag": False,
        "step_pass": None,
        "rubric_score_blind": None,
        "turn_index": 1,
        "tier": "local",
        "fallback": False,
        "route_why": "canonical:none",
        "guardrail_result": "none",
        "ttft_ms": 0,
        "plan_ms": 0,
        "trace_id": "t-000",
        "cohort_id": "s-000",
        "seed": 0,
        "action_ids": [],
    }
    event.update(overrides)
    return event
