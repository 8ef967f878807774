"""Steerability and canonical metrics computed from a telemetry event stream.

Every metric reports its denominator so zero-denominator cases are explicit
rather than silently defaulted. Pinned conventions (for cross-language
determinism):

- even-count median = mean of the two middle values;
- PSW censoring: a (session, step) with no L2/L3 grant contributes
  (turn count + 1) / d_s and is counted as censored;
- instructor-influence latency is measured in global trace ordinals (the
  1-based position of events in the trace);
- equity index with all-zero L3 counts is 1.0 (Gini 0 by convention);
- canonical hit rate counts fresh embedding matches only: a turn whose
  canonical id was held over by session stickiness is not an encoder hit;
- stickiness stability is scored over exactly those held-over pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .core import LabDescriptor
from .telemetry import TeacherAction

HIGH_SCAFFOLD = {"L2", "L3"}
HINT_ORDER = ["L0", "L1", "L2", "L3"]


@dataclass
class MetricValue:
    value: float | None
    numerator: float = 0.0
    denominator: float = 0.0
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.value is not None


@dataclass
class MetricReport:
    cai: MetricValue
    oas: MetricValue
    psw: MetricValue
    iil: MetricValue
    ei: MetricValue
    chr: MetricValue
    crg: MetricValue
    css: MetricValue
    fcr: MetricValue
    correctness_by_difficulty: dict[str, MetricValue] = field(default_factory=dict)
    autonomy_trend: MetricValue | None = None

    def as_row(self) -> dict[str, Any]:
        def fmt(m: MetricValue | None) -> str:
            if m is None or m.value is None:
                return ""
            return f"{m.value:.6f}"

        row = {
            "cai": fmt(self.cai),
            "oas": fmt(self.oas),
            "psw": fmt(self.psw),
            "iil": fmt(self.iil),
            "ei": fmt(self.ei),
            "chr": fmt(self.chr),
            "crg": fmt(self.crg),
            "css": fmt(self.css),
            "fcr": fmt(self.fcr),
            "autonomy_trend": fmt(self.autonomy_trend),
        }
        for bucket, m in sorted(self.correctness_by_difficulty.items()):
            row[f"correctness_{bucket}"] = fmt(m)
        return row


def _by_session(events: Sequence[dict]) -> dict[str, list[dict]]:
    sessions: dict[str, list[dict]] = {}
    for e in events:
        sessions.setdefault(e["session_id"], []).append(e)
    for turns in sessions.values():
        turns.sort(key=lambda e: e["turn_index"])
    return sessions


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def cai(events: Sequence[dict], labs: dict[str, LabDescriptor]) -> MetricValue:
    """Challenge alignment: 1 - mean over steps of half the L1 distance
    between the empirical hint-grant distribution and the target."""
    counts: dict[tuple[str, str], list[int]] = {}
    for e in events:
        key = (e["lab_id"], e["step_id"])
        if key not in counts:
            counts[key] = [0, 0, 0, 0]
        counts[key][HINT_ORDER.index(e["hint_granted"])] += 1
    contributions = []
    excluded = 0
    for lab_id, lab in labs.items():
        for step in lab.steps:
            key = (lab_id, step.step_id)
            if key not in counts or sum(counts[key]) == 0:
                excluded += 1
                continue
            total = sum(counts[key])
            empirical = [c / total for c in counts[key]]
            l1 = sum(abs(a - b) for a, b in zip(empirical, step.target_hint_dist))
            contributions.append(1.0 - 0.5 * l1)
    if not contributions:
        return MetricValue(None, 0, 0, {"excluded_steps": excluded})
    return MetricValue(
        sum(contributions) / len(contributions),
        numerator=sum(contributions),
        denominator=len(contributions),
        notes={"excluded_steps": excluded},
    )


def oas(events: Sequence[dict]) -> MetricValue:
    evaluated = [e for e in events if e["guardrail_result"] in ("pass", "fail")]
    if not evaluated:
        return MetricValue(None, 0, 0)
    passed = sum(1 for e in evaluated if e["guardrail_result"] == "pass")
    return MetricValue(passed / len(evaluated), passed, len(evaluated))


def psw(events: Sequence[dict], labs: dict[str, LabDescriptor]) -> MetricValue:
    """Mean over (session, step) units of (first high-scaffold turn index)/d_s,
    censored at turn-count+1 when no L2/L3 grant occurs in the unit."""
    difficulty: dict[tuple[str, str], int] = {}
    for lab_id, lab in labs.items():
        for step in lab.steps:
            difficulty[(lab_id, step.step_id)] = step.difficulty
    units: dict[tuple[str, str, str], list[dict]] = {}
    for session_id, turns in _by_session(events).items():
        for e in turns:
            units.setdefault((session_id, e["lab_id"], e["step_id"]), []).append(e)
    contributions = []
    censored = 0
    skipped = 0
    for (session_id, lab_id, step_id), turns in units.items():
        d = difficulty.get((lab_id, step_id))
        if d is None:
            skipped += 1
            continue
        k = None
        for i, e in enumerate(turns, start=1):
            if e["hint_granted"] in HIGH_SCAFFOLD:
                k = i
                break
        if k is None:
            k = len(turns) + 1
            censored += 1
        contributions.append(k / d)
    if not contributions:
        return MetricValue(None, 0, 0, {"censored": censored, "skipped": skipped})
    return MetricValue(
        sum(contributions) / len(contributions),
        numerator=sum(contributions),
        denominator=len(contributions),
        notes={"censored": censored, "skipped": skipped},
    )


def iil(events: Sequence[dict], actions: Sequence[TeacherAction]) -> MetricValue:
    """Median global-ordinal delay from instructor action to the first event
    referencing it; unreferenced actions are excluded and counted."""
    first_ref: dict[str, int] = {}
    for pos, e in enumerate(events, start=1):
        for action_id in e.get("action_ids", []):
            first_ref.setdefault(action_id, pos)
    delays = []
    unreferenced = 0
    for action in actions:
        pos = first_ref.get(action.action_id)
        if pos is None:
            unreferenced += 1
            continue
        delays.append(pos - action.t_turn)
    if not delays:
        return MetricValue(None, 0, 0, {"unreferenced": unreferenced})
    return MetricValue(
        _median(delays), sum(delays), len(delays), {"unreferenced": unreferenced}
    )


def gini(counts: Sequence[float]) -> float:
    n = len(counts)
    if n == 0:
        return 0.0
    mean = sum(counts) / n
    if mean == 0:
        return 0.0
    diff_sum = sum(abs(x - y) for x in counts for y in counts)
    return diff_sum / (2 * n * n * mean)


def ei(events: Sequence[dict]) -> MetricValue:
    """Equity index: 1 - Gini over per-cohort L3 grant counts."""
    cohorts: dict[str, int] = {}
    for e in events:
        cohorts.setdefault(e["cohort_id"], 0)
        if e["hint_granted"] == "L3":
            cohorts[e["cohort_id"]] += 1
    if not cohorts:
        return MetricValue(None, 0, 0)
    counts = list(cohorts.values())
    value = 1.0 - gini(counts)
    return MetricValue(value, sum(counts), len(counts))


def _max_score(e: dict) -> float | None:
    scores = e.get("canonical_scores") or []
    return max(scores) if scores else None


def _is_sticky(e: dict) -> bool:
    return str(e.get("canonical_reason", "")).startswith("sticky:")


def chr_metric(events: Sequence[dict], tau: float) -> MetricValue:
    if not events:
        return MetricValue(None, 0, 0)
    hits = sum(
        1 for e in events if not _is_sticky(e) and (_max_score(e) or -1.0) >= tau
    )
    return MetricValue(hits / len(events), hits, len(events))


def fcr(events: Sequence[dict], tau: float) -> MetricValue:
    if not events:
        return MetricValue(None, 0, 0)
    count = sum(
        1 for e in events if e["fallback"] and (_max_score(e) or -1.0) >= tau
    )
    return MetricValue(count / len(events), count, len(events))


def css(events: Sequence[dict]) -> MetricValue:
    """Stickiness stability: over consecutive turns where the canonical id
    was held over by session stickiness, the fraction that stayed on the
    same model tier. Empty denominator -> 0."""
    numerator = 0
    denominator = 0
    for turns in _by_session(events).values():
        for prev, cur in zip(turns, turns[1:]):
            prev_id = prev["canonical_ids"][0] if prev["canonical_ids"] else None
            cur_id = cur["canonical_ids"][0] if cur["canonical_ids"] else None
            if prev_id is None or cur_id is None or prev_id != cur_id:
                continue
            if not _is_sticky(cur):
                continue
            denominator += 1
            if cur["tier"] == prev["tier"]:
                numerator += 1
    if denominator == 0:
        return MetricValue(0.0, 0, 0)
    return MetricValue(numerator / denominator, numerator, denominator)


def crg(cost_embed_micro: float, cost_heur_micro: float) -> MetricValue:
    if cost_heur_micro == 0:
        return MetricValue(None, 0, 0)
    value = (cost_heur_micro - cost_embed_micro) / cost_heur_micro
    return MetricValue(value, cost_heur_micro - cost_embed_micro, cost_heur_micro)


def routing_correctness(
    samples: Iterable[tuple[str, str, str]],
) -> dict[str, MetricValue]:
    """samples: (difficulty bucket, routed tier, preferred tier)."""
    per_bucket: dict[str, list[bool]] = {}
    for bucket, routed, preferred in samples:
        per_bucket.setdefault(bucket, []).append(routed == preferred)
    return {
        bucket: MetricValue(sum(hits) / len(hits), sum(hits), len(hits))
        for bucket, hits in per_bucket.items()
    }


def autonomy_trend(events: Sequence[dict], n_buckets: int = 3) -> MetricValue:
    """Least-squares slope of L3 share across within-session time buckets."""
    totals = [0] * n_buckets
    l3 = [0] * n_buckets
    for turns in _by_session(events).values():
        n = len(turns)
        for i, e in enumerate(turns):
            bucket = min(i * n_buckets // n, n_buckets - 1)
            totals[bucket] += 1
            if e["hint_granted"] == "L3":
                l3[bucket] += 1
    points = [
        (i, l3[i] / totals[i]) for i in range(n_buckets) if totals[i] > 0
    ]
    if len(points) < 2:
        return MetricValue(None, 0, len(points))
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    n = len(points)
    x_mean = sum(xs) / n
    y_mean = sum(ys) / n
    sxx = sum((x - x_mean) ** 2 for x in xs)
    sxy = sum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    return MetricValue(sxy / sxx, sxy, n)


def compute_report(
    events: Sequence[dict],
    labs: dict[str, LabDescriptor],
    tau: float = 0.82,
    actions: Sequence[TeacherAction] = (),
    cost_embed_micro: float | None = None,
    cost_heur_micro: float | None = None,
) -> MetricReport:
    events = list(events)
    crg_value = (
        crg(cost_embed_micro, cost_heur_micro)
        if cost_embed_micro is not None and cost_heur_micro is not None
        else MetricValue(None, 0, 0)
    )
    return MetricReport(
        cai=cai(events, labs),
        oas=oas(events),
        psw=psw(events, labs),
        iil=iil(events, actions),
        ei=ei(events),
        chr=chr_metric(events, tau),
        crg=crg_value,
        css=css(events),
        fcr=fcr(events, tau),
        autonomy_trend=autonomy_trend(events),
    )
