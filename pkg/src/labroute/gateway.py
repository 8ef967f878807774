"""The OpenAI-compatible proxy core: overlays, backend dispatch, telemetry.

Every chat turn runs the full pipeline: route plan, overlay injection,
backend call with one retry plus local-tier failover, streaming with TTFT
measurement, guardrail evaluation, budget commit, and exactly one telemetry
event. Routing to the local tier keeps the student query inside the campus
network; the premium client never sees it.
"""

from __future__ import annotations

import itertools
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

from .core import HintLevel, PriceBook, Tier, token_cost_micro
from .governance import GovernanceError
from .overlays import (
    NO_OVERLAY_FINGERPRINT,
    OverlayConfig,
    apply_overlay,
    overlay_guardrail,
)
from .router import RouteRequest, RoutePlan, RouterCore
from .telemetry import SCHEMA_VERSION, TraceStore


class BackendError(Exception):
    pass


@dataclass
class Usage:
    input_tokens: int
    output_tokens: int


class BackendClient(Protocol):
    model_id: str

    def complete(self, messages: list[dict[str, str]]) -> tuple[Iterator[str], Callable[[], Usage]]: ...


class MockBackend:
    """Deterministic scripted backend with configurable latency and failures.

    respond(messages) returns the full response text; it is split into chunks
    for streaming. With realtime=True the declared TTFT is actually slept, so
    wall-clock TTFT measurements are meaningful in protocol tests.
    """

    def __init__(
        self,
        model_id: str,
        respond: Callable[[list[dict[str, str]]], str] | None = None,
        ttft_ms: float = 5.0,
        total_ms: float = 20.0,
        chunk_size: int = 24,
        fail_next: int = 0,
        realtime: bool = False,
    ):
        self.model_id = model_id
        self.respond = respond or (lambda messages: f"[{model_id}] ok: {messages[-1]['content'][:60]}")
        self.ttft_ms = ttft_ms
        self.total_ms = total_ms
        self.chunk_size = chunk_size
        self.fail_next = fail_next
        self.realtime = realtime
        self.requests: list[list[dict[str, str]]] = []

    def complete(self, messages):
        if self.fail_next > 0:
            self.fail_next -= 1
            raise BackendError(f"scripted failure from {self.model_id}")
        self.requests.append([dict(m) for m in messages])
        text = self.respond(messages)
        chunks = [text[i : i + self.chunk_size] for i in range(0, len(text), self.chunk_size)] or [""]
        prompt_tokens = sum(len(m["content"].split()) for m in messages)
        usage = Usage(input_tokens=prompt_tokens, output_tokens=len(text.split()))

        def stream() -> Iterator[str]:
            if self.realtime:
                time.sleep(self.ttft_ms / 1000.0)
            yield chunks[0]
            if self.realtime and len(chunks) > 1:
                per_chunk = max(self.total_ms - self.ttft_ms, 0) / (len(chunks) - 1) / 1000.0
            else:
                per_chunk = 0.0
            for chunk in chunks[1:]:
                if per_chunk:
                    time.sleep(per_chunk)
                yield chunk

        return stream(), (lambda: usage)


@dataclass
class ChatResult:
    text: str
    plan: RoutePlan
    event: dict
    headers: dict[str, str]
    ttft_ms: float
    latency_ms: float
    chunks: list[str] = field(default_factory=list)


class GatewayCore:
    def __init__(
        self,
        router: RouterCore,
        backends: dict[str, "BackendClient"],
        overlays: OverlayConfig,
        prices: PriceBook,
        store: TraceStore,
        clock=time.time,
        approval_poll_s: float = 0.05,
        approval_timeout_s: float = 30.0,
    ):
        self.router = router
        self.backends = backends
        self.overlays = overlays
        self.prices = prices
        self.store = store
        self.clock = clock
        self.approval_poll_s = approval_poll_s
        self.approval_timeout_s = approval_timeout_s
        self._turn_counters: dict[str, itertools.count] = {}
        self.unsupported_fields_logged: set[str] = set()

    def next_turn_index(self, session_id: str) -> int:
        if session_id not in self._turn_counters:
            self._turn_counters[session_id] = itertools.count(1)
        return next(self._turn_counters[session_id])

    def _await_approval(self, approval_id: str) -> None:
        deadline = time.monotonic() + self.approval_timeout_s
        while time.monotonic() < deadline:
            req = self.router.approvals.get(approval_id)
            if req.decision != "pending":
                return
            time.sleep(self.approval_poll_s)
        raise GovernanceError(f"approval timed out: {approval_id}")

    def chat(
        self,
        session_id: str,
        lab_id: str,
        step_id: str,
        messages: list[dict[str, str]],
        requested_hint: HintLevel | None = None,
        justification: str = "",
        integrity_flag: bool = False,
        cohort_id: str | None = None,
        seed: int = 0,
        privacy_mode: str = "full",
        on_chunk: Callable[[str], None] | None = None,
    ) -> ChatResult:
        """Run one governed chat turn end to end and log exactly one event."""
        started = time.perf_counter()
        turn_index = self.next_turn_index(session_id)
        query_text = messages[-1]["content"]
        prior = self.router.session(session_id).stickiness.last_canonical_id
        request = RouteRequest(
            session_id=session_id,
            lab_id=lab_id,
            step_id=step_id,
            query_text=query_text,
            requested_hint=requested_hint,
            turn_index=turn_index,
            prior_canonical_id=prior,
            justification=justification,
            integrity_flag=integrity_flag,
        )
        try:
            plan = self.router.plan(request)
            if plan.requires_approval and plan.approval_id:
                # Hold the turn until the instructor decides, then re-plan.
                self._await_approval(plan.approval_id)
                request.approval_id = plan.approval_id
                held_action_ids = plan.action_ids
                plan = self.router.plan(request)
                plan.action_ids = list(
                    dict.fromkeys(held_action_ids + plan.action_ids)
                )
        except ConnectionError:
            # Fail safe, never fail open to the premium tier.
            plan = RoutePlan(
                model_id=self.router.catalog.local_default,
                tier=Tier.LOCAL,
                granted_hint=HintLevel.L0,
                overlay_id=None,
                overlay_mode="off",
                est_cost_micro=0,
                canonical_ids=[],
                canonical_scores=[],
                canonical_reason="",
                route_why="router_unreachable",
                fallback=True,
            )
        plan_ms = (time.perf_counter() - started) * 1000.0

        overlay = None
        if plan.overlay_id is not None and plan.overlay_mode == "enforced":
            overlay = self.overlays.get(plan.overlay_id)
        modified, fingerprint = apply_overlay(messages, overlay, plan.granted_hint)

        route_why = plan.route_why
        model_id = plan.model_id
        chunks: list[str] = []
        ttft_ms = 0.0
        usage = Usage(0, 0)
        dispatched = False
        for attempt in range(3):  # first try, one retry, then local failover
            if attempt == 2 and model_id != self.router.catalog.local_default:
                self.router.rollback(plan, request)
                plan.reservation_id = None
                model_id = self.router.catalog.local_default
                plan.model_id = model_id
                plan.tier = Tier.LOCAL
                route_why = "backend_failover"
                re_check = self.router.budget(session_id, lab_id).check_and_debit(
                    0, plan.granted_hint, self.router.policy
                )
                plan.reservation_id = re_check.reservation_id
            backend = self.backends[model_id]
            try:
                stream, usage_fn = backend.complete(modified)
                first = True
                for chunk in stream:
                    if first:
                        ttft_ms = (time.perf_counter() - started) * 1000.0
                        first = False
                    chunks.append(chunk)
                    if on_chunk is not None:
                        on_chunk(chunk)
                usage = usage_fn()
                dispatched = True
                break
            except BackendError:
                chunks.clear()
                continue
        if not dispatched:
            self.router.rollback(plan, request)
            raise BackendError("all backends failed, including local fallback")

        text = "".join(chunks)
        latency_ms = (time.perf_counter() - started) * 1000.0

        guardrail_result = "none"
        guard_overlay_id = plan.overlay_id
        if guard_overlay_id is not None and plan.overlay_mode in ("enforced", "evaluate"):
            guard_def = self.overlays.get(guard_overlay_id)
            guardrail_result = overlay_guardrail(
                text,
                guard_def,
                plan.granted_hint,
                self.overlays.answer_patterns.get(lab_id, []),
            )

        actual_cost = token_cost_micro(model_id, usage.input_tokens, usage.output_tokens, self.prices)
        try:
            self.router.commit(plan, request, actual_cost)
        except GovernanceError:
            pass  # reservation already consumed by failover path

        trace_id = f"tr-{uuid.uuid4().hex[:12]}"
        event = {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "lab_id": lab_id,
            "policy": self.router.policy.mode.value,
            "step_id": step_id,
            "hint_req": str(requested_hint) if requested_hint is not None else str(plan.granted_hint),
            "hint_granted": str(plan.granted_hint),
            "justification_len": len(justification),
            "model": model_id,
            "overlay_fingerprint": fingerprint,
            "canonical_ids": list(plan.canonical_ids),
            "canonical_scores": [round(s, 6) for s in plan.canonical_scores],
            "canonical_reason": plan.canonical_reason,
            "tokens": {"prompt": usage.input_tokens, "completion": usage.output_tokens},
            "latency_ms": round(latency_ms, 3),
            "est_cost_micro": actual_cost,
            "teacher_boost": plan.teacher_boost,
            "approval_id": plan.approval_id,
            "wait_ms": plan.wait_ms,
            "privacy_mode": privacy_mode,
            "scpi_retries": 0,
            "range_changes": 0,
            "integrity_flag": integrity_flag,
            "step_pass": None,
            "rubric_score_blind": None,
            "turn_index": turn_index,
            "tier": plan.tier.value,
            "fallback": plan.fallback,
            "route_why": route_why,
            "guardrail_result": guardrail_result,
            "ttft_ms": round(ttft_ms, 3),
            "plan_ms": round(plan_ms, 3),
            "trace_id": trace_id,
            "cohort_id": cohort_id or session_id,
            "seed": seed,
            "action_ids": list(plan.action_ids),
            "overlay_id": plan.overlay_id,
            "t": self.clock(),
        }
        self.store.append(event)
        headers = {
            "X-Route-Why": route_why,
            "X-Canonical-Ids": ",".join(plan.canonical_ids),
            "X-Overlay-Fingerprint": fingerprint,
            "X-Trace-Id": trace_id,
        }
        return ChatResult(
            text=text,
            plan=plan,
            event=event,
            headers=headers,
            ttft_ms=ttft_ms,
            latency_ms=latency_ms,
            chunks=chunks,
        )

    @staticmethod
    def fingerprint_from_event(event: dict, overlays: OverlayConfig) -> str:
        """Recompute the overlay fingerprint from logged inputs (audit hook)."""
        from .overlays import overlay_fingerprint

        overlay_id = event.get("overlay_id")
        if overlay_id is None or event["overlay_fingerprint"] == NO_OVERLAY_FINGERPRINT:
            return NO_OVERLAY_FINGERPRINT
        return overlay_fingerprint(
            overlays.get(overlay_id), HintLevel.parse(event["hint_granted"])
        )
