"""HTTP surfaces: the routing service and the OpenAI-compatible gateway.

Both apps authenticate with a shared secret header. The gateway streams
chat completions as server-sent-event chunks and mirrors the plan rationale
into response headers for instructor audit.
"""

from __future__ import annotations

import json
from dataclasses import replace

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .core import ConfigError, HintLevel, PolicyMode
from .gateway import GatewayCore
from .governance import GovernanceError, default_policy
from .router import RouteRequest, RouterCore

SECRET_HEADER = "x-shared-secret"


def _auth_dependency(secret: str):
    def check(request: Request):
        provided = request.headers.get(SECRET_HEADER)
        if provided is None:
            auth = request.headers.get("authorization", "")
            if auth.lower().startswith("bearer "):
                provided = auth[7:]
        if provided != secret:
            raise HTTPException(status_code=401, detail="unauthenticated")

    return check


class PlanBody(BaseModel):
    session_id: str
    lab_id: str
    step_id: str
    query_text: str
    requested_hint: str | None = None
    turn_index: int = 1
    prior_canonical_id: str | None = None
    justification: str = ""
    approval_id: str | None = None
    integrity_flag: bool = False


class PolicyBody(BaseModel):
    mode: str
    total_budget_micro: int | None = Field(default=None)
    l3_max: int | None = None
    default_overlay_id: str | None = None
    hint_cap: str | None = None


class DecisionBody(BaseModel):
    decision: str


class FreezeBody(BaseModel):
    model: str
    ttl_turns: int | None = None
    ttl_seconds: float | None = None


def create_router_app(core: RouterCore, secret: str) -> FastAPI:
    app = FastAPI(title="route-plan service")
    auth = Depends(_auth_dependency(secret))

    @app.post("/route/plan", dependencies=[auth])
    def route_plan(body: PlanBody):
        try:
            hint = HintLevel.parse(body.requested_hint) if body.requested_hint else None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        request = RouteRequest(
            session_id=body.session_id,
            lab_id=body.lab_id,
            step_id=body.step_id,
            query_text=body.query_text,
            requested_hint=hint,
            turn_index=body.turn_index,
            prior_canonical_id=body.prior_canonical_id,
            justification=body.justification,
            approval_id=body.approval_id,
            integrity_flag=body.integrity_flag,
        )
        try:
            plan = core.plan(request)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        payload = {
            "model_id": plan.model_id,
            "tier": plan.tier.value,
            "granted_hint": str(plan.granted_hint),
            "overlay_id": plan.overlay_id,
            "overlay_mode": plan.overlay_mode,
            "est_cost_micro": plan.est_cost_micro,
            "canonical_ids": plan.canonical_ids,
            "canonical_scores": plan.canonical_scores,
            "canonical_reason": plan.canonical_reason,
            "route_why": plan.route_why,
            "fallback": plan.fallback,
            "requires_approval": plan.requires_approval,
            "approval_id": plan.approval_id,
            "wait_ms": plan.wait_ms,
            "teacher_boost": plan.teacher_boost,
            "plan_ms": plan.plan_ms,
        }
        return JSONResponse(payload, headers=plan.headers())

    @app.get("/admin/policy", dependencies=[auth])
    def get_policy():
        p = core.policy
        return {
            "mode": p.mode.value,
            "total_budget_micro": p.total_budget_micro,
            "l3_max": p.l3_max,
            "approvals_enabled": p.approvals_enabled,
            "overlay_mode": p.overlay_mode,
            "default_overlay_id": p.default_overlay_id,
            "policy_hash": p.policy_hash(),
        }

    @app.post("/admin/policy", dependencies=[auth])
    def update_policy(body: PolicyBody):
        try:
            mode = PolicyMode.parse(body.mode)
            new_policy = default_policy(mode)
            overrides = {}
            if body.total_budget_micro is not None:
                overrides["total_budget_micro"] = body.total_budget_micro
            if body.l3_max is not None:
                overrides["l3_max"] = body.l3_max
            if body.default_overlay_id is not None:
                overrides["default_overlay_id"] = body.default_overlay_id
            if body.hint_cap is not None:
                overrides["hint_cap"] = HintLevel.parse(body.hint_cap)
            if overrides:
                new_policy = replace(new_policy, **overrides)
        except (ValueError, ConfigError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        action_id = core.admin_update_policy(new_policy)
        return {"status": "ok", "action_id": action_id, "policy_hash": new_policy.policy_hash()}

    @app.get("/admin/approvals", dependencies=[auth])
    def list_approvals(include_decided: bool = False):
        requests = core.approvals.all_requests() if include_decided else core.approvals.pending()
        return [
            {
                "approval_id": r.approval_id,
                "session_id": r.session_id,
                "requested_level": str(r.requested_level),
                "justification": r.justification,
                "enqueued_at": r.enqueued_at,
                "decision": r.decision,
                "decided_at": r.decided_at,
                "wait_ms": r.wait_ms,
            }
            for r in requests
        ]

    @app.post("/admin/approvals/{approval_id}/decision", dependencies=[auth])
    def decide(approval_id: str, body: DecisionBody):
        try:
            action_id = core.admin_decide_approval(approval_id, body.decision)
        except GovernanceError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"status": "ok", "action_id": action_id}

    @app.post("/admin/boost/{session_id}", dependencies=[auth])
    def boost(session_id: str):
        return {"status": "ok", "action_id": core.admin_boost(session_id)}

    @app.post("/admin/freeze/{session_id}", dependencies=[auth])
    def freeze(session_id: str, body: FreezeBody):
        action_id = core.admin_freeze(
            session_id, body.model, ttl_turns=body.ttl_turns, ttl_seconds=body.ttl_seconds
        )
        return {"status": "ok", "action_id": action_id}

    @app.delete("/admin/freeze/{session_id}", dependencies=[auth])
    def clear_freeze(session_id: str):
        core.admin_clear_freeze(session_id)
        return {"status": "ok"}

    @app.get("/admin/budgets", dependencies=[auth])
    def budgets():
        return [
            {
                "session_id": b.session_id,
                "lab_id": b.lab_id,
                "total_budget_micro": b.total_budget_micro,
                "spent_micro": b.spent_micro,
                "l3_granted_count": b.l3_granted_count,
            }
            for b in core.budgets()
        ]

    return app


_KNOWN_CHAT_FIELDS = {"model", "messages", "stream", "user", "temperature", "max_tokens"}


def create_gateway_app(gateway: GatewayCore, secret: str) -> FastAPI:
    app = FastAPI(title="chat gateway")
    auth = Depends(_auth_dependency(secret))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    # Sync endpoint on purpose: it may block while a held L3 turn waits for an
    # instructor decision, and the threadpool keeps admin routes responsive.
    @app.post("/v1/chat/completions", dependencies=[auth])
    def chat_completions(body: dict, request: Request):
        messages = body.get("messages")
        if not messages or messages[-1].get("role") not in ("user", "tool"):
            raise HTTPException(status_code=422, detail="messages: last message must be user-side")
        for key in set(body) - _KNOWN_CHAT_FIELDS:
            if key not in gateway.unsupported_fields_logged:
                gateway.unsupported_fields_logged.add(key)
        session_id = request.headers.get("x-session-id", "anonymous")
        lab_id = request.headers.get("x-lab-id") or next(iter(gateway.router.labs))
        lab = gateway.router.labs.get(lab_id)
        if lab is None:
            raise HTTPException(status_code=422, detail=f"unknown lab_id: {lab_id}")
        step_id = request.headers.get("x-step-id") or lab.steps[0].step_id
        hint_header = request.headers.get("x-hint-level")
        requested = HintLevel.parse(hint_header) if hint_header else None
        justification = request.headers.get("x-justification", "")
        stream = bool(body.get("stream", False))

        result = gateway.chat(
            session_id=session_id,
            lab_id=lab_id,
            step_id=step_id,
            messages=messages,
            requested_hint=requested,
            justification=justification,
        )
        completion_id = f"chatcmpl-{result.event['trace_id']}"

        if not stream:
            payload = {
                "id": completion_id,
                "object": "chat.completion",
                "model": result.plan.model_id,
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": result.text},
                        "finish_reason": "stop",
                    }
                ],
                "usage": {
                    "prompt_tokens": result.event["tokens"]["prompt"],
                    "completion_tokens": result.event["tokens"]["completion"],
                    "total_tokens": result.event["tokens"]["prompt"]
                    + result.event["tokens"]["completion"],
                },
            }
            return JSONResponse(payload, headers=result.headers)

        def sse():
            for i, chunk in enumerate(result.chunks):
                payload = {
                    "id": completion_id,
                    "object": "chat.completion.chunk",
                    "model": result.plan.model_id,
                    "choices": [
                        {
                            "index": 0,
                            "delta": {"content": chunk} if i or chunk else {"role": "assistant"},
                            "finish_reason": None,
                        }
                    ],
                }
                yield f"data: {json.dumps(payload)}\n\n"
            final = {
                "id": completion_id,
                "object": "chat.completion.chunk",
                "model": result.plan.model_id,
                "choices": [{"index": 0, "delta": {}, "finish_reason": "stop"}],
                "usage": {
                    "prompt_tokens": result.event["tokens"]["prompt"],
                    "completion_tokens": result.event["tokens"]["completion"],
                    "total_tokens": result.event["tokens"]["prompt"]
                    + result.event["tokens"]["completion"],
                },
            }
            yield f"data: {json.dumps(final)}\n\n"
            yield "data: [DONE]\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream", headers=result.headers)

    @app.get("/admin/telemetry", dependencies=[auth])
    def telemetry_feed(offset: int = 0, limit: int = 100, session_id: str | None = None):
        events = gateway.store.read(session_id=session_id)
        page = events[offset : offset + limit]
        return {"total": len(events), "offset": offset, "events": page}

    @app.post("/admin/overlays", dependencies=[auth])
    def swap_overlay(body: dict):
        overlay_id = body.get("overlay_id")
        if overlay_id is None or overlay_id not in gateway.overlays.overlays:
            raise HTTPException(status_code=422, detail=f"unknown overlay_id: {overlay_id}")
        action_id = gateway.router.admin_swap_overlay(overlay_id)
        return {"status": "ok", "action_id": action_id}

    return app
