"""The routing decision engine behind POST /route/plan.

Planning runs four steps in order: canonical matching, policy/budget gating,
model selection (with stickiness and teacher overrides), and rationale
logging. The same core object backs the HTTP service, the simulator, and the
replay harness, so all three exercise one code path.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field, replace

from .bank import Bank, EmbeddingProvider, MatchCache, MatchResult, ProviderError, hashed_query
from .core import (
    ConfigError,
    HintLevel,
    LabDescriptor,
    PolicyMode,
    PriceBook,
    Tier,
    usd_to_micro,
)
from .governance import (
    ApprovalQueue,
    BudgetState,
    GovernanceError,
    IntegrityState,
    PolicyConfig,
    StickinessState,
)

STICKY_CARRY_SCORE = 0.99

# Rough token estimate used for budget reservations before the backend call.
EST_COMPLETION_TOKENS = {
    HintLevel.L0: 80,
    HintLevel.L1: 150,
    HintLevel.L2: 300,
    HintLevel.L3: 600,
}
OVERLAY_PROMPT_OVERHEAD = 60

DEFAULT_COMPLEXITY_KEYWORDS = (
    "diagnose",
    "oscillat",
    "noise",
    "nonlinear",
    "instability",
    "mismatch",
    "compensat",
    "ringing",
    "parasitic",
    "derive",
)


@dataclass
class ModelCatalog:
    """Model id -> tier mapping plus the per-tier default models."""

    tiers: dict[str, Tier]
    local_default: str
    premium_default: str

    def tier(self, model_id: str) -> Tier:
        try:
            return self.tiers[model_id]
        except KeyError:
            raise ConfigError(f"model not in catalog: {model_id}") from None


@dataclass
class RouterConfig:
    tau: float = 0.82
    top_k: int = 3
    embedding_enabled: bool = True
    privacy_mode: str = "full"  # full | hashed | off
    privacy_salt: str = "labroute"
    score_scale: float = 1.0
    heuristic_token_threshold: int = 40
    complexity_keywords: tuple[str, ...] = DEFAULT_COMPLEXITY_KEYWORDS
    cache_ttl_seconds: float = 300.0


@dataclass
class RouteRequest:
    session_id: str
    lab_id: str
    step_id: str
    query_text: str
    requested_hint: HintLevel | None = None
    turn_index: int = 1
    prior_canonical_id: str | None = None
    justification: str = ""
    approval_id: str | None = None
    integrity_flag: bool = False
    now: float | None = None


@dataclass
class RoutePlan:
    model_id: str
    tier: Tier
    granted_hint: HintLevel
    overlay_id: str | None
    overlay_mode: str
    est_cost_micro: int
    canonical_ids: list[str]
    canonical_scores: list[float]
    canonical_reason: str
    route_why: str
    fallback: bool
    requires_approval: bool = False
    approval_id: str | None = None
    wait_ms: int | None = None
    teacher_boost: bool = False
    reservation_id: int | None = None
    action_ids: list[str] = field(default_factory=list)
    plan_ms: float = 0.0
    policy_hash: str = ""

    def headers(self) -> dict[str, str]:
        return {
            "X-Route-Why": self.route_why,
            "X-Canonical-Ids": ",".join(self.canonical_ids),
            "X-Canonical-Scores": ",".join(f"{s:.4f}" for s in self.canonical_scores),
        }


def heuristic_route(
    query_text: str, config: RouterConfig | None = None
) -> tuple[Tier, HintLevel]:
    """Length/complexity heuristic used when no canonical entry governs."""
    config = config or RouterConfig()
    tokens = query_text.split()
    if not tokens:
        return Tier.LOCAL, HintLevel.L0
    lowered = query_text.lower()
    complexity = sum(1 for kw in config.complexity_keywords if kw in lowered)
    score = len(tokens) + 15 * complexity
    if score >= config.heuristic_token_threshold:
        return Tier.PREMIUM, HintLevel.L2
    return Tier.LOCAL, HintLevel.L1


@dataclass
class _SessionState:
    stickiness: StickinessState
    integrity: IntegrityState
    attempts: dict[str, int] = field(default_factory=dict)  # step_id -> unanswered runs
    pending_action_ids: list[str] = field(default_factory=list)
    grace_used: bool = False
    last_hold_active: bool = False
    # Guard so a held-then-replanned turn records its integrity flag once.
    integrity_recorded_turn: int = -1
    integrity_blocked_last: bool = False


class RouterCore:
    """All routing and governance state for one deployment."""

    def __init__(
        self,
        policy: PolicyConfig,
        bank: Bank,
        provider: EmbeddingProvider,
        prices: PriceBook,
        labs: dict[str, LabDescriptor],
        catalog: ModelCatalog,
        config: RouterConfig | None = None,
        clock=time.time,
    ):
        self.policy = policy
        self.bank = bank
        self.provider = provider
        self.prices = prices
        self.labs = labs
        self.catalog = catalog
        self.config = config or RouterConfig()
        self.clock = clock
        self.cache = MatchCache(ttl_seconds=self.config.cache_ttl_seconds)
        self.approvals = ApprovalQueue(servers=policy.approval_servers)
        # Optional hook: resolve an enqueued approval synchronously (simulator).
        self.approval_resolver = None
        self.audit_log: list[dict] = []
        self._budgets: dict[tuple[str, str], BudgetState] = {}
        self._sessions: dict[str, _SessionState] = {}
        self._pending_global_action_ids: list[str] = []
        self._action_counter = itertools.count(1)
        self._lock = threading.Lock()

    # --- state access --------------------------------------------------------

    def budget(self, session_id: str, lab_id: str) -> BudgetState:
        key = (session_id, lab_id)
        if key not in self._budgets:
            self._budgets[key] = BudgetState(
                session_id=session_id,
                lab_id=lab_id,
                total_budget_micro=self.policy.total_budget_micro,
            )
        return self._budgets[key]

    def budgets(self) -> list[BudgetState]:
        return list(self._budgets.values())

    def session(self, session_id: str) -> _SessionState:
        if session_id not in self._sessions:
            self._sessions[session_id] = _SessionState(
                stickiness=StickinessState(session_id=session_id),
                integrity=IntegrityState(session_id=session_id),
            )
        return self._sessions[session_id]

    def reset_session_state(self) -> None:
        """Cold start: flush the match cache and all stickiness state."""
        self.cache.flush()
        for state in self._sessions.values():
            state.stickiness = StickinessState(session_id=state.stickiness.session_id)
            state.grace_used = False
            state.last_hold_active = False

    # --- admin / teacher actions --------------------------------------------

    def _new_action_id(self) -> str:
        return f"act-{next(self._action_counter):06d}"

    def _audit(self, kind: str, **payload) -> None:
        self.audit_log.append({"t": self.clock(), "kind": kind, **payload})

    def admin_update_policy(self, new_policy: PolicyConfig, register_action: bool = True) -> str | None:
        with self._lock:
            old_hash = self.policy.policy_hash()
            self.policy = new_policy
            if new_policy.approval_servers != self.approvals.servers:
                self.approvals = ApprovalQueue(servers=new_policy.approval_servers)
            for b in self._budgets.values():
                b.total_budget_micro = new_policy.total_budget_micro
            action_id = None
            if register_action:
                action_id = self._new_action_id()
                self._pending_global_action_ids.append(action_id)
            self._audit(
                "policy_update",
                action_id=action_id,
                old_policy_hash=old_hash,
                new_policy_hash=new_policy.policy_hash(),
            )
            return action_id

    def admin_swap_overlay(self, overlay_id: str) -> str | None:
        with self._lock:
            self.policy = replace(self.policy, default_overlay_id=overlay_id)
            action_id = None
            # An unenforced (P0) overlay swap alters no plan, so it is never
            # referenced downstream and contributes no influence-latency sample.
            if self.policy.overlay_mode == "enforced":
                action_id = self._new_action_id()
                self._pending_global_action_ids.append(action_id)
            self._audit("overlay_swap", action_id=action_id, overlay_id=overlay_id)
            return action_id

    def admin_boost(self, session_id: str) -> str:
        with self._lock:
            state = self.session(session_id)
            state.stickiness.boost_pending = True
            action_id = self._new_action_id()
            state.pending_action_ids.append(action_id)
            self._audit("boost", action_id=action_id, session_id=session_id)
            return action_id

    def admin_freeze(
        self,
        session_id: str,
        model_id: str,
        ttl_turns: int | None = None,
        ttl_seconds: float | None = None,
    ) -> str | None:
        with self._lock:
            if self.policy.mode is PolicyMode.P0:
                # Ungoverned mode: the attempt is audited but not enforced.
                self._audit("freeze_ignored", session_id=session_id, model_id=model_id)
                return None
            state = self.session(session_id)
            state.stickiness.set_freeze(
                model_id, ttl_turns=ttl_turns, ttl_seconds=ttl_seconds, now=self.clock()
            )
            action_id = self._new_action_id()
            state.pending_action_ids.append(action_id)
            self._audit("freeze", action_id=action_id, session_id=session_id, model_id=model_id)
            return action_id

    def admin_clear_freeze(self, session_id: str) -> None:
        with self._lock:
            self.session(session_id).stickiness.clear_freeze()
            self._audit("freeze_clear", session_id=session_id)

    def admin_decide_approval(self, approval_id: str, decision: str, decided_at: float | None = None) -> str:
        decided_at = self.clock() if decided_at is None else decided_at
        req = self.approvals.decide(approval_id, decision, decided_at)
        with self._lock:
            state = self.session(req.session_id)
            action_id = self._new_action_id()
            state.pending_action_ids.append(action_id)
            self._audit(
                "approval_decision",
                action_id=action_id,
                approval_id=approval_id,
                decision=decision,
            )
            return action_id

    # --- matching ------------------------------------------------------------

    def _match_query(self, query_text: str) -> list[MatchResult]:
        cfg = self.config
        if not cfg.embedding_enabled or cfg.privacy_mode == "off" or len(self.bank) == 0:
            return []
        text = query_text
        if cfg.privacy_mode == "hashed":
            text = hashed_query(query_text, cfg.privacy_salt)
        return self.bank.match(
            text,
            self.provider,
            tau=cfg.tau,
            top_k=cfg.top_k,
            cache=self.cache,
            score_scale=cfg.score_scale,
        )

    # --- planning ------------------------------------------------------------

    def plan(self, request: RouteRequest) -> RoutePlan:
        started = time.perf_counter()
        now = request.now if request.now is not None else self.clock()
        policy = self.policy
        state = self.session(request.session_id)
        if request.lab_id not in self.labs:
            raise ConfigError(f"unknown lab_id: {request.lab_id}")

        # Step 1: canonical matching (fresh match, else stickiness carry).
        canonical_reason = ""
        match_error = False
        try:
            matches = self._match_query(request.query_text)
        except ProviderError:
            matches = []
            match_error = True
            canonical_reason = "canonical:error"

        sticky = state.stickiness
        freeze_active = sticky.frozen_model is not None and (
            sticky.freeze_remaining_turns > 0
            or (sticky.freeze_deadline is not None and now < sticky.freeze_deadline)
        )
        ttl = policy.stickiness_ttl_seconds
        hold_active = freeze_active or (
            ttl is not None
            and sticky.last_turn_at is not None
            and (now - sticky.last_turn_at) <= ttl
        )
        carried = False
        grace = False
        if matches:
            canonical_reason = f"match:{matches[0].entry_id}"
            state.grace_used = False
        elif (
            request.prior_canonical_id
            and request.prior_canonical_id in self.bank.entries
            and not match_error
        ):
            if hold_active:
                carried = True
                matches = [MatchResult(request.prior_canonical_id, STICKY_CARRY_SCORE, 1)]
                canonical_reason = "sticky:carry"
            elif ttl is not None and state.last_hold_active and not state.grace_used:
                # One grace turn after a hold lapses: the student still
                # references the prior intent, but the model is re-planned.
                grace = True
                state.grace_used = True
                matches = [MatchResult(request.prior_canonical_id, STICKY_CARRY_SCORE, 1)]
                canonical_reason = "sticky:grace"

        entry = self.bank.entries.get(matches[0].entry_id) if matches else None
        canonical_ids = [m.entry_id for m in matches]
        canonical_scores = [m.score for m in matches]

        # Step 2: policy gating.
        action_ids: list[str] = []
        with self._lock:
            action_ids.extend(state.pending_action_ids)
            state.pending_action_ids.clear()
            action_ids.extend(self._pending_global_action_ids)
            self._pending_global_action_ids.clear()

        if state.integrity_recorded_turn == request.turn_index:
            blocked = state.integrity_blocked_last
        else:
            blocked = state.integrity.record(request.integrity_flag, policy)
            state.integrity_recorded_turn = request.turn_index
            state.integrity_blocked_last = blocked
        budget = self.budget(request.session_id, request.lab_id)
        plan_template = dict(
            canonical_ids=canonical_ids,
            canonical_scores=canonical_scores,
            canonical_reason=canonical_reason,
            action_ids=action_ids,
            policy_hash=policy.policy_hash(),
            overlay_mode=policy.overlay_mode,
        )
        if blocked:
            plan = RoutePlan(
                model_id=self.catalog.local_default,
                tier=Tier.LOCAL,
                granted_hint=HintLevel.L0,
                overlay_id=self._overlay_for(entry, policy),
                est_cost_micro=0,
                route_why="integrity_throttle",
                fallback=True,
                **plan_template,
            )
            return self._finalize(plan, request, state, now, started, hold_active, carried or grace)

        requested = request.requested_hint
        if requested is None:
            requested = min(HintLevel.L1, entry.max_hint_level) if entry else HintLevel.L1
        capped = requested
        why_parts: list[str] = []
        if entry is not None and capped > entry.max_hint_level:
            capped = entry.max_hint_level
            why_parts.append("entry_hint_cap")
        if policy.governed and capped > policy.hint_cap:
            capped = policy.hint_cap
            why_parts.append("policy_cap")
        # Productive-struggle gate: high-scaffold grants wait for a configured
        # run of unanswered attempts in the current step.
        if (
            policy.governed
            and capped is HintLevel.L2
            and state.attempts.get(request.step_id, 0) < policy.l2_min_attempts
        ):
            capped = HintLevel.L1
            why_parts.append("struggle_gate")

        # L3 frequency cap is checked before approvals so capped requests
        # never enter the queue (a denied approval does not consume a slot).
        if (
            capped is HintLevel.L3
            and policy.governed
            and budget.l3_granted_count >= policy.l3_max
        ):
            capped = HintLevel.L2
            why_parts.append("l3_cap")

        requires_approval = False
        approval_id = request.approval_id
        wait_ms = None
        if capped is HintLevel.L3 and policy.approvals_enabled:
            if approval_id is not None:
                req = self.approvals.get(approval_id)
                if req.decision == "approved":
                    wait_ms = req.wait_ms
                    why_parts.append("approval_granted")
                elif req.decision == "denied":
                    capped = HintLevel.L2
                    wait_ms = req.wait_ms
                    why_parts.append("approval_denied")
                else:
                    requires_approval = True
            else:
                try:
                    req = self.approvals.enqueue(
                        request.session_id, HintLevel.L3, request.justification, now, policy
                    )
                except GovernanceError as exc:
                    capped = HintLevel.L2
                    why_parts.append(str(exc))
                else:
                    approval_id = req.approval_id
                    if self.approval_resolver is not None:
                        decision, decided_at = self.approval_resolver(req)
                        self.approvals.decide(approval_id, decision, decided_at)
                        wait_ms = req.wait_ms
                        if decision == "approved":
                            why_parts.append("approval_granted")
                        else:
                            capped = HintLevel.L2
                            why_parts.append("approval_denied")
                    else:
                        requires_approval = True

        # A synchronous approval decision may have registered an action for
        # this session mid-plan; stamp it on the turn it releases.
        with self._lock:
            if state.pending_action_ids:
                action_ids.extend(state.pending_action_ids)
                state.pending_action_ids.clear()

        if requires_approval:
            # Hold the turn: no reservation, no state changes; the caller
            # re-plans with approval_id once the decision lands.
            held = RoutePlan(
                model_id=self.catalog.premium_default,
                tier=self.catalog.tier(self.catalog.premium_default),
                granted_hint=HintLevel.L3,
                overlay_id=self._overlay_for(entry, policy),
                est_cost_micro=0,
                route_why="approval_pending",
                fallback=entry is None,
                requires_approval=True,
                approval_id=approval_id,
                **plan_template,
            )
            held.plan_ms = (time.perf_counter() - started) * 1000.0
            return held

        # Step 3: model selection.
        fallback = entry is None
        if entry is not None and not grace:
            planned_model = entry.preferred_model
            if carried and sticky.last_model is not None:
                planned_model = sticky.last_model
        else:
            h_tier, h_hint = heuristic_route(request.query_text, self.config)
            planned_model = (
                self.catalog.premium_default if h_tier is Tier.PREMIUM else self.catalog.local_default
            )
            if request.requested_hint is None and entry is None:
                capped = min(h_hint, policy.hint_cap if policy.governed else h_hint)

        est_completion = EST_COMPLETION_TOKENS[capped]
        est_prompt = int(len(request.query_text.split()) * 1.3) + OVERLAY_PROMPT_OVERHEAD
        per_turn_cap = usd_to_micro(entry.max_cost_usd) if entry is not None else None
        price = self.prices.price(planned_model)
        est_cost = usd_to_micro(
            est_prompt * price.input_usd_per_mtok / 1e6
            + est_completion * price.output_usd_per_mtok / 1e6
        )
        check = budget.check_and_debit(est_cost, capped, policy, per_turn_cap_micro=per_turn_cap)
        if not check.allowed:
            if check.reason == "budget_exhausted":
                planned_model = self.catalog.local_default
                capped = HintLevel.L0
                why_parts.append("budget_exhausted")
            else:
                planned_model = self.catalog.local_default
                capped = check.capped_level
                why_parts.append(check.reason)
            if entry is not None:
                fallback = True  # canonical preference overridden by budget
            price = self.prices.price(planned_model)
            est_cost = usd_to_micro(est_completion * price.output_usd_per_mtok / 1e6)
            check = budget.check_and_debit(est_cost, capped, policy, per_turn_cap_micro=None)
        else:
            capped = check.capped_level
            if check.reason not in ("ok",):
                why_parts.append(check.reason)

        effective_model, override = sticky.apply(
            planned_model, self.catalog.premium_default, now=now if sticky.freeze_deadline else None
        )
        teacher_boost = override == "boost"
        if override:
            why_parts.append(override)

        tier = self.catalog.tier(effective_model)
        route_why = self._route_why(entry, match_error, why_parts)
        plan = RoutePlan(
            model_id=effective_model,
            tier=tier,
            granted_hint=capped,
            overlay_id=self._overlay_for(entry, policy),
            est_cost_micro=est_cost,
            route_why=route_why,
            fallback=fallback,
            requires_approval=requires_approval,
            approval_id=approval_id,
            wait_ms=wait_ms,
            teacher_boost=teacher_boost,
            reservation_id=check.reservation_id,
            **plan_template,
        )
        # Track unanswered attempts for the struggle gate.
        if plan.granted_hint < requested:
            state.attempts[request.step_id] = state.attempts.get(request.step_id, 0) + 1
        else:
            state.attempts[request.step_id] = 0
        return self._finalize(plan, request, state, now, started, hold_active, carried or grace)

    def _overlay_for(self, entry, policy: PolicyConfig) -> str | None:
        if policy.overlay_mode == "off":
            return None
        if entry is not None and entry.overlay:
            return entry.overlay
        return policy.default_overlay_id

    @staticmethod
    def _route_why(entry, match_error: bool, why_parts: list[str]) -> str:
        parts = [p for p in why_parts if p]
        if parts:
            base = parts[0]
            rest = parts[1:]
        elif entry is not None:
            base = f"canonical:{entry.id}"
            rest = []
        elif match_error:
            base = "canonical:error"
            rest = []
        else:
            base = "canonical:none"
            rest = []
        if entry is not None and not base.startswith("canonical:"):
            rest = [f"canonical:{entry.id}"] + rest
        return "|".join([base] + rest)

    def _finalize(
        self,
        plan: RoutePlan,
        request: RouteRequest,
        state: _SessionState,
        now: float,
        started: float,
        hold_active: bool,
        kept_canonical: bool,
    ) -> RoutePlan:
        sticky = state.stickiness
        sticky.last_canonical_id = plan.canonical_ids[0] if plan.canonical_ids else None
        sticky.last_model = plan.model_id
        sticky.last_tier = plan.tier
        sticky.last_turn_at = now
        state.last_hold_active = hold_active or (
            plan.canonical_ids != [] and not kept_canonical
        )
        plan.plan_ms = (time.perf_counter() - started) * 1000.0
        self._audit(
            "plan",
            session_id=request.session_id,
            lab_id=request.lab_id,
            route_why=plan.route_why,
            model=plan.model_id,
            granted=str(plan.granted_hint),
            est_cost_micro=plan.est_cost_micro,
        )
        return plan

    def commit(self, plan: RoutePlan, request: RouteRequest, actual_cost_micro: int) -> None:
        if plan.reservation_id is None:
            return
        self.budget(request.session_id, request.lab_id).commit_debit(
            plan.reservation_id, actual_cost_micro, plan.granted_hint
        )

    def rollback(self, plan: RoutePlan, request: RouteRequest) -> None:
        if plan.reservation_id is None:
            return
        self.budget(request.session_id, request.lab_id).rollback(plan.reservation_id)
