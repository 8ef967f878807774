import pytest

from labroute.bank import Bank
from labroute.core import ConfigError, HintLevel, PolicyMode, Tier
from labroute.governance import default_policy
from labroute.router import RouteRequest, RouterCore, RouterConfig, heuristic_route

from conftest import LOCAL_MODEL, PREMIUM_MODEL


@pytest.fixture
def clock():
    return {"t": 1_000.0}


@pytest.fixture
def make_router(small_bank, provider, prices, labs, catalog, clock):
    def build(mode=PolicyMode.P1, policy=None, bank=None, config=None):
        return RouterCore(
            policy=policy or default_policy(mode),
            bank=bank if bank is not None else small_bank,
            provider=provider,
            prices=prices,
            labs=labs,
            catalog=catalog,
            config=config,
            clock=lambda: clock["t"],
        )

    return build


def req(query, session="s1", lab="rc_step", step="fitting", **kwargs):
    return RouteRequest(
        session_id=session, lab_id=lab, step_id=step, query_text=query, **kwargs
    )


class TestHeuristic:
    def test_empty_query_local_l0(self):
        assert heuristic_route("") == (Tier.LOCAL, HintLevel.L0)

    def test_short_query_local_l1(self):
        assert heuristic_route("what units is capacitance in") == (Tier.LOCAL, HintLevel.L1)

    def test_long_complex_query_premium_l2(self):
        text = (
            "my amplifier output keeps oscillating and shows ringing after the step edge "
            "even though I added the compensation network from the lab handout, "
            "could this be a parasitic feedback path through the breadboard rails"
        )
        assert heuristic_route(text) == (Tier.PREMIUM, HintLevel.L2)

    def test_keywords_weighted_over_length(self):
        text = "diagnose the nonlinear instability causing noise"
        tier, _ = heuristic_route(text)
        assert tier is Tier.PREMIUM


class TestCanonicalPlanning:
    def test_fresh_match_uses_preferred_model(self, make_router, small_bank):
        router = make_router()
        entry = small_bank.entry("rc_time_constant")
        plan = router.plan(req(entry.text))
        assert plan.canonical_ids[0] == "rc_time_constant"
        assert plan.model_id == LOCAL_MODEL
        assert not plan.fallback
        assert plan.route_why.startswith("canonical:rc_time_constant")
        assert plan.canonical_reason == "match:rc_time_constant"

    def test_miss_falls_back_to_heuristic(self, make_router):
        router = make_router()
        plan = router.plan(req("what units is capacitance in"))
        assert plan.canonical_ids == []
        assert plan.fallback
        assert plan.route_why == "canonical:none"
        assert plan.model_id == LOCAL_MODEL

    def test_embedding_disabled_never_matches(self, make_router, small_bank):
        router = make_router(config=RouterConfig(embedding_enabled=False))
        plan = router.plan(req(small_bank.entry("rc_time_constant").text))
        assert plan.canonical_ids == [] and plan.fallback

    def test_privacy_off_never_matches(self, make_router, small_bank):
        router = make_router(config=RouterConfig(privacy_mode="off"))
        plan = router.plan(req(small_bank.entry("rc_time_constant").text))
        assert plan.canonical_ids == []

    def test_unknown_lab_rejected(self, make_router):
        router = make_router()
        with pytest.raises(ConfigError, match="unknown lab_id"):
            router.plan(req("x", lab="nope"))

    def test_headers_mirror_plan(self, make_router, small_bank):
        router = make_router()
        plan = router.plan(req(small_bank.entry("rc_time_constant").text))
        headers = plan.headers()
        assert headers["X-Canonical-Ids"].startswith("rc_time_constant")
        assert headers["X-Route-Why"] == plan.route_why


class TestHintGating:
    def test_struggle_gate_delays_l2(self, make_router, small_bank):
        # P1 requires two unanswered attempts before an L2 grant.
        router = make_router(PolicyMode.P1)
        text = small_bank.entry("rc_time_constant").text
        grants = []
        for turn in range(1, 4):
            plan = router.plan(req(text, requested_hint=HintLevel.L2, turn_index=turn))
            grants.append(plan.granted_hint)
            router.commit(plan, req(text), 0)
        assert grants == [HintLevel.L1, HintLevel.L1, HintLevel.L2]

    def test_p0_grants_immediately(self, make_router, small_bank):
        router = make_router(PolicyMode.P0)
        plan = router.plan(req(small_bank.entry("rc_time_constant").text, requested_hint=HintLevel.L2))
        assert plan.granted_hint is HintLevel.L2

    def test_policy_hint_cap(self, make_router, small_bank):
        from dataclasses import replace

        policy = replace(default_policy(PolicyMode.P1), hint_cap=HintLevel.L1)
        router = make_router(policy=policy)
        plan = router.plan(req(small_bank.entry("rc_time_constant").text, requested_hint=HintLevel.L2))
        assert plan.granted_hint is HintLevel.L1
        assert "policy_cap" in plan.route_why

    def test_l3_cap_downgrades_without_enqueue(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        text = small_bank.entry("rc_time_constant").text
        router.approval_resolver = lambda r: ("approved", r.enqueued_at + 1.0)
        for turn in range(1, 3):
            r = req(text, requested_hint=HintLevel.L3, turn_index=turn, justification="stuck")
            plan = router.plan(r)
            assert plan.granted_hint is HintLevel.L3
            router.commit(plan, r, 0)
        r = req(text, requested_hint=HintLevel.L3, turn_index=3, justification="stuck")
        plan = router.plan(r)
        assert plan.granted_hint is HintLevel.L2
        assert "l3_cap" in plan.route_why
        # Capped requests never reached the queue.
        assert len(router.approvals.all_requests()) == 2

    def test_missing_justification_downgrades(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        plan = router.plan(
            req(small_bank.entry("rc_time_constant").text, requested_hint=HintLevel.L3)
        )
        assert plan.granted_hint is HintLevel.L2
        assert "justification_required" in plan.route_why


class TestApprovals:
    def test_hold_then_approved_replan(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        text = small_bank.entry("rc_time_constant").text
        r = req(text, requested_hint=HintLevel.L3, justification="three failed attempts")
        held = router.plan(r)
        assert held.requires_approval and held.approval_id
        assert held.reservation_id is None  # no budget reserved while held
        action_id = router.admin_decide_approval(held.approval_id, "approved")
        r.approval_id = held.approval_id
        plan = router.plan(r)
        assert plan.granted_hint is HintLevel.L3
        assert "approval_granted" in plan.route_why
        assert action_id in plan.action_ids
        assert plan.wait_ms is not None and plan.wait_ms >= 0

    def test_denied_replan_downgrades(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        text = small_bank.entry("rc_time_constant").text
        r = req(text, requested_hint=HintLevel.L3, justification="j")
        held = router.plan(r)
        router.admin_decide_approval(held.approval_id, "denied")
        r.approval_id = held.approval_id
        plan = router.plan(r)
        assert plan.granted_hint is HintLevel.L2
        assert "approval_denied" in plan.route_why

    def test_sync_resolver_skips_hold(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        router.approval_resolver = lambda r: ("approved", r.enqueued_at + 8.0)
        plan = router.plan(
            req(small_bank.entry("rc_time_constant").text, requested_hint=HintLevel.L3, justification="j")
        )
        assert not plan.requires_approval
        assert plan.granted_hint is HintLevel.L3
        assert plan.wait_ms == 8000


class TestBudgetIntegration:
    def test_denial_downgrades_to_local(self, make_router, small_bank):
        from dataclasses import replace

        policy = replace(default_policy(PolicyMode.P1), total_budget_micro=100)
        router = make_router(policy=policy)
        text = small_bank.entry("led_forward_voltage").text  # premium-preferred
        plan = router.plan(req(text, lab="led_iv"))
        assert plan.model_id == LOCAL_MODEL
        assert plan.fallback
        assert "budget" in plan.route_why

    def test_exhausted_budget_floors_hint(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        budget = router.budget("s1", "rc_step")
        budget.spent_micro = budget.total_budget_micro
        plan = router.plan(req(small_bank.entry("rc_time_constant").text))
        assert plan.granted_hint is HintLevel.L0
        assert "budget_exhausted" in plan.route_why

    def test_commit_records_actual_cost(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        r = req(small_bank.entry("rc_time_constant").text)
        plan = router.plan(r)
        router.commit(plan, r, 42)
        assert router.budget("s1", "rc_step").spent_micro == 42

    def test_rollback_restores(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        r = req(small_bank.entry("rc_time_constant").text)
        plan = router.plan(r)
        router.rollback(plan, r)
        b = router.budget("s1", "rc_step")
        assert b.spent_micro == 0 and b.reserved_micro == 0


class TestStickiness:
    def test_carry_within_ttl(self, make_router, small_bank, clock):
        router = make_router(PolicyMode.P1)
        first = router.plan(req(small_bank.entry("rc_time_constant").text, turn_index=1))
        clock["t"] += 60  # well inside the 300 s hold
        second = router.plan(
            req(
                "hmm that still is not working for me",
                turn_index=2,
                prior_canonical_id="rc_time_constant",
            )
        )
        assert second.canonical_reason == "sticky:carry"
        assert second.canonical_ids == ["rc_time_constant"]
        assert second.model_id == first.model_id

    def test_no_carry_without_hold(self, make_router, small_bank):
        router = make_router(PolicyMode.P0)  # no stickiness TTL
        router.plan(req(small_bank.entry("rc_time_constant").text, turn_index=1))
        second = router.plan(
            req("hmm that still is not working", turn_index=2, prior_canonical_id="rc_time_constant")
        )
        assert second.canonical_ids == []
        assert second.canonical_reason == ""

    def test_grace_turn_after_hold_lapses(self, make_router, small_bank, clock):
        router = make_router(PolicyMode.P1)
        router.plan(req(small_bank.entry("rc_time_constant").text, turn_index=1))
        clock["t"] += 400  # hold lapsed
        second = router.plan(
            req("hmm that still is not working", turn_index=2, prior_canonical_id="rc_time_constant")
        )
        assert second.canonical_reason == "sticky:grace"
        clock["t"] += 400
        third = router.plan(
            req("hmm that still is not working", turn_index=3, prior_canonical_id="rc_time_constant")
        )
        assert third.canonical_ids == []  # grace is single-use

    def test_boost_overrides_one_turn(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        text = small_bank.entry("rc_time_constant").text
        action_id = router.admin_boost("s1")
        boosted = router.plan(req(text, turn_index=1))
        assert boosted.model_id == PREMIUM_MODEL
        assert boosted.teacher_boost
        assert action_id in boosted.action_ids
        after = router.plan(req(text, turn_index=2))
        assert after.model_id == LOCAL_MODEL and not after.teacher_boost

    def test_freeze_pins_model(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        router.admin_freeze("s1", LOCAL_MODEL, ttl_turns=2)
        text = small_bank.entry("led_forward_voltage").text  # premium-preferred
        plans = [router.plan(req(text, lab="led_iv", turn_index=i)) for i in (1, 2, 3)]
        assert [p.model_id for p in plans] == [LOCAL_MODEL, LOCAL_MODEL, PREMIUM_MODEL]
        assert "freeze" in plans[0].route_why

    def test_freeze_ignored_under_p0(self, make_router):
        router = make_router(PolicyMode.P0)
        assert router.admin_freeze("s1", LOCAL_MODEL, ttl_turns=3) is None
        assert any(a["kind"] == "freeze_ignored" for a in router.audit_log)

    def test_reset_session_state_clears_carry(self, make_router, small_bank, clock):
        router = make_router(PolicyMode.P1)
        router.plan(req(small_bank.entry("rc_time_constant").text, turn_index=1))
        router.reset_session_state()
        second = router.plan(
            req("hmm still broken", turn_index=2, prior_canonical_id="rc_time_constant")
        )
        assert second.canonical_ids == []


class TestIntegrity:
    def test_three_flags_throttle_under_p2(self, make_router, small_bank):
        router = make_router(PolicyMode.P2)
        text = small_bank.entry("rc_time_constant").text
        plans = [
            router.plan(req(text, turn_index=i, integrity_flag=True)) for i in (1, 2, 3)
        ]
        assert plans[0].route_why != "integrity_throttle"
        assert plans[2].route_why == "integrity_throttle"
        assert plans[2].granted_hint is HintLevel.L0
        assert plans[2].model_id == LOCAL_MODEL

    def test_flags_never_throttle_under_p1(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        text = small_bank.entry("rc_time_constant").text
        plans = [
            router.plan(req(text, turn_index=i, integrity_flag=True)) for i in range(1, 6)
        ]
        assert all(p.route_why != "integrity_throttle" for p in plans)


class TestAdmin:
    def test_policy_update_applies_atomically(self, make_router):
        router = make_router(PolicyMode.P1)
        new_policy = default_policy(PolicyMode.P2)
        action_id = router.admin_update_policy(new_policy)
        assert router.policy.mode is PolicyMode.P2
        assert action_id is not None
        plan = router.plan(req("what units is capacitance in"))
        assert action_id in plan.action_ids
        assert plan.policy_hash == new_policy.policy_hash()

    def test_overlay_swap_enforced_registers_action(self, make_router):
        router = make_router(PolicyMode.P1)
        action_id = router.admin_swap_overlay("diagnostic")
        assert action_id is not None
        assert router.policy.default_overlay_id == "diagnostic"

    def test_overlay_swap_unenforced_is_audit_only(self, make_router):
        router = make_router(PolicyMode.P0)
        assert router.admin_swap_overlay("diagnostic") is None

    def test_plan_latency_budget(self, make_router, small_bank):
        router = make_router(PolicyMode.P1)
        plan = router.plan(req(small_bank.entry("rc_time_constant").text))
        assert plan.plan_ms < 150


class TestEmptyBank:
    def test_plan_without_bank_is_heuristic_only(self, make_router):
        router = make_router(bank=Bank([]))
        plan = router.plan(req("what units is capacitance in"))
        assert plan.canonical_ids == [] and plan.fallback
