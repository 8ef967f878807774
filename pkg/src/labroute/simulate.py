"""Sweep runner: execute synthetic lab sessions through the full stack.

Every job wires up a real RouterCore + GatewayCore with mock backends and a
simulated clock, replays a generated workload through them, and reduces the
resulting telemetry to one metric row. Jobs are identified by a hash of
their configuration and are bit-reproducible: reruns yield identical
summary rows and manifests.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .bank import Bank, load_bank, mock_provider
from .core import (
    HintLevel,
    LabDescriptor,
    PolicyMode,
    PriceBook,
    Tier,
    load_lab_descriptor,
    load_price_book,
)
from .gateway import GatewayCore, MockBackend
from .governance import default_policy
from .metrics import MetricReport, compute_report
from .overlays import OverlayConfig, load_overlays
from .router import ModelCatalog, RouterCore, RouterConfig
from .telemetry import TeacherAction, TraceStore
from .workload import (
    EscalationModel,
    IntegrityScenario,
    JUSTIFICATION_TEXT,
    QueryTemplates,
    WorkloadConfig,
    generate_workload,
)

REPO_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG_DIR = REPO_ROOT / "configs"

LOCAL_MODEL = "openai/gpt-oss-20b"
PREMIUM_MODEL = "openai/gpt-5-mini"

# Provider lineup for the embedding ablation: in-process the mock provider is
# shared, so providers differ by a score-degradation factor modeling encoder
# mismatch with the vectors that seeded the bank.
EMBEDDING_SCALES = {
    "mpnet": 1.0,
    "e5": 0.995,
    "minilm": 0.98,
    "fastembed_edge": 0.82,
}

# Mock-backend guardrail compliance rates, the OAS calibration knob: overlay
# enforcement (P1) and enforcement plus approvals culture (P2) raise
# adherence relative to the unenforced baseline.
COMPLIANCE_RATES = {"P0": 0.69, "P1": 0.84, "P2": 0.875}
LENIENT_COMPLIANCE_PENALTY = 0.03

OVERLAY_BY_MODE = {"strict": "socratic_troubleshoot", "lenient": "socratic_lenient"}

# Non-compliant replies blurt a complete final answer for the lab.
ANSWER_LEAKS = {
    "rc_step": "Here you go: tau = 4.7 ms and R = 2.2 kohm, so you are done.",
    "led_iv": "Here you go: V_f = 1.92 V for your device, so you are done.",
}
COMPLIANT_REPLY = (
    "Look at the segment right after the transition: which direction does it move, "
    "and what would you predict from the component values you wrote down? "
    "Check that prediction against one cursor measurement before changing anything."
)
PREMIUM_PADDING = (
    " Walk through each block in signal order and note what evidence you have that "
    "it behaves as expected; rank the unverified ones by how cheaply you can test them."
)


@dataclass(frozen=True)
class JobConfig:
    lab_id: str
    policy: str
    overlay_mode: str = "strict"
    seed: int = 0
    embedding: str = "mpnet"  # "off" or a provider name
    cache_ttl_seconds: float = 300.0
    top_k: int = 3
    start: str = "cold"
    students: int = 20
    session_minutes: float = 45.0
    arrival_scale: float = 2.0
    sensitivity_pct: float = 0.0

    def job_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class SimResources:
    labs: dict[str, LabDescriptor]
    bank: Bank
    overlays: OverlayConfig
    prices: PriceBook
    catalog: ModelCatalog


def load_resources(
    config_dir: Path | str = DEFAULT_CONFIG_DIR,
    bank_path: Path | str | None = None,
) -> SimResources:
    config_dir = Path(config_dir)
    labs = {}
    for path in sorted((config_dir / "labs").glob("*.yaml")):
        lab = load_lab_descriptor(path)
        labs[lab.lab_id] = lab
    provider = mock_provider(seed=7)
    bank = load_bank(bank_path or config_dir / "banks" / "sim_bank_3.json", provider)
    return SimResources(
        labs=labs,
        bank=bank,
        overlays=load_overlays(config_dir / "overlays.yaml"),
        prices=load_price_book(config_dir / "prices.yaml"),
        catalog=ModelCatalog(
            tiers={LOCAL_MODEL: Tier.LOCAL, PREMIUM_MODEL: Tier.PREMIUM},
            local_default=LOCAL_MODEL,
            premium_default=PREMIUM_MODEL,
        ),
    )


@dataclass
class JobResult:
    job: JobConfig
    report: MetricReport
    events: list[dict]
    actions: list[TeacherAction]
    summary: dict = field(default_factory=dict)


def _sensitivity(value: float, pct: float, seed: int) -> float:
    """Perturb a calibration parameter by +-pct%, direction fixed by seed."""
    if pct == 0.0:
        return value
    sign = 1.0 if seed % 2 == 0 else -1.0
    return value * (1.0 + sign * pct / 100.0)


def _percentile(values: list[float], q: float) -> float | None:
    if not values:
        return None
    ordered = sorted(values)
    idx = min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))
    return ordered[idx]


def run_job(
    job: JobConfig,
    resources: SimResources,
    trace_path: Path | None = None,
    store_events: bool = True,
) -> JobResult:
    lab = resources.labs[job.lab_id]
    mode = PolicyMode.parse(job.policy)
    policy = replace(
        default_policy(mode), default_overlay_id=OVERLAY_BY_MODE[job.overlay_mode]
    )
    now = [0.0]  # simulated epoch seconds; single-threaded within a job
    router = RouterCore(
        policy=policy,
        bank=resources.bank,
        provider=mock_provider(seed=7),
        prices=resources.prices,
        labs=resources.labs,
        catalog=resources.catalog,
        config=RouterConfig(
            embedding_enabled=job.embedding != "off",
            score_scale=EMBEDDING_SCALES.get(job.embedding, 1.0),
            top_k=job.top_k,
            cache_ttl_seconds=job.cache_ttl_seconds,
        ),
        clock=lambda: now[0],
    )

    compliance = _sensitivity(
        COMPLIANCE_RATES[mode.value], job.sensitivity_pct, job.seed
    )
    if job.overlay_mode == "lenient":
        compliance -= LENIENT_COMPLIANCE_PENALTY
    current = {"index": 0}

    def respond_for(model_id: str):
        def respond(messages):
            draw = random.Random(f"{job.seed}:compliance:{current['index']}").random()
            if draw < compliance:
                text = COMPLIANT_REPLY
            else:
                text = ANSWER_LEAKS[job.lab_id]
            if model_id == PREMIUM_MODEL:
                text += PREMIUM_PADDING * 2
            return text

        return respond

    backends = {
        LOCAL_MODEL: MockBackend(LOCAL_MODEL, respond=respond_for(LOCAL_MODEL)),
        PREMIUM_MODEL: MockBackend(PREMIUM_MODEL, respond=respond_for(PREMIUM_MODEL)),
    }
    store = TraceStore(trace_path) if trace_path else TraceStore(path=None)
    gateway = GatewayCore(
        router, backends, resources.overlays, resources.prices, store,
        clock=lambda: now[0],
    )

    escalation = EscalationModel(
        gated_escalation_prob=min(
            1.0, _sensitivity(0.63, job.sensitivity_pct, job.seed)
        )
    )
    workload_config = WorkloadConfig(
        lab=lab,
        students=job.students,
        session_minutes=job.session_minutes,
        arrival_scale=job.arrival_scale,
    )
    schedule = generate_workload(
        workload_config, QueryTemplates.from_bank(resources.bank), job.seed,
        scenario=IntegrityScenario(),
    )

    actions: list[TeacherAction] = []
    events_logged = [0]
    rng_escalation = random.Random(f"{job.seed}:escalation")
    rng_approval = random.Random(f"{job.seed}:approval")
    rng_teacher = random.Random(f"{job.seed}:teacher")

    approvals_enqueued = [0]
    approval_waits_ms: list[float] = []

    def approval_resolver(req):
        approvals_enqueued[0] += 1
        service_s = rng_approval.expovariate(1.0 / policy.approval_mean_service_s)
        decided_at = router.approvals.schedule_service(req.approval_id, service_s)
        approved = rng_approval.random() < policy.approval_approve_prob
        # The decision is an instructor action; it is stamped onto the turn
        # it releases, which is the very next event in the trace.
        action_id = router._new_action_id()
        router.session(req.session_id).pending_action_ids.append(action_id)
        actions.append(
            TeacherAction(
                action_id, "approval_decision", req.session_id,
                t_turn=events_logged[0],
            )
        )
        approval_waits_ms.append((decided_at - req.enqueued_at) * 1000.0)
        return ("approved" if approved else "denied"), decided_at

    router.approval_resolver = approval_resolver

    if job.start == "warm":
        # Pre-populate the match cache and stickiness holds from a seed pass.
        for entry in resources.bank.entries.values():
            resources.bank.match(
                entry.text, router.provider, tau=router.config.tau,
                top_k=job.top_k, cache=router.cache,
                score_scale=router.config.score_scale,
            )
    else:
        router.reset_session_state()

    # Scripted instructor activity: periodic boosts and freezes spread over
    # sessions; freezes under P0 are attempted and audited but unenforced.
    teacher_interval = max(12, len(schedule) // 10)
    session_ids = sorted({e.session_id for e in schedule})

    session_state: dict[str, dict] = {
        s: {"prev": HintLevel.L1, "unanswered": 0} for s in session_ids
    }
    integrity_blocks = 0
    total_cost_micro = 0

    for index, scheduled in enumerate(schedule):
        now[0] = scheduled.t_s
        current["index"] = index
        st = session_state[scheduled.session_id]
        requested = escalation.next_request(st["prev"], st["unanswered"], rng_escalation)
        justification = (
            JUSTIFICATION_TEXT
            if requested is HintLevel.L3 and scheduled.has_justification
            else ""
        )
        result = gateway.chat(
            session_id=scheduled.session_id,
            lab_id=job.lab_id,
            step_id=scheduled.step_id,
            messages=[{"role": "user", "content": scheduled.query_text}],
            requested_hint=requested,
            justification=justification,
            integrity_flag=scheduled.integrity_flag,
            cohort_id=scheduled.cohort_id,
            seed=job.seed,
        )
        events_logged[0] += 1
        granted = HintLevel.parse(result.event["hint_granted"])
        st["prev"] = requested
        st["unanswered"] = st["unanswered"] + 1 if granted < requested else 0
        if result.event["route_why"] == "integrity_throttle":
            integrity_blocks += 1
        total_cost_micro += result.event["est_cost_micro"]

        if (index + 1) % teacher_interval == 0:
            target = session_ids[rng_teacher.randrange(len(session_ids))]
            kind = ("boost", "freeze")[(index // teacher_interval) % 2]
            if kind == "boost":
                action_id = router.admin_boost(target)
            else:
                action_id = router.admin_freeze(target, LOCAL_MODEL, ttl_turns=3)
            if action_id is not None:
                actions.append(
                    TeacherAction(action_id, kind, target, t_turn=events_logged[0])
                )

    events = store.read()
    report = compute_report(
        events, {job.lab_id: lab}, tau=router.config.tau, actions=actions
    )
    denied = sum(1 for r in router.approvals.all_requests() if r.decision == "denied")
    budgets = router.budgets()
    summary = {
        "job_hash": job.job_hash(),
        "lab": job.lab_id,
        "policy": job.policy,
        "overlay_mode": job.overlay_mode,
        "seed": job.seed,
        "embedding": job.embedding,
        "cache_ttl_seconds": job.cache_ttl_seconds,
        "top_k": job.top_k,
        "start": job.start,
        "policy_hash": policy.policy_hash(),
        "events": len(events),
        "cost_micro": total_cost_micro,
        "l3_grants": sum(1 for e in events if e["hint_granted"] == "L3"),
        "approvals": approvals_enqueued[0],
        "denials": denied,
        "integrity_blocks": integrity_blocks,
        "max_spend_micro": max((b.spent_micro for b in budgets), default=0),
        "max_l3_per_budget": max((b.l3_granted_count for b in budgets), default=0),
        "approval_wait_p95_ms": (
            f"{_percentile(approval_waits_ms, 0.95):.3f}" if approval_waits_ms else ""
        ),
    }
    summary.update(report.as_row())
    return JobResult(
        job=job,
        report=report,
        events=events if store_events else [],
        actions=actions,
        summary=summary,
    )


def build_jobs(spec: dict) -> list[JobConfig]:
    """Expand a sweep spec into the base grid plus one-factor ablations."""
    defaults = spec.get("defaults", {})
    common = dict(
        students=int(defaults.get("students", 20)),
        session_minutes=float(defaults.get("session_minutes", 45.0)),
        embedding=defaults.get("embedding", "mpnet"),
        cache_ttl_seconds=float(defaults.get("cache_ttl_seconds", 300.0)),
        top_k=int(defaults.get("top_k", 3)),
        start=defaults.get("start", "cold"),
    )
    jobs: list[JobConfig] = []
    for lab in spec["labs"]:
        for policy in spec["policies"]:
            for overlay_mode in spec["overlay_modes"]:
                for seed in spec["seeds"]:
                    jobs.append(
                        JobConfig(
                            lab_id=lab, policy=policy, overlay_mode=overlay_mode,
                            seed=seed, **common,
                        )
                    )
    ablations = spec.get("ablations", {})
    key_map = {
        "embedding": "embedding",
        "cache_ttl_seconds": "cache_ttl_seconds",
        "top_k": "top_k",
        "start": "start",
    }
    seen = {j.job_hash() for j in jobs}
    for axis, values in ablations.items():
        key = key_map[axis]
        for value in values:
            for lab in spec["labs"]:
                for seed in spec["seeds"]:
                    overrides = dict(common)
                    if value is False:
                        # YAML 1.1 reads a bare `off` as boolean false.
                        value = "off"
                    overrides[key] = (
                        float(value) if key == "cache_ttl_seconds"
                        else int(value) if key == "top_k"
                        else str(value)
                    )
                    job = JobConfig(
                        lab_id=lab, policy="P1", overlay_mode="strict",
                        seed=seed, **overrides,
                    )
                    if job.job_hash() not in seen:
                        seen.add(job.job_hash())
                        jobs.append(job)
    return jobs


def run_sweep(
    spec: dict,
    out_dir: Path | str,
    resources: SimResources | None = None,
    sensitivity_pct: float = 0.0,
    max_workers: int = 1,
    write_traces: bool = True,
) -> list[JobResult]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resources is None:
        bank_path = spec.get("bank")
        bank_path = (REPO_ROOT / bank_path) if bank_path else None
        resources = load_resources(bank_path=bank_path)
    jobs = build_jobs(spec)
    if sensitivity_pct:
        jobs = [replace(j, sensitivity_pct=sensitivity_pct) for j in jobs]
    trace_dir = out_dir / "traces"
    if write_traces:
        trace_dir.mkdir(exist_ok=True)

    def execute(job: JobConfig) -> JobResult:
        path = trace_dir / f"{job.job_hash()}.jsonl" if write_traces else None
        if path is not None and path.exists():
            path.unlink()
        return run_job(job, resources, trace_path=path, store_events=False)

    if max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(execute, jobs))
    else:
        results = [execute(job) for job in jobs]

    rows = [r.summary for r in results]
    fieldnames = list(rows[0].keys()) if rows else []
    with open(out_dir / "summary.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    manifest = {
        "spec": spec,
        "sensitivity_pct": sensitivity_pct,
        "job_count": len(jobs),
        "jobs": [
            {
                "job_hash": r.summary["job_hash"],
                "seed": r.summary["seed"],
                "policy_hash": r.summary["policy_hash"],
                "row": r.summary,
            }
            for r in results
        ],
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return results


def crg_between(rows: list[dict], embedding: str = "mpnet") -> float | None:
    """Cost reduction of embedding-matched routing vs the heuristic-only
    rows, paired over (lab, seed) P1 strict cells."""
    embed_cost = heur_cost = 0
    pairs = 0
    by_key = {}
    for row in rows:
        if row["policy"] != "P1" or row["overlay_mode"] != "strict":
            continue
        by_key[(row["lab"], row["seed"], row["embedding"])] = int(row["cost_micro"])
    for (lab, seed, emb), cost in by_key.items():
        if emb != embedding:
            continue
        off = by_key.get((lab, seed, "off"))
        if off is None:
            continue
        embed_cost += cost
        heur_cost += off
        pairs += 1
    if pairs == 0 or heur_cost == 0:
        return None
    return (heur_cost - embed_cost) / heur_cost
