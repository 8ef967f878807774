"""Fixed 100-query replay across direct-premium, direct-local, and routed paths.

The workload is generated deterministically from the shipped 89-entry demo
bank, so every query matches its source intent verbatim. Latencies and token
counts come from a frozen profile fixture (recorded, never slept); only the
routed path exercises the real planner, whose measured wall time is charged
on top of the profiled routing overhead.
"""

from __future__ import annotations

import csv
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bank import Bank, load_bank, mock_provider
from .core import (
    HintLevel,
    PriceBook,
    Tier,
    load_lab_descriptor,
    load_price_book,
    token_cost,
)
from .governance import default_policy, PolicyMode
from .metrics import MetricValue, chr_metric, fcr, routing_correctness
from .router import ModelCatalog, RouteRequest, RouterConfig, RouterCore

REPO_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_BANK = REPO_ROOT / "configs" / "banks" / "demo_bank_89.json"
DEFAULT_PROFILES = REPO_ROOT / "configs" / "replay" / "profiles.yaml"

LOCAL_MODEL = "openai/gpt-oss-20b"
PREMIUM_MODEL = "openai/gpt-5-mini"
TAU = 0.82

# (lab, bucket) -> number of queries; totals 60 RC-step + 40 LED I-V.
COMPOSITION = {
    ("rc_step", "easy"): 20,
    ("rc_step", "moderate"): 25,
    ("rc_step", "advanced"): 15,
    ("led_iv", "easy"): 15,
    ("led_iv", "moderate"): 15,
    ("led_iv", "advanced"): 10,
}

# The right tier for a difficulty bucket, against which routed tiers are
# scored: routine work belongs on the local model, advanced diagnosis on
# the premium one.
IDEAL_TIER = {"easy": Tier.LOCAL, "moderate": Tier.LOCAL, "advanced": Tier.PREMIUM}


@dataclass(frozen=True)
class ReplayQuery:
    text: str
    lab_id: str
    bucket: str
    canonical_id: str
    preferred_tier: Tier


@dataclass
class QueryRecord:
    query: ReplayQuery
    model_id: str
    tier: Tier
    cost_usd: float
    plan_ms: float
    ttft_ms: float
    total_ms: float
    canonical_ids: list[str]
    canonical_scores: list[float]
    canonical_reason: str
    fallback: bool

    def as_row(self) -> dict:
        return {
            "lab": self.query.lab_id,
            "bucket": self.query.bucket,
            "canonical_id": self.query.canonical_id,
            "model": self.model_id,
            "tier": self.tier.value,
            "cost_usd": f"{self.cost_usd:.6f}",
            "plan_ms": f"{self.plan_ms:.3f}",
            "ttft_ms": f"{self.ttft_ms:.3f}",
            "total_ms": f"{self.total_ms:.3f}",
            "matched_ids": ",".join(self.canonical_ids),
            "fallback": self.fallback,
        }


@dataclass
class ReplayReport:
    path: str
    records: list[QueryRecord]
    chr: MetricValue | None = None
    fcr: MetricValue | None = None
    correctness: dict[str, MetricValue] = field(default_factory=dict)

    @property
    def total_cost_usd(self) -> float:
        return sum(r.cost_usd for r in self.records)

    @property
    def mean_total_ms(self) -> float:
        return sum(r.total_ms for r in self.records) / len(self.records)

    @property
    def mean_ttft_ms(self) -> float:
        return sum(r.ttft_ms for r in self.records) / len(self.records)

    @property
    def mean_plan_ms(self) -> float:
        return sum(r.plan_ms for r in self.records) / len(self.records)

    def tier_share(self, tier: Tier) -> float:
        return sum(1 for r in self.records if r.tier is tier) / len(self.records)


def load_profiles(path: Path | str = DEFAULT_PROFILES) -> dict:
    with open(path) as f:
        return yaml.safe_load(f)


def _entries_by_group(bank: Bank) -> dict[tuple[str, str], list]:
    groups: dict[tuple[str, str], list] = {}
    for entry in bank.entries.values():
        lab = next(t[4:] for t in entry.tags if t.startswith("lab:"))
        bucket = next(t[11:] for t in entry.tags if t.startswith("difficulty:"))
        groups.setdefault((lab, bucket), []).append(entry)
    for entries in groups.values():
        entries.sort(key=lambda e: e.id)
    return groups


def build_workload(bank: Bank, seed: int = 17) -> list[ReplayQuery]:
    """100 queries, each the verbatim text of a bank entry.

    Every group uses all of its intents once; the remainder re-asks intents
    whose curated tier agrees with the bucket's ideal, so reuse never skews
    the correctness tables.
    """
    groups = _entries_by_group(bank)
    queries: list[ReplayQuery] = []
    for (lab, bucket), count in COMPOSITION.items():
        entries = groups.get((lab, bucket), [])
        if len(entries) > count:
            raise ValueError(f"group {(lab, bucket)} larger than its query quota")
        chosen = list(entries)
        ideal_model = (
            LOCAL_MODEL if IDEAL_TIER[bucket] is Tier.LOCAL else PREMIUM_MODEL
        )
        reusable = [e for e in entries if e.preferred_model == ideal_model]
        i = 0
        while len(chosen) < count:
            chosen.append(reusable[i % len(reusable)])
            i += 1
        for entry in chosen:
            queries.append(
                ReplayQuery(
                    text=entry.text,
                    lab_id=lab,
                    bucket=bucket,
                    canonical_id=entry.id,
                    preferred_tier=IDEAL_TIER[bucket],
                )
            )
    random.Random(seed).shuffle(queries)
    return queries


def _build_router(bank: Bank, prices: PriceBook, labs: dict) -> RouterCore:
    return RouterCore(
        policy=default_policy(PolicyMode.P1),
        bank=bank,
        provider=mock_provider(seed=7),
        prices=prices,
        labs=labs,
        catalog=ModelCatalog(
            tiers={LOCAL_MODEL: Tier.LOCAL, PREMIUM_MODEL: Tier.PREMIUM},
            local_default=LOCAL_MODEL,
            premium_default=PREMIUM_MODEL,
        ),
        config=RouterConfig(),
    )


def replay(
    workload: list[ReplayQuery],
    path: str,
    bank: Bank,
    prices: PriceBook,
    labs: dict,
    profiles: dict | None = None,
) -> ReplayReport:
    """Run one path over the workload using the frozen mock profiles."""
    if path not in ("premium", "local", "routed"):
        raise ValueError(f"unknown replay path: {path}")
    profiles = profiles or load_profiles()
    overhead_ms = profiles["routing"]["overhead_ms"]
    router = _build_router(bank, prices, labs) if path == "routed" else None

    records: list[QueryRecord] = []
    for i, q in enumerate(workload):
        plan_ms = 0.0
        canonical_ids: list[str] = []
        canonical_scores: list[float] = []
        canonical_reason = ""
        fallback_flag = False
        if path == "premium":
            model_id, tier = PREMIUM_MODEL, Tier.PREMIUM
        elif path == "local":
            model_id, tier = LOCAL_MODEL, Tier.LOCAL
        else:
            started = time.perf_counter()
            plan = router.plan(
                RouteRequest(
                    session_id=f"replay-{i:03d}",
                    lab_id=q.lab_id,
                    step_id="troubleshoot",
                    query_text=q.text,
                    requested_hint=HintLevel.L1,
                )
            )
            measured_ms = (time.perf_counter() - started) * 1000.0
            plan_ms = overhead_ms + measured_ms
            model_id, tier = plan.model_id, plan.tier
            canonical_ids = plan.canonical_ids
            canonical_scores = plan.canonical_scores
            canonical_reason = plan.canonical_reason
            fallback_flag = plan.fallback
        tier_key = tier.value
        cost = token_cost(
            model_id,
            profiles[tier_key]["input_tokens"][q.bucket],
            profiles[tier_key]["output_tokens"][q.bucket],
            prices,
        )
        backend_ttft = profiles[tier_key]["ttft_ms"]
        records.append(
            QueryRecord(
                query=q,
                model_id=model_id,
                tier=tier,
                cost_usd=cost,
                plan_ms=plan_ms,
                ttft_ms=plan_ms + backend_ttft,
                total_ms=plan_ms + profiles[tier_key]["total_ms"][q.bucket],
                canonical_ids=canonical_ids,
                canonical_scores=canonical_scores,
                canonical_reason=canonical_reason,
                fallback=fallback_flag,
            )
        )

    report = ReplayReport(path=path, records=records)
    if path == "routed":
        pseudo_events = [
            {
                "canonical_scores": r.canonical_scores,
                "canonical_reason": r.canonical_reason,
                "fallback": r.fallback,
            }
            for r in records
        ]
        report.chr = chr_metric(pseudo_events, TAU)
        report.fcr = fcr(pseudo_events, TAU)
        report.correctness = routing_correctness(
            (r.query.bucket, r.tier.value, r.query.preferred_tier.value)
            for r in records
        )
    return report


def run_all(
    bank_path: Path | str = DEFAULT_BANK,
    profiles_path: Path | str = DEFAULT_PROFILES,
    config_dir: Path | str = REPO_ROOT / "configs",
    paths: tuple[str, ...] = ("premium", "local", "routed"),
    seed: int = 17,
) -> dict[str, ReplayReport]:
    config_dir = Path(config_dir)
    bank = load_bank(bank_path, mock_provider(seed=7))
    prices = load_price_book(config_dir / "prices.yaml")
    labs = {}
    for lab_file in sorted((config_dir / "labs").glob("*.yaml")):
        lab = load_lab_descriptor(lab_file)
        labs[lab.lab_id] = lab
    profiles = load_profiles(profiles_path)
    workload = build_workload(bank, seed=seed)
    return {p: replay(workload, p, bank, prices, labs, profiles) for p in paths}


def write_report(reports: dict[str, ReplayReport], out_dir: Path | str) -> None:
    """Emit per-query traces, summary CSVs, and plot-ready series files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for name, report in reports.items():
        with open(out_dir / f"trace_{name}.jsonl", "w") as f:
            for r in report.records:
                f.write(json.dumps(r.as_row(), sort_keys=True) + "\n")

    premium = reports.get("premium")
    with open(out_dir / "cost.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "total_cost_usd", "savings_vs_premium"])
        for name, report in reports.items():
            savings = (
                1.0 - report.total_cost_usd / premium.total_cost_usd
                if premium and premium.total_cost_usd
                else ""
            )
            writer.writerow(
                [
                    name,
                    f"{report.total_cost_usd:.6f}",
                    f"{savings:.6f}" if savings != "" else "",
                ]
            )

    with open(out_dir / "latency.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["path", "mean_total_ms", "mean_ttft_ms", "mean_plan_ms", "local_share"]
        )
        for name, report in reports.items():
            writer.writerow(
                [
                    name,
                    f"{report.mean_total_ms:.3f}",
                    f"{report.mean_ttft_ms:.3f}",
                    f"{report.mean_plan_ms:.3f}",
                    f"{report.tier_share(Tier.LOCAL):.4f}",
                ]
            )

    with open(out_dir / "ttft_decomposition.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "index", "plan_ms", "backend_ttft_ms", "ttft_ms"])
        for name, report in reports.items():
            for i, r in enumerate(report.records):
                writer.writerow(
                    [
                        name,
                        i,
                        f"{r.plan_ms:.3f}",
                        f"{r.ttft_ms - r.plan_ms:.3f}",
                        f"{r.ttft_ms:.3f}",
                    ]
                )

    routed = reports.get("routed")
    if routed is not None and routed.correctness:
        with open(out_dir / "correctness.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bucket", "correctness", "n"])
            for bucket in ("easy", "moderate", "advanced"):
                m = routed.correctness[bucket]
                writer.writerow([bucket, f"{m.value:.6f}", int(m.denominator)])

    series = {
        name: {
            "total_cost_usd": report.total_cost_usd,
            "mean_total_ms": report.mean_total_ms,
            "mean_ttft_ms": report.mean_ttft_ms,
            "tier_share_local": report.tier_share(Tier.LOCAL),
        }
        for name, report in reports.items()
    }
    if routed is not None and routed.chr is not None:
        series["routed"]["chr"] = routed.chr.value
        series["routed"]["fcr"] = routed.fcr.value
        series["routed"]["correctness"] = {
            b: m.value for b, m in routed.correctness.items()
        }
    with open(out_dir / "plot_series.json", "w") as f:
        json.dump(series, f, indent=2, sort_keys=True)
