"""Shared vocabulary types: hint levels, policy modes, tiers, labs, prices.

Currency is held as integer micro-dollars everywhere internally; conversion
to USD happens only at presentation boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import yaml

DIST_TOL = 1e-9


class ConfigError(Exception):
    """Raised for invalid or missing configuration (unknown model, bad file)."""


class HintLevel(enum.IntEnum):
    """Assistance granularity, totally ordered L0 < L1 < L2 < L3."""

    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3

    @property
    def is_high_scaffold(self) -> bool:
        return self >= HintLevel.L2

    @classmethod
    def parse(cls, value: "str | int | HintLevel") -> "HintLevel":
        if isinstance(value, HintLevel):
            return value
        if isinstance(value, int):
            return cls(value)
        name = value.strip().upper()
        if name in cls.__members__:
            return cls[name]
        raise ValueError(f"unknown hint level: {value!r}")

    def __str__(self) -> str:  # serialized form is "L0".."L3"
        return self.name


class PolicyMode(str, enum.Enum):
    """Governance profile: ungoverned, governed, integrity-focused."""

    P0 = "P0"
    P1 = "P1"
    P2 = "P2"

    @classmethod
    def parse(cls, value: "str | PolicyMode") -> "PolicyMode":
        if isinstance(value, PolicyMode):
            return value
        name = value.strip().upper()
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown policy mode: {value!r}") from None


class Tier(str, enum.Enum):
    LOCAL = "local"
    PREMIUM = "premium"


@dataclass(frozen=True)
class ModelTier:
    tier: Tier
    model_id: str


@dataclass
class StepDescriptor:
    """One lab step with difficulty weight and a target hint distribution."""

    step_id: str
    difficulty: int
    target_hint_dist: tuple[float, float, float, float]


@dataclass
class LabDescriptor:
    lab_id: str
    steps: list[StepDescriptor]
    phases: list[tuple[str, float]] = field(default_factory=list)  # (name, req/min)

    def step(self, step_id: str) -> StepDescriptor:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)


def validate_lab_descriptor(lab: LabDescriptor) -> list[str]:
    """Return rule violations as strings; empty list means the lab is valid."""
    violations: list[str] = []
    if not lab.lab_id:
        violations.append("lab_id: must be non-empty")
    if not lab.steps:
        violations.append("steps: must declare at least one step")
    seen: set[str] = set()
    for s in lab.steps:
        where = f"steps[{s.step_id}]"
        if s.step_id in seen:
            violations.append(f"{where}.step_id: duplicate")
        seen.add(s.step_id)
        if s.difficulty not in (1, 2, 3):
            violations.append(f"{where}.difficulty: must be 1, 2, or 3 (got {s.difficulty})")
        dist = s.target_hint_dist
        if len(dist) != 4:
            violations.append(f"{where}.target_hint_dist: must have 4 components")
            continue
        if any(p < 0 or p > 1 for p in dist):
            violations.append(f"{where}.target_hint_dist: components must be in [0,1]")
        if abs(sum(dist) - 1.0) > DIST_TOL:
            violations.append(
                f"{where}.target_hint_dist: must sum to 1 (got {sum(dist):.6f})"
            )
    for name, rate in lab.phases:
        if rate <= 0:
            violations.append(f"phases[{name}].arrival_rate: must be > 0")
    return violations


@dataclass(frozen=True)
class ModelPrice:
    input_usd_per_mtok: float
    output_usd_per_mtok: float


@dataclass
class PriceBook:
    """Per-model token prices; the local tier is priced at zero by default."""

    prices: dict[str, ModelPrice]

    def __post_init__(self) -> None:
        for model_id, p in self.prices.items():
            if p.input_usd_per_mtok < 0 or p.output_usd_per_mtok < 0:
                raise ConfigError(f"negative price for model {model_id}")

    def price(self, model_id: str) -> ModelPrice:
        try:
            return self.prices[model_id]
        except KeyError:
            raise ConfigError(f"model not in price book: {model_id}") from None


def token_cost(
    model_id: str, input_tokens: int, output_tokens: int, prices: PriceBook
) -> float:
    """USD cost of one exchange at list prices (per-Mtok)."""
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be >= 0")
    p = prices.price(model_id)
    return input_tokens * p.input_usd_per_mtok / 1e6 + output_tokens * p.output_usd_per_mtok / 1e6


def token_cost_micro(
    model_id: str, input_tokens: int, output_tokens: int, prices: PriceBook
) -> int:
    return usd_to_micro(token_cost(model_id, input_tokens, output_tokens, prices))


def usd_to_micro(usd: float) -> int:
    return round(usd * 1_000_000)


def micro_to_usd(micro: int) -> float:
    return micro / 1_000_000


def load_price_book(path) -> PriceBook:
    with open(path) as f:
        raw = yaml.safe_load(f)
    models = raw.get("models", raw)
    prices = {
        model_id: ModelPrice(
            input_usd_per_mtok=float(entry["input_usd_per_mtok"]),
            output_usd_per_mtok=float(entry["output_usd_per_mtok"]),
        )
        for model_id, entry in models.items()
    }
    return PriceBook(prices)


def load_lab_descriptor(path) -> LabDescriptor:
    with open(path) as f:
        raw = yaml.safe_load(f)
    steps = [
        StepDescriptor(
            step_id=s["step_id"],
            difficulty=int(s["difficulty"]),
            target_hint_dist=tuple(float(p) for p in s["target_hint_dist"]),
        )
        for s in raw.get("steps", [])
    ]
    phases = [(p["name"], float(p["arrival_rate"])) for p in raw.get("phases", [])]
    lab = LabDescriptor(lab_id=raw["lab_id"], steps=steps, phases=phases)
    violations = validate_lab_descriptor(lab)
    if violations:
        raise ConfigError(f"invalid lab descriptor {raw['lab_id']}: " + "; ".join(violations))
    return lab
