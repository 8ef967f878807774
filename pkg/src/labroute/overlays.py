"""Prompt overlays: instructor-defined system preambles with audit fingerprints.

An overlay is applied by injecting a system preamble (parameterized by the
granted hint level) ahead of the user messages. The fingerprint is a SHA-256
over the exact injected content, so auditors can verify post hoc that the
overlay really was applied. The guardrail is a declarative check: no verbatim
preamble leakage, and no complete final answer below L3 (per-lab regex rules).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import yaml

from .core import ConfigError, HintLevel

NO_OVERLAY_FINGERPRINT = "none"

HINT_DIRECTIVES = {
    HintLevel.L0: "Respond with validation or a minimal conceptual prompt only; do not reveal procedures.",
    HintLevel.L1: "Offer one guided troubleshooting hint and ask the student to justify their next step.",
    HintLevel.L2: "You may include a worked-example fragment, but stop before the final result.",
    HintLevel.L3: "A complete solution is permitted for this turn.",
}


@dataclass
class OverlayDefinition:
    overlay_id: str
    system_preamble: str
    response_postamble_rules: str = ""


@dataclass
class OverlayConfig:
    overlays: dict[str, OverlayDefinition] = field(default_factory=dict)
    # lab_id -> regex patterns that identify a complete final numeric answer
    answer_patterns: dict[str, list[str]] = field(default_factory=dict)

    def get(self, overlay_id: str) -> OverlayDefinition:
        try:
            return self.overlays[overlay_id]
        except KeyError:
            raise ConfigError(f"unknown overlay_id: {overlay_id}") from None


def render_preamble(overlay: OverlayDefinition, granted_hint: HintLevel) -> str:
    parts = [overlay.system_preamble.strip(), HINT_DIRECTIVES[granted_hint]]
    if overlay.response_postamble_rules:
        parts.append(overlay.response_postamble_rules.strip())
    return "\n".join(parts)


def overlay_fingerprint(overlay: OverlayDefinition, granted_hint: HintLevel) -> str:
    injected = render_preamble(overlay, granted_hint)
    payload = json.dumps(
        {"overlay_id": overlay.overlay_id, "injected": injected}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def apply_overlay(
    messages: list[dict[str, str]],
    overlay: OverlayDefinition | None,
    granted_hint: HintLevel,
) -> tuple[list[dict[str, str]], str]:
    """Inject the overlay preamble ahead of the conversation.

    Returns (modified messages, fingerprint). With no overlay the messages
    pass through untouched and the fingerprint is the sentinel "none".
    """
    if overlay is None:
        return list(messages), NO_OVERLAY_FINGERPRINT
    preamble = render_preamble(overlay, granted_hint)
    modified = [{"role": "system", "content": preamble}] + list(messages)
    return modified, overlay_fingerprint(overlay, granted_hint)


def overlay_guardrail(
    response_text: str,
    overlay: OverlayDefinition,
    granted_hint: HintLevel,
    answer_patterns: list[str] | None = None,
) -> str:
    """Evaluate the declarative adherence checks; returns "pass" or "fail"."""
    preamble = render_preamble(overlay, granted_hint)
    for line in preamble.splitlines():
        line = line.strip()
        if len(line) >= 20 and line in response_text:
            return "fail"  # preamble leakage
    if granted_hint < HintLevel.L3:
        for pattern in answer_patterns or []:
            if re.search(pattern, response_text):
                return "fail"  # complete final answer below the hint ceiling
    return "pass"


def load_overlays(path) -> OverlayConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    overlays = {}
    for item in raw.get("overlays", []):
        overlay = OverlayDefinition(
            overlay_id=item["overlay_id"],
            system_preamble=item["system_preamble"],
            response_postamble_rules=item.get("response_postamble_rules", ""),
        )
        if overlay.overlay_id in overlays:
            raise ConfigError(f"duplicate overlay_id: {overlay.overlay_id}")
        overlays[overlay.overlay_id] = overlay
    answer_patterns = {
        lab_id: list(patterns)
        for lab_id, patterns in (raw.get("answer_patterns") or {}).items()
    }
    return OverlayConfig(overlays=overlays, answer_patterns=answer_patterns)
