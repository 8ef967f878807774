import numpy as np
import pytest

from labroute.bank import Bank, CanonicalEntry, mock_provider
from labroute.core import (
    LabDescriptor,
    ModelPrice,
    PriceBook,
    StepDescriptor,
    Tier,
)
from labroute.overlays import OverlayConfig, OverlayDefinition
from labroute.router import ModelCatalog

LOCAL_MODEL = "openai/gpt-oss-20b"
PREMIUM_MODEL = "openai/gpt-5-mini"


@pytest.fixture
def provider():
    return mock_provider(seed=7)


@pytest.fixture
def prices():
    return PriceBook(
        {
            LOCAL_MODEL: ModelPrice(0.0, 0.0),
            PREMIUM_MODEL: ModelPrice(0.25, 2.00),
        }
    )


@pytest.fixture
def catalog():
    return ModelCatalog(
        tiers={LOCAL_MODEL: Tier.LOCAL, PREMIUM_MODEL: Tier.PREMIUM},
        local_default=LOCAL_MODEL,
        premium_default=PREMIUM_MODEL,
    )


@pytest.fixture
def labs():
    def lab(lab_id):
        return LabDescriptor(
            lab_id=lab_id,
            steps=[
                StepDescriptor("setup", 1, (0.55, 0.35, 0.08, 0.02)),
                StepDescriptor("acquisition", 2, (0.45, 0.4, 0.12, 0.03)),
                StepDescriptor("fitting", 3, (0.35, 0.4, 0.2, 0.05)),
                StepDescriptor("troubleshoot", 2, (0.4, 0.4, 0.15, 0.05)),
            ],
            phases=[
                ("setup", 0.08),
                ("acquisition", 0.11),
                ("fitting", 0.14),
                ("troubleshoot", 0.09),
            ],
        )

    return {"led_iv": lab("led_iv"), "rc_step": lab("rc_step")}


def make_entry(provider, entry_id, text, preferred_model=LOCAL_MODEL, **kwargs):
    return CanonicalEntry(
        id=entry_id,
        text=text,
        preferred_model=preferred_model,
        vector=provider.embed(text),
        **kwargs,
    )


@pytest.fixture
def small_bank(provider):
    entries = [
        make_entry(
            provider,
            "scope_rise_time",
            "help me set up cursors to capture rise time of a digital signal",
            overlay="socratic_troubleshoot",
        ),
        make_entry(
            provider,
            "rc_time_constant",
            "explain the relationship between capacitance and the time constant",
            overlay="socratic_troubleshoot",
        ),
        make_entry(
            provider,
            "led_forward_voltage",
            "why does my led forward voltage measurement drift at higher current",
            preferred_model=PREMIUM_MODEL,
            overlay="diagnostic",
            max_cost_usd=0.05,
        ),
    ]
    return Bank(entries)


@pytest.fixture
def overlays():
    return OverlayConfig(
        overlays={
            "socratic_troubleshoot": OverlayDefinition(
                overlay_id="socratic_troubleshoot",
                system_preamble=(
                    "You are a lab teaching assistant. Guide the student with questions "
                    "rather than answers, and never reveal complete solutions unprompted."
                ),
                response_postamble_rules="End each reply with a question that moves the student forward.",
            ),
            "diagnostic": OverlayDefinition(
                overlay_id="diagnostic",
                system_preamble=(
                    "You are a diagnostic assistant. Enumerate likely failure causes "
                    "methodically before suggesting any fix."
                ),
            ),
        },
        answer_patterns={
            "rc_step": [r"tau\s*=\s*[\d.]+\s*(ms|s)\b", r"R\s*=\s*[\d.]+\s*k?ohm"],
            "led_iv": [r"V_?f\s*=\s*[\d.]+\s*V\b"],
        },
    )


@pytest.fixture
def unit_vector():
    def make(dim=8, axis=0):
        v = np.zeros(dim)
        v[axis] = 1.0
        return v

    return make
