"""Synthetic lab-session workload: arrivals, hint escalation, integrity runs.

Students generate Poisson query arrivals per lab phase. The hint level each
query requests follows a small Markov model over {L0..L3} with one calibrated
special case: after two unanswered attempts at L1, the student escalates to
L2 with probability 0.63. Query text is sampled from phase-tagged templates
that are either aligned with the canonical bank (controlled token overlap)
or deliberately off-bank.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .bank import Bank
from .core import ConfigError, DIST_TOL, HintLevel, LabDescriptor

GATED_ESCALATION_PROB = 0.63

# Request-level transition rows (L0..L3 -> L0..L3). Calibrated so ungoverned
# grant distributions over-serve high scaffolding relative to lab targets.
DEFAULT_TRANSITIONS = {
    HintLevel.L0: (0.20, 0.18, 0.52, 0.10),
    HintLevel.L1: (0.20, 0.18, 0.52, 0.10),
    HintLevel.L2: (0.18, 0.16, 0.54, 0.12),
    HintLevel.L3: (0.20, 0.20, 0.50, 0.10),
}


@dataclass
class EscalationModel:
    """Markov hint-request model with an unanswered-attempt trigger."""

    transitions: dict[HintLevel, tuple[float, float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_TRANSITIONS)
    )
    gated_escalation_prob: float = GATED_ESCALATION_PROB

    def __post_init__(self) -> None:
        for state, row in self.transitions.items():
            if abs(sum(row) - 1.0) > DIST_TOL:
                raise ConfigError(f"transition row for {state} must sum to 1")
        if not 0.0 <= self.gated_escalation_prob <= 1.0:
            raise ConfigError("gated_escalation_prob must be a probability")

    def next_request(
        self, previous: HintLevel, unanswered: int, rng: random.Random
    ) -> HintLevel:
        """Draw the next requested hint level.

        Exactly one uniform variate is consumed per call regardless of the
        branch taken, so paired runs stay aligned on the same RNG stream.
        """
        u = rng.random()
        if previous is HintLevel.L1 and unanswered >= 2:
            return HintLevel.L2 if u < self.gated_escalation_prob else HintLevel.L1
        row = self.transitions[previous]
        acc = 0.0
        for level, p in zip(HintLevel, row):
            acc += p
            if u < acc:
                return level
        return HintLevel.L3


def poisson_arrivals(
    rate_per_min: float, duration_min: float, rng: random.Random
) -> list[float]:
    """Arrival times (minutes) of a homogeneous Poisson process on [0, T)."""
    if rate_per_min <= 0:
        raise ConfigError("arrival rate must be > 0")
    times = []
    t = rng.expovariate(rate_per_min)
    while t < duration_min:
        times.append(t)
        t += rng.expovariate(rate_per_min)
    return times


# Off-bank query texts: short ones route Local under the length heuristic,
# the long diagnostic ones trip the Premium threshold.
MISALIGNED_SHORT = [
    "what page of the handout covers this part",
    "can you remind me where the equipment checklist is",
    "how long should this section of the lab take",
    "do we need to include raw data tables in the report",
    "is it ok to redo a measurement after moving the probe",
]
MISALIGNED_LONG = [
    (
        "something strange is happening when I change the vertical range because the "
        "reading starts to oscillate and the noise floor jumps around and I suspect a "
        "grounding mismatch between the generator and the scope but the ringing will "
        "not go away no matter which cable I swap so I need help reasoning through a "
        "systematic way to diagnose which piece of the setup is actually at fault"
    ),
    (
        "I think there is some nonlinear interaction between the instrument input stage "
        "and my circuit because the response changes shape with amplitude and shows an "
        "instability near the transition and I would like to derive what parasitic "
        "element would have to be present to compensate for what I measured before I "
        "start swapping components one by one without a plan"
    ),
]

# Follow-up paraphrases deliberately share no token overlap with bank entries;
# they reference the prior exchange instead, so only stickiness can keep the
# canonical id alive. Most are short (Local under the heuristic); a minority
# is long and diagnostic enough to trip the Premium threshold, which is what
# makes a lapsed hold visible as tier churn and keeps the heuristic-only
# cost comparison honest.
FOLLOWUP_SHORT = [
    "still stuck on the same thing after trying that",
    "same problem as before, your hint did not fix it",
    "that did not work, can we keep going on this one",
    "ok I tried it again and got the same result",
    "back to the issue from my last question, no change",
]
FOLLOWUP_LONG_PROB = 0.15
FOLLOWUP_TEXTS = [
    (
        "I tried exactly what you suggested in your last answer but the display still "
        "shows the same wrong shape with ringing and extra noise spikes everywhere and "
        "honestly I cannot tell whether the instability means a mismatch somewhere or "
        "whether I should diagnose the cabling all over again from the start"
    ),
    (
        "following up on the same problem as before, after your hint I reran it twice "
        "and the readings still disagree and now there is a weird oscillation riding on "
        "top, so can we keep working through the same issue because I suspect the same "
        "root cause is compensating somewhere I have not looked yet"
    ),
]

JUSTIFICATION_TEXT = (
    "I have attempted this step repeatedly, compared against the prelab worked "
    "example, and I am still blocked; requesting a full solution to move on."
)


@dataclass
class QueryTemplates:
    """Phase-tagged query pool built from a canonical bank."""

    aligned_by_phase: dict[str, list[str]]
    misaligned_short: list[str] = field(default_factory=lambda: list(MISALIGNED_SHORT))
    misaligned_long: list[str] = field(default_factory=lambda: list(MISALIGNED_LONG))
    followups_short: list[str] = field(default_factory=lambda: list(FOLLOWUP_SHORT))
    followups_long: list[str] = field(default_factory=lambda: list(FOLLOWUP_TEXTS))

    @classmethod
    def from_bank(cls, bank: Bank) -> "QueryTemplates":
        # Aligned variants keep heavy token overlap with the source entry but
        # are not verbatim, so provider score degradation is observable.
        decorations = [
            "{text}",
            "hi, {text}",
            "{text} please",
            "quick question: {text}",
            "{text} -- i am a bit stuck",
        ]
        aligned: dict[str, list[str]] = {}
        for entry in bank.entries.values():
            phases = [t.split(":", 1)[1] for t in entry.tags if t.startswith("phase:")]
            for phase in phases:
                aligned.setdefault(phase, []).extend(
                    d.format(text=entry.text) for d in decorations
                )
        return cls(aligned_by_phase=aligned)

    def sample(
        self, phase: str, aligned_fraction: float, rng: random.Random
    ) -> tuple[str, bool]:
        pool = self.aligned_by_phase.get(phase, [])
        if pool and rng.random() < aligned_fraction:
            return rng.choice(pool), True
        if rng.random() < 0.5:
            return rng.choice(self.misaligned_short), False
        return rng.choice(self.misaligned_long), False

    def sample_followup(self, rng: random.Random) -> str:
        if rng.random() < FOLLOWUP_LONG_PROB:
            return rng.choice(self.followups_long)
        return rng.choice(self.followups_short)


@dataclass
class IntegrityScenario:
    """Scripted consecutive-flag runs resampled into a fraction of sessions."""

    session_fraction: float = 0.34
    run_lengths: tuple[int, ...] = (2, 4)  # below and above the P2 threshold

    def flag_turns(self, n_turns: int, rng: random.Random) -> set[int]:
        if n_turns < 4 or rng.random() >= self.session_fraction:
            return set()
        run = rng.choice(self.run_lengths)
        run = min(run, n_turns - 1)
        start = rng.randint(1, n_turns - run)
        return set(range(start, start + run))


@dataclass
class WorkloadConfig:
    lab: LabDescriptor
    students: int = 6
    cohorts: int = 2
    session_minutes: float = 45.0
    aligned_fraction: float = 0.65
    followup_prob: float = 0.45
    # Desk-scale multiplier on the per-phase arrival rates: the published
    # rates describe sparse real sessions, and small jobs need denser traces
    # for stable per-step statistics.
    arrival_scale: float = 1.0
    # Per-cohort probability that an L3 request carries a justification.
    justification_prob: tuple[float, ...] = (1.0, 0.05)

    def __post_init__(self) -> None:
        if self.students < 1 or self.cohorts < 1:
            raise ConfigError("students and cohorts must be >= 1")
        if not self.lab.phases:
            raise ConfigError(f"lab {self.lab.lab_id} declares no phases")


@dataclass
class ScheduledEvent:
    t_s: float
    session_id: str
    cohort_id: str
    step_id: str
    query_text: str
    aligned: bool
    followup: bool
    integrity_flag: bool
    has_justification: bool


def generate_workload(
    config: WorkloadConfig,
    templates: QueryTemplates,
    seed: int,
    scenario: IntegrityScenario | None = None,
) -> list[ScheduledEvent]:
    """Deterministic event schedule for one job, sorted by arrival time.

    Requested hint levels are not drawn here: they depend on how many of the
    student's attempts went unanswered, which is only known while the trace
    runs. The simulator draws them turn by turn from the escalation model.
    """
    scenario = scenario or IntegrityScenario()
    phase_minutes = config.session_minutes / len(config.lab.phases)
    events: list[ScheduledEvent] = []
    for student in range(config.students):
        rng = random.Random(f"{seed}:student:{student}")
        session_id = f"{config.lab.lab_id}-s{seed}-{student:02d}"
        cohort = student % config.cohorts
        cohort_id = f"c{cohort}"
        justify_p = config.justification_prob[cohort % len(config.justification_prob)]
        arrivals: list[tuple[float, str]] = []
        for phase_index, (phase, rate) in enumerate(config.lab.phases):
            offset = phase_index * phase_minutes
            for t in poisson_arrivals(rate * config.arrival_scale, phase_minutes, rng):
                arrivals.append(((offset + t) * 60.0, phase))
        flagged = scenario.flag_turns(len(arrivals), rng)
        for turn, (t_s, phase) in enumerate(arrivals, start=1):
            followup = turn > 1 and rng.random() < config.followup_prob
            if followup:
                text, aligned = templates.sample_followup(rng), False
            else:
                text, aligned = templates.sample(phase, config.aligned_fraction, rng)
            events.append(
                ScheduledEvent(
                    t_s=t_s,
                    session_id=session_id,
                    cohort_id=cohort_id,
                    step_id=phase,
                    query_text=text,
                    aligned=aligned,
                    followup=followup,
                    integrity_flag=turn in flagged,
                    has_justification=rng.random() < justify_p,
                )
            )
    events.sort(key=lambda e: (e.t_s, e.session_id))
    return events
