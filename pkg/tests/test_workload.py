import math
import random

import pytest

from labroute.core import ConfigError, HintLevel
from labroute.simulate import load_resources
from labroute.workload import (
    EscalationModel,
    IntegrityScenario,
    QueryTemplates,
    WorkloadConfig,
    generate_workload,
    poisson_arrivals,
)


class TestPoissonArrivals:
    def test_sample_mean_matches_rate(self):
        """Peak-phase rate over a 45-minute window: the mean arrival count
        over 1,000 seeds must sit within 3 sigma of lambda*T."""
        rate, minutes, n = 0.14, 45.0, 1000
        expected = rate * minutes
        counts = [
            len(poisson_arrivals(rate, minutes, random.Random(seed)))
            for seed in range(n)
        ]
        mean = sum(counts) / n
        sigma_of_mean = math.sqrt(expected / n)
        assert abs(mean - expected) <= 3 * sigma_of_mean

    def test_arrivals_sorted_and_in_window(self):
        times = poisson_arrivals(0.5, 30.0, random.Random(3))
        assert times == sorted(times)
        assert all(0 <= t < 30.0 for t in times)

    def test_zero_rate_rejected(self):
        with pytest.raises(ConfigError):
            poisson_arrivals(0.0, 10.0, random.Random(0))


class TestEscalationModel:
    def test_gated_probability_calibrated(self):
        """After two unanswered attempts at L1, escalate to L2 with
        probability 0.63; the empirical rate over 10,000 trials must land
        within +-0.03."""
        model = EscalationModel()
        rng = random.Random(12345)
        trials = 10_000
        escalated = sum(
            1
            for _ in range(trials)
            if model.next_request(HintLevel.L1, 2, rng) is HintLevel.L2
        )
        assert abs(escalated / trials - 0.63) <= 0.03

    def test_gate_yields_only_l1_or_l2(self):
        model = EscalationModel()
        rng = random.Random(7)
        outcomes = {model.next_request(HintLevel.L1, 3, rng) for _ in range(500)}
        assert outcomes <= {HintLevel.L1, HintLevel.L2}

    def test_ungated_draws_follow_transition_row(self):
        model = EscalationModel()
        rng = random.Random(9)
        trials = 20_000
        counts = {level: 0 for level in HintLevel}
        for _ in range(trials):
            counts[model.next_request(HintLevel.L0, 0, rng)] += 1
        row = model.transitions[HintLevel.L0]
        for level, p in zip(HintLevel, row):
            assert counts[level] / trials == pytest.approx(p, abs=0.02)

    def test_one_uniform_per_call(self):
        """Gated and ungated branches consume the same amount of randomness,
        so a shared stream stays aligned across paired runs."""
        model = EscalationModel()
        a, b = random.Random(55), random.Random(55)
        for i in range(200):
            model.next_request(HintLevel.L1, 2 if i % 2 else 0, a)
            b.random()
        assert a.random() == b.random()

    def test_invalid_row_rejected(self):
        with pytest.raises(ConfigError):
            EscalationModel(transitions={HintLevel.L0: (0.5, 0.5, 0.5, 0.0)})

    def test_invalid_gate_probability_rejected(self):
        with pytest.raises(ConfigError):
            EscalationModel(gated_escalation_prob=1.5)


class TestGenerateWorkload:
    @pytest.fixture(scope="class")
    def resources(self):
        return load_resources()

    def _config(self, resources, **overrides):
        params = dict(lab=resources.labs["rc_step"], students=8, arrival_scale=2.0)
        params.update(overrides)
        return WorkloadConfig(**params)

    def test_deterministic_for_seed(self, resources):
        templates = QueryTemplates.from_bank(resources.bank)
        config = self._config(resources)
        a = generate_workload(config, templates, seed=42)
        b = generate_workload(config, templates, seed=42)
        assert a == b

    def test_different_seeds_differ(self, resources):
        templates = QueryTemplates.from_bank(resources.bank)
        config = self._config(resources)
        a = generate_workload(config, templates, seed=1)
        b = generate_workload(config, templates, seed=2)
        assert a != b

    def test_sorted_by_arrival_time(self, resources):
        templates = QueryTemplates.from_bank(resources.bank)
        events = generate_workload(self._config(resources), templates, seed=5)
        assert [e.t_s for e in events] == sorted(e.t_s for e in events)

    def test_sessions_and_cohorts(self, resources):
        templates = QueryTemplates.from_bank(resources.bank)
        events = generate_workload(self._config(resources), templates, seed=5)
        sessions = {e.session_id for e in events}
        assert len(sessions) <= 8
        assert {e.cohort_id for e in events} <= {"c0", "c1"}

    def test_followups_never_first_turn(self, resources):
        templates = QueryTemplates.from_bank(resources.bank)
        events = generate_workload(self._config(resources), templates, seed=5)
        first_by_session = {}
        for e in sorted(events, key=lambda e: e.t_s):
            first_by_session.setdefault(e.session_id, e)
        assert not any(e.followup for e in first_by_session.values())

    def test_integrity_runs_are_consecutive(self):
        scenario = IntegrityScenario(session_fraction=1.0)
        for seed in range(30):
            turns = scenario.flag_turns(20, random.Random(seed))
            if not turns:
                continue
            ordered = sorted(turns)
            assert ordered == list(range(ordered[0], ordered[0] + len(ordered)))
            assert len(ordered) in (2, 4)

    def test_invalid_config_rejected(self, resources):
        with pytest.raises(ConfigError):
            WorkloadConfig(lab=resources.labs["rc_step"], students=0)
