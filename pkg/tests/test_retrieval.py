"""History retrieval: tiering, budgets, fallback, leakage."""

from __future__ import annotations

import numpy as np
import pytest

from tkgfuse.data import Query, TemporalKG, augment_inverse
from tkgfuse.retrieval import RetrievalConfig, retrieve, retrieve_entity_key, retrieve_rule_based
from tkgfuse.rules import RuleStore, TemporalRule

from conftest import random_kg


def tiered_kg():
    rows = [
        # three (0, r0) facts
        (0, 0, 1, 1),
        (0, 0, 2, 3),
        (0, 0, 3, 5),
        # five other subject-0 facts
        (0, 1, 4, 0),
        (0, 1, 5, 2),
        (0, 2, 6, 4),
        (0, 2, 7, 6),
        (0, 1, 8, 7),
        # noise from other subjects
        (9, 0, 0, 2),
        (9, 1, 1, 3),
    ]
    return TemporalKG(np.array(rows, dtype=np.int64), entity_count=12, relation_count=3)


class TestEntityKey:
    def test_cold_start_subject_is_empty(self):
        kg = tiered_kg()
        q = Query(subject=5, relation=0, time=8)
        assert len(retrieve_entity_key(kg.before(8), q, 10)) == 0

    def test_exact_matches_tier_ahead_of_subject_matches(self):
        kg = tiered_kg()
        q = Query(subject=0, relation=0, time=8)
        rows = retrieve_entity_key(kg.before(8), q, 4)
        picked = {tuple(r) for r in rows.tolist()}
        # all 3 exact (s, r) matches plus the single most recent subject-only fact
        assert {(0, 0, 1, 1), (0, 0, 2, 3), (0, 0, 3, 5), (0, 1, 8, 7)} == picked

    def test_output_time_ascending_and_bounded(self):
        for seed in range(10):
            kg = random_kg(seed=seed)
            rng = np.random.default_rng(seed)
            for _ in range(10):
                q = Query(int(rng.integers(0, 20)), int(rng.integers(0, 6)), int(rng.integers(1, 13)))
                rows = retrieve_entity_key(kg.before(q.time), q, 5)
                assert len(rows) <= 5
                if len(rows) > 1:
                    assert np.all(np.diff(rows[:, 3]) >= 0)
                assert np.all(rows[:, 0] == q.subject) if len(rows) else True

    def test_leakage_freedom(self):
        kg = tiered_kg()
        q = Query(subject=0, relation=0, time=4)
        rows = retrieve_entity_key(kg.before(4), q, 10)
        assert np.all(rows[:, 3] < 4)


class TestRuleBased:
    def test_no_matching_rule_falls_back_to_entity_key(self):
        kg = tiered_kg()
        store = RuleStore([TemporalRule(1, (2,), 0.8, 3)])  # head != query relation
        q = Query(subject=0, relation=0, time=8)
        fallback = retrieve_rule_based(kg.before(8), q, store, 4)
        direct = retrieve_entity_key(kg.before(8), q, 4)
        assert np.array_equal(fallback, direct)

    def test_body_relation_facts_preferred(self):
        kg = tiered_kg()
        # rule r0 <- (r1): subject facts with relation 1 should be retrieved
        store = RuleStore([TemporalRule(0, (1,), 0.8, 3)])
        q = Query(subject=0, relation=0, time=8)
        rows = retrieve_rule_based(kg.before(8), q, store, 10)
        assert set(rows[:, 1].tolist()) == {1}
        assert len(rows) == 3

    def test_confidence_floor_filters_rules(self):
        kg = tiered_kg()
        store = RuleStore([TemporalRule(0, (1,), 0.1, 1)])
        q = Query(subject=0, relation=0, time=8)
        rows = retrieve_rule_based(kg.before(8), q, store, 4, min_confidence=0.5)
        assert np.array_equal(rows, retrieve_entity_key(kg.before(8), q, 4))

    def test_budget_respected_on_random_inputs(self):
        for seed in range(10):
            kg = random_kg(seed=seed)
            store = RuleStore([TemporalRule(0, (1, 2), 0.7, 2), TemporalRule(2, (3,), 0.6, 2)])
            rng = np.random.default_rng(seed)
            for _ in range(10):
                q = Query(int(rng.integers(0, 20)), int(rng.integers(0, 6)), int(rng.integers(1, 13)))
                rows = retrieve_rule_based(kg.before(q.time), q, store, 3)
                assert len(rows) <= 3
                assert np.all(rows[:, 3] < q.time) if len(rows) else True


class TestDispatch:
    def test_strategy_dispatch_and_determinism(self):
        kg = tiered_kg()
        q = Query(subject=0, relation=0, time=8)
        cfg = RetrievalConfig("entity_key", 4)
        a = retrieve(kg.before(8), q, cfg)
        b = retrieve(kg.before(8), q, cfg)
        assert np.array_equal(a, b)

    def test_rule_based_requires_store(self):
        kg = tiered_kg()
        q = Query(subject=0, relation=0, time=8)
        with pytest.raises(ValueError, match="rule store"):
            retrieve(kg.before(8), q, RetrievalConfig("rule_based", 4))

    def test_bad_budget_rejected(self):
        with pytest.raises(ValueError):
            RetrievalConfig("entity_key", 0)
