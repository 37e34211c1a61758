"""Rule mining, grounding, and static scoring against exhaustive oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from tkgfuse.data import Query, TemporalKG, augment_inverse
from tkgfuse.distributions import EntityDistribution
from tkgfuse.rules import (
    RuleGrounding,
    RuleStore,
    TemporalRule,
    ground_query,
    ground_rules,
    mine_rules,
    static_score,
)

from conftest import random_kg


def brute_groundings(facts, subject, body, t_lo, t_hi):
    """Exhaustive DFS oracle: all (terminal, body_times) instantiations."""
    out = []

    def rec(ent, min_t, depth, times):
        if depth == len(body):
            out.append((ent, tuple(times)))
            return
        for s, r, o, t in facts:
            if s == ent and r == body[depth] and min_t <= t < t_hi and t >= t_lo:
                rec(int(o), int(t), depth + 1, times + [int(t)])

    rec(subject, t_lo, 0, [])
    return sorted(out)


def paired_pattern_kg(n_pairs=4, times=(0, 2, 4, 6, 8)):
    """(2i, r2, 2i+1, t) always followed by (2i, r1, 2i+1, t+1)."""
    rows = []
    for i in range(n_pairs):
        for t in times:
            rows.append((2 * i, 1, 2 * i + 1, t))      # r2 cue
            rows.append((2 * i, 0, 2 * i + 1, t + 1))  # r1 effect
    facts = np.array(rows, dtype=np.int64)
    return augment_inverse(TemporalKG(facts, entity_count=2 * n_pairs, relation_count=3))


class TestMining:
    def test_pattern_rule_mined_with_high_confidence(self):
        kg = paired_pattern_kg()
        store = mine_rules(kg.before(10), walks_per_relation=100, max_body_len=2, seed=1)
        match = [r for r in store.by_head(0) if r.body == (1,)]
        assert match, "expected rule r1 <- (r2) to be mined"
        assert match[0].static_confidence > 0.9

    def test_head_without_edges_has_no_rules(self):
        kg = paired_pattern_kg()  # relation 2 has no facts
        store = mine_rules(kg.before(10), walks_per_relation=50, seed=0)
        assert store.by_head(2) == []
        assert store.by_head(2 + kg.relation_count) == []

    def test_body_length_bounded(self):
        kg = random_kg(seed=2, n_facts=200)
        store = mine_rules(kg.before(12), walks_per_relation=60, max_body_len=2, seed=0)
        assert store.rules, "expected some rules on a dense random graph"
        assert max(len(r.body) for r in store.rules) <= 2

    def test_empty_view_warns_and_returns_empty(self):
        kg = random_kg(seed=0)
        with pytest.warns(UserWarning, match="empty"):
            store = mine_rules(kg.before(0))
        assert len(store) == 0

    def test_unaugmented_graph_rejected(self):
        kg = random_kg(seed=0, augmented=False)
        with pytest.raises(Exception, match="augment"):
            mine_rules(kg.before(5))

    def test_determinism_bit_identical(self, tmp_path):
        kg = random_kg(seed=4, n_facts=150)
        a = mine_rules(kg.before(12), walks_per_relation=80, seed=7)
        b = mine_rules(kg.before(12), walks_per_relation=80, seed=7)
        pa, pb = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_every_rule_realizable_in_training_view(self):
        kg = random_kg(seed=6, n_entities=15, n_facts=120)
        view = kg.before(12)
        store = mine_rules(view, walks_per_relation=50, seed=3)
        assert store.rules
        for rule in store.rules:
            found = any(
                brute_groundings(view.facts.tolist(), s, list(rule.body), 0, 12)
                for s in range(kg.entity_count)
            )
            assert found, f"rule {rule} has no grounding in its training view"

    def test_confidence_in_open_interval(self):
        kg = random_kg(seed=8, n_facts=160)
        store = mine_rules(kg.before(12), walks_per_relation=60, seed=2)
        for r in store.rules:
            assert 0.0 < r.static_confidence < 1.0
            assert r.support >= 1


class TestGrounding:
    def test_query_at_t0_is_empty(self):
        kg = paired_pattern_kg()
        store = RuleStore([TemporalRule(0, (1,), 0.9, 5)])
        q = Query(subject=0, relation=0, time=0)
        assert ground_rules(kg.before(0), q, store) == []

    def test_pattern_grounding(self):
        kg = paired_pattern_kg(times=(0, 2, 4))
        store = RuleStore([TemporalRule(0, (1,), 0.9, 5)])
        q = Query(subject=0, relation=0, time=5)
        got = ground_rules(kg.before(5), q, store)
        assert {(g.terminal_entity, g.last_time) for g in got} == {(1, 0), (1, 2), (1, 4)}
        assert all(isinstance(g, RuleGrounding) for g in got)

    def test_matches_exhaustive_dfs_on_random_graphs(self):
        rng = np.random.default_rng(9)
        for seed in range(15):
            kg = random_kg(seed=seed, n_entities=50, n_relations=3, n_snapshots=10, n_facts=250)
            body = tuple(int(x) for x in rng.integers(0, kg.n_rel2, int(rng.integers(1, 4))))
            store = RuleStore([TemporalRule(0, body, 0.5, 1)])
            subject = int(rng.integers(0, 50))
            t_q = int(rng.integers(1, 11))
            q = Query(subject=subject, relation=0, time=t_q)
            got = ground_rules(kg.before(t_q), q, store, cap=10**6)
            expected = brute_groundings(kg.facts.tolist(), subject, list(body), 0, t_q)
            assert sorted((g.terminal_entity, g.body_times) for g in got) == expected

    def test_window_restricts_history(self):
        kg = paired_pattern_kg(times=(0, 2, 4))
        store = RuleStore([TemporalRule(0, (1,), 0.9, 5)])
        q = Query(subject=0, relation=0, time=5)
        got = ground_rules(kg.before(5), q, store, window=2)
        assert {(g.terminal_entity, g.last_time) for g in got} == {(1, 4)}

    def test_cap_keeps_most_recent(self):
        kg = paired_pattern_kg(times=(0, 2, 4, 6))
        store = RuleStore([TemporalRule(0, (1,), 0.9, 5)])
        q = Query(subject=0, relation=0, time=9)
        got = ground_rules(kg.before(9), q, store, cap=2)
        assert [g.last_time for g in got] == [6, 4]


class TestStaticScore:
    def test_point_mass_for_single_grounding(self):
        rule = TemporalRule(0, (1,), 0.7, 3)
        g = [RuleGrounding(rule, terminal_entity=4, body_times=(9,))]
        dist = static_score(g, lam=0.5, t_q=9)
        assert dist.items() == [(4, 1.0)]

    def test_decay_monotonicity(self):
        rule = TemporalRule(0, (1,), 0.5, 3)
        gs = [
            RuleGrounding(rule, terminal_entity=1, body_times=(10,)),
            RuleGrounding(rule, terminal_entity=2, body_times=(6,)),
        ]
        dist = static_score(gs, lam=0.3, t_q=10)
        assert dist.mass(2) < dist.mass(1)
        # larger lambda shifts even more mass to the recent grounding
        sharper = static_score(gs, lam=1.0, t_q=10)
        assert sharper.mass(2) < dist.mass(2)

    def test_three_grounding_hand_computation(self):
        r_a = TemporalRule(0, (1,), 0.8, 4)
        r_b = TemporalRule(0, (2,), 0.5, 2)
        r_c = TemporalRule(0, (1, 2), 0.9, 6)
        gs = [
            RuleGrounding(r_a, terminal_entity=1, body_times=(9,)),
            RuleGrounding(r_b, terminal_entity=1, body_times=(7,)),
            RuleGrounding(r_c, terminal_entity=2, body_times=(5, 8)),
        ]
        dist = static_score(gs, lam=0.1, t_q=10)
        s1 = 0.8 * math.exp(-0.1 * 1) + 0.5 * math.exp(-0.1 * 3)
        s2 = 0.9 * math.exp(-0.1 * 2)
        assert dist.mass(1) == pytest.approx(s1 / (s1 + s2), abs=1e-12)
        assert dist.mass(2) == pytest.approx(s2 / (s1 + s2), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        rule = TemporalRule(0, (1,), 0.6, 2)
        gs = [
            RuleGrounding(rule, terminal_entity=int(rng.integers(0, 5)), body_times=(int(t),))
            for t in rng.integers(0, 10, 12)
        ]
        d1 = static_score(gs, lam=0.2, t_q=10)
        d2 = static_score(list(reversed(gs)), lam=0.2, t_q=10)
        assert d1.items() == d2.items()

    def test_max_aggregation_option(self):
        rule = TemporalRule(0, (1,), 0.5, 2)
        gs = [
            RuleGrounding(rule, terminal_entity=1, body_times=(9,)),
            RuleGrounding(rule, terminal_entity=1, body_times=(9,)),
            RuleGrounding(rule, terminal_entity=2, body_times=(9,)),
        ]
        summed = static_score(gs, lam=0.1, t_q=10, agg="sum")
        maxed = static_score(gs, lam=0.1, t_q=10, agg="max")
        assert summed.mass(1) > summed.mass(2)
        assert maxed.mass(1) == pytest.approx(maxed.mass(2))

    def test_empty_is_zero(self):
        assert static_score([], lam=0.1, t_q=3).is_zero
        assert static_score([], lam=0.1, t_q=3) == EntityDistribution.zero()


class TestStore:
    def test_save_load_roundtrip(self, tmp_path):
        rules = [
            TemporalRule(0, (1, 2), 0.512345678901, 7),
            TemporalRule(3, (0,), 0.25, 2),
        ]
        store = RuleStore(rules)
        path = tmp_path / "rules.ndjson"
        store.save(path)
        loaded = RuleStore.load(path)
        assert loaded.rules == store.rules

    def test_corrupt_record_reports_line(self, tmp_path):
        path = tmp_path / "rules.ndjson"
        path.write_text('{"head": 0, "body": [1], "confidence": 0.5, "support": 1}\n{bad\n')
        with pytest.raises(Exception, match=":2"):
            RuleStore.load(path)

    def test_filtered(self):
        store = RuleStore(
            [
                TemporalRule(0, (1,), 0.9, 5),
                TemporalRule(0, (2,), 0.2, 1),
                TemporalRule(1, (0,), 0.6, 3),
            ]
        )
        f = store.filtered(min_confidence=0.5)
        assert len(f) == 2
        top = store.filtered(max_per_head=1)
        assert [r.static_confidence for r in top.by_head(0)] == [0.9]
