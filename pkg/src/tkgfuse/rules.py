"""Cyclic temporal rule mining, grounding, and static scoring.

Rules are mined from backward temporal random walks over the training view
and generalized to (head relation, body relation chain) form. Grounding
instantiates a rule body in a query's history starting at the query subject;
static scoring turns groundings into an entity distribution with an
exponential recency decay. Walk sampling, body sampling, and grounding run
through the :mod:`tkgfuse._kernels` traversal kernels.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _kernels as kernels
from .data import DataError, Query, TKGView
from .distributions import EntityDistribution


@dataclass(frozen=True)
class TemporalRule:
    """head(X, Y, t') <- body_1(X, Z_1, t_1), ..., body_l(Z_{l-1}, Y, t_l).

    Body times are non-decreasing and precede the head time. Confidence is
    Laplace-smoothed: (support + 1) / (body_support + 2).
    """

    head: int
    body: tuple[int, ...]
    static_confidence: float
    support: int

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError("rule body must be non-empty")
        if not 0.0 < self.static_confidence < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {self.static_confidence}")


@dataclass(frozen=True)
class RuleGrounding:
    """One instantiation of a rule body, starting at the query subject."""

    rule: TemporalRule
    terminal_entity: int
    body_times: tuple[int, ...]

    @property
    def last_time(self) -> int:
        return self.body_times[-1]


class RuleStore:
    """Immutable set of mined rules with a per-head lookup."""

    def __init__(self, rules: Iterable[TemporalRule]) -> None:
        self.rules = sorted(rules, key=lambda r: (r.head, r.body))
        self._by_head: dict[int, list[TemporalRule]] = {}
        for r in self.rules:
            self._by_head.setdefault(r.head, []).append(r)

    def __len__(self) -> int:
        return len(self.rules)

    def by_head(self, relation: int) -> list[TemporalRule]:
        return self._by_head.get(relation, [])

    def head_relations(self) -> list[int]:
        return sorted(self._by_head)

    def filtered(self, min_confidence: float = 0.0, max_per_head: int | None = None) -> "RuleStore":
        """Drop low-confidence rules; optionally keep only the strongest per head."""
        kept: list[TemporalRule] = []
        for head in self.head_relations():
            rules = [r for r in self.by_head(head) if r.static_confidence >= min_confidence]
            if max_per_head is not None:
                rules.sort(key=lambda r: (-r.static_confidence, r.body))
                rules = rules[:max_per_head]
            kept.extend(rules)
        return RuleStore(kept)

    def save(self, path: str | Path) -> None:
        """Newline-delimited JSON, one rule per line, stable field order."""
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.rules:
                fh.write(
                    json.dumps(
                        {
                            "head": r.head,
                            "body": list(r.body),
                            "confidence": r.static_confidence,
                            "support": r.support,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "RuleStore":
        rules = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    rules.append(
                        TemporalRule(
                            head=int(rec["head"]),
                            body=tuple(int(b) for b in rec["body"]),
                            static_confidence=float(rec["confidence"]),
                            support=int(rec["support"]),
                        )
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad rule record ({exc})") from None
        return cls(rules)


def mine_rules(
    view: TKGView,
    walks_per_relation: int = 200,
    max_body_len: int = 3,
    decay: float = 0.1,
    seed: int = 0,
    confidence_samples: int = 500,
) -> RuleStore:
    """Mine cyclic rules from backward temporal walks over ``view``.

    For every head relation and body length, samples ``walks_per_relation``
    cyclic walks (successive steps strictly earlier in time, candidates
    weighted by exp(-decay * dt)), abstracts each successful walk to a
    (head, body) rule, and estimates each unique rule's confidence by
    sampling ``confidence_samples`` body groundings and checking how often
    the head holds afterwards. Deterministic for a fixed seed.
    """
    if not view.kg.augmented:
        raise DataError("rule mining requires an inverse-augmented graph")
    if view.num_facts == 0:
        warnings.warn("mining on an empty view: returning an empty rule store", stacklevel=2)
        return RuleStore([])
    idx = view.materialized_index()
    n_rel_base = view.kg.relation_count
    n_rel2 = view.kg.n_rel2

    candidates: set[tuple[int, tuple[int, ...]]] = set()
    for head in range(n_rel2):
        h_lo, h_hi = int(idx.rel_ptr[head]), int(idx.rel_ptr[head + 1])
        if h_lo == h_hi:
            continue
        for body_len in range(1, max_body_len + 1):
            walk_seed = kernels.mix_seed(seed, 1, head, body_len)
            bodies = kernels.sample_walks(
                idx.re_s,
                idx.re_o,
                idx.re_t,
                h_lo,
                h_hi,
                idx.s_ptr,
                idx.ns_r,
                idx.ns_o,
                idx.ns_t,
                n_rel_base,
                body_len,
                walks_per_relation,
                decay,
                walk_seed,
            )
            if len(bodies):
                for row in np.unique(bodies, axis=0):
                    candidates.add((head, tuple(int(x) for x in row)))

    rules: list[TemporalRule] = []
    for head, body in sorted(candidates):
        r1_lo, r1_hi = int(idx.rel_ptr[body[0]]), int(idx.rel_ptr[body[0] + 1])
        conf_seed = kernels.mix_seed(seed, 2, head, *body)
        chains = kernels.sample_bodies(
            idx.re_s,
            idx.re_o,
            idx.re_t,
            r1_lo,
            r1_hi,
            idx.sr_key,
            idx.sr_t,
            idx.sr_o,
            n_rel2,
            np.asarray(body, dtype=np.int64),
            confidence_samples,
            conf_seed,
        )
        if not len(chains):
            continue
        uniq = np.unique(chains, axis=0)
        body_support = len(uniq)
        holds = idx.head_holds(uniq[:, 0], head, uniq[:, -1], uniq[:, -2])
        support = int(holds.sum())
        if support < 1:
            continue
        confidence = (support + 1) / (body_support + 2)
        rules.append(TemporalRule(head, body, confidence, support))
    return RuleStore(rules)


@dataclass(frozen=True)
class GroundingSet:
    """Flat per-query grounding arrays, grouped by rule.

    ``rules[i]`` grounded at least once; grounding g terminates at
    ``entities[g]`` with last body time ``last_times[g]`` and belongs to rule
    ``rules[rule_index[g]]``. ``body_times[j]`` is the (m_j, l_j) time matrix
    of rule j's groundings.
    """

    rules: tuple[TemporalRule, ...]
    rule_index: np.ndarray
    entities: np.ndarray
    last_times: np.ndarray
    body_times: tuple[np.ndarray, ...]
    query_time: int

    @property
    def is_empty(self) -> bool:
        return len(self.entities) == 0

    def to_groundings(self) -> list[RuleGrounding]:
        out: list[RuleGrounding] = []
        cursor = 0
        for j, rule in enumerate(self.rules):
            for row in self.body_times[j]:
                out.append(
                    RuleGrounding(rule, int(self.entities[cursor]), tuple(int(x) for x in row))
                )
                cursor += 1
        return out


def ground_query(
    view: TKGView,
    query: Query,
    store: RuleStore,
    window: int | None = None,
    cap: int = 1000,
) -> GroundingSet:
    """Ground every rule with head = query.relation in the query's history.

    Only facts with time in [query.time - window, min(query.time, view
    bound)) participate; body times are non-decreasing. At most ``cap``
    groundings are enumerated per rule, most recent first.
    """
    idx, t_hi = view.bounded_index()
    t_hi = min(t_hi, query.time)
    t_lo = 0 if window is None else max(0, query.time - window)
    rules: list[TemporalRule] = []
    rule_index: list[np.ndarray] = []
    entities: list[np.ndarray] = []
    last_times: list[np.ndarray] = []
    body_times: list[np.ndarray] = []
    for rule in store.by_head(query.relation):
        ents, lasts, times = kernels.ground_rule(
            idx.sr_key,
            idx.sr_t,
            idx.sr_o,
            idx.n_rel2,
            query.subject,
            np.asarray(rule.body, dtype=np.int64),
            t_lo,
            t_hi,
            cap,
        )
        if len(ents) == 0:
            continue
        rule_index.append(np.full(len(ents), len(rules), dtype=np.int64))
        rules.append(rule)
        entities.append(ents)
        last_times.append(lasts)
        body_times.append(times)
    if not rules:
        empty = np.empty(0, dtype=np.int64)
        return GroundingSet((), empty, empty, empty, (), query.time)
    return GroundingSet(
        tuple(rules),
        np.concatenate(rule_index),
        np.concatenate(entities),
        np.concatenate(last_times),
        tuple(body_times),
        query.time,
    )


def ground_rules(
    view: TKGView,
    query: Query,
    store: RuleStore,
    window: int | None = None,
    cap: int = 1000,
) -> list[RuleGrounding]:
    """Grounding enumeration as explicit :class:`RuleGrounding` records."""
    return ground_query(view, query, store, window=window, cap=cap).to_groundings()


def static_score(
    groundings: list[RuleGrounding] | GroundingSet,
    lam: float,
    t_q: int,
    agg: str = "sum",
) -> EntityDistribution:
    """Score entities as confidence * exp(-lam * (t_q - t_l)) per grounding.

    Aggregation over a terminal entity's groundings is a sum by default
    ("max" keeps only the strongest contribution). The result is normalized
    over the scored entities; no groundings yields the zero distribution.
    """
    if lam <= 0:
        raise ValueError(f"decay rate must be > 0, got {lam}")
    if agg not in ("sum", "max"):
        raise ValueError(f"unknown aggregation {agg!r}")
    if isinstance(groundings, GroundingSet):
        if groundings.is_empty:
            return EntityDistribution.zero()
        conf = np.array([r.static_confidence for r in groundings.rules])
        contrib = conf[groundings.rule_index] * np.exp(
            -lam * (t_q - groundings.last_times.astype(np.float64))
        )
        ents = groundings.entities
    else:
        if not groundings:
            return EntityDistribution.zero()
        ents = np.array([g.terminal_entity for g in groundings], dtype=np.int64)
        contrib = np.array(
            [g.rule.static_confidence * np.exp(-lam * (t_q - g.last_time)) for g in groundings]
        )
    uniq, inv = np.unique(ents, return_inverse=True)
    scores = np.zeros(len(uniq))
    if agg == "sum":
        np.add.at(scores, inv, contrib)
    else:
        np.maximum.at(scores, inv, contrib)
    return EntityDistribution.from_masses(uniq, scores)
