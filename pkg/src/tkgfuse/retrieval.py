"""History retrieval strategies for prompt construction.

Selects the fact subset handed to the language model. Strategies share one
call shape and are selected by config; every returned fact is strictly
earlier than the query. Results come back time-ascending, ready for prompt
layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import COL_T, Query, TKGView
from .rules import RuleStore

Strategy = Literal["entity_key", "rule_based"]


@dataclass(frozen=True)
class RetrievalConfig:
    strategy: Strategy = "entity_key"
    history_budget: int = 50
    min_rule_confidence: float = 0.0

    def __post_init__(self) -> None:
        if self.history_budget < 1:
            raise ValueError("history budget must be >= 1")


def _layout(rows: np.ndarray) -> np.ndarray:
    """Final prompt order: ascending (time, relation, object)."""
    if len(rows) == 0:
        return rows
    order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 3]))
    return rows[order]


def _recency_order(rows: np.ndarray) -> np.ndarray:
    """Most recent first; ties broken by ascending (relation, object)."""
    order = np.lexsort((rows[:, 2], rows[:, 1], -rows[:, 3]))
    return rows[order]


def _check_no_leakage(rows: np.ndarray, query: Query) -> None:
    assert len(rows) == 0 or int(rows[:, COL_T].max()) < query.time, "retrieved fact at/after query time"


def retrieve_entity_key(view: TKGView, query: Query, budget: int) -> np.ndarray:
    """Subject-anchored retrieval with (subject, relation) matches first.

    Exact (subject, relation) matches outrank subject-only matches; within a
    tier, most recent first. Up to ``budget`` facts, returned time-ascending.
    """
    all_rows = view.by_subject(query.subject)
    all_rows = all_rows[all_rows[:, COL_T] < query.time]
    exact = _recency_order(all_rows[all_rows[:, 1] == query.relation])
    rest = _recency_order(all_rows[all_rows[:, 1] != query.relation])
    picked = np.concatenate([exact, rest])[:budget]
    picked = _layout(picked)
    _check_no_leakage(picked, query)
    return picked


def retrieve_rule_based(
    view: TKGView,
    query: Query,
    store: RuleStore,
    budget: int,
    min_confidence: float = 0.0,
) -> np.ndarray:
    """Retrieval keyed on body relations of rules for the query relation.

    Keeps subject facts whose relation appears in the body of a sufficiently
    confident rule with head = query.relation, most recent first. Falls back
    to :func:`retrieve_entity_key` when no rule applies or nothing matches.
    """
    body_relations: set[int] = set()
    for rule in store.by_head(query.relation):
        if rule.static_confidence >= min_confidence:
            body_relations.update(rule.body)
    if body_relations:
        rows = view.by_subject(query.subject)
        rows = rows[rows[:, COL_T] < query.time]
        mask = np.isin(rows[:, 1], sorted(body_relations))
        picked = _recency_order(rows[mask])[:budget]
        if len(picked):
            picked = _layout(picked)
            _check_no_leakage(picked, query)
            return picked
    return retrieve_entity_key(view, query, budget)


def retrieve(
    view: TKGView,
    query: Query,
    config: RetrievalConfig,
    store: RuleStore | None = None,
) -> np.ndarray:
    """Dispatch on the configured strategy."""
    if config.strategy == "entity_key":
        return retrieve_entity_key(view, query, config.history_budget)
    if config.strategy == "rule_based":
        if store is None:
            raise ValueError("rule_based retrieval requires a rule store")
        return retrieve_rule_based(
            view, query, store, config.history_budget, config.min_rule_confidence
        )
    raise ValueError(f"unknown retrieval strategy {config.strategy!r}")
