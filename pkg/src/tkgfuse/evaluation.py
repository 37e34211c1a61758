"""Single-step forecasting evaluation with time-aware filtered Hits@K.

Ranks use the mid-tie convention: rank = 1 + #{strictly better} +
floor(#{ties} / 2) over the full entity vocabulary, with zero-mass entities
scored 0. Filtered entities (other true answers at the query's timestamp)
are removed before ranking. Ablation modes swap out parts of the fused
system while keeping the rest of the pipeline identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .data import Query, TemporalKG, same_time_filter_set
from .distributions import EntityDistribution
from .fusion import FusionConfig, fuse, gate_weight
from .lm import DistributionCache, LanguageModelBackend, build_entity_distribution, iterative_draws
from .rules import RuleStore, ground_query, static_score

EVAL_KS = (1, 3, 10)


class MissingArtifactError(Exception):
    """An ablation or eval mode lacks a required artifact."""


@dataclass(frozen=True)
class Prediction:
    """A system's output for one query, with candidate-set bookkeeping."""

    dist: EntityDistribution
    llm_support: int = 0
    adapter_support: int = 0


@dataclass(frozen=True)
class RankRecord:
    qid: int
    rank: int
    llm_support: int
    adapter_support: int
    union_support: int
    direction: str


@dataclass
class MetricsReport:
    """Hits@K pooled over both directions plus per-direction breakdowns."""

    hits: dict[str, dict[int, float]]
    query_count: int
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "query_count": self.query_count,
            "counts": {k: self.counts[k] for k in sorted(self.counts)},
            "hits": {
                scope: {f"hits@{k}": self.hits[scope][k] for k in sorted(self.hits[scope])}
                for scope in sorted(self.hits)
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        scopes = ["overall", "forward", "inverse"]
        ks = sorted(next(iter(self.hits.values())))
        lines = ["scope     queries  " + "  ".join(f"hits@{k:<4d}" for k in ks)]
        for scope in scopes:
            if scope not in self.hits:
                continue
            n = self.counts.get(scope, self.query_count)
            vals = "  ".join(f"{self.hits[scope][k]:.4f}   " for k in ks)
            lines.append(f"{scope:<9s} {n:>7d}  {vals}")
        return "\n".join(lines) + "\n"


def filtered_rank(
    fused: EntityDistribution,
    query: Query,
    filter_set: set[int],
    entity_count: int,
) -> int:
    """Mid-tie filtered rank of the query answer over the full vocabulary."""
    if query.answer is None:
        raise ValueError("ranking requires a query with an answer")
    answer = query.answer
    score_ans = fused.mass(answer)
    greater = 0
    equal = 0
    excluded = {answer} | (filter_set - {answer})
    for e, p in zip(fused.entities, fused.probs):
        e = int(e)
        if e in excluded:
            continue
        if p > score_ans:
            greater += 1
        elif p == score_ans:
            equal += 1
    zero_others = entity_count - len(fused.support | filter_set | {answer})
    if score_ans == 0.0:
        equal += zero_others
    return 1 + greater + equal // 2


System = Callable[[int, Query], "Prediction | EntityDistribution"]


def evaluate(
    system: System,
    queries: Sequence[Query],
    kg: TemporalKG,
    ks: Sequence[int] = EVAL_KS,
    dump_path: str | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> MetricsReport:
    """Single-step protocol: every query is answered from ground-truth history."""
    hit_counts: dict[str, dict[int, int]] = {
        s: {k: 0 for k in ks} for s in ("overall", "forward", "inverse")
    }
    n: dict[str, int] = {"overall": 0, "forward": 0, "inverse": 0}
    dump_fh = open(dump_path, "w", encoding="utf-8") if dump_path else None
    try:
        for qid, query in enumerate(queries):
            out = system(qid, query)
            pred = out if isinstance(out, Prediction) else Prediction(out)
            fset = same_time_filter_set(kg, query)
            rank = filtered_rank(pred.dist, query, fset, kg.entity_count)
            for scope in ("overall", query.direction):
                n[scope] += 1
                for k in ks:
                    if rank <= k:
                        hit_counts[scope][k] += 1
            if dump_fh is not None:
                rec = RankRecord(
                    qid, rank, pred.llm_support, pred.adapter_support,
                    pred.dist.support_size, query.direction,
                )
                dump_fh.write(json.dumps(rec.__dict__, sort_keys=True) + "\n")
            if progress is not None:
                progress(qid + 1, len(queries))
    finally:
        if dump_fh is not None:
            dump_fh.close()
    hits = {
        scope: {k: (hit_counts[scope][k] / n[scope] if n[scope] else 0.0) for k in ks}
        for scope in hit_counts
        if n[scope] or scope == "overall"
    }
    return MetricsReport(hits=hits, query_count=n["overall"], counts=n)


def make_cache_system(cache: DistributionCache) -> System:
    """LM alone: cached distributions, no adapter (the no_adapter ablation)."""

    def system(qid: int, query: Query) -> Prediction:
        dist = cache.distribution(qid)
        return Prediction(dist, llm_support=dist.support_size)

    return system


def make_adapter_system(kg: TemporalKG, adapter) -> System:
    def system(qid: int, query: Query) -> Prediction:
        dist = adapter.score_query(kg.before(query.time), query)
        return Prediction(dist, adapter_support=dist.support_size)

    return system


def make_fused_system(
    kg: TemporalKG,
    cache_or_pairs: DistributionCache | Callable[[int, Query], EntityDistribution],
    adapter,
    gate: torch.nn.Module,
    config: FusionConfig,
) -> System:
    """The full pipeline: cached LM distribution fused with the adapter."""

    def llm_dist(qid: int, query: Query) -> EntityDistribution:
        if isinstance(cache_or_pairs, DistributionCache):
            return cache_or_pairs.distribution(qid)
        return cache_or_pairs(qid, query)

    def system(qid: int, query: Query) -> Prediction:
        p_llm = llm_dist(qid, query)
        with torch.no_grad():
            p_ada = adapter.score_query(kg.before(query.time), query)
            w = float(gate_weight(gate, adapter.embeddings.weight[query.relation]))
        fused = fuse(p_llm, p_ada, w, config)
        return Prediction(fused, llm_support=p_llm.support_size, adapter_support=p_ada.support_size)

    return system


def make_static_rule_system(
    kg: TemporalKG,
    store: RuleStore,
    lam: float = 0.1,
    window: int | None = None,
    cap: int = 1000,
) -> System:
    """Static rule scoring only (the classic rule-mining baseline)."""

    def system(qid: int, query: Query) -> Prediction:
        view = kg.before(query.time)
        groundings = ground_query(view, query, store, window=window, cap=cap)
        dist = static_score(groundings, lam, query.time)
        return Prediction(dist, adapter_support=dist.support_size)

    return system


def make_iterative_llm_fn(
    backend: LanguageModelBackend,
    prompt_fn: Callable[[Query], object],
    k: int,
    n_max: int,
    entity_count: int,
) -> Callable[[int, Query], EntityDistribution]:
    """LM distributions from the iterative-draws stub instead of beam search."""

    def llm_dist(qid: int, query: Query) -> EntityDistribution:
        pairs = iterative_draws(backend, prompt_fn(query), k, n_max, entity_count)
        return build_entity_distribution(pairs)

    return llm_dist


def run_ablation(
    mode: str,
    *,
    kg: TemporalKG,
    queries: Sequence[Query],
    cache: DistributionCache | None = None,
    adapter=None,
    gate: torch.nn.Module | None = None,
    fusion_config: FusionConfig | None = None,
    store: RuleStore | None = None,
    backend: LanguageModelBackend | None = None,
    prompt_fn: Callable[[Query], object] | None = None,
    k: int | None = None,
    n_max: int | None = None,
    static_lam: float = 0.1,
    ks: Sequence[int] = EVAL_KS,
    dump_path: str | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> MetricsReport:
    """Evaluate one pipeline variant; raises listing any missing artifact."""

    def require(**artifacts):
        missing = [name for name, value in artifacts.items() if value is None]
        if missing:
            raise MissingArtifactError(f"mode {mode!r} requires: {', '.join(missing)}")

    if mode == "no_adapter":
        require(cache=cache)
        system = make_cache_system(cache)
    elif mode == "adapter_only":
        require(adapter=adapter)
        system = make_adapter_system(kg, adapter)
    elif mode == "full":
        require(cache=cache, adapter=adapter, gate=gate, fusion_config=fusion_config)
        system = make_fused_system(kg, cache, adapter, gate, fusion_config)
    elif mode == "no_bsl":
        require(
            backend=backend, prompt_fn=prompt_fn, k=k, n_max=n_max,
            adapter=adapter, gate=gate, fusion_config=fusion_config,
        )
        llm_fn = make_iterative_llm_fn(backend, prompt_fn, k, n_max, kg.entity_count)
        system = make_fused_system(kg, llm_fn, adapter, gate, fusion_config)
    elif mode == "tlogic_static":
        require(store=store)
        system = make_static_rule_system(kg, store, lam=static_lam)
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")
    return evaluate(system, queries, kg, ks=ks, dump_path=dump_path, progress=progress)
