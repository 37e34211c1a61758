"""Adapter training against a frozen, cache-backed language model.

Mini-batch gradient descent over training queries: load the cached LM
distribution, run the adapter forward, gate, fuse, and take a BCE step on
adapter + gate parameters only. The cache is never touched. After every
epoch the fused system is evaluated on the validation split and the best
checkpoint (by validation Hits@3) is kept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .data import DatasetSplit, Query, TemporalKG
from .adapters import RuleAdapter, save_checkpoint
from .evaluation import MetricsReport, evaluate, make_fused_system
from .fusion import FusionConfig, bce_from_masses, fuse_masses, gate_weight
from .lm import DistributionCache
from .rules import GroundingSet, ground_query


class TrainingError(Exception):
    """Unusable training inputs, e.g. cache gaps."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 1e-4
    batch_size: int = 128
    seed: int = 0
    validation_metric: int = 3  # Hits@K used for checkpoint selection


@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = 0.0
    checkpoint_path: str | None = None
    skipped_queries: int = 0


def _check_coverage(cache: DistributionCache, n_queries: int, name: str) -> None:
    missing = sorted(set(range(n_queries)) - set(cache.entries))
    if missing:
        head = ", ".join(map(str, missing[:10]))
        raise TrainingError(
            f"{name} cache is missing {len(missing)} of {n_queries} query ids "
            f"(first: {head}); refusing to recompute silently"
        )


def _query_loss(
    adapter,
    gate: nn.Module,
    query: Query,
    p_llm,
    candidates: np.ndarray,
    probs: torch.Tensor | None,
    config: FusionConfig,
) -> torch.Tensor | None:
    """Differentiable BCE for one query; None when neither side predicts."""
    llm_zero = p_llm.is_zero
    ada_zero = probs is None or len(candidates) == 0
    if llm_zero and ada_zero:
        return None
    if ada_zero:
        # fused == cached LM distribution: constant, no gradient signal
        union = p_llm.entities
        fused = torch.from_numpy(p_llm.probs.copy())
    elif llm_zero:
        union = candidates
        fused = probs
    else:
        union = np.union1d(p_llm.entities, candidates)
        lm_vec = np.zeros(len(union))
        lm_vec[np.searchsorted(union, p_llm.entities)] = p_llm.probs
        lm_t = torch.from_numpy(lm_vec).to(probs.dtype)
        ada_t = torch.zeros(len(union), dtype=probs.dtype)
        ada_t = ada_t.index_add(
            0, torch.from_numpy(np.searchsorted(union, candidates)), probs
        )
        w = gate_weight(gate, adapter.embeddings.weight[query.relation])
        fused = fuse_masses(lm_t, ada_t, w, config)
    return bce_from_masses(union, fused, query.answer)


def train_adapter(
    adapter,
    gate: nn.Module,
    kg: TemporalKG,
    split: DatasetSplit,
    train_cache: DistributionCache,
    valid_cache: DistributionCache,
    train_config: TrainConfig,
    fusion_config: FusionConfig,
    out_dir: str | Path | None = None,
    config_hash: str = "",
    include_inverse: bool = True,
    progress: Callable[[str, int, int], None] | None = None,
) -> TrainResult:
    """Train adapter + gate parameters; the LM cache stays frozen.

    Logs one CSV row per (epoch, split); epoch 0 is the untrained forward
    pass. Returns with the best-validation weights restored in place.
    """
    train_queries = split.queries("train", include_inverse=include_inverse)
    valid_queries = split.queries("valid", include_inverse=include_inverse)
    _check_coverage(train_cache, len(train_queries), "train")
    _check_coverage(valid_cache, len(valid_queries), "valid")

    torch.manual_seed(train_config.seed)
    perm_rng = np.random.default_rng(train_config.seed)
    params = list(adapter.parameters()) + list(gate.parameters())
    optimizer = torch.optim.Adam(params, lr=train_config.learning_rate)
    bundle = nn.ModuleDict({"adapter": adapter, "gate": gate})

    # grounding structure is parameter-free, so rule-adapter groundings are
    # computed once per query and reused across epochs
    grounding_memo: dict[int, GroundingSet] | None = (
        {} if isinstance(adapter, RuleAdapter) else None
    )

    def adapter_forward(qid: int, query: Query):
        view = kg.before(query.time)
        if grounding_memo is not None:
            gset = grounding_memo.get(qid)
            if gset is None:
                gset = ground_query(view, query, adapter.store, adapter.window, adapter.grounding_cap)
                grounding_memo[qid] = gset
            return adapter.score_groundings(query, gset)
        return adapter.forward_scores(view, query)

    def epoch_loss_only() -> tuple[float, int]:
        total, used, skipped = 0.0, 0, 0
        with torch.no_grad():
            for qid, query in enumerate(train_queries):
                loss = _query_loss(
                    adapter, gate, query, train_cache.distribution(qid),
                    *adapter_forward(qid, query), fusion_config,
                )
                if loss is None:
                    skipped += 1
                    continue
                total += float(loss)
                used += 1
        return (total / max(used, 1)), skipped

    def validate() -> MetricsReport:
        system = make_fused_system(kg, valid_cache, adapter, gate, fusion_config)
        with torch.no_grad():
            return evaluate(system, valid_queries, kg)

    result = TrainResult()
    rows = result.rows
    k_sel = train_config.validation_metric

    loss0, result.skipped_queries = epoch_loss_only()
    rows.append({"epoch": 0, "split": "train", "hits1": "", "hits3": "", "hits10": "", "loss": f"{loss0:.6f}"})
    report = validate()
    rows.append(_valid_row(0, report))
    best_metric = report.hits["overall"][k_sel]
    best_epoch = 0
    best_state = {k: v.detach().clone() for k, v in bundle.state_dict().items()}

    n = len(train_queries)
    for epoch in range(1, train_config.epochs + 1):
        order = perm_rng.permutation(n)
        total, used = 0.0, 0
        for start in range(0, n, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            losses = []
            for qid in batch:
                qid = int(qid)
                query = train_queries[qid]
                loss = _query_loss(
                    adapter, gate, query, train_cache.distribution(qid),
                    *adapter_forward(qid, query), fusion_config,
                )
                if loss is not None:
                    losses.append(loss)
            if not losses:
                continue
            batch_loss = torch.stack(losses).mean()
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            total += float(batch_loss) * len(losses)
            used += len(losses)
            if progress is not None:
                progress(f"epoch {epoch}", min(start + train_config.batch_size, n), n)
        rows.append({
            "epoch": epoch, "split": "train", "hits1": "", "hits3": "", "hits10": "",
            "loss": f"{total / max(used, 1):.6f}",
        })
        report = validate()
        rows.append(_valid_row(epoch, report))
        metric = report.hits["overall"][k_sel]
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in bundle.state_dict().items()}

    bundle.load_state_dict(best_state)
    result.best_epoch = best_epoch
    result.best_metric = best_metric
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "adapter.ckpt"
        save_checkpoint(ckpt, bundle, config_hash, extra={"best_epoch": best_epoch})
        result.checkpoint_path = str(ckpt)
        with open(out_dir / "training_log.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "split", "hits1", "hits3", "hits10", "loss"])
            writer.writeheader()
            writer.writerows(rows)
    return result


def _valid_row(epoch: int, report: MetricsReport) -> dict:
    hits = report.hits["overall"]
    return {
        "epoch": epoch,
        "split": "valid",
        "hits1": f"{hits[1]:.6f}",
        "hits3": f"{hits[3]:.6f}",
        "hits10": f"{hits[10]:.6f}",
        "loss": "",
    }
