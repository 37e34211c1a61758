"""Combining the frozen-LM and adapter distributions, the gate, and the loss.

The default combiner is a gated mixture (1-w) * P_lm + w * P_adapter over
the union support; an epsilon-smoothed product mode is kept for fidelity
experiments. The gate is either a fixed 0.5 (averaging) or a small MLP with
a sigmoid over the query relation's embedding. Training minimizes binary
cross-entropy over the fused support. Torch twins of the numpy operations
carry gradients for the training loop and are parity-tested against them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from .distributions import EntityDistribution

BCE_CLAMP = 1e-8

FusionMode = Literal["mixture", "product"]
GateKind = Literal["mlp_gate", "fixed_half"]


@dataclass(frozen=True)
class FusionConfig:
    mode: FusionMode = "mixture"
    gate: GateKind = "mlp_gate"
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.mode not in ("mixture", "product"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.gate not in ("mlp_gate", "fixed_half"):
            raise ValueError(f"unknown gate {self.gate!r}")
        if self.mode == "product" and self.epsilon <= 0:
            raise ValueError("product fusion requires epsilon > 0")


def _aligned(dist: EntityDistribution, union: np.ndarray) -> np.ndarray:
    vec = np.zeros(len(union))
    pos = np.searchsorted(union, dist.entities)
    vec[pos] = dist.probs
    return vec


def fuse(
    p_llm: EntityDistribution,
    p_adapter: EntityDistribution,
    w: float,
    config: FusionConfig,
) -> EntityDistribution:
    """Combine the two distributions over their union support.

    Degrades gracefully: a zero distribution on either side returns the
    other unchanged; both zero stays zero. ``w`` is the adapter share and
    must lie strictly inside (0, 1).
    """
    if not 0.0 < w < 1.0:
        raise ValueError(f"gate weight must be in (0, 1), got {w}")
    if p_llm.is_zero:
        return p_adapter
    if p_adapter.is_zero:
        return p_llm
    union = np.union1d(p_llm.entities, p_adapter.entities)
    lm = _aligned(p_llm, union)
    ada = _aligned(p_adapter, union)
    if config.mode == "mixture":
        mass = (1.0 - w) * lm + w * ada
    else:
        mass = (lm + config.epsilon) * (ada + config.epsilon) ** w
    return EntityDistribution.from_masses(union, mass)


def fuse_masses(
    lm: torch.Tensor, ada: torch.Tensor, w: torch.Tensor, config: FusionConfig
) -> torch.Tensor:
    """Torch twin of :func:`fuse` over already union-aligned mass vectors."""
    if config.mode == "mixture":
        mass = (1.0 - w) * lm + w * ada
    else:
        mass = (lm + config.epsilon) * (ada + config.epsilon) ** w
    return mass / mass.sum()


class GateMLP(nn.Module):
    """Two-layer perceptron with a sigmoid head; input is a relation embedding."""

    def __init__(self, dim: int, hidden: int | None = None, dtype: torch.dtype = torch.float32):
        super().__init__()
        hidden = hidden or dim
        self.lin1 = nn.Linear(dim, hidden, dtype=dtype)
        self.lin2 = nn.Linear(hidden, 1, dtype=dtype)

    def forward(self, relation_embedding: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.lin2(torch.tanh(self.lin1(relation_embedding))).squeeze(-1))


class FixedGate(nn.Module):
    """Constant 0.5: plain averaging of the two distributions."""

    def forward(self, relation_embedding: torch.Tensor) -> torch.Tensor:
        return torch.tensor(0.5, dtype=relation_embedding.dtype)


def make_gate(config: FusionConfig, dim: int, dtype: torch.dtype = torch.float32) -> nn.Module:
    return GateMLP(dim, dtype=dtype) if config.gate == "mlp_gate" else FixedGate()


def gate_weight(gate: nn.Module, relation_embedding: torch.Tensor) -> torch.Tensor:
    """Adapter share w in (0, 1) for this query's relation."""
    return gate(relation_embedding)


def bce_loss(fused: EntityDistribution, answer: int, entity_count: int) -> float:
    """Binary cross-entropy over the fused support.

    The answer contributes -log(p + eps); every other supported entity j
    contributes -log(1 - p_j + eps). Entities outside the support have
    p = 0, so log(1 - p) = 0 and they drop out of the vocabulary-wide sum.
    """
    if not 0 <= answer < entity_count:
        raise ValueError(f"answer {answer} outside entity vocabulary {entity_count}")
    p_ans = fused.mass(answer)
    loss = -np.log(p_ans + BCE_CLAMP)
    for ent, p in zip(fused.entities, fused.probs):
        if int(ent) != answer:
            loss -= np.log(1.0 - p + BCE_CLAMP)
    return float(loss)


def bce_from_masses(union: np.ndarray, fused: torch.Tensor, answer: int) -> torch.Tensor:
    """Torch twin of :func:`bce_loss` over a union-aligned fused vector."""
    pos = int(np.searchsorted(union, answer))
    present = pos < len(union) and int(union[pos]) == answer
    neg_terms = torch.log1p(-fused + BCE_CLAMP)
    if present:
        loss = -torch.log(fused[pos] + BCE_CLAMP) - (neg_terms.sum() - neg_terms[pos])
    else:
        loss = -torch.log(torch.tensor(BCE_CLAMP, dtype=fused.dtype)) - neg_terms.sum()
    return loss
