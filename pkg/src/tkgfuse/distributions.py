"""Sparse probability distributions over entity ids.

The lingua franca between the language-model side, the graph adapters, and
fusion: an explicit support (sorted entity ids) with strictly positive
masses summing to one, or the special zero distribution meaning "no
prediction".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class EntityDistribution:
    """Probability mass over a sparse, sorted entity support.

    ``entities`` is strictly increasing; ``probs`` aligns with it, is
    strictly positive, and sums to 1 (within 1e-9). The zero distribution
    has empty support.
    """

    entities: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    probs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EntityDistribution):
            return NotImplemented
        return np.array_equal(self.entities, other.entities) and np.array_equal(
            self.probs, other.probs
        )

    def __post_init__(self) -> None:
        ents = np.asarray(self.entities, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if ents.shape != probs.shape or ents.ndim != 1:
            raise ValueError("entities and probs must be aligned 1-d arrays")
        if len(ents) > 1 and not np.all(np.diff(ents) > 0):
            raise ValueError("entity support must be strictly increasing")
        if len(probs):
            if np.any(probs <= 0) or not np.isfinite(probs).all():
                raise ValueError("masses must be finite and > 0")
            if abs(float(probs.sum()) - 1.0) > 1e-9:
                raise ValueError(f"masses must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "entities", ents)
        object.__setattr__(self, "probs", probs)
        ents.setflags(write=False)
        probs.setflags(write=False)

    @classmethod
    def zero(cls) -> "EntityDistribution":
        return cls()

    @classmethod
    def point_mass(cls, entity: int) -> "EntityDistribution":
        return cls(np.array([entity], dtype=np.int64), np.array([1.0]))

    @classmethod
    def from_scores(cls, entities: np.ndarray, scores: np.ndarray) -> "EntityDistribution":
        """Softmax of raw scores over the given (unsorted, unique) entities."""
        entities = np.asarray(entities, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        if len(entities) == 0:
            return cls.zero()
        order = np.argsort(entities, kind="stable")
        entities, scores = entities[order], scores[order]
        shifted = scores - scores.max()
        w = np.exp(shifted)
        return cls(entities, w / w.sum())

    @classmethod
    def from_masses(cls, entities: np.ndarray, masses: np.ndarray) -> "EntityDistribution":
        """Renormalize nonnegative masses; zero-mass entities are dropped."""
        entities = np.asarray(entities, dtype=np.int64)
        masses = np.asarray(masses, dtype=np.float64)
        keep = masses > 0
        entities, masses = entities[keep], masses[keep]
        if len(entities) == 0:
            return cls.zero()
        order = np.argsort(entities, kind="stable")
        entities, masses = entities[order], masses[order]
        return cls(entities, masses / masses.sum())

    @property
    def is_zero(self) -> bool:
        return len(self.entities) == 0

    @property
    def support(self) -> set[int]:
        return {int(e) for e in self.entities}

    @property
    def support_size(self) -> int:
        return len(self.entities)

    def mass(self, entity: int) -> float:
        """Probability of one entity (0.0 outside the support)."""
        i = int(np.searchsorted(self.entities, entity))
        if i < len(self.entities) and int(self.entities[i]) == entity:
            return float(self.probs[i])
        return 0.0

    def argmax(self) -> int | None:
        """Highest-mass entity, lowest id on exact ties; None when zero."""
        if self.is_zero:
            return None
        best = int(np.argmax(self.probs))  # np.argmax returns the first max
        return int(self.entities[best])

    def top(self, k: int) -> list[tuple[int, float]]:
        """Top-k (entity, mass) pairs, mass-descending then id-ascending."""
        order = np.lexsort((self.entities, -self.probs))[:k]
        return [(int(self.entities[i]), float(self.probs[i])) for i in order]

    def items(self) -> list[tuple[int, float]]:
        return [(int(e), float(p)) for e, p in zip(self.entities, self.probs)]
