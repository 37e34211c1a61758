"""Shared fixtures: toy graphs and datasets used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from tkgfuse.data import TemporalKG, augment_inverse


def random_facts(rng, n_entities, n_relations, n_snapshots, n_facts):
    raw = np.stack(
        [
            rng.integers(0, n_entities, n_facts * 2),
            rng.integers(0, n_relations, n_facts * 2),
            rng.integers(0, n_entities, n_facts * 2),
            rng.integers(0, n_snapshots, n_facts * 2),
        ],
        axis=1,
    ).astype(np.int64)
    return np.unique(raw, axis=0)[:n_facts]


def random_kg(seed=0, n_entities=20, n_relations=3, n_snapshots=12, n_facts=120, augmented=True):
    rng = np.random.default_rng(seed)
    facts = random_facts(rng, n_entities, n_relations, n_snapshots, n_facts)
    kg = TemporalKG(facts, n_entities, n_relations)
    return augment_inverse(kg) if augmented else kg


@pytest.fixture
def toy_kg():
    """Small fixed graph: 10 entities, 2 base relations, times 0..4."""
    facts = np.array(
        [
            [0, 0, 1, 0],
            [0, 1, 2, 0],
            [1, 0, 2, 1],
            [2, 1, 3, 1],
            [0, 0, 3, 2],
            [3, 0, 4, 2],
            [0, 0, 1, 3],
            [4, 1, 0, 3],
            [0, 1, 5, 4],
            [5, 0, 6, 4],
        ],
        dtype=np.int64,
    )
    return TemporalKG(facts, entity_count=10, relation_count=2)


@pytest.fixture
def toy_kg_aug(toy_kg):
    return augment_inverse(toy_kg)


def write_split_files(path, train, valid, test, stat=None, relations=None):
    path.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(path / f"{name}.txt", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write("\t".join(str(x) for x in row) + "\n")
    if stat is not None:
        (path / "stat.txt").write_text(f"{stat[0]}\t{stat[1]}\n", encoding="utf-8")
    if relations is not None:
        with open(path / "relations.tsv", "w", encoding="utf-8") as fh:
            for rid, name in relations:
                fh.write(f"{rid}\t{name}\n")
