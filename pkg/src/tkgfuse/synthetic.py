"""Synthetic dataset generators for tests, benchmarks, and sanity runs.

Two families: a recurrence graph whose ground-truth answer is always the
most recent object seen for the query's (subject, relation) pair, and
release-shaped random corpora that mimic the public ICEWS/GDELT file layout
and statistics without any real data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetSplit, TemporalKG, load_dataset


@dataclass(frozen=True)
class RecurrenceSpec:
    """Knobs for the recurrence generator; defaults suit desk-scale training."""

    n_entities: int = 200
    n_relations: int = 4
    n_subjects: int = 100
    relations_per_subject: int = 4
    pool_size: int = 3
    n_snapshots: int = 75
    train_end: int = 55
    valid_end: int = 65
    emit_prob: float = 0.5
    seed: int = 0


def make_recurrence_dataset(out_dir: str | Path, spec: RecurrenceSpec = RecurrenceSpec()) -> dict:
    """Write a recurrence TKG in the loadable train/valid/test layout.

    Every active (subject, relation) pair keeps one fixed object drawn from
    a small per-subject pool and re-emits the fact at random snapshots, so
    the most recent object for the pair is always the next one. Shared pool
    objects across a subject's relations create plausible-but-wrong rule
    candidates that an adapter has to learn to down-weight.
    """
    rng = np.random.default_rng(spec.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    subjects = rng.choice(spec.n_entities, size=spec.n_subjects, replace=False)
    rows = []
    for s in subjects:
        pool = rng.choice(spec.n_entities, size=spec.pool_size, replace=False)
        rels = rng.choice(
            spec.n_relations,
            size=min(spec.relations_per_subject, spec.n_relations),
            replace=False,
        )
        for r in rels:
            obj = int(rng.choice(pool))
            emit = rng.random(spec.n_snapshots) < spec.emit_prob
            for t in np.nonzero(emit)[0]:
                rows.append((int(s), int(r), obj, int(t)))
    facts = np.array(sorted(set(rows)), dtype=np.int64)

    train = facts[facts[:, 3] < spec.train_end]
    valid = facts[(facts[:, 3] >= spec.train_end) & (facts[:, 3] < spec.valid_end)]
    test = facts[facts[:, 3] >= spec.valid_end]
    for name, arr in (("train", train), ("valid", valid), ("test", test)):
        with open(out_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            for s, r, o, t in arr:
                fh.write(f"{s}\t{r}\t{o}\t{t}\n")
    with open(out_dir / "stat.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{spec.n_entities}\t{spec.n_relations}\n")
    with open(out_dir / "relations.tsv", "w", encoding="utf-8") as fh:
        for r in range(spec.n_relations):
            fh.write(f"{r}\tEvent_type_{r}\n")
    return {
        "facts": len(facts),
        "train": len(train),
        "valid": len(valid),
        "test": len(test),
        "entities": spec.n_entities,
        "relations": spec.n_relations,
    }


def load_recurrence_dataset(out_dir: str | Path) -> tuple[TemporalKG, DatasetSplit]:
    return load_dataset(out_dir, interval=1)


@dataclass(frozen=True)
class ReleaseShape:
    """Public-release statistics to mimic (entity/relation counts, split sizes)."""

    name: str
    entity_count: int
    relation_count: int
    n_train: int
    n_valid: int
    n_test: int
    n_snapshots: int
    interval: int


ICEWS14_SHAPE = ReleaseShape("ICEWS14", 7128, 230, 74854, 8514, 7317, 365, 24)
ICEWS18_SHAPE = ReleaseShape("ICEWS18", 23033, 256, 373018, 45995, 49545, 304, 24)
GDELT_SHAPE = ReleaseShape("GDELT", 5850, 238, 79319, 9957, 9715, 2976, 15)


def make_release_shaped_dataset(out_dir: str | Path, shape: ReleaseShape, seed: int = 0) -> None:
    """Random corpus matching a release's exact statistics and file layout.

    Raw timestamps are snapshot_index * interval; split snapshot ranges are
    allocated proportionally to split sizes and are strictly ordered. Facts
    are unique within each split, matching the post-dedup counts.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = shape.n_train + shape.n_valid + shape.n_test
    t_train = max(1, round(shape.n_snapshots * shape.n_train / total))
    t_valid = max(1, round(shape.n_snapshots * shape.n_valid / total))
    bounds = {
        "train": (0, t_train),
        "valid": (t_train, t_train + t_valid),
        "test": (t_train + t_valid, shape.n_snapshots),
    }
    sizes = {"train": shape.n_train, "valid": shape.n_valid, "test": shape.n_test}
    for name, size in sizes.items():
        lo, hi = bounds[name]
        rows = np.empty((0, 4), dtype=np.int64)
        while len(rows) < size:
            need = size - len(rows)
            batch = np.stack(
                [
                    rng.integers(0, shape.entity_count, need * 2),
                    rng.integers(0, shape.relation_count, need * 2),
                    rng.integers(0, shape.entity_count, need * 2),
                    rng.integers(lo, hi, need * 2),
                ],
                axis=1,
            ).astype(np.int64)
            rows = np.unique(np.concatenate([rows, batch]), axis=0)
        keep = rng.choice(len(rows), size=size, replace=False)
        rows = rows[np.sort(keep)]
        rows = rows[np.argsort(rows[:, 3], kind="stable")]
        with open(out_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            for s, r, o, t in rows:
                fh.write(f"{s}\t{r}\t{o}\t{t * shape.interval}\n")
    with open(out_dir / "stat.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{shape.entity_count}\t{shape.relation_count}\n")
