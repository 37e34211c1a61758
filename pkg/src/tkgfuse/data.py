"""Temporal knowledge graph data model, loading, and indexing.

A fact is a quadruple (subject, relation, object, time) with integer ids and
a normalized snapshot index for time. The graph is stored as one time-sorted
int64 array plus sorted auxiliary orderings (see :class:`FactIndex`) that
back every traversal in the package. All structures are immutable after
load and safe for concurrent reads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

COL_S, COL_R, COL_O, COL_T = 0, 1, 2, 3

Direction = Literal["forward", "inverse"]


class DataError(Exception):
    """Malformed input data or violated dataset invariants."""


@dataclass(frozen=True)
class Quadruple:
    """A timestamped fact (subject, relation, object, time)."""

    subject: int
    relation: int
    object: int
    time: int

    def as_row(self) -> np.ndarray:
        return np.array([self.subject, self.relation, self.object, self.time], dtype=np.int64)


@dataclass(frozen=True)
class Query:
    """An object-prediction query (subject, relation, ?, time).

    ``answer`` is present for train/eval queries. Inverse-direction queries
    carry the inverse relation id (base id + relation_count).
    """

    subject: int
    relation: int
    time: int
    answer: int | None = None
    direction: Direction = "forward"


class FactIndex:
    """Sorted orderings over one fact array, shared by the traversal kernels.

    sr_*:   facts sorted by (subject * n_rel2 + relation, time, object)
    sro_*:  facts sorted by ((subject * n_rel2 + relation) * |E| + object, time)
    s_*:    subject-CSR, facts sorted by (subject, time, relation, object)
    re_*:   relation-CSR, facts sorted by (relation, time, subject, object)
    """

    def __init__(self, facts: np.ndarray, entity_count: int, n_rel2: int) -> None:
        self.entity_count = entity_count
        self.n_rel2 = n_rel2
        s, r, o, t = facts[:, COL_S], facts[:, COL_R], facts[:, COL_O], facts[:, COL_T]
        if entity_count * n_rel2 * entity_count >= 2**63:
            raise DataError("graph too large for int64 composite keys")
        key = s * n_rel2 + r

        order = np.lexsort((o, t, key))
        self.sr_key = np.ascontiguousarray(key[order])
        self.sr_t = np.ascontiguousarray(t[order])
        self.sr_o = np.ascontiguousarray(o[order])

        key3 = key * entity_count + o
        order = np.lexsort((t, key3))
        self.sro_key = np.ascontiguousarray(key3[order])
        self.sro_t = np.ascontiguousarray(t[order])

        order = np.lexsort((o, r, t, s))
        s_sorted = s[order]
        self.ns_r = np.ascontiguousarray(r[order])
        self.ns_o = np.ascontiguousarray(o[order])
        self.ns_t = np.ascontiguousarray(t[order])
        self.s_ptr = np.searchsorted(s_sorted, np.arange(entity_count + 1, dtype=np.int64))

        order = np.lexsort((o, s, t, r))
        r_sorted = r[order]
        self.re_s = np.ascontiguousarray(s[order])
        self.re_o = np.ascontiguousarray(o[order])
        self.re_t = np.ascontiguousarray(t[order])
        self.rel_ptr = np.searchsorted(r_sorted, np.arange(n_rel2 + 1, dtype=np.int64))

    def sr_block(self, subject: int, relation: int) -> tuple[int, int]:
        """Index range of the (subject, relation) block in the sr arrays."""
        key = subject * self.n_rel2 + relation
        lo = int(np.searchsorted(self.sr_key, key, side="left"))
        hi = int(np.searchsorted(self.sr_key, key, side="right"))
        return lo, hi

    def objects_at(self, subject: int, relation: int, time: int) -> np.ndarray:
        """Objects o with (subject, relation, o, time) present."""
        lo, hi = self.sr_block(subject, relation)
        tlo = lo + int(np.searchsorted(self.sr_t[lo:hi], time, side="left"))
        thi = lo + int(np.searchsorted(self.sr_t[lo:hi], time, side="right"))
        return self.sr_o[tlo:thi]

    def head_holds(self, subjects, relation: int, objects, afters) -> np.ndarray:
        """Elementwise: does a fact (subject, relation, object, t > after) exist."""
        subjects = np.asarray(subjects, dtype=np.int64)
        objects = np.asarray(objects, dtype=np.int64)
        afters = np.asarray(afters, dtype=np.int64)
        key3 = (subjects * self.n_rel2 + relation) * self.entity_count + objects
        lo = np.searchsorted(self.sro_key, key3, side="left")
        hi = np.searchsorted(self.sro_key, key3, side="right")
        out = hi > lo
        out[out] = self.sro_t[hi[out] - 1] > afters[out]
        return out

    def recent_events(self, subject: int, before: int, limit: int | None) -> np.ndarray:
        """Up to ``limit`` most recent facts (r, o, t) of ``subject`` with t < before.

        Rows are ordered most recent first; ties broken by ascending
        (relation, object) for determinism.
        """
        lo = int(self.s_ptr[subject])
        hi = int(self.s_ptr[subject + 1])
        cut = lo + int(np.searchsorted(self.ns_t[lo:hi], before, side="left"))
        start = max(lo, cut - limit) if limit is not None else lo
        # the slice is (t, r, o)-ascending; reverse blocks of equal t carefully
        rows = np.stack([self.ns_r[start:cut], self.ns_o[start:cut], self.ns_t[start:cut]], axis=1)
        if len(rows) == 0:
            return rows
        order = np.lexsort((rows[:, 1], rows[:, 0], -rows[:, 2]))
        return rows[order]


class TemporalKG:
    """An immutable temporal knowledge graph over integer ids.

    Facts are held time-sorted, so any history prefix is a zero-copy slice.
    ``relation_count`` is the base count; after inverse augmentation the
    working vocabulary is ``2 * relation_count``.
    """

    def __init__(
        self,
        facts: np.ndarray,
        entity_count: int,
        relation_count: int,
        augmented: bool = False,
    ) -> None:
        facts = np.asarray(facts, dtype=np.int64)
        if facts.ndim != 2 or facts.shape[1] != 4:
            raise DataError(f"fact array must be (N, 4), got {facts.shape}")
        order = np.lexsort((facts[:, COL_O], facts[:, COL_R], facts[:, COL_S], facts[:, COL_T]))
        self.facts = facts[order]
        self.facts.setflags(write=False)
        self.entity_count = int(entity_count)
        self.relation_count = int(relation_count)
        self.augmented = bool(augmented)
        self._index: FactIndex | None = None

    @property
    def n_rel2(self) -> int:
        return 2 * self.relation_count

    @property
    def working_relation_count(self) -> int:
        """Size of the relation vocabulary as stored (doubled once augmented)."""
        return self.n_rel2 if self.augmented else self.relation_count

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    @property
    def num_snapshots(self) -> int:
        return int(self.facts[-1, COL_T]) + 1 if len(self.facts) else 0

    @property
    def index(self) -> FactIndex:
        if self._index is None:
            self._index = FactIndex(self.facts, self.entity_count, self.n_rel2)
        return self._index

    def snapshot(self, t: int) -> np.ndarray:
        """All facts at snapshot index ``t``."""
        lo = int(np.searchsorted(self.facts[:, COL_T], t, side="left"))
        hi = int(np.searchsorted(self.facts[:, COL_T], t, side="right"))
        return self.facts[lo:hi]

    def before(self, t: int) -> "TKGView":
        """Read-only view of all facts strictly before snapshot ``t``."""
        return TKGView(self, int(t))

    def by_subject(self, subject: int) -> np.ndarray:
        """Facts with the given subject, most recent first."""
        idx = self.index
        lo, hi = int(idx.s_ptr[subject]), int(idx.s_ptr[subject + 1])
        rows = np.stack(
            [
                np.full(hi - lo, subject, dtype=np.int64),
                idx.ns_r[lo:hi],
                idx.ns_o[lo:hi],
                idx.ns_t[lo:hi],
            ],
            axis=1,
        )
        return rows[::-1]

    def by_subject_relation(self, subject: int, relation: int) -> np.ndarray:
        """Facts with the given (subject, relation), most recent first."""
        idx = self.index
        lo, hi = idx.sr_block(subject, relation)
        rows = np.stack(
            [
                np.full(hi - lo, subject, dtype=np.int64),
                np.full(hi - lo, relation, dtype=np.int64),
                idx.sr_o[lo:hi],
                idx.sr_t[lo:hi],
            ],
            axis=1,
        )
        return rows[::-1]

    def iter_quadruples(self) -> Iterator[Quadruple]:
        for s, r, o, t in self.facts:
            yield Quadruple(int(s), int(r), int(o), int(t))


class TKGView:
    """Immutable view of a :class:`TemporalKG` restricted to times < t_hi."""

    def __init__(self, kg: TemporalKG, t_hi: int) -> None:
        if t_hi < 0:
            raise DataError(f"view bound must be >= 0, got {t_hi}")
        self.kg = kg
        self.t_hi = t_hi
        self._own_index: FactIndex | None = None

    @property
    def facts(self) -> np.ndarray:
        cut = int(np.searchsorted(self.kg.facts[:, COL_T], self.t_hi, side="left"))
        return self.kg.facts[:cut]

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    @property
    def entity_count(self) -> int:
        return self.kg.entity_count

    @property
    def n_rel2(self) -> int:
        return self.kg.n_rel2

    def bounded_index(self) -> tuple[FactIndex, int]:
        """The parent graph's index plus this view's exclusive time bound."""
        return self.kg.index, self.t_hi

    def materialized_index(self) -> FactIndex:
        """A dedicated index over only this view's facts (built once, cached)."""
        if self._own_index is None:
            self._own_index = FactIndex(self.facts, self.kg.entity_count, self.kg.n_rel2)
        return self._own_index

    def by_subject(self, subject: int) -> np.ndarray:
        rows = self.kg.by_subject(subject)
        return rows[rows[:, COL_T] < self.t_hi]

    def by_subject_relation(self, subject: int, relation: int) -> np.ndarray:
        rows = self.kg.by_subject_relation(subject, relation)
        return rows[rows[:, COL_T] < self.t_hi]


@dataclass
class DatasetSplit:
    """Per-split fact arrays (base orientation) and their snapshot ranges."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    relation_count: int
    dedup_counts: dict[str, int] = field(default_factory=dict)

    def facts_of(self, name: str) -> np.ndarray:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]

    def time_range(self, name: str) -> tuple[int, int]:
        """(min, max) snapshot index of the split."""
        f = self.facts_of(name)
        return int(f[:, COL_T].min()), int(f[:, COL_T].max())

    @property
    def train_end(self) -> int:
        """Exclusive upper snapshot bound of the training split."""
        return self.time_range("train")[1] + 1

    def queries(self, name: str, include_inverse: bool = True) -> list[Query]:
        """Evaluation queries of a split: all forward, then all inverse.

        The position in the returned list is the query's stable id for
        caching. Inverse queries use relation id + relation_count.
        """
        facts = self.facts_of(name)
        out = [
            Query(int(s), int(r), int(t), answer=int(o), direction="forward")
            for s, r, o, t in facts
        ]
        if include_inverse:
            out.extend(
                Query(int(o), int(r) + self.relation_count, int(t), answer=int(s), direction="inverse")
                for s, r, o, t in facts
            )
        return out


def _read_split_file(path: Path, name: str) -> tuple[np.ndarray, int]:
    """Parse one tab-separated split file; returns (facts, dedup_count)."""
    if not path.is_file():
        raise DataError(f"missing split file: {path}")
    rows: list[tuple[int, int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) == 1:
                parts = line.split()
            if len(parts) < 4:
                raise DataError(f"{path.name}:{lineno}: expected >= 4 columns, got {len(parts)}")
            try:
                s, r, o, t = (int(parts[i]) for i in range(4))
            except ValueError as exc:
                raise DataError(f"{path.name}:{lineno}: non-integer field ({exc})") from None
            if min(s, r, o) < 0 or t < 0:
                raise DataError(f"{path.name}:{lineno}: negative id or timestamp")
            rows.append((s, r, o, t))
    if not rows:
        raise DataError(f"empty split: {name}")
    arr = np.array(rows, dtype=np.int64)
    uniq = np.unique(arr, axis=0)
    return uniq, len(arr) - len(uniq)


def load_dataset(path: str | Path, interval: int = 1) -> tuple[TemporalKG, DatasetSplit]:
    """Load a train/valid/test directory in the tab-separated integer layout.

    Raw timestamps are divided by ``interval`` and then re-indexed to
    consecutive snapshot indices across all splits. Entity/relation counts
    come from ``stat.txt`` when present, otherwise from observed maxima.
    Duplicate facts within a split file are dropped with a warning.
    """
    path = Path(path)
    splits: dict[str, np.ndarray] = {}
    dedup: dict[str, int] = {}
    for name in ("train", "valid", "test"):
        facts, dropped = _read_split_file(path / f"{name}.txt", name)
        splits[name] = facts
        dedup[name] = dropped
    total_dropped = sum(dedup.values())
    if total_dropped:
        warnings.warn(f"dropped {total_dropped} duplicate facts ({dedup})", stacklevel=2)

    if interval < 1:
        raise DataError(f"interval must be >= 1, got {interval}")
    all_raw_t = np.concatenate([splits[n][:, COL_T] for n in ("train", "valid", "test")])
    if interval > 1 and np.any(all_raw_t % interval):
        off = int(np.count_nonzero(all_raw_t % interval))
        warnings.warn(f"{off} timestamps are not multiples of interval={interval}; flooring", stacklevel=2)
    unique_t = np.unique(all_raw_t // interval)
    for name in ("train", "valid", "test"):
        t_norm = splits[name][:, COL_T] // interval
        splits[name] = splits[name].copy()
        splits[name][:, COL_T] = np.searchsorted(unique_t, t_norm)

    stat_path = path / "stat.txt"
    if stat_path.is_file():
        fields = stat_path.read_text(encoding="utf-8").split()
        if len(fields) < 2:
            raise DataError(f"{stat_path.name}: expected at least '|E| |R|'")
        entity_count, relation_count = int(fields[0]), int(fields[1])
    else:
        entity_count = int(max(int(splits[n][:, [COL_S, COL_O]].max()) for n in splits)) + 1
        relation_count = int(max(int(splits[n][:, COL_R].max()) for n in splits)) + 1

    for name in splits:
        f = splits[name]
        if int(f[:, [COL_S, COL_O]].max()) >= entity_count:
            raise DataError(f"{name}: entity id >= entity count {entity_count}")
        if int(f[:, COL_R].max()) >= relation_count:
            raise DataError(f"{name}: relation id >= relation count {relation_count}")

    split = DatasetSplit(
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        relation_count=relation_count,
        dedup_counts=dedup,
    )
    tr_max = split.time_range("train")[1]
    va_min, va_max = split.time_range("valid")
    te_min = split.time_range("test")[0]
    if not (tr_max < va_min <= va_max < te_min):
        raise DataError(
            "split boundaries are not time-ordered: "
            f"train<= {tr_max}, valid in [{va_min},{va_max}], test >= {te_min}"
        )

    all_facts = np.concatenate([splits["train"], splits["valid"], splits["test"]])
    kg = TemporalKG(all_facts, entity_count, relation_count, augmented=False)
    return kg, split


def save_dataset(kg_or_split: DatasetSplit, path: str | Path) -> None:
    """Write a split back out in the loadable layout (normalized times, interval 1)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        facts = kg_or_split.facts_of(name)
        with open(path / f"{name}.txt", "w", encoding="utf-8") as fh:
            for s, r, o, t in facts:
                fh.write(f"{s}\t{r}\t{o}\t{t}\n")
    ent = int(max(int(kg_or_split.facts_of(n)[:, [COL_S, COL_O]].max()) for n in ("train", "valid", "test"))) + 1
    with open(path / "stat.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{ent}\t{kg_or_split.relation_count}\n")


def augment_inverse(kg: TemporalKG) -> TemporalKG:
    """Add (o, r + |R|, s, t) for every fact; doubles the relation vocabulary."""
    if kg.augmented:
        raise DataError("graph is already inverse-augmented")
    inv = kg.facts[:, [COL_O, COL_R, COL_S, COL_T]].copy()
    inv[:, COL_R] += kg.relation_count
    facts = np.concatenate([kg.facts, inv])
    return TemporalKG(facts, kg.entity_count, kg.relation_count, augmented=True)


def history_before(kg: TemporalKG, t: int) -> TKGView:
    """Read-only view of the facts strictly before snapshot ``t``."""
    return kg.before(t)


def same_time_filter_set(kg: TemporalKG, query: Query) -> set[int]:
    """Other true objects of (subject, relation, -, query.time) in the full dataset.

    Used for time-aware filtered ranking; the query's own answer is excluded.
    """
    if query.answer is None:
        raise DataError("filter set requires a query with an answer")
    objs = kg.index.objects_at(query.subject, query.relation, query.time)
    return {int(o) for o in objs if int(o) != query.answer}
