"""Dataset loading, indexing, views, and filter sets."""

from __future__ import annotations

import numpy as np
import pytest

from tkgfuse.data import (
    COL_T,
    DataError,
    Query,
    TemporalKG,
    augment_inverse,
    history_before,
    load_dataset,
    same_time_filter_set,
    save_dataset,
)

from conftest import random_kg, write_split_files


class TestLoadDataset:
    def test_toy_normalization_identity(self, tmp_path):
        # 3-line toy file with raw times {0, 24, 48} at interval 24 -> snapshots {0, 1, 2}
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 0)],
            valid=[(1, 0, 2, 24)],
            test=[(2, 0, 3, 48)],
        )
        kg, split = load_dataset(tmp_path, interval=24)
        assert sorted(kg.facts[:, COL_T].tolist()) == [0, 1, 2]
        assert split.time_range("train") == (0, 0)
        assert split.time_range("test") == (2, 2)

    def test_reindexes_sparse_snapshots(self, tmp_path):
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 0), (0, 0, 2, 72)],
            valid=[(1, 0, 2, 96)],
            test=[(2, 0, 3, 240)],
        )
        kg, _ = load_dataset(tmp_path, interval=24)
        assert sorted(kg.facts[:, COL_T].tolist()) == [0, 1, 2, 3]

    def test_empty_split_errors(self, tmp_path):
        write_split_files(tmp_path, train=[], valid=[(0, 0, 1, 1)], test=[(0, 0, 1, 2)])
        with pytest.raises(DataError, match="empty split"):
            load_dataset(tmp_path)

    def test_malformed_line_reports_lineno(self, tmp_path):
        write_split_files(tmp_path, train=[(0, 0, 1, 0)], valid=[(0, 0, 1, 1)], test=[(0, 0, 1, 2)])
        (tmp_path / "train.txt").write_text("0\t0\t1\t0\nnope\t0\t1\t0\n", encoding="utf-8")
        with pytest.raises(DataError, match="train.txt:2"):
            load_dataset(tmp_path)

    def test_wrong_arity_reports_lineno(self, tmp_path):
        write_split_files(tmp_path, train=[(0, 0, 1, 0)], valid=[(0, 0, 1, 1)], test=[(0, 0, 1, 2)])
        (tmp_path / "valid.txt").write_text("0\t0\t1\n", encoding="utf-8")
        with pytest.raises(DataError, match="valid.txt:1"):
            load_dataset(tmp_path)

    def test_duplicates_dropped_with_warning(self, tmp_path):
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 0), (0, 0, 1, 0), (1, 0, 2, 0)],
            valid=[(0, 0, 1, 1)],
            test=[(0, 0, 1, 2)],
        )
        with pytest.warns(UserWarning, match="duplicate"):
            kg, split = load_dataset(tmp_path)
        assert len(split.train) == 2
        assert split.dedup_counts["train"] == 1

    def test_non_monotonic_splits_error(self, tmp_path):
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 5)],
            valid=[(0, 0, 1, 3)],
            test=[(0, 0, 1, 9)],
        )
        with pytest.raises(DataError, match="not time-ordered"):
            load_dataset(tmp_path)

    def test_extra_columns_ignored(self, tmp_path):
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 0, -1)],
            valid=[(1, 0, 2, 1, -1)],
            test=[(2, 0, 3, 2, -1, 99)],
        )
        kg, _ = load_dataset(tmp_path)
        assert kg.num_facts == 3

    def test_stat_file_sets_counts(self, tmp_path):
        write_split_files(
            tmp_path,
            train=[(0, 0, 1, 0)],
            valid=[(1, 0, 2, 1)],
            test=[(2, 0, 3, 2)],
            stat=(50, 7),
        )
        kg, _ = load_dataset(tmp_path)
        assert (kg.entity_count, kg.relation_count) == (50, 7)

    def test_roundtrip_reproduces_fact_multisets(self, tmp_path):
        kg = random_kg(seed=3, augmented=False, n_facts=90)
        split_dir = tmp_path / "ds"
        times = kg.facts[:, COL_T]
        t1, t2 = 8, 10  # carve monotone splits by time value
        write_split_files(
            split_dir,
            train=kg.facts[times < t1].tolist(),
            valid=kg.facts[(times >= t1) & (times < t2)].tolist(),
            test=kg.facts[times >= t2].tolist(),
        )
        kg1, split1 = load_dataset(split_dir)
        out_dir = tmp_path / "copy"
        save_dataset(split1, out_dir)
        kg2, split2 = load_dataset(out_dir)
        assert np.array_equal(kg1.facts, kg2.facts)
        for name in ("train", "valid", "test"):
            assert np.array_equal(split1.facts_of(name), split2.facts_of(name))
        assert np.array_equal(kg1.index.sr_key, kg2.index.sr_key)
        assert np.array_equal(kg1.index.s_ptr, kg2.index.s_ptr)


class TestAugmentInverse:
    def test_definition(self):
        facts = np.array([[3, 5, 7, 2]], dtype=np.int64)
        kg = augment_inverse(TemporalKG(facts, 10, 230))
        rows = {tuple(r) for r in kg.facts.tolist()}
        assert rows == {(3, 5, 7, 2), (7, 235, 3, 2)}

    def test_fact_count_doubles(self, toy_kg):
        aug = augment_inverse(toy_kg)
        assert aug.num_facts == 2 * toy_kg.num_facts

    def test_double_augmentation_errors(self, toy_kg):
        aug = augment_inverse(toy_kg)
        with pytest.raises(DataError, match="already"):
            augment_inverse(aug)

    def test_originals_unmodified(self, toy_kg):
        before = toy_kg.facts.copy()
        augment_inverse(toy_kg)
        assert np.array_equal(toy_kg.facts, before)


class TestHistoryBefore:
    def test_t0_is_empty(self, toy_kg):
        assert history_before(toy_kg, 0).num_facts == 0

    def test_toy_cut(self, toy_kg):
        view = history_before(toy_kg, 2)
        assert set(view.facts[:, COL_T].tolist()) == {0, 1}

    def test_matches_brute_force_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for seed in range(50):
            kg = random_kg(seed=seed, augmented=False)
            t = int(rng.integers(0, 14))
            view = kg.before(t)
            expected = {tuple(r) for r in kg.facts[kg.facts[:, COL_T] < t].tolist()}
            assert {tuple(r) for r in view.facts.tolist()} == expected

    def test_partition_property(self, toy_kg):
        for t in range(6):
            below = toy_kg.before(t).num_facts
            at_or_after = int((toy_kg.facts[:, COL_T] >= t).sum())
            assert below + at_or_after == toy_kg.num_facts


class TestIndices:
    def test_by_subject_relation_matches_brute_force(self):
        for seed in range(20):
            kg = random_kg(seed=seed)
            for s in range(0, kg.entity_count, 5):
                for r in range(kg.n_rel2):
                    rows = kg.by_subject_relation(s, r)
                    mask = (kg.facts[:, 0] == s) & (kg.facts[:, 1] == r)
                    brute = kg.facts[mask]
                    brute = brute[np.argsort(-brute[:, COL_T], kind="stable")]
                    assert sorted(map(tuple, rows.tolist())) == sorted(map(tuple, brute.tolist()))
                    times = rows[:, COL_T]
                    assert np.all(np.diff(times) <= 0)

    def test_recent_events_ordering_and_cap(self):
        kg = random_kg(seed=5)
        idx = kg.index
        for s in range(0, kg.entity_count, 3):
            rows = idx.recent_events(s, before=8, limit=4)
            assert len(rows) <= 4
            assert np.all(rows[:, 2] < 8) if len(rows) else True
            assert np.all(np.diff(rows[:, 2]) <= 0) if len(rows) > 1 else True


class TestFilterSet:
    def test_no_cotemporal_facts(self, toy_kg):
        q = Query(subject=0, relation=0, time=0, answer=1)
        assert same_time_filter_set(toy_kg, q) == set()

    def test_definition(self):
        facts = np.array(
            [[1, 0, 4, 5], [1, 0, 9, 5], [1, 0, 2, 5], [1, 0, 4, 6]], dtype=np.int64
        )
        kg = TemporalKG(facts, 12, 1)
        q = Query(subject=1, relation=0, time=5, answer=2)
        assert same_time_filter_set(kg, q) == {4, 9}

    def test_matches_full_scan_on_random_graphs(self):
        for seed in range(30):
            kg = random_kg(seed=seed)
            rng = np.random.default_rng(seed)
            for _ in range(20):
                row = kg.facts[rng.integers(0, kg.num_facts)]
                q = Query(int(row[0]), int(row[1]), int(row[3]), answer=int(row[2]))
                brute = {
                    int(o)
                    for s, r, o, t in kg.facts
                    if s == q.subject and r == q.relation and t == q.time and int(o) != q.answer
                }
                assert same_time_filter_set(kg, q) == brute
