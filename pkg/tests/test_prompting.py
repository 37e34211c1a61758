"""Prompt rendering, the grammar round-trip, and golden files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from tkgfuse.data import Query
from tkgfuse.prompting import LexiconError, RelationLexicon, parse_prompt, render_prompt

GOLDEN = Path(__file__).parent / "golden"

LEX = RelationLexicon(["Accuse", "Consult", "Make statement"])


def rows(*facts):
    return np.array(facts, dtype=np.int64)


class TestRender:
    def test_fact_line_format(self):
        doc = render_prompt(rows((3, 0, 7, 12)), Query(5, 1, 20), LEX)
        assert doc.text.split("\n")[0] == "12:[3,Accuse,7]"

    def test_query_suffix_format(self):
        doc = render_prompt(rows(), Query(5, 1, 20), LEX)
        assert doc.text == "20:[5,Consult,"
        assert doc.fact_count == 0
        assert doc.query_suffix_offset == 0

    def test_suffix_offset_points_at_query(self):
        doc = render_prompt(rows((3, 0, 7, 12), (3, 2, 4, 13)), Query(5, 1, 20), LEX)
        assert doc.text[doc.query_suffix_offset :] == "20:[5,Consult,"
        assert doc.text.endswith(",")

    def test_inverse_relation_rendering(self):
        doc = render_prompt(rows((7, 3, 3, 2)), Query(1, 4, 9), LEX)
        assert "inv_Accuse" in doc.text.split("\n")[0]
        assert "inv_Consult" in doc.text.split("\n")[1]

    def test_paren_variant(self):
        doc = render_prompt(rows((3, 0, 7, 12)), Query(5, 1, 20), LEX, keep_fact_parens=True)
        assert doc.text.split("\n")[0] == "12:[(3,Accuse,7)]"

    def test_facts_must_be_time_ascending_and_before_query(self):
        with pytest.raises(ValueError, match="ascending"):
            render_prompt(rows((0, 0, 1, 5), (0, 0, 1, 3)), Query(0, 0, 9), LEX)
        with pytest.raises(ValueError, match="before query"):
            render_prompt(rows((0, 0, 1, 5)), Query(0, 0, 5), LEX)

    def test_lexicon_miss_names_relation(self):
        with pytest.raises(LexiconError, match="17"):
            render_prompt(rows(), Query(0, 17, 5), LEX)

    def test_stop_token_count_matches_fact_count(self):
        facts = rows((1, 0, 2, 0), (1, 1, 3, 1), (2, 2, 4, 2))
        doc = render_prompt(facts, Query(1, 0, 7), LEX)
        before_query = doc.text[: doc.query_suffix_offset]
        assert before_query.count("]") == doc.fact_count == 3
        assert doc.text[doc.query_suffix_offset :].count("]") == 0

    def test_entity_positions_are_decimal(self):
        doc = render_prompt(rows((10, 0, 255, 3)), Query(9, 2, 7), LEX)
        facts, query = parse_prompt(doc.text)
        assert facts == [(3, 10, "Accuse", 255)]
        assert query == (7, 9, "Make_statement")


class TestParseRoundTrip:
    @pytest.mark.parametrize("parens", [False, True])
    def test_random_roundtrip(self, parens):
        rng = np.random.default_rng(0)
        lex = RelationLexicon([f"Rel_{i}" for i in range(6)])
        for _ in range(50):
            n = int(rng.integers(0, 12))
            times = np.sort(rng.integers(0, 30, n))
            facts = np.stack(
                [rng.integers(0, 500, n), rng.integers(0, 12, n), rng.integers(0, 500, n), times],
                axis=1,
            ).astype(np.int64) if n else rows()
            q = Query(int(rng.integers(0, 500)), int(rng.integers(0, 12)), 31)
            doc = render_prompt(facts, q, lex, keep_fact_parens=parens)
            got_facts, got_query = parse_prompt(doc.text)
            expected = [(int(t), int(s), lex.text(int(r)), int(o)) for s, r, o, t in facts]
            assert got_facts == expected
            assert got_query == (31, q.subject, lex.text(q.relation))


class TestLexicon:
    def test_sanitization(self):
        lex = RelationLexicon(["Make a visit", "Bad[chars],\nhere"])
        assert lex.text(0) == "Make_a_visit"
        assert "," not in lex.text(1) and "[" not in lex.text(1)

    def test_tsv_loading(self, tmp_path):
        p = tmp_path / "relations.tsv"
        p.write_text("0\tAccuse\n2\tHost a visit\n", encoding="utf-8")
        lex = RelationLexicon.from_tsv(p, 3)
        assert lex.text(0) == "Accuse"
        assert lex.text(1) == "rel1"  # missing ids fall back to generated names
        assert lex.text(2) == "Host_a_visit"
        assert lex.text(5) == "inv_Host_a_visit"

    def test_tsv_errors(self, tmp_path):
        p = tmp_path / "relations.tsv"
        p.write_text("9\tTooBig\n", encoding="utf-8")
        with pytest.raises(LexiconError, match="out of range"):
            RelationLexicon.from_tsv(p, 3)


class TestGolden:
    def test_basic_prompt_matches_golden(self):
        facts = rows((0, 0, 1, 0), (0, 1, 2, 3), (4, 2, 0, 5))
        doc = render_prompt(facts, Query(0, 0, 8), LEX)
        assert doc.text == (GOLDEN / "prompt_basic.txt").read_text(encoding="utf-8")

    def test_paren_prompt_matches_golden(self):
        facts = rows((0, 0, 1, 0), (0, 1, 2, 3), (4, 2, 0, 5))
        doc = render_prompt(facts, Query(0, 0, 8), LEX, keep_fact_parens=True)
        assert doc.text == (GOLDEN / "prompt_parens.txt").read_text(encoding="utf-8")
