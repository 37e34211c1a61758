"""Prompt rendering: history facts plus an open query suffix.

One line per fact, ``t:[s,relation_text,o]``, followed by the unterminated
query fragment ``t_q:[s_q,relation_text_q,``. Entities stay numeric,
relations are rendered through a lexicon, and ``]`` only ever terminates a
fact line, which makes it usable as the decoder's stop token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Query

_FORBIDDEN = set("[],\n")


class LexiconError(Exception):
    """Unknown relation id or malformed lexicon input."""


class RelationLexicon:
    """relation-id -> surface string, total over the inverse-augmented vocabulary.

    Inverse relation ids render as ``inv_`` + base string. Strings are
    sanitized to contain no brackets, commas, or whitespace.
    """

    def __init__(self, base_names: list[str]) -> None:
        self.base_names = [self._sanitize(n) for n in base_names]

    @staticmethod
    def _sanitize(name: str) -> str:
        name = "_".join(name.split())
        name = "".join(c for c in name if c not in _FORBIDDEN)
        return name or "rel"

    @classmethod
    def from_tsv(cls, path: str | Path, relation_count: int) -> "RelationLexicon":
        """Two-column TSV ``relation_id<TAB>surface_string``."""
        names = [f"rel{i}" for i in range(relation_count)]
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) < 2:
                    raise LexiconError(f"{path}:{lineno}: expected 'id<TAB>name'")
                try:
                    rid = int(parts[0])
                except ValueError:
                    raise LexiconError(f"{path}:{lineno}: non-integer relation id") from None
                if not 0 <= rid < relation_count:
                    raise LexiconError(f"{path}:{lineno}: relation id {rid} out of range")
                names[rid] = parts[1]
        return cls(names)

    @classmethod
    def generic(cls, relation_count: int) -> "RelationLexicon":
        return cls([f"rel{i}" for i in range(relation_count)])

    @property
    def relation_count(self) -> int:
        return len(self.base_names)

    def text(self, relation: int) -> str:
        n = self.relation_count
        if 0 <= relation < n:
            return self.base_names[relation]
        if n <= relation < 2 * n:
            return "inv_" + self.base_names[relation - n]
        raise LexiconError(f"no lexicon entry for relation id {relation}")


@dataclass(frozen=True)
class PromptDoc:
    """Rendered prompt text with the byte offset of the open query suffix."""

    text: str
    query_suffix_offset: int
    fact_count: int


def render_prompt(
    facts: np.ndarray,
    query: Query,
    lexicon: RelationLexicon,
    keep_fact_parens: bool = False,
) -> PromptDoc:
    """Serialize time-ascending history facts and append the open query.

    ``facts`` rows are (s, r, o, t), all strictly before query.time.
    ``keep_fact_parens`` switches fact lines to the ``t:[(s,r,o)]`` variant.
    """
    lines: list[str] = []
    prev_t = None
    for s, r, o, t in facts:
        if prev_t is not None and t < prev_t:
            raise ValueError("facts must be time-ascending")
        if t >= query.time:
            raise ValueError(f"fact at t={t} not before query time {query.time}")
        prev_t = t
        body = f"{s},{lexicon.text(int(r))},{o}"
        lines.append(f"{t}:[({body})]\n" if keep_fact_parens else f"{t}:[{body}]\n")
    history = "".join(lines)
    suffix = f"{query.time}:[{query.subject},{lexicon.text(query.relation)},"
    return PromptDoc(text=history + suffix, query_suffix_offset=len(history), fact_count=len(lines))


_FACT_RE = re.compile(r"^(\d+):\[(?:\((\d+),([^,\[\]\n]+),(\d+)\)|(\d+),([^,\[\]\n]+),(\d+))\]$")
_QUERY_RE = re.compile(r"^(\d+):\[(\d+),([^,\[\]\n]+),$")


def parse_prompt(text: str) -> tuple[list[tuple[int, int, str, int]], tuple[int, int, str]]:
    """Recover (t, s, relation_text, o) fact tuples and the open query.

    The inverse of :func:`render_prompt` up to relation ids; raises on any
    line that does not match the grammar.
    """
    lines = text.split("\n")
    facts: list[tuple[int, int, str, int]] = []
    for line in lines[:-1]:
        m = _FACT_RE.match(line)
        if not m:
            raise ValueError(f"unparseable fact line: {line!r}")
        if m.group(2) is not None:
            t, s, r_text, o = m.group(1), m.group(2), m.group(3), m.group(4)
        else:
            t, s, r_text, o = m.group(1), m.group(5), m.group(6), m.group(7)
        facts.append((int(t), int(s), r_text, int(o)))
    m = _QUERY_RE.match(lines[-1])
    if not m:
        raise ValueError(f"unparseable query suffix: {lines[-1]!r}")
    return facts, (int(m.group(1)), int(m.group(2)), m.group(3))
