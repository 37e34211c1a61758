"""Language-model abstraction: beam top-K generation, entity mapping, cache.

A backend exposes a token vocabulary (each decimal digit is a single token)
and per-prefix next-token log-probabilities. Beam search decodes the top-K
entity-index sequences in one pass, terminated by the ``]`` stop token;
sequences map to entity ids and then to a sparse next-entity distribution.
Since the model stays frozen, distributions are precomputed once into an
append-only cache keyed by query id.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import Query
from .distributions import EntityDistribution
from .prompting import PromptDoc

DIGIT_VOCAB: tuple[str, ...] = ("0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "]")
STOP = "]"


class BackendError(Exception):
    """A backend failed to produce log-probabilities."""


class CacheError(Exception):
    """Cache file corruption, metadata mismatch, or missing entries."""


class LanguageModelBackend(Protocol):
    """Contract every LM backend satisfies; deterministic per prefix."""

    vocab: tuple[str, ...]
    stop_token_id: int

    def next_token_logprobs(self, prompt: str, prefix: tuple[int, ...]) -> np.ndarray:
        """Log-probability vector over the vocabulary given prompt + prefix."""
        ...


@dataclass(frozen=True)
class BeamResult:
    """Top-K finalized sequences, log-probability descending."""

    sequences: tuple[tuple[tuple[int, ...], float], ...]
    vocab: tuple[str, ...]
    stop_token_id: int

    def __len__(self) -> int:
        return len(self.sequences)

    def decode(self, seq: tuple[int, ...]) -> str:
        return "".join(self.vocab[t] for t in seq)


def default_n_max(entity_count: int) -> int:
    """Longest valid entity index in digits, plus one for the stop token."""
    return len(str(max(entity_count - 1, 1))) + 1


def beam_generate(
    backend: LanguageModelBackend,
    prompt: PromptDoc | str,
    k: int,
    n_max: int,
    beam_width: int | None = None,
) -> BeamResult:
    """Beam search for the top-k finalized sequences.

    A beam finalizes when it emits the stop token or reaches ``n_max``
    tokens; finalized beams do not expand further. Cumulative log-probability
    is the sum of per-token log-probabilities. ``beam_width`` defaults to
    ``k``; pass a width >= vocab**(n_max-1) for exhaustive (oracle-exact)
    decoding at toy scale.
    """
    if k < 1 or n_max < 1:
        raise ValueError("k and n_max must be >= 1")
    text = prompt.text if isinstance(prompt, PromptDoc) else prompt
    width = k if beam_width is None else beam_width
    stop = backend.stop_token_id
    n_vocab = len(backend.vocab)

    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finals: list[tuple[tuple[int, ...], float]] = []
    for step in range(n_max):
        expansions: list[tuple[tuple[int, ...], float]] = []
        for seq, lp in live:
            logps = backend.next_token_logprobs(text, seq)
            if len(logps) != n_vocab or np.any(np.isnan(logps)) or np.any(logps > 1e-6):
                raise BackendError(f"backend returned a bad log-probability vector for prefix {seq}")
            for tok in range(n_vocab):
                nlp = lp + float(logps[tok])
                if nlp == -math.inf:
                    continue  # zero-probability continuations are not generable
                cand = (seq + (tok,), nlp)
                if tok == stop or step == n_max - 1:
                    finals.append(cand)
                else:
                    expansions.append(cand)
        if not expansions:
            break
        expansions.sort(key=lambda c: (-c[1], c[0]))
        live = expansions[:width]
    finals.sort(key=lambda c: (-c[1], c[0]))
    return BeamResult(tuple(finals[:k]), tuple(backend.vocab), stop)


def _sequence_to_entity(tokens: Sequence[str], entity_count: int) -> int | None:
    """Token strings -> entity id, or None when the text is not a valid index."""
    text = "".join(tokens)
    if text.endswith(STOP):
        text = text[: -len(STOP)]
    text = text.strip()
    if not text or not all(c in "0123456789" for c in text):
        return None
    value = int(text)
    return value if value < entity_count else None


def map_sequences_to_entities(
    result: BeamResult, entity_count: int
) -> list[tuple[int, float]]:
    """Decode beam sequences to entity ids; invalid outputs are discarded.

    Beams decoding to the same entity merge by log-sum-exp of their
    log-probabilities. Pairs come back sorted by entity id.
    """
    merged: dict[int, float] = {}
    for seq, lp in result.sequences:
        ent = _sequence_to_entity([result.vocab[t] for t in seq], entity_count)
        if ent is None:
            continue
        merged[ent] = np.logaddexp(merged[ent], lp) if ent in merged else lp
    return sorted(merged.items())


def build_entity_distribution(
    pairs: Sequence[tuple[int, float]], literal_prob_softmax: bool = False
) -> EntityDistribution:
    """Softmax the top-K (entity, log-probability) pairs into a distribution.

    The default softmax over log-probabilities renormalizes the raw sequence
    probabilities; ``literal_prob_softmax`` instead applies softmax to the
    probabilities themselves (ablation mode). Empty input is the zero
    distribution.
    """
    if not pairs:
        return EntityDistribution.zero()
    ents = np.array([e for e, _ in pairs], dtype=np.int64)
    lps = np.array([lp for _, lp in pairs], dtype=np.float64)
    scores = np.exp(lps) if literal_prob_softmax else lps
    return EntityDistribution.from_scores(ents, scores)


def iterative_draws(
    backend: LanguageModelBackend,
    prompt: PromptDoc | str,
    k: int,
    n_max: int,
    entity_count: int,
) -> list[tuple[int, float]]:
    """Ablation stub for iterative top-K generation (one greedy draw per slot).

    Each draw decodes greedily; a stop token that would finalize an already
    drawn entity is skipped in favor of the next-best token. Drawing ends
    early once a draw produces no new valid entity. At most ``k`` unique
    entities are returned, sorted by id.
    """
    text = prompt.text if isinstance(prompt, PromptDoc) else prompt
    stop = backend.stop_token_id
    drawn: dict[int, float] = {}
    for _ in range(k):
        seq: tuple[int, ...] = ()
        lp = 0.0
        for _step in range(n_max):
            logps = backend.next_token_logprobs(text, seq)
            for tok in np.argsort(-logps, kind="stable"):
                tok = int(tok)
                if tok == stop:
                    ent = _sequence_to_entity([backend.vocab[t] for t in seq + (tok,)], entity_count)
                    if ent is None or ent in drawn:
                        continue
                break
            seq = seq + (tok,)
            lp += float(logps[tok])
            if tok == stop:
                break
        ent = _sequence_to_entity([backend.vocab[t] for t in seq], entity_count)
        if ent is None or ent in drawn:
            break
        drawn[ent] = lp
    return sorted(drawn.items())


class TableBackend:
    """Scripted backend over an explicit prefix -> probability table."""

    def __init__(
        self,
        vocab: Sequence[str],
        table: dict[tuple[int, ...], Sequence[float]],
        stop_token: str = STOP,
    ) -> None:
        self.vocab = tuple(vocab)
        self.stop_token_id = self.vocab.index(stop_token)
        with np.errstate(divide="ignore"):
            self._table = {
                prefix: np.log(np.asarray(probs, dtype=np.float64) / np.sum(probs))
                for prefix, probs in table.items()
            }

    def next_token_logprobs(self, prompt: str, prefix: tuple[int, ...]) -> np.ndarray:
        if prefix in self._table:
            return self._table[prefix]
        raise BackendError(f"no scripted conditional for prefix {prefix}")


class HashBackend:
    """Deterministic pseudo-random backend: logits derive from a hash.

    The conditional for (prompt, prefix) is the softmax of ``scale`` times
    uniform[-1, 1) logits seeded by sha256(seed | prompt | prefix). Same
    prefix always yields the same vector; different prompts give unrelated
    conditionals, which makes it a convenient stand-in for a language model
    that is deliberately wrong about the data.
    """

    def __init__(self, seed: int = 0, scale: float = 1.0, vocab: Sequence[str] = DIGIT_VOCAB) -> None:
        self.vocab = tuple(vocab)
        self.stop_token_id = self.vocab.index(STOP)
        self.seed = int(seed)
        self.scale = float(scale)

    def next_token_logprobs(self, prompt: str, prefix: tuple[int, ...]) -> np.ndarray:
        key = f"{self.seed}|{prompt}|{','.join(map(str, prefix))}"
        raw = b""
        counter = 0
        while len(raw) < 8 * len(self.vocab):
            raw += hashlib.sha256(f"{key}|{counter}".encode()).digest()
            counter += 1
        u = np.frombuffer(raw[: 8 * len(self.vocab)], dtype="<u8") / 2.0**64
        logits = self.scale * (2.0 * u - 1.0)
        return logits - _logsumexp(logits)


class ConstantBackend:
    """Scripted backend that emits one fixed text (near-deterministically)."""

    def __init__(self, text: str, vocab: Sequence[str] = DIGIT_VOCAB, off_logit: float = -30.0) -> None:
        self.vocab = tuple(vocab)
        self.stop_token_id = self.vocab.index(STOP)
        if not text.endswith(STOP):
            text += STOP
        self.target = tuple(self.vocab.index(c) for c in text)
        self.off_logit = off_logit

    def next_token_logprobs(self, prompt: str, prefix: tuple[int, ...]) -> np.ndarray:
        step = len(prefix)
        target = self.target[step] if step < len(self.target) else self.stop_token_id
        logits = np.full(len(self.vocab), self.off_logit)
        logits[target] = 0.0
        return logits - _logsumexp(logits)


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def backend_from_spec(spec: str) -> LanguageModelBackend:
    """Build a backend from a CLI spec string.

    ``scripted:<path>`` loads a JSON description: {"kind": "hash", "seed": 7,
    "scale": 1.0} or {"kind": "constant", "text": "42]"}. Hosted-model names
    are reserved for an optional integration and rejected here.
    """
    if spec.startswith("scripted:"):
        path = Path(spec.split(":", 1)[1])
        if not path.is_file():
            raise BackendError(f"scripted backend file not found: {path}")
        desc = json.loads(path.read_text(encoding="utf-8"))
        kind = desc.get("kind")
        if kind == "hash":
            return HashBackend(seed=desc.get("seed", 0), scale=desc.get("scale", 1.0))
        if kind == "constant":
            return ConstantBackend(text=desc["text"])
        raise BackendError(f"unknown scripted backend kind {kind!r}")
    raise BackendError(
        f"unsupported backend spec {spec!r}: only 'scripted:<path>' backends are bundled"
    )


class DistributionCache:
    """Append-only store of precomputed (entity, log-probability) lists.

    Newline-delimited JSON: one metadata record, then one record per query,
    ``{"qid": int, "entries": [[entity_id, "logprob"], ...]}`` with
    log-probabilities as shortest round-trip decimal strings. Entries are
    immutable once written; appends require an exact metadata match.
    """

    def __init__(self, path: str | Path, meta: dict, entries: dict[int, list[tuple[int, float]]]):
        self.path = Path(path)
        self.meta = meta
        self.entries = entries
        self._fh = None

    @staticmethod
    def make_meta(model: str, config_hash: str, k: int, n_max: int) -> dict:
        return {
            "kind": "tkgfuse-cache",
            "version": 1,
            "model": model,
            "config_hash": config_hash,
            "k": k,
            "n_max": n_max,
        }

    @classmethod
    def create(cls, path: str | Path, meta: dict) -> "DistributionCache":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
        return cls(path, meta, {})

    @classmethod
    def open(cls, path: str | Path, expected_meta: dict | None = None) -> "DistributionCache":
        path = Path(path)
        if not path.is_file():
            raise CacheError(f"cache file not found: {path}")
        entries: dict[int, list[tuple[int, float]]] = {}
        meta: dict | None = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CacheError(f"{path}:{lineno}: corrupted record ({exc})") from None
                if lineno == 1:
                    if rec.get("kind") != "tkgfuse-cache":
                        raise CacheError(f"{path}: not a distribution cache")
                    meta = rec
                    continue
                try:
                    qid = int(rec["qid"])
                    pairs = [(int(e), float(lp)) for e, lp in rec["entries"]]
                except (KeyError, TypeError, ValueError):
                    raise CacheError(
                        f"{path}:{lineno}: corrupted record for qid "
                        f"{rec.get('qid', '?') if isinstance(rec, dict) else '?'}"
                    ) from None
                if qid in entries:
                    raise CacheError(f"{path}:{lineno}: duplicate record for qid {qid}")
                entries[qid] = pairs
        if meta is None:
            raise CacheError(f"{path}: missing metadata record")
        if expected_meta is not None and meta != expected_meta:
            raise CacheError(
                f"{path}: metadata mismatch (cache {meta}, expected {expected_meta})"
            )
        return cls(path, meta, entries)

    def append(self, qid: int, pairs: list[tuple[int, float]]) -> None:
        if qid in self.entries:
            raise CacheError(f"qid {qid} already cached; entries are immutable")
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")
        record = {"qid": qid, "entries": [[e, repr(lp)] for e, lp in pairs]}
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()
        self.entries[qid] = list(pairs)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __contains__(self, qid: int) -> bool:
        return qid in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def pairs(self, qid: int) -> list[tuple[int, float]]:
        if qid not in self.entries:
            raise CacheError(f"cache miss for qid {qid}")
        return self.entries[qid]

    def distribution(self, qid: int, literal_prob_softmax: bool = False) -> EntityDistribution:
        return build_entity_distribution(self.pairs(qid), literal_prob_softmax)

    def byte_hash(self) -> str:
        return hashlib.sha256(self.path.read_bytes()).hexdigest()


def precompute_cache(
    backend: LanguageModelBackend,
    queries: Sequence[Query],
    prompt_fn: Callable[[Query], PromptDoc | str],
    k: int,
    n_max: int,
    entity_count: int,
    path: str | Path,
    meta: dict,
    progress: Callable[[int, int], None] | None = None,
) -> DistributionCache:
    """Run retrieve -> render -> beam -> map for every query and persist.

    Idempotent: an existing cache with matching metadata is resumed and
    present query ids are skipped; a metadata mismatch is refused. Queries
    with no extractable entity are recorded as explicit zero entries.
    """
    path = Path(path)
    if path.is_file():
        cache = DistributionCache.open(path, expected_meta=meta)
    else:
        cache = DistributionCache.create(path, meta)
    try:
        for qid, query in enumerate(queries):
            if qid in cache:
                continue
            try:
                result = beam_generate(backend, prompt_fn(query), k, n_max)
            except BackendError as exc:
                raise BackendError(f"backend failure on qid {qid}: {exc}") from exc
            cache.append(qid, map_sequences_to_entities(result, entity_count))
            if progress is not None:
                progress(qid + 1, len(queries))
    finally:
        cache.close()
    return cache
