"""Trainable graph adapters producing next-entity distributions.

Two adapters share one contract: given a history view and a query they emit
a sparse candidate set with a softmax distribution over it, differentiable
in the adapter parameters. The rule adapter scores groundings of mined
temporal rules with a learned body encoding plus a recency decay; the GNN
adapter runs attention flow over a hop-wise expanded and pruned subgraph of
the query's temporal neighborhood.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import Query, TKGView
from .distributions import EntityDistribution
from .rules import GroundingSet, RuleStore, TemporalRule, ground_query


class Adapter(Protocol):
    """Contract shared by the trainable adapters."""

    def forward_scores(self, view: TKGView, query: Query) -> tuple[np.ndarray, torch.Tensor | None]:
        """Sorted candidate ids and a differentiable probability vector."""
        ...

    def score_query(self, view: TKGView, query: Query) -> EntityDistribution:
        ...


def _to_distribution(candidates: np.ndarray, probs: torch.Tensor | None) -> EntityDistribution:
    if probs is None or len(candidates) == 0:
        return EntityDistribution.zero()
    return EntityDistribution.from_masses(candidates, probs.detach().double().numpy())


class RuleAdapter(nn.Module):
    """Learnable-rule adapter over a mined rule store.

    A grounding of rule (head r_q, body L) ending at entity e contributes
    sim(emb(r_q), enc(L)) + exp(-lam * (t_q - t_l)); entity scores are the
    per-entity sums over groundings and the output distribution is their
    softmax over the candidate set.
    """

    def __init__(
        self,
        relation_vocab: int,
        dim: int = 64,
        lam: float = 0.1,
        encoder: str = "lstm",
        similarity: str = "cosine",
        store: RuleStore | None = None,
        window: int | None = None,
        grounding_cap: int = 1000,
        train_lambda: bool = False,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if encoder not in ("lstm", "mean"):
            raise ValueError(f"unknown body encoder {encoder!r}")
        if similarity not in ("cosine", "dot"):
            raise ValueError(f"unknown similarity {similarity!r}")
        if lam <= 0:
            raise ValueError("decay rate must be > 0")
        self.relation_vocab = relation_vocab
        self.dim = dim
        self.encoder = encoder
        self.similarity = similarity
        self.store = store
        self.window = window
        self.grounding_cap = grounding_cap
        self.embeddings = nn.Embedding(relation_vocab, dim, dtype=dtype)
        nn.init.normal_(self.embeddings.weight, std=0.1)
        if encoder == "lstm":
            self.body_encoder = nn.LSTM(dim, dim, num_layers=1, batch_first=True, dtype=dtype)
        lam_t = torch.tensor(float(lam), dtype=dtype)
        if train_lambda:
            self.lam = nn.Parameter(lam_t)
        else:
            self.register_buffer("lam", lam_t)

    def encode_bodies(self, bodies: list[tuple[int, ...]]) -> torch.Tensor:
        """Body relation chains -> (n, dim) sequence embeddings."""
        dtype = self.embeddings.weight.dtype
        lengths = torch.tensor([len(b) for b in bodies])
        maxlen = int(lengths.max())
        padded = torch.zeros(len(bodies), maxlen, dtype=torch.int64)
        for i, b in enumerate(bodies):
            padded[i, : len(b)] = torch.tensor(b)
        emb = self.embeddings(padded)
        if self.encoder == "mean":
            mask = (torch.arange(maxlen).unsqueeze(0) < lengths.unsqueeze(1)).to(dtype)
            return (emb * mask.unsqueeze(2)).sum(dim=1) / lengths.unsqueeze(1).to(dtype)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths, batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.body_encoder(packed)
        return h_n[-1]

    def _sim(self, query_emb: torch.Tensor, body_emb: torch.Tensor) -> torch.Tensor:
        if self.similarity == "cosine":
            return F.cosine_similarity(query_emb.unsqueeze(0), body_emb, dim=1)
        return body_emb @ query_emb

    def rule_confidence(self, rule: TemporalRule, query: Query, t_l: int) -> torch.Tensor:
        """Eqn of the learnable confidence: similarity term plus decay term."""
        body_emb = self.encode_bodies([rule.body])
        q_emb = self.embeddings.weight[query.relation]
        sim = self._sim(q_emb, body_emb)[0]
        dt = torch.tensor(float(query.time - t_l), dtype=sim.dtype)
        return sim + torch.exp(-self.lam * dt)

    def score_groundings(
        self, query: Query, groundings: GroundingSet
    ) -> tuple[np.ndarray, torch.Tensor | None]:
        """Candidate ids (sorted) and their softmax probabilities."""
        if groundings.is_empty:
            return np.empty(0, dtype=np.int64), None
        body_emb = self.encode_bodies([r.body for r in groundings.rules])
        q_emb = self.embeddings.weight[query.relation]
        sims = self._sim(q_emb, body_emb)
        dt = torch.from_numpy(
            (query.time - groundings.last_times).astype(np.float64)
        ).to(sims.dtype)
        conf = sims[torch.from_numpy(groundings.rule_index)] + torch.exp(-self.lam * dt)
        candidates, inverse = np.unique(groundings.entities, return_inverse=True)
        scores = torch.zeros(len(candidates), dtype=conf.dtype)
        scores = scores.index_add(0, torch.from_numpy(inverse), conf)
        return candidates, torch.softmax(scores, dim=0)

    def forward_scores(self, view: TKGView, query: Query) -> tuple[np.ndarray, torch.Tensor | None]:
        if self.store is None:
            raise ValueError("rule adapter has no rule store attached")
        groundings = ground_query(view, query, self.store, self.window, self.grounding_cap)
        return self.score_groundings(query, groundings)

    def score_query(self, view: TKGView, query: Query) -> EntityDistribution:
        with torch.no_grad():
            return _to_distribution(*self.forward_scores(view, query))


class GnnAdapter(nn.Module):
    """Expand-and-prune attention-flow adapter over the temporal neighborhood.

    Starting from the query node (e_q, t_q) with attention 1, each hop
    expands every frontier node to its most recent prior events, scores the
    edges with a perceptron over [emb(r_q); emb(r'); time_enc(dt)],
    softmax-normalizes per source node, propagates attention, and keeps the
    top-M nodes. Entity scores sum attention over each entity's surviving
    nodes across hops.
    """

    def __init__(
        self,
        relation_vocab: int,
        dim: int = 64,
        hops: int = 2,
        prune_budget: int = 50,
        neighbor_cap: int = 30,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if hops < 1 or prune_budget < 1 or neighbor_cap < 1:
            raise ValueError("hops, prune_budget, and neighbor_cap must be >= 1")
        self.relation_vocab = relation_vocab
        self.dim = dim
        self.hops = hops
        self.prune_budget = prune_budget
        self.neighbor_cap = neighbor_cap
        self.embeddings = nn.Embedding(relation_vocab, dim, dtype=dtype)
        nn.init.normal_(self.embeddings.weight, std=0.1)
        self.time_freq = nn.Parameter(torch.randn(dim, dtype=dtype) * 0.1)
        self.time_phase = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.edge_hidden = nn.Linear(3 * dim, dim, dtype=dtype)
        self.edge_out = nn.Linear(dim, 1, dtype=dtype)

    def time_encoding(self, dt: torch.Tensor) -> torch.Tensor:
        return torch.cos(dt.unsqueeze(-1) * self.time_freq + self.time_phase)

    def _edge_scores(self, query_rel: int, rels: torch.Tensor, dt: torch.Tensor) -> torch.Tensor:
        q = self.embeddings.weight[query_rel].unsqueeze(0).expand(len(rels), -1)
        feats = torch.cat([q, self.embeddings(rels), self.time_encoding(dt)], dim=1)
        return self.edge_out(torch.tanh(self.edge_hidden(feats))).squeeze(1)

    def forward_scores(self, view: TKGView, query: Query) -> tuple[np.ndarray, torch.Tensor | None]:
        idx, t_hi = view.bounded_index()
        t_hi = min(t_hi, query.time)
        dtype = self.embeddings.weight.dtype

        node_ents = np.array([query.subject], dtype=np.int64)
        node_times = np.array([t_hi], dtype=np.int64)
        node_att = torch.ones(1, dtype=dtype)
        seen_ents: list[np.ndarray] = []
        seen_atts: list[torch.Tensor] = []

        for _hop in range(self.hops):
            src_idx: list[int] = []
            rels: list[int] = []
            objs: list[int] = []
            times: list[int] = []
            for i in range(len(node_ents)):
                events = idx.recent_events(int(node_ents[i]), int(node_times[i]), self.neighbor_cap)
                for r, o, t in events:
                    src_idx.append(i)
                    rels.append(int(r))
                    objs.append(int(o))
                    times.append(int(t))
            if not src_idx:
                break
            src = torch.tensor(src_idx, dtype=torch.int64)
            dt = torch.tensor(
                [float(node_times[i]) - t for i, t in zip(src_idx, times)], dtype=dtype
            )
            raw = self._edge_scores(query.relation, torch.tensor(rels, dtype=torch.int64), dt)

            # per-source softmax via segment max / segment sum
            n_nodes = len(node_ents)
            seg_max = torch.full((n_nodes,), -torch.inf, dtype=dtype)
            seg_max = seg_max.scatter_reduce(0, src, raw, reduce="amax")
            shifted = torch.exp(raw - seg_max[src])
            seg_sum = torch.zeros(n_nodes, dtype=dtype).index_add(0, src, shifted)
            edge_att = node_att[src] * shifted / seg_sum[src]

            # accumulate attention per (entity, time) child node
            keys = np.array(objs, dtype=np.int64) * (view.kg.num_snapshots + 1) + np.array(
                times, dtype=np.int64
            )
            uniq_keys, inverse = np.unique(keys, return_inverse=True)
            child_att = torch.zeros(len(uniq_keys), dtype=dtype).index_add(
                0, torch.from_numpy(inverse), edge_att
            )
            child_ents = uniq_keys // (view.kg.num_snapshots + 1)
            child_times = uniq_keys % (view.kg.num_snapshots + 1)

            if len(uniq_keys) > self.prune_budget:
                order = np.lexsort(
                    (child_times, child_ents, -child_att.detach().double().numpy())
                )[: self.prune_budget]
                order = np.sort(order)
                child_ents = child_ents[order]
                child_times = child_times[order]
                child_att = child_att[torch.from_numpy(order)]

            seen_ents.append(child_ents)
            seen_atts.append(child_att)
            node_ents, node_times, node_att = child_ents, child_times, child_att

        if not seen_ents:
            return np.empty(0, dtype=np.int64), None
        all_ents = np.concatenate(seen_ents)
        all_att = torch.cat(seen_atts)
        candidates, inverse = np.unique(all_ents, return_inverse=True)
        scores = torch.zeros(len(candidates), dtype=dtype).index_add(
            0, torch.from_numpy(inverse), all_att
        )
        return candidates, torch.softmax(scores, dim=0)

    def score_query(self, view: TKGView, query: Query) -> EntityDistribution:
        with torch.no_grad():
            return _to_distribution(*self.forward_scores(view, query))


def adapter_candidates(adapter: Adapter, view: TKGView, query: Query) -> set[int]:
    """Support of the adapter's distribution for this query."""
    return adapter.score_query(view, query).support


CHECKPOINT_MAGIC = "tkgfuse-ckpt"


def save_checkpoint(path: str | Path, module: nn.Module, config_hash: str, extra: dict | None = None) -> None:
    """Single-file binary checkpoint: JSON header line + float32 LE payload."""
    state = module.state_dict()
    tensors = []
    payload = bytearray()
    for name in sorted(state):
        t = state[name].detach().cpu().to(torch.float32).contiguous()
        tensors.append({"name": name, "shape": list(t.shape)})
        payload.extend(t.numpy().astype("<f4").tobytes())
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": 1,
        "config_hash": config_hash,
        "extra": extra or {},
        "tensors": tensors,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path, module: nn.Module) -> dict:
    """Restore a checkpoint written by :func:`save_checkpoint`; returns the header."""
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a tkgfuse checkpoint")
        state = module.state_dict()
        new_state = {}
        for spec in header["tensors"]:
            name, shape = spec["name"], tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated payload at tensor {name}")
            if name not in state:
                raise ValueError(f"{path}: unexpected tensor {name}")
            if tuple(state[name].shape) != shape:
                raise ValueError(
                    f"{path}: shape mismatch for {name}: {shape} vs {tuple(state[name].shape)}"
                )
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            new_state[name] = torch.from_numpy(arr).to(state[name].dtype)
        missing = set(state) - {s["name"] for s in header["tensors"]}
        if missing:
            raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    module.load_state_dict(new_state)
    return header
