"""Experiment configuration: one flat key=value file, canonical hashing.

Every produced artifact (rule store, cache, checkpoint, report) embeds the
hash of the configuration that made it, so mismatched artifact combinations
are refused at eval time. Environment variables are never consulted;
explicit flags override file values, nothing else does.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class ExperimentConfig:
    # dataset
    data_dir: str = ""
    interval: int = 1
    include_inverse: bool = True
    # retrieval + prompt
    retrieval: str = "entity_key"  # entity_key | rule_based
    history_budget: int = 50
    min_rule_confidence: float = 0.0
    keep_fact_parens: bool = False
    # language model
    backend: str = ""  # scripted:<path>
    k: int = 20
    n_max: int = 0  # 0 = digits(|E|) + 1
    literal_prob_softmax: bool = False
    # rule mining
    walks_per_relation: int = 200
    max_body_len: int = 3
    mining_decay: float = 0.1
    confidence_samples: int = 500
    # adapter
    adapter: str = "rule"  # rule | gnn
    dim: int = 64
    lam: float = 0.1
    encoder: str = "lstm"  # lstm | mean
    similarity: str = "cosine"  # cosine | dot
    window: int = 0  # 0 = entire history
    grounding_cap: int = 1000
    hops: int = 2
    prune_budget: int = 50
    neighbor_cap: int = 30
    # fusion + training
    fusion: str = "mixture"  # mixture | product
    gate: str = "mlp_gate"  # mlp_gate | fixed_half
    epsilon: float = 1e-6
    epochs: int = 5
    learning_rate: float = 1e-4
    batch_size: int = 128
    # reproducibility
    seed: int = 0

    # keys that identify an experiment; runtime-only knobs stay out
    HASH_KEYS = (
        "data_dir", "interval", "include_inverse",
        "retrieval", "history_budget", "min_rule_confidence", "keep_fact_parens",
        "backend", "k", "n_max", "literal_prob_softmax",
        "walks_per_relation", "max_body_len", "mining_decay", "confidence_samples",
        "adapter", "dim", "lam", "encoder", "similarity", "window", "grounding_cap",
        "hops", "prune_budget", "neighbor_cap",
        "fusion", "gate", "epsilon",
        "epochs", "learning_rate", "batch_size", "seed",
    )

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        payload = "\n".join(
            f"{key} = {_render(getattr(self, key))}" for key in self.HASH_KEYS
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def effective_n_max(self, entity_count: int) -> int:
        if self.n_max > 0:
            return self.n_max
        return len(str(max(entity_count - 1, 1))) + 1

    def effective_window(self) -> int | None:
        return self.window if self.window > 0 else None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.canonical_text(), encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        values = parse_config_file(path)
        return cls().updated(values)

    def updated(self, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(self)}
        out = ExperimentConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            setattr(out, key, _coerce(raw, type(getattr(self, key))))
        return out


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw, target_type):
    if isinstance(raw, target_type) and not (target_type is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    if target_type is bool:
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    return target_type(text)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values
