"""Command-line pipeline: mine, precompute, train, eval, report.

One experiment lives in one directory with canonical sub-paths (rules/,
cache/, ckpt/, reports/); every artifact embeds the producing config hash
and eval refuses mismatched combinations. Exit codes: 0 ok, 2 usage,
3 missing artifact, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .adapters import GnnAdapter, RuleAdapter, load_checkpoint
from .config import ExperimentConfig, parse_config_file
from .data import DataError, DatasetSplit, TemporalKG, augment_inverse, load_dataset
from .evaluation import MissingArtifactError, run_ablation
from .fusion import FusionConfig, make_gate
from .lm import BackendError, CacheError, DistributionCache, backend_from_spec, precompute_cache
from .prompting import RelationLexicon, render_prompt
from .retrieval import RetrievalConfig, retrieve
from .rules import RuleStore, mine_rules
from .training import TrainConfig, TrainingError, train_adapter

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_DATA = 0, 2, 3, 4

EVAL_MODES = ("full", "no_bsl", "no_adapter", "adapter_only", "tlogic_static")

_FLAG_HELP = {
    "data_dir": "dataset directory (train/valid/test.txt, optional stat.txt)",
    "interval": "raw timestamp units per snapshot (ICEWS: 24, GDELT: 15)",
    "include_inverse": "add inverse facts so subject prediction becomes object prediction",
    "retrieval": "prompt history strategy: entity_key | rule_based",
    "history_budget": "max facts per prompt",
    "min_rule_confidence": "confidence floor for rule_based retrieval",
    "keep_fact_parens": "render fact lines as t:[(s,r,o)] instead of t:[s,r,o]",
    "backend": "language model spec, e.g. scripted:/path/backend.json",
    "k": "beam width / number of candidate sequences",
    "n_max": "max generated tokens (0 = digits of |E| plus stop)",
    "literal_prob_softmax": "softmax raw probabilities instead of log-probabilities",
    "walks_per_relation": "temporal walks sampled per head relation and body length",
    "max_body_len": "longest mined rule body",
    "mining_decay": "recency weight exp(-decay*dt) during walk sampling",
    "confidence_samples": "body samples per rule for confidence estimation",
    "adapter": "trainable adapter: rule | gnn",
    "dim": "embedding width",
    "lam": "recency decay rate in rule confidence",
    "encoder": "rule body encoder: lstm | mean",
    "similarity": "rule similarity: cosine | dot",
    "window": "history window in snapshots (0 = entire history)",
    "grounding_cap": "max groundings per (query, rule)",
    "hops": "GNN expansion depth",
    "prune_budget": "GNN nodes kept per hop",
    "neighbor_cap": "GNN most-recent events expanded per node",
    "fusion": "combiner: mixture | product",
    "gate": "adapter weight: mlp_gate | fixed_half",
    "epsilon": "product-mode smoothing",
    "epochs": "training epochs",
    "learning_rate": "optimizer step size",
    "batch_size": "queries per gradient step",
    "seed": "global RNG seed",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--exp", required=True, help="experiment directory")
    parser.add_argument("--config", help="flat key = value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                                default=None, help=_FLAG_HELP.get(f.name, ""))
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None,
                                help=_FLAG_HELP.get(f.name, ""))


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = cfg.updated(parse_config_file(args.config))
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(ExperimentConfig)
        if getattr(args, f.name, None) is not None
    }
    return cfg.updated(overrides)


class Paths:
    def __init__(self, exp: str | Path) -> None:
        self.root = Path(exp)
        self.rules = self.root / "rules" / "rules.ndjson"
        self.rules_meta = self.root / "rules" / "meta.json"
        self.cache_dir = self.root / "cache"
        self.ckpt = self.root / "ckpt" / "adapter.ckpt"
        self.reports = self.root / "reports"
        self.frozen_config = self.root / "config.txt"

    def cache(self, split: str) -> Path:
        return self.cache_dir / f"{split}.ndjson"


def _load_data(cfg: ExperimentConfig) -> tuple[TemporalKG, DatasetSplit, RelationLexicon]:
    if not cfg.data_dir:
        raise DataError("no dataset directory configured (--data-dir)")
    kg, split = load_dataset(cfg.data_dir, interval=cfg.interval)
    if cfg.include_inverse:
        kg = augment_inverse(kg)
    lex_path = Path(cfg.data_dir) / "relations.tsv"
    if lex_path.is_file():
        lexicon = RelationLexicon.from_tsv(lex_path, split.relation_count)
    else:
        lexicon = RelationLexicon.generic(split.relation_count)
    return kg, split, lexicon


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}; build it with `tkgfuse {hint}`")
    return path


def _check_hash(kind: str, found: str, expected: str) -> None:
    if found != expected:
        raise MissingArtifactError(
            f"{kind} was produced by config {found}, current config is {expected}; "
            "rebuild the artifact or restore the matching config"
        )


def _prompt_fn(kg, cfg: ExperimentConfig, lexicon: RelationLexicon, store: RuleStore | None):
    rcfg = RetrievalConfig(cfg.retrieval, cfg.history_budget, cfg.min_rule_confidence)

    def fn(query):
        view = kg.before(query.time)
        facts = retrieve(view, query, rcfg, store)
        return render_prompt(facts, query, lexicon, keep_fact_parens=cfg.keep_fact_parens)

    return fn


def _maybe_store(paths: Paths, cfg: ExperimentConfig, needed: bool) -> RuleStore | None:
    if not needed:
        return None
    _require(paths.rules, "mine ...")
    meta = json.loads(paths.rules_meta.read_text(encoding="utf-8"))
    _check_hash("rule store", meta.get("config_hash", "?"), cfg.hash())
    return RuleStore.load(paths.rules)


def _build_adapter(cfg: ExperimentConfig, kg: TemporalKG, store: RuleStore | None):
    if cfg.adapter == "rule":
        if store is None:
            raise MissingArtifactError("rule adapter requires a mined rule store; run `tkgfuse mine`")
        return RuleAdapter(
            kg.n_rel2, dim=cfg.dim, lam=cfg.lam, encoder=cfg.encoder,
            similarity=cfg.similarity, store=store, window=cfg.effective_window(),
            grounding_cap=cfg.grounding_cap,
        )
    if cfg.adapter == "gnn":
        return GnnAdapter(
            kg.n_rel2, dim=cfg.dim, hops=cfg.hops,
            prune_budget=cfg.prune_budget, neighbor_cap=cfg.neighbor_cap,
        )
    raise DataError(f"unknown adapter kind {cfg.adapter!r}")


def _progress(label: str):
    def cb(done: int, total: int) -> None:
        if done % 500 == 0 or done == total:
            print(f"  {label}: {done}/{total}", file=sys.stderr)

    return cb


def cmd_mine(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = Paths(args.exp)
    kg, split, _ = _load_data(cfg)
    view = kg.before(split.train_end)
    print(f"mining rules over {view.num_facts} training facts", file=sys.stderr)
    store = mine_rules(
        view,
        walks_per_relation=cfg.walks_per_relation,
        max_body_len=cfg.max_body_len,
        decay=cfg.mining_decay,
        seed=cfg.seed,
        confidence_samples=cfg.confidence_samples,
    )
    paths.rules.parent.mkdir(parents=True, exist_ok=True)
    store.save(paths.rules)
    confidences = [r.static_confidence for r in store.rules]
    hist, edges = np.histogram(confidences, bins=10, range=(0.0, 1.0)) if confidences else ([], [])
    stats = {
        "config_hash": cfg.hash(),
        "rule_count": len(store),
        "rules_per_head": {str(h): len(store.by_head(h)) for h in store.head_relations()},
        "confidence_histogram": {
            f"{edges[i]:.1f}-{edges[i + 1]:.1f}": int(hist[i]) for i in range(len(hist))
        },
    }
    paths.rules_meta.write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"mined {len(store)} rules -> {paths.rules}", file=sys.stderr)
    return EXIT_OK


def cmd_precompute(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = Paths(args.exp)
    kg, split, lexicon = _load_data(cfg)
    if not cfg.backend:
        raise DataError("no backend configured (--backend scripted:<path>)")
    backend = backend_from_spec(cfg.backend)
    store = _maybe_store(paths, cfg, needed=cfg.retrieval == "rule_based")
    prompt_fn = _prompt_fn(kg, cfg, lexicon, store)
    n_max = cfg.effective_n_max(kg.entity_count)
    for split_name in args.splits.split(","):
        split_name = split_name.strip()
        queries = split.queries(split_name, include_inverse=cfg.include_inverse)
        meta = DistributionCache.make_meta(cfg.backend, cfg.hash(), cfg.k, n_max)
        path = paths.cache(split_name)
        print(f"precomputing {split_name}: {len(queries)} queries -> {path}", file=sys.stderr)
        cache = precompute_cache(
            backend, queries, prompt_fn, cfg.k, n_max, kg.entity_count,
            path, meta, progress=_progress(split_name),
        )
        print(f"  {len(cache)} entries cached", file=sys.stderr)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = Paths(args.exp)
    kg, split, _ = _load_data(cfg)
    store = _maybe_store(paths, cfg, needed=cfg.adapter == "rule")
    expected_meta_hash = cfg.hash()
    caches = {}
    for name in ("train", "valid"):
        path = _require(paths.cache(name), f"precompute --splits {name} ...")
        caches[name] = DistributionCache.open(path)
        _check_hash(f"{name} cache", caches[name].meta.get("config_hash", "?"), expected_meta_hash)
    torch.manual_seed(cfg.seed)
    adapter = _build_adapter(cfg, kg, store)
    fusion_cfg = FusionConfig(cfg.fusion, cfg.gate, cfg.epsilon)
    gate = make_gate(fusion_cfg, cfg.dim)
    train_cfg = TrainConfig(cfg.epochs, cfg.learning_rate, cfg.batch_size, cfg.seed)
    result = train_adapter(
        adapter, gate, kg, split, caches["train"], caches["valid"],
        train_cfg, fusion_cfg, out_dir=paths.ckpt.parent, config_hash=cfg.hash(),
        include_inverse=cfg.include_inverse, progress=_train_progress,
    )
    cfg.save(paths.frozen_config)
    print(
        f"best epoch {result.best_epoch} (valid hits@3 {result.best_metric:.4f}) "
        f"-> {result.checkpoint_path}",
        file=sys.stderr,
    )
    return EXIT_OK


def _train_progress(label: str, done: int, total: int) -> None:
    if done % 2560 == 0 or done == total:
        print(f"  {label}: {done}/{total}", file=sys.stderr)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = Paths(args.exp)
    mode = args.mode
    kg, split, lexicon = _load_data(cfg)
    queries = split.queries("test", include_inverse=cfg.include_inverse)
    kwargs: dict = {"kg": kg, "queries": queries, "static_lam": cfg.lam}

    needs_store = mode == "tlogic_static" or cfg.adapter == "rule" and mode in ("full", "no_bsl", "adapter_only")
    store = _maybe_store(paths, cfg, needed=needs_store or cfg.retrieval == "rule_based")
    kwargs["store"] = store

    if mode in ("no_adapter", "full"):
        path = _require(paths.cache("test"), "precompute --splits test ...")
        cache = DistributionCache.open(path)
        _check_hash("test cache", cache.meta.get("config_hash", "?"), cfg.hash())
        kwargs["cache"] = cache
    if mode in ("full", "no_bsl", "adapter_only"):
        torch.manual_seed(cfg.seed)
        adapter = _build_adapter(cfg, kg, store if cfg.adapter == "rule" else None)
        fusion_cfg = FusionConfig(cfg.fusion, cfg.gate, cfg.epsilon)
        gate = make_gate(fusion_cfg, cfg.dim)
        bundle = nn.ModuleDict({"adapter": adapter, "gate": gate})
        header = load_checkpoint(_require(paths.ckpt, "train ..."), bundle)
        _check_hash("checkpoint", header.get("config_hash", "?"), cfg.hash())
        kwargs.update(adapter=adapter, gate=gate, fusion_config=fusion_cfg)
    if mode == "no_bsl":
        if not cfg.backend:
            raise MissingArtifactError("no_bsl mode needs --backend to regenerate LM draws")
        kwargs.update(
            backend=backend_from_spec(cfg.backend),
            prompt_fn=_prompt_fn(kg, cfg, lexicon, store),
            k=cfg.k,
            n_max=cfg.effective_n_max(kg.entity_count),
        )

    paths.reports.mkdir(parents=True, exist_ok=True)
    dump = str(paths.reports / f"{mode}_ranks.ndjson") if args.dump_ranks else None
    print(f"evaluating mode={mode} on {len(queries)} test queries", file=sys.stderr)
    report = run_ablation(mode, dump_path=dump, progress=_progress(mode), **kwargs)
    payload = {
        "mode": mode,
        "config_hash": cfg.hash(),
        "query_count": report.query_count,
        "counts": {k: report.counts[k] for k in sorted(report.counts)},
        "hits": {
            scope: {f"hits@{k}": report.hits[scope][k] for k in sorted(report.hits[scope])}
            for scope in sorted(report.hits)
        },
    }
    (paths.reports / f"{mode}.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (paths.reports / f"{mode}.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    paths = Paths(args.exp)
    if not paths.reports.is_dir():
        raise MissingArtifactError(f"no reports under {paths.reports}; run `tkgfuse eval` first")
    for path in sorted(paths.reports.glob("*.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        print(f"== {payload.get('mode', path.stem)} (config {payload.get('config_hash', '?')})")
        for scope in ("overall", "forward", "inverse"):
            hits = payload.get("hits", {}).get(scope)
            if hits:
                cells = "  ".join(f"{k}={v:.4f}" for k, v in sorted(hits.items()))
                print(f"  {scope:<8s} {cells}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tkgfuse",
        description="Temporal KG forecasting: frozen-LM beam predictions refined by trainable graph adapters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine temporal rules from the training split")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("precompute", help="cache LM output distributions per split")
    _add_config_flags(p)
    p.add_argument("--splits", default="train,valid,test", help="comma-separated split names")
    p.set_defaults(fn=cmd_precompute)

    p = sub.add_parser("train", help="train the adapter against the frozen cached LM")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a pipeline variant on the test split")
    _add_config_flags(p)
    p.add_argument("--mode", choices=EVAL_MODES, default="full")
    p.add_argument("--dump-ranks", action="store_true", help="write per-query rank records")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="print stored evaluation reports")
    p.add_argument("--exp", required=True, help="experiment directory")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DataError, CacheError, TrainingError, BackendError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
