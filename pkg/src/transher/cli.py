"""Command-line entry point: train, eval, init-search, verify, query, analyze.

Every option can also be given in a flat ``key = value`` config file
(``--config``); command-line flags win over file values. Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from typing import Dict, List, Optional

from . import __version__
from .analysis import (UnsupportedVariant, default_block_size, translation_heatmap,
                       translation_l1_histogram)
from .data import DataError, KnowledgeGraph, categorize_relations, load_candidates, load_dataset
from .evaluation import evaluate, top_k
from .init import InitStrategy, init_search, initialize
from .model import ModelParameters, NumericError, load_checkpoint
from .patterns import verify_suite
from .training import (TrainConfig, save_training_checkpoint, train, write_loss_trace)

logger = logging.getLogger("transher")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# key -> (type, default, help)
OPTIONS: Dict[str, tuple] = {
    "data_dir": (str, None, "directory with entities.dict, relations.dict, train/valid/test.txt"),
    "train": (str, None, "training triples (overrides data_dir)"),
    "valid": (str, None, "validation triples"),
    "test": (str, None, "test triples"),
    "entities": (str, None, "entity dictionary"),
    "relations": (str, None, "relation dictionary"),
    "model": (str, "transher", "transher, pairre or transe"),
    "dim": (int, 200, "embedding dimension k"),
    "gamma": (float, 6.0, "margin gamma"),
    "init_gamma": (float, None, "gamma used by the gamma-uniform initializer (defaults to --gamma)"),
    "alpha": (float, 1.0, "self-adversarial temperature"),
    "negatives": (int, 128, "negatives per positive"),
    "batch_size": (int, 512, "positives per step"),
    "steps": (int, 1000, "optimizer steps"),
    "learning_rate": (float, 1e-3, "Adam learning rate"),
    "lr_decay": (str, "", "step:factor[,step:factor...] learning-rate decay schedule"),
    "reg_weight": (float, 0.0, "L_p regularization weight on translations"),
    "reg_order": (int, 3, "regularization order p"),
    "init": (str, "uniform,normal,normal", "entity,relation,translation initializers"),
    "epsilon": (float, 2.0, "gamma-uniform epsilon"),
    "gain": (float, 1.0, "Xavier-normal gain"),
    "seed": (int, 0, "random seed"),
    "threads": (int, 1, "worker cap for all pools"),
    "deterministic": (bool, True, "single worker, bit-reproducible runs"),
    "debug": (bool, False, "check finiteness after every optimizer step"),
    "unfiltered_negatives": (bool, False, "do not resample negatives that are known facts"),
    "log_every": (int, 100, "loss-trace interval in steps"),
    "eval_every": (int, 0, "print valid MRR every N steps (0 = never)"),
    "checkpoint_every": (int, 0, "intermediate checkpoint interval in steps"),
    "checkpoint_dir": (str, None, "checkpoint directory (default <output_dir>/checkpoint)"),
    "output_dir": (str, "runs", "output directory"),
    "protocol": (str, "full", "full or partial ranking"),
    "candidates": (str, None, "candidate-list file for partial ranking"),
    "split": (str, "test", "split to evaluate"),
    "type_threshold": (float, 1.5, "hpt/tph threshold for relation categories"),
    "budget_steps": (int, 2000, "training steps per combination in init-search"),
    "trials": (int, 1000, "pattern-verification trials"),
    "tolerance": (float, 1e-8, "pattern-verification tolerance"),
    "head": (str, None, "query head entity name (predict tails)"),
    "tail": (str, None, "query tail entity name (predict heads)"),
    "relation": (str, None, "query relation name"),
    "k": (int, 10, "number of completions to list"),
    "filter_known": (bool, False, "drop completions that are already known facts"),
    "block_size": (int, 0, "heat-map pooling block (0 = default for dim)"),
    "bins": (int, 30, "histogram bins"),
}

COMMANDS = ("train", "eval", "init-search", "verify", "query", "analyze")


class UsageError(Exception):
    pass


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path: str) -> Dict[str, object]:
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _convert(key, value)
    return values


def _convert(key, value):
    kind = OPTIONS[key][0]
    if value is None:
        return None
    try:
        return _parse_bool(value) if kind is bool else kind(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transher", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--checkpoint", help="checkpoint directory to load")
        p.add_argument("--log-level", default=None)
        for key, (kind, default, help_text) in OPTIONS.items():
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, nargs="?", const="true", default=None, help=help_text)
            else:
                p.add_argument(flag, default=None, help=f"{help_text} (default: {default})")
    return parser


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    """Defaults < config file < environment (output dir) < command-line flags."""
    cfg = {k: v[1] for k, v in OPTIONS.items()}
    if args.config:
        cfg.update(read_config_file(args.config))
    if os.environ.get("TRANSHER_OUTPUT_DIR"):
        cfg["output_dir"] = os.environ["TRANSHER_OUTPUT_DIR"]
    for key in OPTIONS:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = _convert(key, value)
    cfg["command"] = args.command
    cfg["checkpoint"] = args.checkpoint
    if cfg["checkpoint_dir"] is None:
        cfg["checkpoint_dir"] = os.path.join(cfg["output_dir"], "checkpoint")
    return cfg


def dataset_paths(cfg) -> Dict[str, str]:
    names = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt",
             "entities": "entities.dict", "relations": "relations.dict"}
    paths = {}
    for key, fname in names.items():
        path = cfg.get(key) or (os.path.join(cfg["data_dir"], fname) if cfg.get("data_dir") else None)
        if path is None:
            raise UsageError(f"missing dataset path: give --data-dir or --{key}")
        paths[key] = path
    return paths


def load_graph(cfg) -> KnowledgeGraph:
    paths = dataset_paths(cfg)
    for key, path in paths.items():
        if not os.path.exists(path):
            raise UsageError(f"dataset file not found: {path}")
    graph = load_dataset(paths["train"], paths["valid"], paths["test"], paths["entities"],
                         paths["relations"])
    if cfg["type_threshold"] != 1.5:
        graph.relation_types = categorize_relations(graph, cfg["type_threshold"])
    logger.info("loaded %d entities, %d relations, %d/%d/%d triples", graph.num_entities,
                graph.num_relations, len(graph.train), len(graph.valid), len(graph.test))
    return graph


def _file_digest(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(cfg, graph: Optional[KnowledgeGraph] = None):
    inputs = {}
    try:
        paths = dataset_paths(cfg)
    except UsageError:
        paths = {}
    if cfg.get("candidates"):
        paths["candidates"] = cfg["candidates"]
    if cfg.get("checkpoint"):
        paths["checkpoint_manifest"] = os.path.join(cfg["checkpoint"], "manifest.json")
    for key, path in paths.items():
        if os.path.exists(path):
            inputs[key] = {"path": path, "sha256": _file_digest(path)}
    manifest = {
        "version": __version__,
        "config": cfg,
        "inputs": inputs,
        "dataset_fingerprint": graph.fingerprint() if graph is not None else None,
    }
    os.makedirs(cfg["output_dir"], exist_ok=True)
    with open(os.path.join(cfg["output_dir"], "run-manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def parse_decay(text: str):
    schedule = []
    for item in filter(None, (s.strip() for s in (text or "").split(","))):
        try:
            step, factor = item.split(":")
            schedule.append((int(step), float(factor)))
        except ValueError:
            raise UsageError(f"bad lr-decay entry {item!r}; expected step:factor") from None
    return tuple(schedule)


def train_config(cfg, graph: KnowledgeGraph, steps: Optional[int] = None) -> TrainConfig:
    return TrainConfig(
        steps=cfg["steps"] if steps is None else steps,
        batch_size=cfg["batch_size"], negatives=cfg["negatives"], alpha=cfg["alpha"],
        learning_rate=cfg["learning_rate"], lr_decay=parse_decay(cfg["lr_decay"]),
        reg_weight=cfg["reg_weight"], reg_order=cfg["reg_order"],
        filtered_negatives=not cfg["unfiltered_negatives"], seed=cfg["seed"],
        deterministic=cfg["deterministic"], workers=cfg["threads"], debug=cfg["debug"],
        log_every=cfg["log_every"], eval_every=cfg["eval_every"],
        checkpoint_every=cfg["checkpoint_every"],
        checkpoint_dir=os.path.join(cfg["checkpoint_dir"], "intermediate"),
        dataset_fingerprint=graph.fingerprint())


def strategy(cfg) -> InitStrategy:
    try:
        return InitStrategy.parse(cfg["init"], epsilon=cfg["epsilon"], gain=cfg["gain"],
                                  seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def new_params(cfg, graph) -> ModelParameters:
    try:
        params = ModelParameters.allocate(cfg["model"], cfg["dim"], cfg["gamma"],
                                          graph.num_entities, graph.num_relations)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    init_gamma = cfg["init_gamma"]
    if init_gamma is not None:
        params.gamma = init_gamma
    initialize(params, strategy(cfg))
    params.gamma = cfg["gamma"]
    return params


def load_params(cfg, graph) -> ModelParameters:
    path = cfg["checkpoint"] or cfg["checkpoint_dir"]
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise UsageError(f"no checkpoint at {path}")
    try:
        params, _, _ = load_checkpoint(path, expected_fingerprint=graph.fingerprint())
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return params


def cmd_train(cfg) -> int:
    graph = load_graph(cfg)
    write_run_manifest(cfg, graph)
    params = new_params(cfg, graph)
    config = train_config(cfg, graph)

    def report_valid(step, p):
        rep = evaluate(p, graph, split="valid", workers=cfg["threads"])
        print(f"step {step}: valid MRR {rep.overall['mrr']:.4f}")

    result = train(graph, params, config, callback=report_valid)
    save_training_checkpoint(params, result.optimizer, cfg["checkpoint_dir"], graph.fingerprint())
    write_loss_trace(result.loss_trace, os.path.join(cfg["output_dir"], "loss_trace.csv"))
    result.gradient_stats.write_csv(os.path.join(cfg["output_dir"], "gradient_stats.csv"))
    last = result.loss_trace[-1][1] if result.loss_trace else float("nan")
    print(f"trained {cfg['model']} for {cfg['steps']} steps; final loss {last:.6f}; "
          f"checkpoint: {cfg['checkpoint_dir']}")
    return EXIT_OK


def _load_candidates(cfg, graph):
    if cfg["protocol"] != "partial":
        return None
    if not cfg["candidates"]:
        raise UsageError("--protocol partial needs --candidates")
    return load_candidates(cfg["candidates"], graph, cfg["split"])


def cmd_eval(cfg) -> int:
    graph = load_graph(cfg)
    params = load_params(cfg, graph)
    write_run_manifest(cfg, graph)
    report = evaluate(params, graph, cfg["protocol"], _load_candidates(cfg, graph), cfg["split"],
                      workers=cfg["threads"])
    report.to_json(os.path.join(cfg["output_dir"], "ranking_report.json"))
    report.to_csv(os.path.join(cfg["output_dir"], "ranking_report.csv"))
    print(report.summary())
    return EXIT_OK


def cmd_init_search(cfg) -> int:
    graph = load_graph(cfg)
    write_run_manifest(cfg, graph)
    results = init_search(graph, {"variant": cfg["model"], "dim": cfg["dim"], "gamma": cfg["gamma"]},
                          train_config(cfg, graph), cfg["budget_steps"], base=strategy(cfg),
                          workers=1 if cfg["deterministic"] else cfg["threads"])
    path = os.path.join(cfg["output_dir"], "init_search.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("rank", "entity", "relation", "translation", "valid_mrr", "valid_hits@10",
                         "error"))
        for i, r in enumerate(results, start=1):
            s = r.strategy
            writer.writerow((i, s.entity, s.relation, s.translation,
                             "" if r.mrr is None else r.mrr,
                             "" if r.hits10 is None else r.hits10, r.error or ""))
    for i, r in enumerate(results, start=1):
        shown = f"MRR {r.mrr:.4f}  HIT@10 {r.hits10:.4f}" if not r.failed else f"FAILED {r.error}"
        print(f"{i}. {r.strategy.tokens():<24} {shown}")
    return EXIT_OK


def cmd_verify(cfg) -> int:
    os.makedirs(cfg["output_dir"], exist_ok=True)
    report = verify_suite(cfg["dim"], cfg["trials"], cfg["tolerance"], cfg["seed"])
    report.to_json(os.path.join(cfg["output_dir"], "pattern_report.json"))
    write_run_manifest(cfg)
    print(report.table())
    return EXIT_OK


def cmd_query(cfg) -> int:
    if bool(cfg["head"]) == bool(cfg["tail"]) or not cfg["relation"]:
        raise UsageError("query needs --relation and exactly one of --head / --tail")
    graph = load_graph(cfg)
    params = load_params(cfg, graph)
    name = cfg["head"] or cfg["tail"]
    direction = "tail" if cfg["head"] else "head"
    try:
        entity = graph.entity2id[name]
        relation = graph.relation2id[cfg["relation"]]
    except KeyError as exc:
        raise DataError(f"unknown name {exc.args[0]!r}") from None
    listing = top_k(params, graph, entity, relation, direction, cfg["k"], cfg["filter_known"])
    known = {int(x) for x in (graph.filter_index.contains(entity, relation, [e for e, _ in listing])
                              if direction == "tail" else
                              graph.filter_index.contains([e for e, _ in listing], relation, entity)).nonzero()[0]}
    rows = [{"rank": i + 1, "entity": graph.id2entity[e], "id": e, "score": s, "known": i in known}
            for i, (e, s) in enumerate(listing)]
    write_run_manifest(cfg, graph)
    with open(os.path.join(cfg["output_dir"], "topk.json"), "w", encoding="utf-8") as f:
        json.dump({"query": {"entity": name, "relation": cfg["relation"], "predict": direction},
                   "results": rows}, f, indent=2)
        f.write("\n")
    query = f"({name}, {cfg['relation']}, ?)" if direction == "tail" else f"(?, {cfg['relation']}, {name})"
    print(query)
    for row in rows:
        mark = "*" if row["known"] else " "
        print(f"{row['rank']:>4} {mark} {row['score']:>12.6f}  {row['entity']}")
    return EXIT_OK


def cmd_analyze(cfg) -> int:
    graph = load_graph(cfg)
    params = load_params(cfg, graph)
    write_run_manifest(cfg, graph)
    try:
        heat = translation_heatmap(params, graph.relation_types,
                                   cfg["block_size"] or default_block_size(params.dim))
        hist = translation_l1_histogram(params, cfg["bins"])
    except UnsupportedVariant as exc:
        raise UsageError(str(exc)) from None
    heat.write_csv(os.path.join(cfg["output_dir"], "translation_heatmap.csv"))
    hist.to_json(os.path.join(cfg["output_dir"], "translation_l1.json"))
    means = {c: float(heat.row(c).mean()) for c in heat.categories if heat.counts[c]}
    print("mean |B| per relation type: " + ", ".join(f"{c} {v:.4f}" for c, v in means.items()))
    print(f"fraction of relations with |B|_1 > gamma: {hist.fraction_above_gamma:.3f}")
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "init-search": cmd_init_search,
            "verify": cmd_verify, "query": cmd_query, "analyze": cmd_analyze}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or os.environ.get("TRANSHER_LOG_LEVEL", "WARNING")
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"transher: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError) as exc:
        print(f"transher: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"transher: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"transher: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
