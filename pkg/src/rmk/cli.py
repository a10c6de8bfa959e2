"""``rmk`` command line: train, eval, retrieve, trace, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite loss or a failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, resolve_config
from .diagnostics import model_gradcheck
from .knowledge import load_triple_store, retrieve_candidates
from .pipeline import DataError, featurize, load_workspace
from .trace import build_trace
from .training import NumericalError, evaluate, format_log_line, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("rmk")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="config file (flat 'section.key = value' lines)")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rmk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="where to write the checkpoint (overrides paths.checkpoint)")
    p.add_argument("--mode", choices=("disc", "gen", "both"))
    p.add_argument("--log", type=Path, help="JSON-lines epoch log (overrides paths.log)")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--mode", choices=("disc", "gen", "both"))
    p.add_argument("--k", type=int, help="facts retrieved per question")

    p = sub.add_parser("retrieve", help="show the top-k facts for a caption")
    _common(p)
    p.add_argument("--caption", required=True)
    p.add_argument("--concepts", default="", help="comma-separated detected concepts")
    p.add_argument("--k", type=int)

    p = sub.add_parser("trace", help="dump the reasoning trace of one instance as JSON")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--instance", required=True, help="image id of the dialog instance")
    p.add_argument("--mode", choices=("disc", "gen", "both"))
    p.add_argument("--k", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    _common(p)
    return parser


def _config(args) -> RunConfig:
    flags = {"run.seed": args.seed}
    if getattr(args, "mode", None):
        flags["model.mode"] = args.mode
    if getattr(args, "k", None) is not None:
        flags["model.k_facts"] = str(args.k)
    if getattr(args, "checkpoint", None) is not None:
        flags["paths.checkpoint"] = str(args.checkpoint)
    if getattr(args, "log", None) is not None:
        flags["paths.log"] = str(args.log)
    return resolve_config(args.config, flags, sets=args.set)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_train(cfg: RunConfig) -> int:
    ws = load_workspace(cfg)
    if not ws.train:
        raise DataError(f"{cfg.paths.dataset} has no dialog instances")
    vocab = ws.build_vocabulary()
    fz = ws.featurizer(vocab)
    examples = featurize(fz, ws.train)
    val = featurize(fz, ws.val) if ws.val else None
    model = ws.new_model(vocab)
    log_fh = open(cfg.paths.log, "w", encoding="utf-8") if cfg.paths.log else None

    def on_epoch(record):
        line = format_log_line(record)
        print(line, flush=True)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()

    try:
        train(model, examples, cfg.optim, seed=cfg.seed, val_examples=val, on_epoch=on_epoch)
    finally:
        if log_fh:
            log_fh.close()
    if cfg.paths.checkpoint:
        save_checkpoint(cfg.paths.checkpoint, model, ws.kb.relations, extra={"seed": cfg.seed})
        log.info("wrote %s", cfg.paths.checkpoint)
    return EXIT_OK


def _load_model(cfg: RunConfig, ws):
    if not cfg.paths.checkpoint:
        raise ConfigError("no checkpoint given (--checkpoint or paths.checkpoint)")
    model, relations, _ = load_checkpoint(cfg.paths.checkpoint, cfg.model)
    if relations.names != ws.kb.relations.names:
        raise CheckpointError("relation inventory of the triple store differs from the checkpoint")
    return model


def cmd_eval(cfg: RunConfig) -> int:
    ws = load_workspace(cfg)
    model = _load_model(cfg, ws)
    instances = ws.val or ws.train
    if not instances:
        raise DataError("nothing to evaluate")
    reports = evaluate(model, featurize(ws.featurizer(model.vocab), instances), cfg.optim.batch_size)
    for mode, rep in reports.items():
        print(f"{mode}: {rep}", file=sys.stderr)
    _emit({mode: rep.as_dict() for mode, rep in reports.items()})
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig, caption: str, concepts: Sequence[str]) -> int:
    try:
        store = load_triple_store(cfg.paths.triples) if cfg.paths.triples else []
    except OSError as exc:
        raise DataError(f"cannot read triple store: {exc}") from exc
    if not store:
        raise DataError("triple store is empty or not configured (paths.triples)")
    vectors = None
    if cfg.paths.word_vectors:
        from .knowledge import load_word_vectors

        vectors = load_word_vectors(cfg.paths.word_vectors)
    facts = retrieve_candidates(store, caption, concepts, cfg.model.k_facts, vectors)
    for rank, sf in enumerate(facts, 1):
        f = sf.fact
        print(f"{rank}\t{sf.score:.6f}\t{f.subject}\t{f.relation}\t{f.object}")
    return EXIT_OK


def cmd_trace(cfg: RunConfig, instance_id: str) -> int:
    ws = load_workspace(cfg)
    model = _load_model(cfg, ws)
    pool = {inst.image_id: inst for inst in ws.val + ws.train}
    if instance_id not in pool:
        raise DataError(f"unknown instance id {instance_id!r}")
    example = featurize(ws.featurizer(model.vocab), [pool[instance_id]])[0]
    _emit(build_trace(model, example))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    report = model_gradcheck(cfg.model, seed=cfg.seed)
    for line in report.lines():
        print(line)
    if not report.ok:
        print(f"gradient check failed for: {', '.join(report.failures)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        cfg = _config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "retrieve":
            concepts = [c.strip() for c in args.concepts.split(",") if c.strip()]
            return cmd_retrieve(cfg, args.caption, concepts)
        if args.command == "trace":
            return cmd_trace(cfg, args.instance)
        return cmd_gradcheck(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
