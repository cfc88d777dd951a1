"""Command-line entry point. Exit codes: 0 ok, 1 unexpected, 2 config, 3 data, 4 numeric."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

import yaml

from . import experiment as ex
from .chat import chat
from .checkpoint import (
    agent_checkpoint,
    discriminator_checkpoint,
    load_checkpoint,
    load_discriminator,
    load_generator,
    load_trainer,
    save_checkpoint,
    trainer_checkpoint,
)
from .config import ExperimentConfig, from_dict, load_config
from .corpus import corpus_stats, generate_corpus, load_corpus, save_corpus
from .discriminator import POOLING_METHODS
from .domain import ActionInventory
from .errors import AdvDialogError, ConfigError, DataError
from .evaluation import emit_curves, offline_eval_discriminator
from .rollout import evaluate_success_rate, simulate
from .trainer import REWARD_SOURCES

log = logging.getLogger("advdialog")


def _parse_set(items: Optional[List[str]]) -> Dict[str, object]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def build_config(args, extra: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """Profile defaults < --config file < --set pairs < dedicated flags."""
    overrides = _parse_set(getattr(args, "set", None))
    overrides.update({"profile": args.profile, "seed": args.seed})
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _write_log(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_log(path) -> List[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read training log {path}: {exc}") from None


def _agent_stage(cfg: ExperimentConfig, world, agent_path: Optional[str]):
    if agent_path is None:
        return ex.pretrain_agent_stage(cfg, world)
    ckpt = load_checkpoint(agent_path, world.ontology)
    return ex.pretrained_from(cfg, load_generator(ckpt), ckpt.pool, world)


# ------------------------------------------------------------------ commands

def cmd_gen_corpus(args) -> int:
    cfg = build_config(args, {"corpus_size": args.n})
    world = ex.build_world(cfg)
    dialogs = generate_corpus(world.ontology, world.kb, cfg.corpus_size, world.simulator,
                              ex.rng_streams(cfg.seed)["corpus"], cfg.trainer.max_turns)
    save_corpus(args.out, dialogs, world.inventory)
    _print(corpus_stats(dialogs))
    return 0


def cmd_pretrain_agent(args) -> int:
    cfg = build_config(args, {"agent_pretrain.epochs": args.epochs})
    world = ex.build_world(cfg)
    if args.corpus:
        demo = load_corpus(args.corpus, world.ontology, world.inventory)
        if not demo:
            raise DataError(f"{args.corpus} holds no dialogs")
    else:
        demo = None
    pre = ex.pretrain_agent_stage(cfg, world, demo)
    save_checkpoint(args.out, agent_checkpoint(pre.generator, cfg.to_dict(), pre.demo,
                                               {"history": pre.agent_history}))
    _print(pre.agent_history[-1] if pre.agent_history else {})
    return 0


def cmd_pretrain_discriminator(args) -> int:
    cfg = build_config(args, {"positives": args.positives, "discriminator.pooling": args.pooling})
    world = ex.build_world(cfg)
    pre = ex.discriminator_stage(ex.simulate_stage(_agent_stage(cfg, world, args.agent)))
    metrics = ex.discriminator_metrics(pre)
    save_checkpoint(args.out, discriminator_checkpoint(
        pre.discriminator, cfg.to_dict(), pre.positives,
        {"history": pre.discriminator_history, "test_metrics": metrics}))
    _print(metrics)
    return 0


def cmd_train(args) -> int:
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        cfg = from_dict(ckpt.config)
        world = ex.build_world(cfg)
        if world.ontology.fingerprint() != ckpt.fingerprint:
            load_checkpoint(args.resume, world.ontology)  # raises FingerprintError
        trainer = load_trainer(ckpt, world.simulator)
    else:
        cfg = build_config(args, {
            "trainer.reward_source": args.reward,
            "trainer.feedback_rate": args.feedback_rate,
            "trainer.iterations": args.iterations,
            "positives": args.positives,
            "discriminator.pooling": args.pooling,
        })
        world = ex.build_world(cfg)
        pre = _agent_stage(cfg, world, args.agent)
        if cfg.trainer.reward_source == "adversarial":
            if args.discriminator:
                dck = load_checkpoint(args.discriminator, world.ontology)
                pre = ex.attach_discriminator(pre, load_discriminator(dck), dck.pool)
            else:
                pre = ex.discriminator_stage(ex.simulate_stage(pre))
        trainer = ex.make_trainer(pre)
    trainer.train(args.stop_after)
    if args.out:
        save_checkpoint(args.out, trainer_checkpoint(trainer, cfg.to_dict()))
    if args.log:
        _write_log(args.log, trainer.log)
    if args.curves:
        emit_curves(trainer.log, args.curves)
    _print(trainer.log[-1])
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = from_dict(ckpt.config)
    world = ex.build_world(cfg)
    gen = load_generator(load_checkpoint(args.checkpoint, world.ontology))
    rate = evaluate_success_rate(gen, world.simulator, args.n, args.eval_seed, cfg.trainer.max_turns)
    _print({"success_rate": rate, "n": args.n, "eval_seed": args.eval_seed})
    return 0


def cmd_eval_discriminator(args) -> int:
    dck = load_checkpoint(args.discriminator)
    cfg = from_dict(dck.config)
    world = ex.build_world(cfg)
    disc = load_discriminator(load_checkpoint(args.discriminator, world.ontology))
    if args.corpus:
        dialogs = load_corpus(args.corpus, world.ontology, world.inventory)
    else:
        if not args.agent:
            raise ConfigError("eval-discriminator needs --corpus or --agent")
        gen = load_generator(load_checkpoint(args.agent, world.ontology))
        dialogs = simulate(gen, world.simulator, cfg.n_test, ex.rng_streams(cfg.seed)["test"],
                           cfg.trainer.max_turns)
    acc, succ, fail = offline_eval_discriminator(disc, dialogs)
    _print({"accuracy": acc, "success_prob": succ, "fail_prob": fail, "n": len(dialogs)})
    return 0


def cmd_emit_curves(args) -> int:
    if args.log:
        records = _read_log(args.log)
    elif args.checkpoint:
        records = load_checkpoint(args.checkpoint).state.get("log", [])
    else:
        raise ConfigError("emit-curves needs --log or --checkpoint")
    emit_curves(records, args.out)
    return 0


def cmd_chat(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = from_dict(ckpt.config)
    world = ex.build_world(cfg)
    gen = load_generator(load_checkpoint(args.checkpoint, world.ontology))
    dialog = chat(gen, world.kb)
    if args.save:
        save_corpus(args.save, [dialog], ActionInventory(world.ontology))
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advdialog", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--profile", choices=["toy", "dstc2-scale"], default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None, help="YAML file layered over profile defaults")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. trainer.g_lr=1e-4")
        return sp

    sp = common(sub.add_parser("gen-corpus", help="write a scripted-expert corpus (JSONL)"))
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = common(sub.add_parser("pretrain-agent", help="supervised agent pretraining"))
    sp.add_argument("--corpus", help="JSONL corpus; generated from the seed when omitted")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pretrain_agent)

    sp = common(sub.add_parser("pretrain-discriminator", help="simulate with the agent and pretrain D"))
    sp.add_argument("--agent", help="agent checkpoint; pretrained from scratch when omitted")
    sp.add_argument("--positives", type=int, default=None)
    sp.add_argument("--pooling", choices=POOLING_METHODS, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pretrain_discriminator)

    sp = common(sub.add_parser("train", help="policy-gradient training"))
    sp.add_argument("--reward", choices=REWARD_SOURCES, default=None)
    sp.add_argument("--pooling", choices=POOLING_METHODS, default=None)
    sp.add_argument("--positives", type=int, default=None)
    sp.add_argument("--feedback-rate", type=float, default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--stop-after", type=int, default=None,
                    help="stop at this iteration (resume later with --resume)")
    sp.add_argument("--agent", help="agent checkpoint")
    sp.add_argument("--discriminator", help="discriminator checkpoint")
    sp.add_argument("--resume", help="trainer checkpoint to continue from")
    sp.add_argument("--out", help="trainer checkpoint to write")
    sp.add_argument("--log", help="JSONL snapshot log to write")
    sp.add_argument("--curves", help="CSV curve file to write")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="greedy success rate of an agent or trainer checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--eval-seed", type=int, default=20180601)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("eval-discriminator", help="accuracy and mean D on success/fail dialogs")
    sp.add_argument("--discriminator", required=True)
    sp.add_argument("--agent", help="simulate the test set with this agent")
    sp.add_argument("--corpus", help="labeled JSONL corpus to score instead")
    sp.set_defaults(func=cmd_eval_discriminator)

    sp = sub.add_parser("emit-curves", help="CSV curves from a log or trainer checkpoint")
    sp.add_argument("--log")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_emit_curves)

    sp = sub.add_parser("chat", help="play the user against an agent")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--save", help="append-free JSONL file for the session record")
    sp.set_defaults(func=cmd_chat)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AdvDialogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("unexpected failure")
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
