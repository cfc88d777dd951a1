"""End-to-end pipeline: corpus, pretraining of both models, RL training."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .agent import Generator, supervised_pretrain
from .config import ExperimentConfig
from .corpus import corpus_stats, generate_corpus
from .discriminator import Discriminator, offline_metrics, pretrain as pretrain_discriminator
from .domain import ActionInventory, Dialog, KnowledgeBase, Ontology, load_profile
from .rollout import simulate
from .simulator import UserSimulator
from .trainer import PRETRAIN_SAMPLE, AdversarialTrainer, SampleBuffers

log = logging.getLogger(__name__)

STREAMS = ("corpus", "agent_init", "agent_pretrain", "simulate", "sample",
           "disc_init", "disc_pretrain", "test")


@dataclass
class World:
    ontology: Ontology
    kb: KnowledgeBase
    inventory: ActionInventory
    simulator: UserSimulator


def build_world(cfg: ExperimentConfig) -> World:
    onto, kb = load_profile(cfg.profile)
    return World(onto, kb, ActionInventory(onto), UserSimulator(onto, kb, cfg.simulator))


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def sample_discriminator_data(demo: List[Dialog], simulated: List[Dialog], n_pos: int, n_neg: int,
                              rng: np.random.Generator):
    """Successful dialogs from demo + simulated as positives, random simulated as negatives."""
    successes = [d for d in demo + simulated if d.success]
    if len(successes) < n_pos:
        log.warning("only %d successful dialogs for %d requested positives", len(successes), n_pos)
        n_pos = len(successes)
    pos_idx = rng.choice(len(successes), size=n_pos, replace=False)
    neg_idx = rng.choice(len(simulated), size=min(n_neg, len(simulated)), replace=False)
    return [successes[int(i)] for i in pos_idx], [simulated[int(i)] for i in neg_idx]


@dataclass
class Pretrained:
    """Pretrained models, corpora and D samples shared by RL variants."""
    config: ExperimentConfig
    world: World
    demo: List[Dialog]
    generator: Generator
    agent_history: List[Dict]
    simulated: List[Dialog] = field(default_factory=list)
    test: List[Dialog] = field(default_factory=list)
    positives: List[Dialog] = field(default_factory=list)
    negatives: List[Dialog] = field(default_factory=list)
    discriminator: Optional[Discriminator] = None
    discriminator_history: List[Dict] = field(default_factory=list)


def pretrain_agent_stage(cfg: ExperimentConfig, world: Optional[World] = None,
                         demo: Optional[List[Dialog]] = None) -> Pretrained:
    """Pretrain on ``demo``, or on a freshly generated expert corpus when it is None."""
    world = world or build_world(cfg)
    rngs = rng_streams(cfg.seed)
    if demo is None:
        demo = generate_corpus(world.ontology, world.kb, cfg.corpus_size, world.simulator,
                               rngs["corpus"], cfg.trainer.max_turns)
    log.info("demo corpus: %s", corpus_stats(demo))
    gen = Generator(world.ontology, world.inventory, cfg.agent, rngs["agent_init"])
    hist = supervised_pretrain(gen, demo, cfg.agent_pretrain, rngs["agent_pretrain"])
    return Pretrained(cfg, world, demo, gen, hist)


def simulate_stage(pre: Pretrained) -> Pretrained:
    cfg = pre.config
    rngs = rng_streams(cfg.seed)
    pre.simulated = simulate(pre.generator, pre.world.simulator, cfg.n_simulated, rngs["simulate"],
                             cfg.trainer.max_turns)
    pre.test = simulate(pre.generator, pre.world.simulator, cfg.n_test, rngs["test"],
                        cfg.trainer.max_turns)
    return pre


def discriminator_stage(pre: Pretrained, positives: Optional[int] = None,
                        pooling: Optional[str] = None) -> Pretrained:
    """Sample positives/negatives and pretrain a fresh discriminator.

    Returns a shallow copy of ``pre`` so different sample sizes or pooling
    methods can share the same pretrained agent.
    """
    cfg = pre.config
    if positives is not None or pooling is not None:
        cfg = copy.deepcopy(cfg)
        if positives is not None:
            cfg.positives = positives
            cfg.negatives = None
        if pooling is not None:
            cfg.discriminator = replace(cfg.discriminator, pooling=pooling)
    rngs = rng_streams(cfg.seed)
    pos, neg = sample_discriminator_data(pre.demo, pre.simulated, cfg.positives, cfg.n_negatives,
                                         rngs["sample"])
    disc = Discriminator(pre.world.ontology, pre.world.inventory, cfg.discriminator, rngs["disc_init"])
    hist = pretrain_discriminator(disc, pos, neg, cfg.discriminator_pretrain, rngs["disc_pretrain"],
                                  eval_dialogs=pre.test)
    out = copy.copy(pre)
    out.config = cfg
    out.positives, out.negatives = pos, neg
    out.discriminator = disc
    out.discriminator_history = hist
    return out


def prepare(cfg: ExperimentConfig) -> Pretrained:
    return discriminator_stage(simulate_stage(pretrain_agent_stage(cfg)))


def discriminator_metrics(pre: Pretrained) -> Dict[str, float]:
    return offline_metrics(pre.discriminator, pre.test, [d.success for d in pre.test])


def make_trainer(pre: Pretrained, **trainer_overrides) -> AdversarialTrainer:
    """A trainer on private copies of the pretrained models."""
    cfg = pre.config
    tcfg = replace(cfg.trainer, seed=cfg.seed, **trainer_overrides)
    buffers = SampleBuffers(demo=pre.demo, positives=list(pre.positives),
                            provenance=[PRETRAIN_SAMPLE] * len(pre.positives),
                            simulated=pre.simulated)
    disc = copy.deepcopy(pre.discriminator) if pre.discriminator is not None else None
    return AdversarialTrainer(copy.deepcopy(pre.generator), pre.world.simulator, tcfg, buffers, disc)


def run_rl(pre: Pretrained, **trainer_overrides) -> Dict:
    trainer = make_trainer(pre, **trainer_overrides)
    history = trainer.train()
    return {
        "baseline": history[0]["success_rate"],
        "final": history[-1]["success_rate"],
        "log": history,
        "trainer": trainer,
    }


def pretrained_from(cfg: ExperimentConfig, generator: Generator, demo: List[Dialog],
                    world: Optional[World] = None) -> Pretrained:
    """Wrap an already trained agent and its demo corpus as a pipeline stage."""
    return Pretrained(cfg, world or build_world(cfg), list(demo), generator, [])


def attach_discriminator(pre: Pretrained, disc: Discriminator, positives: List[Dialog]) -> Pretrained:
    out = copy.copy(pre)
    out.discriminator = disc
    out.positives = list(positives)
    return out
