"""Adversarial policy-gradient training loop and its reward-source baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .agent import Generator, make_turn_batch
from .discriminator import Discriminator
from .domain import Dialog, designed_reward, oracle_reward
from .errors import ConfigError, DataError, NumericError
from .rollout import evaluate_success_rate, rollout_batch, spawn_rngs
from .simulator import UserSimulator, feedback

log = logging.getLogger(__name__)

REWARD_SOURCES = ("adversarial", "designed", "oracle")
PRETRAIN_SAMPLE = "pretrain-sample"
DAGGER_FEEDBACK = "dagger-feedback"


@dataclass
class TrainerConfig:
    max_turns: int = 20
    rl_batch: int = 25
    gamma: float = 0.95
    reward_source: str = "adversarial"
    feedback_rate: float = 0.0
    g_steps: int = 1
    d_steps: int = 1
    iterations: int = 120
    g_lr: float = 1e-4
    d_lr: float = 1e-3
    value_lr: float = 1e-3
    value_hidden: int = 32
    clip: float = 5.0
    eval_interval: int = 20
    eval_dialogs: int = 1000
    eval_seed: int = 20180601
    seed: int = 0
    d_dropout: bool = False

    def __post_init__(self):
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.rl_batch < 1:
            raise ConfigError("rl_batch must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.reward_source not in REWARD_SOURCES:
            raise ConfigError(f"reward_source must be one of {REWARD_SOURCES}")
        if not 0.0 <= self.feedback_rate <= 1.0:
            raise ConfigError("feedback_rate must be in [0, 1]")
        if self.g_steps < 0 or self.d_steps < 0:
            raise ConfigError("g_steps and d_steps must be >= 0")


@dataclass
class RewardTrace:
    final_reward: float
    discounted: np.ndarray      # gamma^(K-k) * r_K
    baselines: np.ndarray       # V(s_k)
    returns: np.ndarray         # discounted - baselines
    gamma: float


@dataclass
class SampleBuffers:
    demo: List[Dialog] = field(default_factory=list)
    positives: List[Dialog] = field(default_factory=list)
    provenance: List[str] = field(default_factory=list)
    simulated: List[Dialog] = field(default_factory=list)
    batch: List[Dialog] = field(default_factory=list)

    def add_positive(self, dialog: Dialog, tag: str) -> None:
        self.positives.append(dialog)
        self.provenance.append(tag)

    def counts(self) -> Dict[str, int]:
        return {PRETRAIN_SAMPLE: self.provenance.count(PRETRAIN_SAMPLE),
                DAGGER_FEEDBACK: self.provenance.count(DAGGER_FEEDBACK)}


# ------------------------------------------------------------------ returns and baselines

def compute_returns(final_reward: float, K: int, gamma: float, baselines) -> RewardTrace:
    """Per-turn returns for a reward received only at the last turn K."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    if K < 1:
        raise ValueError("K must be >= 1")
    baselines = np.asarray(baselines, dtype=float)
    if baselines.shape != (K,):
        raise ValueError(f"expected {K} baselines, got shape {baselines.shape}")
    discounted = np.empty(K)
    power = 1.0
    for k in range(K - 1, -1, -1):
        discounted[k] = power * final_reward
        power *= gamma
    return RewardTrace(float(final_reward), discounted, baselines.copy(),
                       discounted - baselines, gamma)


def normalize_rewards(rewards) -> np.ndarray:
    """Batch standardization (population std); batches under 2 pass through."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        log.warning("reward batch of size %d left unnormalized", r.size)
        return r.copy()
    return (r - r.mean()) / (r.std() + 1e-8)


class ValueBaseline:
    """State-value regressor V(s_k); the output layer starts at zero so V = 0 initially."""

    def __init__(self, state_width: int, hidden: int = 32, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = nn.ParameterSet()
        nn.add_mlp(self.params, "value", state_width, hidden, 1, rng)
        self.params["value.out.W"][...] = 0.0

    def predict(self, states: np.ndarray) -> np.ndarray:
        return nn.mlp_forward(self.params, "value", states, "linear")[..., 0]

    def loss(self, states: np.ndarray, targets: np.ndarray, mask: Optional[np.ndarray] = None,
             backward: bool = True) -> float:
        """Mean squared error over valid entries."""
        if mask is None:
            mask = np.ones(targets.shape)
        n = mask.sum()
        pred, _, cache = nn.mlp_forward(self.params, "value", states, "linear", return_cache=True)
        err = (pred[..., 0] - targets) * mask
        if backward:
            nn.mlp_backward(self.params, "value", cache, (2.0 * err / n)[..., None])
        return float((err * err).sum() / n)

    def update(self, states, targets, mask=None, lr: float = 1e-3, clip: float = 5.0) -> float:
        self.params.zero_grad()
        loss = self.loss(states, targets, mask)
        nn.clip_gradients(self.params, clip)
        nn.adam_update(self.params, lr=lr)
        return loss


# ------------------------------------------------------------------ policy gradient

def reinforce_logit_grad(probs: np.ndarray, actions: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Gradient of sum_k R_k log pi(a_k) w.r.t. the logits: R_k (onehot(a_k) - pi)."""
    g = -probs * returns[..., None]
    np.add.at(g.reshape(-1, g.shape[-1]), (np.arange(actions.size), actions.reshape(-1)),
              returns.reshape(-1))
    return g


def policy_gradient_step(generator: Generator, dialogs: Sequence[Dialog], returns: Sequence[np.ndarray],
                         lr: float = 1e-3, clip: float = 5.0, forward=None) -> float:
    """One ascent step on the mean over dialogs of sum_k log G(a_k|.) R_k.

    ``forward`` may carry a (batch, outputs, cache) triple from an earlier
    teacher-forced pass over the same dialogs.
    """
    if len(dialogs) != len(returns):
        raise DataError("one return vector per dialog is required")
    for d, R in zip(dialogs, returns):
        if len(R) != len(d.turns):
            raise DataError(f"dialog {d.dialog_id!r}: {len(d.turns)} turns but {len(R)} returns")
    params = generator.params
    if forward is None:
        batch = make_turn_batch(generator.vocab, dialogs)
        out, cache = generator.forward_batch(batch)
    else:
        batch, out, cache = forward
    T, B = batch.mask.shape
    Rmat = np.zeros((T, B))
    for b, R in enumerate(returns):
        Rmat[:len(R), b] = R
    probs = out["action_probs"]
    params.zero_grad()
    # descend on the negated objective
    d_logits = -reinforce_logit_grad(probs, batch.actions, Rmat) / B
    generator.backward_batch(cache, d_logits)
    tt, bb = np.meshgrid(np.arange(T), np.arange(B), indexing="ij")
    logp = nn.log_softmax(out["action_logits"])[tt, bb, batch.actions]
    objective = float((logp * Rmat).sum() / B)
    nn.clip_gradients(params, clip)
    nn.adam_update(params, lr=lr)
    return objective


def dagger_augment(buffers: SampleBuffers, dialog: Dialog, positive: Optional[bool]) -> None:
    """Append a dialog that earned positive user feedback to the positive pool."""
    if positive:
        buffers.add_positive(dialog, DAGGER_FEEDBACK)


# ------------------------------------------------------------------ training loop

class AdversarialTrainer:
    """Alternates policy-gradient G-steps with discriminator D-steps."""

    def __init__(self, generator: Generator, simulator: UserSimulator, config: TrainerConfig,
                 buffers: Optional[SampleBuffers] = None,
                 discriminator: Optional[Discriminator] = None,
                 value: Optional[ValueBaseline] = None):
        if config.reward_source == "adversarial" and discriminator is None:
            raise ConfigError("adversarial reward needs a discriminator")
        if config.reward_source == "adversarial" and config.d_steps > 0 and not (buffers and buffers.positives):
            raise ConfigError("adversarial training needs a non-empty positive pool")
        if config.feedback_rate > 0 and config.reward_source != "adversarial":
            log.warning("feedback_rate=%g has no effect on the %s reward; positives are only "
                        "collected", config.feedback_rate, config.reward_source)
        self.generator = generator
        self.simulator = simulator
        self.config = config
        self.buffers = buffers or SampleBuffers()
        self.discriminator = discriminator
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.value = value or ValueBaseline(generator.config.hidden, config.value_hidden,
                                            np.random.default_rng(seeds[0]))
        self.rng = np.random.default_rng(seeds[1])
        self.iteration = 0
        self.episodes = 0
        self.log: List[Dict] = []
        self._rewards_since_snapshot: List[float] = []
        self._last_d_accuracy: Optional[float] = None

    # ---------------------------------------------------------------- rewards

    def rewards(self, dialogs: Sequence[Dialog]) -> np.ndarray:
        src = self.config.reward_source
        if src == "adversarial":
            return self.discriminator.score(dialogs)
        if src == "designed":
            return np.array([designed_reward(d, d.goal) for d in dialogs])
        return np.array([oracle_reward(d, d.goal) for d in dialogs])

    def reward_traces(self, dialogs: Sequence[Dialog], raw: np.ndarray, states: np.ndarray):
        """Normalized final rewards discounted over turns, minus V(s_k)."""
        norm = normalize_rewards(raw)
        values = self.value.predict(states)
        return [compute_returns(norm[b], len(d.turns), self.config.gamma, values[:len(d.turns), b])
                for b, d in enumerate(dialogs)]

    # ---------------------------------------------------------------- steps

    def g_step(self) -> List[Dialog]:
        cfg = self.config
        sim_rngs = spawn_rngs(self.rng, cfg.rl_batch)
        goals = [self.simulator.sample_goal(r) for r in sim_rngs]
        dialogs = rollout_batch(self.generator, self.simulator, goals, sim_rngs,
                                cfg.max_turns, "sample", self.rng)
        self.episodes += len(dialogs)
        raw = self.rewards(dialogs)
        if not np.all(np.isfinite(raw)):
            raise NumericError("non-finite dialog reward")
        self._rewards_since_snapshot.extend(raw.tolist())
        if cfg.feedback_rate > 0:
            for d in dialogs:
                dagger_augment(self.buffers, d, feedback(d, d.goal, cfg.feedback_rate, self.rng))
        batch = make_turn_batch(self.generator.vocab, dialogs)
        out, cache = self.generator.forward_batch(batch)
        states = out["hidden"]
        traces = self.reward_traces(dialogs, raw, states)
        targets = np.zeros(batch.mask.shape)
        for b, tr in enumerate(traces):
            targets[:len(tr.discounted), b] = tr.discounted
        self.value.update(states, targets, batch.mask, lr=cfg.value_lr, clip=cfg.clip)
        policy_gradient_step(self.generator, dialogs, [tr.returns for tr in traces],
                             lr=cfg.g_lr, clip=cfg.clip, forward=(batch, out, cache))
        self.buffers.batch = dialogs
        return dialogs

    def d_step(self) -> None:
        cfg = self.config
        negatives = self.buffers.batch
        pool = self.buffers.positives
        idx = self.rng.choice(len(pool), size=min(len(negatives), len(pool)), replace=False)
        positives = [pool[int(i)] for i in idx]
        probs = self.discriminator.score(positives + negatives)
        labels = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
        self._last_d_accuracy = float(np.mean((probs >= 0.5) == labels))
        self.discriminator.adversarial_update(positives, negatives, lr=cfg.d_lr, clip=cfg.clip,
                                              training=cfg.d_dropout, dropout_rng=self.rng)

    def snapshot(self) -> Dict:
        cfg = self.config
        rate = evaluate_success_rate(self.generator, self.simulator, cfg.eval_dialogs,
                                     cfg.eval_seed, cfg.max_turns)
        counts = self.buffers.counts()
        rewards = self._rewards_since_snapshot
        record = {
            "iteration": self.iteration,
            "episodes": self.episodes,
            "success_rate": rate,
            "mean_reward": float(np.mean(rewards)) if rewards else math.nan,
            "d_accuracy": math.nan if self._last_d_accuracy is None else self._last_d_accuracy,
            "pool_size": len(self.buffers.positives),
            "pool_pretrain": counts[PRETRAIN_SAMPLE],
            "pool_dagger": counts[DAGGER_FEEDBACK],
        }
        self._rewards_since_snapshot = []
        self.log.append(record)
        log.info("snapshot %s", record)
        return record

    def train(self, iterations: Optional[int] = None) -> List[Dict]:
        """Run until ``iterations`` total iterations have been done (default: config)."""
        cfg = self.config
        target = cfg.iterations if iterations is None else iterations
        if self.iteration == 0 and not self.log:
            self.snapshot()
        while self.iteration < target:
            for _ in range(cfg.g_steps):
                self.g_step()
            if cfg.reward_source == "adversarial" and self.buffers.batch:
                for _ in range(cfg.d_steps):
                    self.d_step()
            self.iteration += 1
            if self.iteration % cfg.eval_interval == 0 or self.iteration == cfg.iterations:
                self.snapshot()
        return self.log

    # ---------------------------------------------------------------- persistence helpers

    def state(self) -> Dict:
        return {
            "iteration": self.iteration,
            "episodes": self.episodes,
            "log": list(self.log),
            "rewards_since_snapshot": list(self._rewards_since_snapshot),
            "last_d_accuracy": self._last_d_accuracy,
            "config": asdict(self.config),
        }

    def load_state(self, state: Dict) -> None:
        self.iteration = int(state["iteration"])
        self.episodes = int(state["episodes"])
        self.log = list(state["log"])
        self._rewards_since_snapshot = list(state["rewards_since_snapshot"])
        self._last_d_accuracy = state["last_d_accuracy"]
