"""Neural dialog agent: turn-level LSTM state, per-slot belief heads and a policy head."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .domain import (
    REQUEST_WILDCARD,
    SUMMARY_WIDTH,
    ActionInventory,
    Dialog,
    DialogAct,
    Ontology,
    QuerySummary,
)
from .errors import DataError, OntologyError

log = logging.getLogger(__name__)

NOT_MENTIONED = None


class Vocab:
    """Symbol-to-index tables shared by the agent and discriminator encoders."""

    def __init__(self, ontology: Ontology, inventory: ActionInventory):
        self.ontology = ontology
        self.inventory = inventory
        self.user_acts = {a: i for i, a in enumerate(ontology.user_acts)}
        pairs = []
        for slot, values in ontology.informable_slots.items():
            pairs += [(slot, v) for v in values]
            pairs.append((slot, REQUEST_WILDCARD))
        pairs += [(slot, REQUEST_WILDCARD) for slot in ontology.requestable_slots]
        self.pairs = {p: i for i, p in enumerate(pairs)}
        self.n_actions = len(inventory)
        self.start_id = self.n_actions
        self.option_sizes = [len(v) + 1 for v in ontology.informable_slots.values()]

    def act_id(self, act: DialogAct) -> int:
        try:
            return self.user_acts[act.act]
        except KeyError:
            raise OntologyError(f"unknown user act {act.act!r}") from None

    def pair_ids(self, act: DialogAct) -> List[int]:
        out = []
        for pair in act.slot_values:
            try:
                out.append(self.pairs[tuple(pair)])
            except KeyError:
                raise OntologyError(f"unknown slot-value pair {pair[0]}={pair[1]}") from None
        return out

    def prev_id(self, prev: Optional[int]) -> int:
        return self.start_id if prev is None else int(prev)

    def label_index(self, slot: str, value: Optional[str]) -> int:
        values = self.ontology.informable_slots[slot]
        if value is NOT_MENTIONED:
            return len(values)
        return values.index(value)

    def label_value(self, slot: str, index: int) -> Optional[str]:
        values = self.ontology.informable_slots[slot]
        return None if index == len(values) else values[index]


@dataclass
class AgentConfig:
    embed_dim: int = 32
    hidden: int = 150
    policy_hidden: int = 100
    belief_hidden: int = 64
    dropout: float = 0.5
    forget_bias: float = 1.0

    @classmethod
    def for_profile(cls, profile: str) -> "AgentConfig":
        if profile == "toy":
            return cls(hidden=64, policy_hidden=48, belief_hidden=32)
        return cls()


@dataclass
class AgentState:
    recurrent: nn.RecurrentState
    beliefs: List[np.ndarray] = field(default_factory=list)


@dataclass
class TurnBatch:
    """Padded (T, B) arrays for teacher-forced replay of a set of dialogs."""
    act_ids: np.ndarray
    pair_counts: np.ndarray
    prev_ids: np.ndarray
    summaries: np.ndarray
    actions: np.ndarray
    labels: np.ndarray          # (T, B, n_slots), -1 where unlabeled
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def n_dialogs(self) -> int:
        return self.mask.shape[1]


def make_turn_batch(vocab: Vocab, dialogs: Sequence[Dialog]) -> TurnBatch:
    if not dialogs:
        raise DataError("empty dialog batch")
    B = len(dialogs)
    T = max(len(d.turns) for d in dialogs)
    if T == 0:
        raise DataError("dialog without turns")
    n_slots = len(vocab.option_sizes)
    act_ids = np.zeros((T, B), dtype=np.int64)
    pair_counts = np.zeros((T, B, len(vocab.pairs)))
    prev_ids = np.full((T, B), vocab.start_id, dtype=np.int64)
    summaries = np.zeros((T, B, SUMMARY_WIDTH))
    actions = np.zeros((T, B), dtype=np.int64)
    labels = np.full((T, B, n_slots), -1, dtype=np.int64)
    mask = np.zeros((T, B))
    lengths = np.zeros(B, dtype=np.int64)
    slots = vocab.ontology.slots
    for b, dialog in enumerate(dialogs):
        lengths[b] = len(dialog.turns)
        for t, turn in enumerate(dialog.turns):
            act_ids[t, b] = vocab.act_id(turn.user)
            for pid in vocab.pair_ids(turn.user):
                pair_counts[t, b, pid] += 1.0
            prev_ids[t, b] = vocab.prev_id(turn.prev_action)
            summaries[t, b] = turn.summary.vector()
            actions[t, b] = turn.action
            mask[t, b] = 1.0
            if turn.labels is not None:
                for m, slot in enumerate(slots):
                    labels[t, b, m] = vocab.label_index(slot, turn.labels.get(slot))
    return TurnBatch(act_ids, pair_counts, prev_ids, summaries, actions, labels, mask, lengths)


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(p * dp, axis=-1, keepdims=True))


class Generator:
    """The dialog agent. Parameters live in ``self.params``."""

    def __init__(self, ontology: Ontology, inventory: ActionInventory,
                 config: Optional[AgentConfig] = None, rng: Optional[np.random.Generator] = None):
        self.ontology = ontology
        self.inventory = inventory
        self.vocab = Vocab(ontology, inventory)
        self.config = config or AgentConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.config
        p = self.params = nn.ParameterSet()
        v = self.vocab
        nn.add_embedding(p, "emb.user_act", len(v.user_acts), c.embed_dim, rng)
        nn.add_embedding(p, "emb.pair", len(v.pairs), c.embed_dim, rng)
        nn.add_embedding(p, "emb.sys", v.n_actions + 1, c.embed_dim, rng)
        nn.add_lstm(p, "lstm", self.input_width, c.hidden, rng, c.forget_bias)
        for slot, size in zip(ontology.slots, v.option_sizes):
            nn.add_mlp(p, f"belief.{slot}", c.hidden, c.belief_hidden, size, rng)
        nn.add_mlp(p, "policy", self.policy_input_width, c.policy_hidden, v.n_actions, rng)

    @property
    def input_width(self) -> int:
        return 3 * self.config.embed_dim

    @property
    def policy_input_width(self) -> int:
        return self.config.hidden + sum(self.vocab.option_sizes) + SUMMARY_WIDTH

    # -------------------------------------------------------------- inference

    def encode_turn_input(self, user: DialogAct, prev_system: Optional[int]) -> np.ndarray:
        """[act embedding, summed slot-value embedding, previous system action embedding]."""
        p = self.params
        act = p["emb.user_act"][self.vocab.act_id(user)]
        pair_ids = self.vocab.pair_ids(user)
        sv = p["emb.pair"][pair_ids].sum(axis=0) if pair_ids else np.zeros(self.config.embed_dim)
        prev = p["emb.sys"][self.vocab.prev_id(prev_system)]
        return np.concatenate([act, sv, prev])

    def initial_state(self, batch: Optional[int] = None) -> AgentState:
        return AgentState(nn.RecurrentState.zeros(self.config.hidden, batch))

    def step(self, state: AgentState, encoded: np.ndarray) -> AgentState:
        rec = nn.lstm_step(self.params, "lstm", state.recurrent, encoded)
        return AgentState(rec, self.belief_track(rec.hidden))

    def belief_track(self, s: np.ndarray) -> List[np.ndarray]:
        return [nn.mlp_forward(self.params, f"belief.{slot}", s, "softmax")
                for slot in self.ontology.slots]

    def policy(self, s: np.ndarray, beliefs: List[np.ndarray], summary) -> np.ndarray:
        if isinstance(summary, QuerySummary):
            summary = summary.vector()
        x = np.concatenate([s, *beliefs, summary], axis=-1)
        return nn.mlp_forward(self.params, "policy", x, "softmax")

    def belief_argmax(self, beliefs: List[np.ndarray]) -> Dict[str, Optional[str]]:
        """Most likely value per slot for a single (unbatched) state."""
        return {slot: self.vocab.label_value(slot, int(np.argmax(b)))
                for slot, b in zip(self.ontology.slots, beliefs)}

    # -------------------------------------------------------------- training

    def forward_batch(self, batch: TurnBatch, training: bool = False,
                      dropout_rng: Optional[np.random.Generator] = None):
        p = self.params
        E_act = p["emb.user_act"][batch.act_ids]
        E_sv = batch.pair_counts @ p["emb.pair"]
        E_prev = p["emb.sys"][batch.prev_ids]
        X = np.concatenate([E_act, E_sv, E_prev], axis=-1)
        Hs, lstm_cache = nn.lstm_forward(p, "lstm", X, batch.mask)
        drop = nn.dropout_mask(Hs.shape, self.config.dropout, training, dropout_rng)
        S = Hs if drop is None else Hs * drop
        beliefs, belief_logits, belief_caches = [], [], []
        for slot in self.ontology.slots:
            prob, logits, cache = nn.mlp_forward(p, f"belief.{slot}", S, "softmax", return_cache=True)
            beliefs.append(prob)
            belief_logits.append(logits)
            belief_caches.append(cache)
        pin = np.concatenate([S, *beliefs, batch.summaries], axis=-1)
        probs, logits, pol_cache = nn.mlp_forward(p, "policy", pin, "softmax", return_cache=True)
        cache = dict(batch=batch, lstm=lstm_cache, drop=drop, beliefs=beliefs,
                     belief_caches=belief_caches, policy=pol_cache)
        return dict(action_probs=probs, action_logits=logits, beliefs=beliefs,
                    belief_logits=belief_logits, states=S, hidden=Hs), cache

    def backward_batch(self, cache, d_action_logits: np.ndarray,
                       d_belief_logits: Optional[List[Optional[np.ndarray]]] = None) -> None:
        p = self.params
        batch = cache["batch"]
        H = self.config.hidden
        dpin = nn.mlp_backward(p, "policy", cache["policy"], d_action_logits)
        dS = dpin[..., :H].copy()
        offset = H
        for m, slot in enumerate(self.ontology.slots):
            prob = cache["beliefs"][m]
            size = prob.shape[-1]
            dlogit = _softmax_backward(prob, dpin[..., offset:offset + size])
            offset += size
            if d_belief_logits is not None and d_belief_logits[m] is not None:
                dlogit = dlogit + d_belief_logits[m]
            dS += nn.mlp_backward(p, f"belief.{slot}", cache["belief_caches"][m], dlogit)
        if cache["drop"] is not None:
            dS *= cache["drop"]
        dX = nn.lstm_backward(p, "lstm", cache["lstm"], dS)
        e = self.config.embed_dim
        nn.embedding_backward(p, "emb.user_act", batch.act_ids, dX[..., :e])
        p.grad("emb.pair")[...] += (batch.pair_counts.reshape(-1, batch.pair_counts.shape[-1]).T
                                    @ dX[..., e:2 * e].reshape(-1, e))
        nn.embedding_backward(p, "emb.sys", batch.prev_ids, dX[..., 2 * e:])

    def supervised_loss(self, batch: TurnBatch, training: bool = False,
                        dropout_rng: Optional[np.random.Generator] = None,
                        slot_supervision: str = "per_turn", backward: bool = True):
        """Summed action and slot cross-entropy, averaged over valid turns."""
        out, cache = self.forward_batch(batch, training, dropout_rng)
        mask = batch.mask
        n_turns = mask.sum()
        probs = out["action_probs"]
        T, B, A = probs.shape
        tt, bb = np.meshgrid(np.arange(T), np.arange(B), indexing="ij")
        logp_a = nn.log_softmax(out["action_logits"])[tt, bb, batch.actions]
        loss = -(logp_a * mask).sum()
        d_act = probs.copy()
        d_act[tt, bb, batch.actions] -= 1.0
        d_act *= mask[..., None] / n_turns
        slot_mask = mask.copy()
        if slot_supervision == "final_turn":
            slot_mask = np.zeros_like(mask)
            slot_mask[batch.lengths - 1, np.arange(B)] = 1.0
        elif slot_supervision != "per_turn":
            raise ValueError(f"unknown slot_supervision {slot_supervision!r}")
        d_bel = []
        for m in range(len(self.ontology.slots)):
            labels = batch.labels[..., m]
            sm = slot_mask * (labels >= 0)
            idx = np.maximum(labels, 0)
            logp = nn.log_softmax(out["belief_logits"][m])[tt, bb, idx]
            loss -= (logp * sm).sum()
            d = out["beliefs"][m].copy()
            d[tt, bb, idx] -= 1.0
            d *= sm[..., None] / n_turns
            d_bel.append(d)
        loss /= n_turns
        if backward:
            self.backward_batch(cache, d_act, d_bel)
        return float(loss), out


def select_action(probs: np.ndarray, mode: str, rng: Optional[np.random.Generator] = None):
    """Sample from or take the argmax of (a batch of) action distributions.

    Greedy ties resolve to the lowest action id.
    """
    probs = np.asarray(probs)
    single = probs.ndim == 1
    P = probs[None] if single else probs
    if mode == "greedy":
        out = np.argmax(P, axis=-1)
    elif mode == "sample":
        u = rng.random(P.shape[0])
        cdf = np.cumsum(P, axis=-1)
        out = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(axis=-1), P.shape[-1] - 1)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return int(out[0]) if single else out


# ------------------------------------------------------------------ pretraining

@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0
    dev_fraction: float = 0.1
    slot_supervision: str = "per_turn"


def accuracy_metrics(generator: Generator, dialogs: Sequence[Dialog]) -> Dict[str, float]:
    batch = make_turn_batch(generator.vocab, dialogs)
    out, _ = generator.forward_batch(batch, training=False)
    mask = batch.mask.astype(bool)
    act_acc = float((np.argmax(out["action_probs"], -1) == batch.actions)[mask].mean())
    slot_hits, slot_total = 0, 0
    final_hits, final_total = 0, 0
    last = batch.lengths - 1
    bidx = np.arange(batch.n_dialogs)
    for m in range(len(generator.ontology.slots)):
        labels = batch.labels[..., m]
        pred = np.argmax(out["beliefs"][m], -1)
        ok = mask & (labels >= 0)
        slot_hits += int((pred == labels)[ok].sum())
        slot_total += int(ok.sum())
        final_hits += int((pred[last, bidx] == labels[last, bidx]).sum())
        final_total += batch.n_dialogs
    return {"action_acc": act_acc,
            "slot_acc": slot_hits / max(slot_total, 1),
            "final_slot_acc": final_hits / max(final_total, 1)}


def supervised_pretrain(generator: Generator, corpus: Sequence[Dialog],
                        config: Optional[PretrainConfig] = None,
                        rng: Optional[np.random.Generator] = None) -> List[Dict[str, float]]:
    """Cross-entropy pretraining on gold actions and slot labels.

    Returns one metrics record per epoch (train loss, held-out accuracies).
    """
    config = config or PretrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    corpus = list(corpus)
    if not corpus:
        raise DataError("empty pretraining corpus")
    for d in corpus:
        for k, t in enumerate(d.turns):
            if t.labels is None:
                raise DataError(f"dialog {d.dialog_id!r} turn {k} has no slot labels")
    order = rng.permutation(len(corpus))
    n_dev = int(round(config.dev_fraction * len(corpus)))
    dev = [corpus[i] for i in order[:n_dev]]
    train = [corpus[i] for i in order[n_dev:]] or dev
    params = generator.params
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            chunk = [train[i] for i in perm[start:start + config.batch_size]]
            batch = make_turn_batch(generator.vocab, chunk)
            params.zero_grad()
            loss, _ = generator.supervised_loss(batch, training=True, dropout_rng=rng,
                                                slot_supervision=config.slot_supervision)
            losses.append(loss)
            nn.clip_gradients(params, config.clip)
            nn.adam_update(params, lr=config.lr)
        record = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "first_batch_loss": losses[0]}
        if dev:
            record.update({f"dev_{k}": v for k, v in accuracy_metrics(generator, dev).items()})
        log.info("pretrain epoch %d: %s", epoch + 1, record)
        history.append(record)
    return history
