"""Dialog reward estimator: BiLSTM over turns, pooling, logistic success head."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .agent import TurnBatch, Vocab, make_turn_batch
from .domain import SUMMARY_WIDTH, ActionInventory, Dialog, Ontology
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

POOLING_METHODS = ("last", "max", "avg", "attn")


@dataclass
class DiscriminatorConfig:
    embed_dim: int = 32
    hidden: int = 200
    attn_hidden: int = 32
    pooling: str = "max"
    dropout: float = 0.5

    def __post_init__(self):
        if self.pooling not in POOLING_METHODS:
            raise ConfigError(f"pooling must be one of {POOLING_METHODS}, got {self.pooling!r}")

    @classmethod
    def for_profile(cls, profile: str, pooling: str = "max") -> "DiscriminatorConfig":
        if profile == "toy":
            return cls(hidden=32, attn_hidden=16, pooling=pooling)
        return cls(pooling=pooling)


@dataclass
class DialogScore:
    probability: float
    pooled: np.ndarray
    attention_weights: Optional[np.ndarray] = None


@dataclass
class DiscriminatorPretrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0
    dev_fraction: float = 0.1


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """idx[t, b] = L_b - 1 - t on valid steps, t on padding."""
    t = np.arange(T)[:, None]
    L = lengths[None, :]
    return np.where(t < L, L - 1 - t, t)


class Discriminator:
    def __init__(self, ontology: Ontology, inventory: ActionInventory,
                 config: Optional[DiscriminatorConfig] = None,
                 rng: Optional[np.random.Generator] = None):
        self.ontology = ontology
        self.inventory = inventory
        self.vocab = Vocab(ontology, inventory)
        self.config = config or DiscriminatorConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.config
        p = self.params = nn.ParameterSet()
        v = self.vocab
        nn.add_embedding(p, "emb.user_act", len(v.user_acts), c.embed_dim, rng)
        nn.add_embedding(p, "emb.pair", len(v.pairs), c.embed_dim, rng)
        nn.add_embedding(p, "emb.sys", v.n_actions, c.embed_dim, rng)
        nn.add_lstm(p, "fwd", self.input_width, c.hidden, rng)
        nn.add_lstm(p, "bwd", self.input_width, c.hidden, rng)
        nn.add_mlp(p, "attn", 2 * c.hidden, c.attn_hidden, 1, rng)
        nn.add_linear(p, "out", 2 * c.hidden, 1, rng)

    @property
    def input_width(self) -> int:
        return 3 * self.config.embed_dim + SUMMARY_WIDTH

    @property
    def pooling(self) -> str:
        return self.config.pooling

    # -------------------------------------------------------------- forward

    def turn_encodings(self, batch: TurnBatch) -> np.ndarray:
        p = self.params
        return np.concatenate([
            p["emb.user_act"][batch.act_ids],
            batch.pair_counts @ p["emb.pair"],
            batch.summaries,
            p["emb.sys"][batch.actions],
        ], axis=-1)

    def encode(self, batch: TurnBatch, X: Optional[np.ndarray] = None):
        """Per-step outputs h_k = [forward h_k, backward h_k], shape (T, B, 2H)."""
        if np.any(batch.lengths < 1):
            raise DataError("cannot encode an empty dialog")
        p = self.params
        if X is None:
            X = self.turn_encodings(batch)
        T, B, _ = X.shape
        cols = np.arange(B)[None, :]
        rev = _reverse_index(batch.lengths, T)
        Hf, fcache = nn.lstm_forward(p, "fwd", X, batch.mask)
        Hr, rcache = nn.lstm_forward(p, "bwd", X[rev, cols], batch.mask)
        Hb = Hr[rev, cols]
        return np.concatenate([Hf, Hb], axis=-1), (X, rev, fcache, rcache)

    def pool(self, hs: np.ndarray, mask: np.ndarray, lengths: np.ndarray,
             method: Optional[str] = None):
        """Combine per-step outputs (T, B, 2H) into d (B, 2H).

        Returns (d, attention weights or None, cache).
        """
        method = method or self.pooling
        T, B, W = hs.shape
        H = W // 2
        bidx = np.arange(B)
        alpha = None
        if method == "last":
            d = np.concatenate([hs[lengths - 1, bidx, :H], hs[0, :, H:]], axis=-1)
            cache = None
        elif method == "max":
            masked = np.where(mask[..., None] > 0, hs, -np.inf)
            arg = np.argmax(masked, axis=0)
            d = np.take_along_axis(masked, arg[None], axis=0)[0]
            cache = arg
        elif method == "avg":
            d = (hs * mask[..., None]).sum(axis=0) / lengths[:, None]
            cache = None
        elif method == "attn":
            e, e_logits, gcache = nn.mlp_forward(self.params, "attn", hs, "linear", return_cache=True)
            e = np.where(mask > 0, e[..., 0], -np.inf)
            alpha = nn.softmax(e, axis=0)
            d = (alpha[..., None] * hs).sum(axis=0)
            cache = (alpha, gcache)
        else:
            raise ConfigError(f"unknown pooling method {method!r}")
        return d, alpha, cache

    def forward_batch(self, batch: TurnBatch, training: bool = False,
                      dropout_rng: Optional[np.random.Generator] = None):
        hs, enc_cache = self.encode(batch)
        d, alpha, pool_cache = self.pool(hs, batch.mask, batch.lengths)
        drop = nn.dropout_mask(d.shape, self.config.dropout, training, dropout_rng)
        dd = d if drop is None else d * drop
        logit, _ = nn.linear_forward(self.params, "out", dd)
        logit = logit[:, 0]
        cache = dict(batch=batch, hs=hs, enc=enc_cache, pool=pool_cache, drop=drop, d=dd)
        return dict(logit=logit, prob=nn.sigmoid(logit), pooled=d, alpha=alpha), cache

    def backward_batch(self, cache, dlogit: np.ndarray) -> None:
        p = self.params
        batch = cache["batch"]
        hs = cache["hs"]
        T, B, W = hs.shape
        H = W // 2
        bidx = np.arange(B)
        dd = nn.linear_backward(p, "out", cache["d"], dlogit[:, None])
        if cache["drop"] is not None:
            dd = dd * cache["drop"]
        dhs = np.zeros_like(hs)
        method = self.pooling
        if method == "last":
            dhs[batch.lengths - 1, bidx, :H] += dd[:, :H]
            dhs[0, :, H:] += dd[:, H:]
        elif method == "max":
            arg = cache["pool"]
            np.put_along_axis(dhs, arg[None], dd[None], axis=0)
        elif method == "avg":
            dhs += dd[None] * (batch.mask / batch.lengths[None, :])[..., None]
        else:
            alpha, gcache = cache["pool"]
            dhs += alpha[..., None] * dd[None]
            dalpha = (dd[None] * hs).sum(axis=-1)
            de = alpha * (dalpha - (alpha * dalpha).sum(axis=0, keepdims=True))
            dhs += nn.mlp_backward(p, "attn", gcache, de[..., None])
        X, rev, fcache, rcache = cache["enc"]
        cols = np.arange(B)[None, :]
        dHf = dhs[..., :H] * batch.mask[..., None]
        dHb = dhs[..., H:] * batch.mask[..., None]
        dHr = np.zeros_like(dHb)
        dHr[rev, cols] = dHb
        dX = nn.lstm_backward(p, "fwd", fcache, dHf)
        dXr = nn.lstm_backward(p, "bwd", rcache, dHr)
        dX[rev, cols] += dXr
        e = self.config.embed_dim
        nn.embedding_backward(p, "emb.user_act", batch.act_ids, dX[..., :e])
        p.grad("emb.pair")[...] += (batch.pair_counts.reshape(-1, batch.pair_counts.shape[-1]).T
                                    @ dX[..., e:2 * e].reshape(-1, e))
        nn.embedding_backward(p, "emb.sys", batch.actions, dX[..., 2 * e + SUMMARY_WIDTH:])

    # -------------------------------------------------------------- scoring

    def score(self, dialogs: Sequence[Dialog]) -> np.ndarray:
        """Success probability D(d) for each dialog, dropout disabled."""
        if not dialogs:
            return np.zeros(0)
        out, _ = self.forward_batch(make_turn_batch(self.vocab, dialogs))
        return out["prob"]

    def score_details(self, dialog: Dialog) -> DialogScore:
        out, _ = self.forward_batch(make_turn_batch(self.vocab, [dialog]))
        alpha = None if out["alpha"] is None else out["alpha"][:len(dialog.turns), 0]
        return DialogScore(float(out["prob"][0]), out["pooled"][0], alpha)

    def bce_loss(self, dialogs: Sequence[Dialog], labels: np.ndarray, training: bool = False,
                 dropout_rng: Optional[np.random.Generator] = None, backward: bool = True) -> float:
        """Mean binary cross-entropy; gradients accumulate when ``backward``."""
        labels = np.asarray(labels, dtype=float)
        out, cache = self.forward_batch(make_turn_batch(self.vocab, dialogs), training, dropout_rng)
        z = out["logit"]
        losses = -(labels * nn.log_sigmoid(z) + (1.0 - labels) * nn.log_sigmoid(-z))
        if backward:
            self.backward_batch(cache, (out["prob"] - labels) / len(labels))
        return float(losses.mean())

    def adversarial_update(self, positives: Sequence[Dialog], negatives: Sequence[Dialog],
                           lr: float = 1e-3, clip: float = 5.0, training: bool = True,
                           dropout_rng: Optional[np.random.Generator] = None) -> float:
        """One step raising log D on positives and log(1 - D) on negatives."""
        if not positives or not negatives:
            raise DataError("adversarial update needs non-empty positive and negative batches")
        dialogs = list(positives) + list(negatives)
        labels = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
        self.params.zero_grad()
        loss = self.bce_loss(dialogs, labels, training=training, dropout_rng=dropout_rng)
        nn.clip_gradients(self.params, clip)
        nn.adam_update(self.params, lr=lr)
        return loss


def offline_metrics(disc: Discriminator, dialogs: Sequence[Dialog], labels) -> Dict[str, float]:
    labels = np.asarray(labels, dtype=bool)
    probs = disc.score(dialogs)
    acc = float(np.mean((probs >= 0.5) == labels))
    succ = float(probs[labels].mean()) if labels.any() else float("nan")
    fail = float(probs[~labels].mean()) if (~labels).any() else float("nan")
    return {"accuracy": acc, "success_prob": succ, "fail_prob": fail}


def pretrain(disc: Discriminator, positives: Sequence[Dialog], negatives: Sequence[Dialog],
             config: Optional[DiscriminatorPretrainConfig] = None,
             rng: Optional[np.random.Generator] = None,
             eval_dialogs: Optional[Sequence[Dialog]] = None) -> List[Dict[str, float]]:
    """Supervised pretraining with positives labeled 1 and negatives labeled 0.

    When ``eval_dialogs`` (with ``success`` set) are given, each epoch record
    carries their accuracy and mean probability on successful / failed ones.
    """
    config = config or DiscriminatorPretrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if not positives or not negatives:
        raise DataError("discriminator pretraining needs positive and negative examples")
    data = list(positives) + list(negatives)
    labels = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), config.batch_size):
            idx = perm[start:start + config.batch_size]
            disc.params.zero_grad()
            losses.append(disc.bce_loss([data[i] for i in idx], labels[idx],
                                        training=True, dropout_rng=rng))
            nn.clip_gradients(disc.params, config.clip)
            nn.adam_update(disc.params, lr=config.lr)
        record = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
        if eval_dialogs:
            record.update(offline_metrics(disc, eval_dialogs, [d.success for d in eval_dialogs]))
        log.info("discriminator epoch %d: %s", epoch + 1, record)
        history.append(record)
    return history
