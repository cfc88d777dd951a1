import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from advdialog import nn
from advdialog.agent import AgentConfig, Generator, make_turn_batch
from advdialog.discriminator import (
    POOLING_METHODS,
    Discriminator,
    DiscriminatorConfig,
    DiscriminatorPretrainConfig,
    pretrain,
)
from advdialog.domain import Dialog
from advdialog.errors import ConfigError, DataError
from advdialog.evaluation import offline_eval_discriminator
from advdialog.rollout import simulate


def small_disc(ontology, inventory, pooling="max", hidden=6, seed=0):
    cfg = DiscriminatorConfig(embed_dim=3, hidden=hidden, attn_hidden=4, pooling=pooling, dropout=0.0)
    return Discriminator(ontology, inventory, cfg, np.random.default_rng(seed))


def reversed_dialog(d):
    return Dialog(list(reversed(d.turns)), d.goal, d.final_beliefs, d.answered, d.success)


@pytest.fixture(scope="module")
def separable(ontology, kb, inventory, simulator, corpus):
    """Expert dialogs (label 1) against an untrained agent's dialogs (label 0)."""
    gen = Generator(ontology, inventory, AgentConfig(hidden=8, embed_dim=4), np.random.default_rng(0))
    bad = simulate(gen, simulator, 120, np.random.default_rng(1), max_turns=8)
    good = list(corpus)
    return good[:40], bad[:40], good[40:], bad[40:100]


class TestEncoder:
    def test_single_turn(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        d = next(x for x in corpus if len(x.turns) >= 1)
        one = Dialog(d.turns[:1], d.goal, d.final_beliefs)
        batch = make_turn_batch(disc.vocab, [one])
        hs, _ = disc.encode(batch)
        x = disc.turn_encodings(batch)[0]
        f = nn.lstm_step(disc.params, "fwd", nn.RecurrentState.zeros(6, 1), x).hidden
        b = nn.lstm_step(disc.params, "bwd", nn.RecurrentState.zeros(6, 1), x).hidden
        np.testing.assert_array_equal(hs[0], np.concatenate([f, b], axis=-1))

    def test_reverse_symmetry(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        disc.params["bwd.W"][...] = disc.params["fwd.W"]
        disc.params["bwd.b"][...] = disc.params["fwd.b"]
        d = next(x for x in corpus if len(x.turns) >= 4)
        K = len(d.turns)
        hs, _ = disc.encode(make_turn_batch(disc.vocab, [d]))
        hr, _ = disc.encode(make_turn_batch(disc.vocab, [reversed_dialog(d)]))
        np.testing.assert_allclose(hs[:K, 0, :6], hr[::-1][:K, 0, 6:], rtol=0, atol=1e-15)

    def test_zero_params(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        for _, p in disc.params.items():
            p.value[...] = 0
        hs, _ = disc.encode(make_turn_batch(disc.vocab, corpus[:3]))
        assert np.all(hs == 0)


class TestPooling:
    @pytest.fixture
    def disc(self, ontology, inventory):
        return small_disc(ontology, inventory)

    def test_max_example(self, disc):
        hs = np.array([[[1.0, -2.0]], [[0.0, 5.0]]])
        d, _, _ = disc.pool(hs, np.ones((2, 1)), np.array([2]), "max")
        np.testing.assert_array_equal(d[0], [1.0, 5.0])

    def test_max_ignores_padding(self, disc):
        hs = np.array([[[1.0, -2.0]], [[9.0, 9.0]]])
        d, _, _ = disc.pool(hs, np.array([[1.0], [0.0]]), np.array([1]), "max")
        np.testing.assert_array_equal(d[0], [1.0, -2.0])

    def test_avg_equals_constant_attention(self, disc):
        rng = np.random.default_rng(0)
        hs = rng.normal(size=(4, 3, 12))
        mask = np.array([[1, 1, 1], [1, 1, 1], [1, 0, 1], [1, 0, 0]], dtype=float)
        lengths = mask.sum(0).astype(int)
        disc.params["attn.out.W"][...] = 0.0
        disc.params["attn.out.b"][...] = 0.7
        avg, _, _ = disc.pool(hs, mask, lengths, "avg")
        att, alpha, _ = disc.pool(hs, mask, lengths, "attn")
        np.testing.assert_allclose(att, avg, atol=1e-12)
        np.testing.assert_allclose(alpha.sum(0), 1.0)

    @given(st.permutations(range(5)))
    def test_max_avg_permutation_invariant(self, ontology, inventory, perm):
        disc = small_disc(ontology, inventory)
        hs = np.random.default_rng(1).normal(size=(5, 2, 12))
        mask, lengths = np.ones((5, 2)), np.array([5, 5])
        for m in ("max", "avg"):
            a, _, _ = disc.pool(hs, mask, lengths, m)
            b, _, _ = disc.pool(hs[list(perm)], mask, lengths, m)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_unknown_method(self, disc):
        with pytest.raises(ConfigError):
            disc.pool(np.zeros((1, 1, 12)), np.ones((1, 1)), np.array([1]), "median")
        with pytest.raises(ConfigError):
            DiscriminatorConfig(pooling="median")


def test_single_turn_pooling_equivalence_exact(ontology, inventory, corpus):
    dialogs = [Dialog(d.turns[:1], d.goal, d.final_beliefs) for d in corpus[:10]]
    pooled, probs = {}, {}
    for method in POOLING_METHODS:
        disc = small_disc(ontology, inventory, method, seed=4)
        out, _ = disc.forward_batch(make_turn_batch(disc.vocab, dialogs))
        pooled[method], probs[method] = out["pooled"], out["prob"]
    for method in POOLING_METHODS:
        assert pooled[method].tobytes() == pooled["last"].tobytes()
        assert probs[method].tobytes() == probs["last"].tobytes()


class TestScore:
    def test_zero_output_layer_half(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        disc.params["out.W"][...] = 0
        disc.params["out.b"][...] = 0
        np.testing.assert_array_equal(disc.score(corpus[:5]), 0.5)

    def test_bias_monotone(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        disc.params["out.W"][...] = 0
        ps = []
        for b in (0.0, 5.0, 10.0):
            disc.params["out.b"][...] = b
            ps.append(disc.score(corpus[:1])[0])
        assert ps[0] < ps[1] < ps[2] < 1.0 and ps[2] > 0.9999

    def test_range_and_determinism(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory, "attn")
        a, b = disc.score(corpus), disc.score(corpus)
        assert np.all((a > 0) & (a < 1)) and a.tobytes() == b.tobytes()
        det = disc.score_details(corpus[0])
        assert det.attention_weights.shape == (len(corpus[0].turns),)

    def test_empty_dialog_rejected(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        with pytest.raises(DataError):
            disc.score([Dialog([], corpus[0].goal, {})])


@pytest.mark.parametrize("method", POOLING_METHODS)
def test_gradcheck_each_pooling(ontology, inventory, corpus, method):
    disc = small_disc(ontology, inventory, method, seed=2)
    dialogs = [Dialog(d.turns[:3], d.goal, d.final_beliefs) for d in corpus[:2]]
    dialogs[1].turns = dialogs[1].turns[:2]
    labels = np.array([1.0, 0.0])
    rep = nn.check_gradients(lambda: disc.bce_loss(dialogs, labels), disc.params, rtol=1e-4)
    assert rep.passed, str(rep)


class TestTraining:
    def test_batch_loss_is_mean_of_examples(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory, "avg")
        labels = np.array([1, 0, 1, 0], dtype=float)
        whole = disc.bce_loss(corpus[:4], labels, backward=False)
        parts = [disc.bce_loss([d], [y], backward=False) for d, y in zip(corpus[:4], labels)]
        assert whole == pytest.approx(np.mean(parts), rel=1e-12)

    def test_identical_pair_bound(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        for d in corpus[:10]:
            assert 2 * disc.bce_loss([d, d], [1.0, 0.0], backward=False) >= 2 * math.log(2) - 1e-12

    def test_zero_lr_leaves_params(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        before = disc.params.copy()
        disc.adversarial_update(corpus[:3], corpus[3:6], lr=0.0, training=False)
        for name, p in disc.params.items():
            assert p.value.tobytes() == before.entries[name].value.tobytes()

    def test_update_separates_fixed_batches(self, ontology, inventory, separable):
        pos, neg = separable[0][:10], separable[1][:10]
        disc = small_disc(ontology, inventory, "max", hidden=8)
        up, down = [], []
        for _ in range(50):
            disc.adversarial_update(pos, neg, lr=3e-3, training=False)
            up.append(disc.score(pos).mean())
            down.append(disc.score(neg).mean())
        ma = lambda x: np.convolve(x, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(ma(up)) > 0) and np.all(np.diff(ma(down)) < 0)

    def test_pretrain_and_label_flip(self, ontology, inventory, separable):
        pos, neg, held_pos, held_neg = separable
        held = held_pos + held_neg
        truth = np.r_[np.ones(len(held_pos)), np.zeros(len(held_neg))]
        cfg = DiscriminatorPretrainConfig(epochs=8, batch_size=16, lr=3e-3)
        accs = []
        for p, n in [(pos, neg), (neg, pos)]:
            disc = small_disc(ontology, inventory, "max", hidden=8, seed=5)
            pretrain(disc, p, n, cfg, np.random.default_rng(0))
            accs.append(float(np.mean((disc.score(held) >= 0.5) == truth)))
        assert accs[0] >= 0.85
        assert abs(accs[1] - (1 - accs[0])) <= 0.05

    def test_pretrain_needs_both_classes(self, ontology, inventory, corpus):
        with pytest.raises(DataError):
            pretrain(small_disc(ontology, inventory), corpus[:3], [])


class TestOfflineEval:
    def test_untrained_zero_d(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        disc.params["out.W"][...] = 0
        acc, sp, fp = offline_eval_discriminator(disc, corpus)
        prior = np.mean([d.success for d in corpus])
        assert acc == pytest.approx(prior) and sp == 0.5 and fp == 0.5

    def test_perfect_scorer(self, corpus):
        class Oracle:
            def score(self, dialogs):
                return np.array([1.0 if d.success else 0.0 for d in dialogs])
        acc, sp, fp = offline_eval_discriminator(Oracle(), corpus)
        assert (acc, sp, fp) == (1.0, 1.0, 0.0)

    def test_requires_labels(self, ontology, inventory, corpus):
        disc = small_disc(ontology, inventory)
        with pytest.raises(DataError):
            offline_eval_discriminator(disc, [])
        with pytest.raises(DataError):
            offline_eval_discriminator(disc, [Dialog(corpus[0].turns, corpus[0].goal, {}, success=None)])
