import itertools
import math

import numpy as np
import pytest

from seqgen.models import (
    ARModel,
    LengthDistribution,
    MaskedTokenError,
    TabularJointModel,
    ToyMaskedLM,
    TrainConfig,
    length_candidates,
    masked_sweep,
    pseudo_log_likelihood,
    tabular_exact_map,
    train_ar,
    with_masks,
)
from seqgen.models.base import best_symbol, top_symbols


def brute_conditional(model, Y, pos):
    """p(y_pos | observed non-mask positions) by summing the joint over every completion."""
    mask = model.vocab.mask_id
    row = np.zeros(model.vocab.size)
    for combo in model.sequences(len(Y)):
        if any(y != mask and i != pos and combo[i] != y for i, y in enumerate(Y)):
            continue
        row[combo[pos]] += model.joint_prob(combo)
    return row / row.sum()


class TestTabular:
    def test_conditionals_match_enumeration(self, rng):
        m = TabularJointModel.random(rng, 3, 3)
        mask = m.vocab.mask_id
        a, b, c = m.content
        for Y in [(mask, mask, mask), (a, mask, c), (b, c, a)]:
            for pos in range(3):
                got = m.conditional(with_masks(Y, (pos,), mask), (pos,))[0]
                np.testing.assert_allclose(got, brute_conditional(m, with_masks(Y, (pos,), mask), pos), atol=1e-14)

    def test_rows_are_distributions(self, rng):
        m = TabularJointModel.random(rng, 3, 4)
        rows = m.conditional((m.vocab.mask_id,) * 3, (0, 1, 2))
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(rows[:, m.vocab.mask_id] == 0)

    def test_point_mass(self):
        m = TabularJointModel.point_mass((2, 0, 1), 3)
        rows = m.conditional((m.vocab.mask_id,) * 3, (0, 1, 2))
        assert [int(np.argmax(r)) for r in rows] == list(m.to_ids((2, 0, 1)))
        assert tabular_exact_map(m, (), 3) == m.to_ids((2, 0, 1))

    def test_zero_probability_context_falls_back_to_uniform(self):
        m = TabularJointModel.point_mass((0, 0), 2)
        a, b = m.content
        row = m.conditional((b, m.vocab.mask_id), (1,))[0]
        np.testing.assert_allclose(row[[a, b]], [0.5, 0.5])

    def test_invalid_table(self):
        vocab = TabularJointModel.uniform(2, 2).vocab
        with pytest.raises(ValueError):
            TabularJointModel(vocab, {((), 2): np.full((2, 2), 0.3)})

    def test_length_log_prob(self):
        m = TabularJointModel.uniform(2, 3)
        assert m.length_log_prob(2) == 0.0
        assert m.length_log_prob(3) == -math.inf


class TestMaskedSweep:
    def test_rows_mask_one_position_each(self, rng):
        m = TabularJointModel.random(rng, 3, 3)
        a, b, _ = m.content
        mask = m.vocab.mask_id
        Y = (a, mask, b)
        rows = masked_sweep(m, Y)
        for i in range(3):
            np.testing.assert_allclose(rows[i], m.conditional(with_masks(Y, (i,), mask), (i,))[0])

    def test_pseudo_log_likelihood_uniform(self):
        m = TabularJointModel.uniform(5, 4)
        assert pseudo_log_likelihood(m, m.to_ids((0, 1, 2, 3, 0))) == pytest.approx(-5 * math.log(4))

    def test_pseudo_log_likelihood_rejects_masks(self):
        m = TabularJointModel.uniform(2, 2)
        with pytest.raises(MaskedTokenError):
            pseudo_log_likelihood(m, (m.vocab.mask_id, m.content[0]))


class TestSymbolChoice:
    def test_best_symbol_skips_specials(self):
        m = TabularJointModel.uniform(1, 3)
        row = np.zeros(m.vocab.size)
        row[m.vocab.mask_id] = 0.9
        row[m.content[2]] = 0.1
        assert best_symbol(row, m.vocab) == m.content[2]

    def test_ties_go_to_lowest_id(self):
        m = TabularJointModel.uniform(1, 3)
        row = np.zeros(m.vocab.size)
        row[list(m.content)] = 1 / 3
        assert best_symbol(row, m.vocab) == m.content[0]
        assert top_symbols(row, m.vocab, 2) == list(m.content[:2])


class TestLengthDistribution:
    def test_add_one_smoothing(self):
        ld = LengthDistribution({(3, 3): 8}, max_length=4)
        assert ld.prob(3, (0, 0, 0)) == pytest.approx(9 / 12)
        assert ld.prob(1, (0, 0, 0)) == pytest.approx(1 / 12)
        assert ld.prob(5, (0, 0, 0)) == 0.0
        assert sum(ld.row((0, 0, 0))) == pytest.approx(1.0)

    def test_candidates_ordered(self):
        ld = LengthDistribution({(2, 2): 5, (2, 3): 3}, max_length=4)
        cands = length_candidates(ld, (0, 0), 3)
        assert [L for L, _ in cands] == [2, 3, 1]
        assert cands[0][1] == pytest.approx(math.log(6 / 12))

    def test_text_round_trip(self):
        ld = LengthDistribution({(2, 2): 5, (4, 3): 1}, max_length=6)
        back = LengthDistribution.from_text(ld.to_text())
        assert back.counts == ld.counts and back.max_length == 6


class TestToyMaskedLM:
    def test_training_reduces_loss(self, tiny):
        assert np.mean(tiny.losses[-20:]) < np.mean(tiny.losses[:20])

    def test_rows_are_distributions(self, tiny):
        X, Y = tiny.test[0]
        rows = tiny.model.conditional((tiny.vocab.mask_id,) * len(Y), tuple(range(len(Y))), X)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)

    def test_batch_matches_single_queries(self, tiny):
        mask = tiny.vocab.mask_id
        queries, Xs = [], []
        for X, Y in tiny.test[:3]:
            queries.append((with_masks(Y, (0, 2), mask), (0, 2)))
            Xs.append(X)
        for (Y, pos), X in zip(queries, Xs):
            single = tiny.model.conditional(Y, pos, X)
            batched = tiny.model.conditional_batch([(Y, pos), queries[0]], X)[0]
            np.testing.assert_allclose(single, batched, atol=1e-6)

    def test_raw_logits_softmax_to_rows(self, tiny):
        X, Y = tiny.test[1]
        Ym = with_masks(Y, (1,), tiny.vocab.mask_id)
        logits = tiny.model.raw_logits([Ym], X)[0]
        rows, _ = tiny.model.target_outputs([Ym], X)[0]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(e / e.sum(axis=1, keepdims=True), rows, atol=1e-6)

    def test_save_load_round_trip(self, tiny, tmp_path):
        tiny.model.save(tmp_path / "lm.npz")
        back = ToyMaskedLM.load(tmp_path / "lm.npz")
        X, Y = tiny.test[0]
        q = (tiny.vocab.mask_id,) * len(Y)
        np.testing.assert_array_equal(back.conditional(q, (0,), X), tiny.model.conditional(q, (0,), X))
        assert back.length_log_prob(len(Y), X) == tiny.model.length_log_prob(len(Y), X)

    def test_too_long_rejected(self, tiny):
        with pytest.raises(ValueError):
            tiny.model.conditional((tiny.vocab.mask_id,) * 7, (0,), ())


@pytest.fixture(scope="module")
def ar(tiny):
    cfg = TrainConfig(d_model=16, n_layers=1, d_ff=32, steps=60, batch_size=32, lr=3e-3, max_length=6, log_every=0)
    return train_ar(tiny.train, tiny.vocab, cfg)


class TestARModel:
    def test_parallel_matches_sequential(self, ar, tiny):
        model, _ = ar
        for X, Y in tiny.test[:3]:
            assert model.log_prob(Y, X) == pytest.approx(model.sequential_log_prob(Y, X), abs=1e-5)

    def test_factors_include_end_marker(self, ar, tiny):
        model, _ = ar
        X, Y = tiny.test[0]
        f = model.factors(Y, X)
        assert len(f) == len(Y) + 1 and np.all(f <= 0)

    def test_loss_decreases(self, ar):
        _, losses = ar
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_save_load(self, ar, tiny, tmp_path):
        model, _ = ar
        model.save(tmp_path / "ar.npz")
        X, Y = tiny.test[0]
        assert ARModel.load(tmp_path / "ar.npz").log_prob(Y, X) == model.log_prob(Y, X)
        with pytest.raises(ValueError):
            ToyMaskedLM.load(tmp_path / "ar.npz")

    def test_rejects_masks(self, ar, tiny):
        model, _ = ar
        with pytest.raises(MaskedTokenError):
            model.log_prob((tiny.vocab.mask_id,), ())

    def test_distribution_normalises_over_short_sequences(self):
        """Sum of p(Y) over every Y of length <= 2 plus the rest stays <= 1 (proper left-to-right factorisation)."""
        from seqgen.core import Vocabulary

        vocab = Vocabulary.build(["a", "b"])
        model = ARModel.init(vocab, 3, d_model=8, n_layers=1, d_ff=8)
        total = 0.0
        for L in range(1, 4):
            for Y in itertools.product(vocab.content_ids, repeat=L):
                total += math.exp(model.log_prob(Y, ()))
        assert total <= 1.0 + 1e-9
