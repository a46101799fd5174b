"""Classifier-baseline contracts: shared head, candidate restriction, freezing."""

import numpy as np
import pytest

from polyg2p import baseline as bl
from polyg2p.corpus import LabeledSentence
from polyg2p.model import ModelConfig, init_random
from polyg2p.training import TrainConfig
from polyg2p.vocab import (Lexicon, Pinyin, PolyphoneEntry, base_tokens_from_chars,
                           base_vocab)

pin = Pinyin.parse


@pytest.fixture(scope="module")
def setup():
    lex = Lexicon(entries={
        "泊": PolyphoneEntry("泊", (pin("po1"), pin("bo2"))),
        "扎": PolyphoneEntry("扎", (pin("zha2"), pin("zha1"), pin("za1"))),
    })
    vocab = base_vocab(base_tokens_from_chars("泊扎湖小在船里破手风平浪静"))
    config = ModelConfig(vocab_size=vocab.size, d_model=16, n_layers=1, n_heads=2,
                         d_ff=32, max_len=16, dropout=0.0, seed=17)
    return lex, vocab, config


def _sentences():
    rows = [("小船在湖泊里", 4, "po1"), ("湖泊风平浪静", 1, "po1"),
            ("小船泊在湖里", 2, "bo2"), ("手扎破", 1, "zha1"),
            ("扎手", 0, "zha2"), ("扎在手里", 0, "za1")]
    return [LabeledSentence(t, ((i, pin(p)),)) for t, i, p in rows]


class TestHead:
    def test_label_set_is_union_of_readings(self, setup):
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=64)
        assert len(head.labels) == 5
        assert head.labels == tuple(sorted(head.labels))

    def test_output_dimension_matches_label_set(self, setup):
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=64)
        params = init_random(config)
        bl.init_head_params(params, head, config.d_model, seed=3)
        assert params["clf.fc1.w"].shape == (config.d_model, 64)
        assert params["clf.fc2.w"].shape == (64, len(head.labels))

    def test_empty_lexicon_rejected(self):
        with pytest.raises(bl.BaselineError):
            bl.make_head(Lexicon(entries={}))


class TestClassify:
    def test_predictions_restricted_to_candidates(self, setup, rng):
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=8, dropout=0.0)
        params = init_random(config)
        bl.init_head_params(params, head, config.d_model, seed=3)
        chars = "泊扎湖小在船里"
        texts = ["".join(chars[i] for i in rng.integers(0, len(chars), size=6))
                 for _ in range(100)]
        for report in bl.classify_many(params, config, head, vocab, lex, texts):
            for p in report.predictions:
                assert p.chosen in set(lex.entries[p.scpc].readings)
                assert sum(v for _, v in p.candidate_probs) == pytest.approx(1.0, abs=1e-6)

    def test_report_schema_matches_inference(self, setup):
        from polyg2p.evaluate import score
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=8, dropout=0.0)
        params = init_random(config)
        bl.init_head_params(params, head, config.d_model, seed=3)
        gold = _sentences()
        reports = bl.classify_many(params, config, head, vocab, lex,
                                   [s.text for s in gold])
        result = score(reports, gold)  # same scorer as the polyphone model
        assert result.scored == len(gold)


class TestFreeze:
    def _train(self, setup, freeze, head_seed=3, steps=12):
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=8, dropout=0.5)
        params = init_random(config)
        bl.init_head_params(params, head, config.d_model, seed=head_seed)
        before = {n: params[n].copy() for n in params}
        tc = TrainConfig(lr=1e-3, batch_size=3, steps=steps, seed=7, eval_every=0)
        bl.train_classifier(_sentences(), params, head, vocab, lex, config, tc,
                            freeze_encoder=freeze)
        return before, params

    def test_frozen_encoder_is_bitwise_unchanged(self, setup):
        before, after = self._train(setup, freeze=True)
        for name in before:
            if name.startswith("clf."):
                assert not np.array_equal(before[name], after[name]), name
            else:
                assert np.array_equal(before[name], after[name]), name

    def test_frozen_encoder_identical_across_head_seeds(self, setup):
        _, run_a = self._train(setup, freeze=True, head_seed=3)
        _, run_b = self._train(setup, freeze=True, head_seed=99)
        for name in run_a:
            if not name.startswith("clf."):
                assert np.array_equal(run_a[name], run_b[name]), name

    def test_trainable_encoder_moves(self, setup):
        before, after = self._train(setup, freeze=False)
        assert not np.array_equal(before["tok_emb"], after["tok_emb"])
        assert not np.array_equal(before["enc0.attn.wq"], after["enc0.attn.wq"])

    def test_mlm_head_untouched_either_way(self, setup):
        # the classifier never routes gradient through the tied LM head transform
        for freeze in (True, False):
            before, after = self._train(setup, freeze=freeze)
            assert np.array_equal(before["head.wt"], after["head.wt"])
            assert np.array_equal(before["head.out_bias"], after["head.out_bias"])

    def test_frozen_head_loss_decreases(self, setup):
        lex, vocab, config = setup
        head = bl.make_head(lex, hidden=16, dropout=0.0)
        params = init_random(config)
        bl.init_head_params(params, head, config.d_model, seed=3)
        tc = TrainConfig(lr=3e-3, batch_size=6, steps=60, seed=7, eval_every=0)
        result = bl.train_classifier(_sentences(), params, head, vocab, lex, config, tc,
                                     freeze_encoder=True)
        losses = [m["loss"] for m in result.metrics]
        assert np.mean(losses[:10]) > np.mean(losses[-10:])
