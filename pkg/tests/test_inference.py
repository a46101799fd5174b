"""Restricted-candidate prediction and sentence annotation."""

import numpy as np
import pytest

from polyg2p import inference
from polyg2p.inference import InferenceError, g2p_annotate, predict, predict_many
from polyg2p.model import ModelConfig, extend_and_init, init_random, softmax
from polyg2p.vocab import (Lexicon, Pinyin, PolyphoneEntry, base_tokens_from_chars,
                           base_vocab, build_vocab)

pin = Pinyin.parse


@pytest.fixture(scope="module")
def setup():
    lex = Lexicon(
        entries={
            "泊": PolyphoneEntry("泊", (pin("po1"), pin("bo2"))),
            "扎": PolyphoneEntry("扎", (pin("zha2"), pin("zha1"), pin("za1"))),
        },
        monophones={ch: pin("ka1") for ch in "小舟在湖中心漂里船"},
    )
    tokens = base_tokens_from_chars("小舟在湖中心漂里船泊扎破手")
    base = base_vocab(tokens)
    extended = build_vocab(tokens, lex)
    base_config = ModelConfig(vocab_size=base.size, d_model=16, n_layers=1, n_heads=2,
                              d_ff=32, max_len=24, dropout=0.0, seed=31)
    config = ModelConfig(**{**base_config.to_dict(), "vocab_size": extended.size})
    params = extend_and_init(init_random(base_config), base, extended, "scpc")
    return lex, extended, config, params


class TestPredict:
    def test_occurrence_position_and_report_shape(self, setup):
        lex, vocab, config, params = setup
        report = predict(params, config, vocab, lex, "小舟在湖中心漂泊")
        assert len(report.predictions) == 1
        p = report.predictions[0]
        assert p.char_index == 7  # token position 8 once [CLS] shifts everything
        assert p.scpc == "泊"
        assert {str(q) for q, _ in p.candidate_probs} == {"po1", "bo2"}

    def test_untrained_siblings_split_probability_evenly(self, setup):
        lex, vocab, config, params = setup
        report = predict(params, config, vocab, lex, "小舟在湖中心漂泊")
        probs = dict((str(q), v) for q, v in report.predictions[0].candidate_probs)
        assert probs["po1"] == 0.5 and probs["bo2"] == 0.5
        # ties break toward the first-listed reading
        assert str(report.predictions[0].chosen) == "po1"

    def test_three_way_siblings_equal(self, setup):
        lex, vocab, config, params = setup
        report = predict(params, config, vocab, lex, "手扎破")
        vals = [v for _, v in report.predictions[0].candidate_probs]
        assert vals[0] == vals[1] == vals[2]

    def test_renormalized_probs_sum_to_one(self, setup):
        lex, vocab, config, params = setup
        for p in predict(params, config, vocab, lex, "扎泊扎").predictions:
            assert sum(v for _, v in p.candidate_probs) == pytest.approx(1.0, abs=1e-6)

    def test_raw_probs_below_renormalized(self, setup):
        lex, vocab, config, params = setup
        p = predict(params, config, vocab, lex, "小舟漂泊").predictions[0]
        raw = dict((str(q), v) for q, v in p.raw_probs)
        ren = dict((str(q), v) for q, v in p.candidate_probs)
        assert all(raw[k] <= ren[k] for k in raw)

    def test_no_polyphone_gives_empty_report_without_model_call(self, setup, monkeypatch):
        lex, vocab, config, params = setup

        def boom(*a, **k):
            raise AssertionError("model called for a polyphone-free sentence")

        monkeypatch.setattr(inference, "forward", boom)
        report = predict(params, config, vocab, lex, "小舟在湖里")
        assert report.predictions == ()

    def test_too_long_rejected(self, setup):
        lex, vocab, config, params = setup
        with pytest.raises(InferenceError, match="exceeds"):
            predict(params, config, vocab, lex, "泊" * config.max_len)

    def test_candidate_containment_on_random_sentences(self, setup, rng):
        lex, vocab, config, params = setup
        chars = "小舟在湖中心漂里船泊扎"
        texts = ["".join(chars[i] for i in rng.integers(0, len(chars), size=8))
                 for _ in range(300)]
        for report in predict_many(params, config, vocab, lex, texts):
            for p in report.predictions:
                readings = {q for q in lex.entries[p.scpc].readings}
                assert p.chosen in readings
                assert {q for q, _ in p.candidate_probs} == readings

    def test_batch_independence(self, setup):
        lex, vocab, config, params = setup
        texts = ["小舟在湖中心漂泊", "扎手", "小船泊在湖里扎破手"]
        alone = [predict(params, config, vocab, lex, t) for t in texts]
        together = predict_many(params, config, vocab, lex, texts)
        for a, b in zip(alone, together):
            assert [str(p.chosen) for p in a.predictions] == \
                   [str(p.chosen) for p in b.predictions]

    def test_argmax_invariant_to_constant_logit_shift(self, setup):
        lex, vocab, config, params = setup
        from polyg2p.inference import _decide
        from polyg2p.model import forward
        ids = [vocab.encode_chars("小舟在湖中心漂泊")]
        logits, _ = forward(params, config, ids, pad_id=vocab.pad_id)
        row = logits[0, 8].astype(np.float64)
        a = _decide(vocab, softmax(row), 7, "泊")
        b = _decide(vocab, softmax(row + 11.5), 7, "泊")
        assert a.chosen == b.chosen


class TestAnnotate:
    def test_all_monophone_sentence_skips_model(self, setup, monkeypatch):
        lex, vocab, config, params = setup
        monkeypatch.setattr(inference, "forward",
                            lambda *a, **k: (_ for _ in ()).throw(AssertionError("called")))
        out = g2p_annotate(params, config, vocab, lex, "小舟在湖里")
        assert [str(p) for p in out] == ["ka1"] * 5

    def test_mixed_sentence_matches_predict(self, setup):
        lex, vocab, config, params = setup
        text = "小舟在湖中心漂泊"
        out = g2p_annotate(params, config, vocab, lex, text)
        report = predict(params, config, vocab, lex, text)
        assert out[7] == report.predictions[0].chosen
        assert all(out[i] == lex.monophones[text[i]] for i in range(7))

    def test_unknown_character_yields_sentinel(self, setup):
        lex, vocab, config, params = setup
        out = g2p_annotate(params, config, vocab, lex, "小破舟")
        assert out[1] is None  # known token but no monophone entry

    def test_repeated_polyphone_gets_independent_predictions(self, setup):
        lex, vocab, config, params = setup
        text = "扎小扎湖扎"
        report = predict(params, config, vocab, lex, text)
        assert [p.char_index for p in report.predictions] == [0, 2, 4]
        out = g2p_annotate(params, config, vocab, lex, text)
        for p in report.predictions:
            assert out[p.char_index] == p.chosen
