"""Shared fixtures.

The heavy benchmark artifacts (corpora, pre-trained base, extended and
trained models, trained baseline) are session-scoped: they are built once and
reused by the acceptance suite and any test that needs a realistic model.
"""

import numpy as np
import pytest

from polyg2p import baseline as bl
from polyg2p import benchmark as bench_mod
from polyg2p import model as M
from polyg2p import training as T
from polyg2p.vocab import Lexicon, Pinyin, PolyphoneEntry, build_vocab, base_tokens_from_chars


def pin(s: str) -> Pinyin:
    return Pinyin.parse(s)


@pytest.fixture(scope="session")
def zh_lexicon():
    """Small real-Chinese lexicon: one two-reading and one three-reading character."""
    return Lexicon(
        entries={
            "泊": PolyphoneEntry("泊", (pin("po1"), pin("bo2"))),
            "扎": PolyphoneEntry("扎", (pin("zha2"), pin("zha1"), pin("za1"))),
        },
        monophones={"湖": pin("hu2"), "小": pin("xiao3"), "在": pin("zai4")},
    )


@pytest.fixture(scope="session")
def zh_vocab(zh_lexicon):
    chars = set("小船漂泊在湖里舟中心鱼拼命挣扎刺破了手他随意包一下，")
    chars |= set(zh_lexicon.entries) | set(zh_lexicon.monophones)
    return build_vocab(base_tokens_from_chars(chars), zh_lexicon)


@pytest.fixture(scope="session")
def bench():
    return bench_mod.build_benchmark()


@pytest.fixture(scope="session")
def base_model(bench):
    config = bench_mod.model_config(bench.base.size)
    result = T.pretrain_base(bench.splits["pretrain"], bench.base, config, bench_mod.PRETRAIN_TC)
    return config, result


@pytest.fixture(scope="session")
def extended_models(bench, base_model):
    base_config, base_result = base_model
    config = bench_mod.model_config(bench.vocab.size)
    scpc = M.extend_and_init(base_result.params, bench.base, bench.vocab, "scpc")
    unk = M.extend_and_init(base_result.params, bench.base, bench.vocab, "unk")
    return config, scpc, unk


@pytest.fixture(scope="session")
def trained_model(bench, extended_models):
    config, scpc, _ = extended_models
    params = scpc.copy()
    result = T.train_polyphone(bench.splits["train"], params, bench.vocab, config,
                               bench_mod.POLYPHONE_TC, heldout=bench.splits["test1"])
    return config, result


@pytest.fixture(scope="session")
def trained_baseline(bench, base_model):
    config, base_result = base_model
    params = base_result.params.copy()
    head = bl.make_head(bench.lexicon, hidden=bench_mod.BASELINE_HEAD_HIDDEN,
                        dropout=bench_mod.BASELINE_HEAD_DROPOUT)
    bl.init_head_params(params, head, config.d_model, seed=bench_mod.BASELINE_TC.seed)
    result = bl.train_classifier(bench.splits["train"], params, head, bench.base,
                                 bench.lexicon, config, bench_mod.BASELINE_TC,
                                 freeze_encoder=False, heldout=bench.splits["test1"])
    return config, head, result


@pytest.fixture
def tiny_config():
    return T.TINY_CONFIG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
