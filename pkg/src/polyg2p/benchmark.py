"""The fixed synthetic benchmark: language, splits, model and budgets.

Everything here is frozen so that the documented pipeline is reproducible
bit for bit: 8 polyphones with 2-3 readings each, a deterministic
trigger-window labeling rule, 20k training / 2k test sentences plus a 100
sentence multi-occurrence split, and a 2-layer d=128 encoder.  Training
budgets and learning rates are desk-scale calibrations (full-size defaults
learn nothing at this scale in any reasonable time).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import (LabeledSentence, SynthLanguage, SynthSpec, build_language,
                     gen_multi_occurrence, gen_synthetic)
from .model import ModelConfig
from .training import TrainConfig
from .vocab import Lexicon, VocabMap, base_tokens_from_chars, base_vocab, build_vocab

SPEC = SynthSpec(
    alphabet_size=48,
    n_polyphones=8,
    min_readings=2,
    max_readings=3,
    window=3,
    min_len=8,
    max_len=24,
    noise=0.0,
    seed=8471,
)

TRAIN_SENTENCES = 20_000
TEST_SENTENCES = 2_000
TEST4_SENTENCES = 100
PRETRAIN_SENTENCES = 20_000

STREAM_TRAIN = 1
STREAM_TEST = 2
STREAM_PRETRAIN = 3
STREAM_TEST4 = 4

MODEL_SEED = 303


def model_config(vocab_size: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, d_model=128, n_layers=2, n_heads=4,
                       d_ff=256, max_len=40, dropout=0.1, seed=MODEL_SEED)


PRETRAIN_TC = TrainConfig(lr=1e-3, batch_size=64, steps=1200, seed=101, eval_every=0)
POLYPHONE_TC = TrainConfig(lr=5e-4, batch_size=64, steps=1500, seed=202, eval_every=300)
BASELINE_TC = TrainConfig(lr=3e-4, batch_size=64, steps=1200, seed=404, eval_every=300)
BASELINE_HEAD_HIDDEN = 128  # first FC layer matches the model width
BASELINE_HEAD_DROPOUT = 0.5


@dataclass
class Benchmark:
    spec: SynthSpec
    language: SynthLanguage
    lexicon: Lexicon
    base: VocabMap
    vocab: VocabMap
    splits: dict[str, list[LabeledSentence]] = field(default_factory=dict)


def build_benchmark(spec: SynthSpec = SPEC,
                    train: int = TRAIN_SENTENCES,
                    test: int = TEST_SENTENCES,
                    test4: int = TEST4_SENTENCES,
                    pretrain: int = PRETRAIN_SENTENCES) -> Benchmark:
    """Generate every split of the benchmark, deterministic in the spec seed."""
    language = build_language(spec)
    chars = list(language.alphabet) + list(language.lexicon.entries)
    tokens = base_tokens_from_chars(chars)
    splits = {
        "train": list(gen_synthetic(spec, train, stream=STREAM_TRAIN, language=language)),
        "test1": list(gen_synthetic(spec, test, stream=STREAM_TEST, language=language)),
        "test4": gen_multi_occurrence(spec, test4, stream=STREAM_TEST4, language=language),
        "pretrain": list(gen_synthetic(spec, pretrain, stream=STREAM_PRETRAIN, language=language)),
    }
    return Benchmark(
        spec=spec,
        language=language,
        lexicon=language.lexicon,
        base=base_vocab(tokens),
        vocab=build_vocab(tokens, language.lexicon),
        splits=splits,
    )
