"""Polyphone disambiguation by masked-LM vocabulary extension."""

from .vocab import (Lexicon, Pinyin, PolyphoneEntry, VocabMap, base_tokens_from_chars,
                    base_vocab, build_vocab, lexicon_from_vocab, load_lexicon, save_lexicon)
from .corpus import (LabeledSentence, SynthSpec, TrainingExample, from_ncmc, gen_synthetic,
                     make_example, read_corpus, to_ncmc, write_corpus)
from .model import (ModelConfig, Parameters, extend_and_init, extension_delta, forward,
                    init_random, param_count)
from .checkpoint import Checkpoint, load, save
from .training import TrainConfig, mlm_loss, pretrain_base, train_polyphone
from .inference import Prediction, PredictionReport, g2p_annotate, predict
from .baseline import ClassifierHead, classify, train_classifier
from .evaluate import EvalResult, dataset_stats, init_probe, score

__version__ = "0.1.0"

__all__ = [
    "Lexicon", "Pinyin", "PolyphoneEntry", "VocabMap", "base_tokens_from_chars",
    "base_vocab", "build_vocab", "lexicon_from_vocab", "load_lexicon", "save_lexicon",
    "LabeledSentence", "SynthSpec", "TrainingExample", "from_ncmc", "gen_synthetic",
    "make_example", "read_corpus", "to_ncmc", "write_corpus",
    "ModelConfig", "Parameters", "extend_and_init", "extension_delta", "forward",
    "init_random", "param_count",
    "Checkpoint", "load", "save",
    "TrainConfig", "mlm_loss", "pretrain_base", "train_polyphone",
    "Prediction", "PredictionReport", "g2p_annotate", "predict",
    "ClassifierHead", "classify", "train_classifier",
    "EvalResult", "dataset_stats", "init_probe", "score",
]
