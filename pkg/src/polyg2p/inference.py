"""Restricted-candidate prediction and whole-sentence pinyin annotation.

Prediction runs one eval-mode forward pass per sentence (or batch), takes the
softmax row at each polyphone position, restricts it to that character's
candidate readings, renormalizes, and picks the argmax.  Ties break toward
the first-listed reading.  Occurrences are decided independently; token
position is character index + 1 because of the leading ``[CLS]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelConfig, Parameters, forward, softmax
from .vocab import Lexicon, Pinyin, VocabMap


class InferenceError(ValueError):
    """Input the predictor cannot process (e.g. over the length limit)."""


@dataclass(frozen=True)
class Prediction:
    """One polyphone occurrence: chosen reading plus its probability context."""

    char_index: int
    scpc: str
    chosen: Pinyin
    candidate_probs: tuple[tuple[Pinyin, float], ...]  # renormalized over candidates
    raw_probs: tuple[tuple[Pinyin, float], ...]        # softmax over the full vocabulary


@dataclass(frozen=True)
class PredictionReport:
    text: str
    predictions: tuple[Prediction, ...]


def _occurrences(lexicon: Lexicon, text: str) -> list[int]:
    return [i for i, ch in enumerate(text) if ch in lexicon.entries]


def _decide(vocab: VocabMap, probs_row: np.ndarray, char_index: int, scpc: str) -> Prediction:
    cands = vocab.candidates(scpc)
    raw = np.array([probs_row[token_id] for _, token_id in cands], dtype=np.float64)
    renorm = raw / raw.sum()
    pick = int(np.argmax(renorm))  # argmax takes the first maximum: lexicon-order tie-break
    return Prediction(
        char_index=char_index,
        scpc=scpc,
        chosen=cands[pick][0],
        candidate_probs=tuple((p, float(renorm[i])) for i, (p, _) in enumerate(cands)),
        raw_probs=tuple((p, float(raw[i])) for i, (p, _) in enumerate(cands)),
    )


def predict_many(params: Parameters, config: ModelConfig, vocab: VocabMap,
                 lexicon: Lexicon, texts: Sequence[str],
                 batch_size: int = 128) -> list[PredictionReport]:
    """Reports for ``texts`` in order; sentences without polyphones get empty
    reports without touching the model."""
    reports: dict[int, PredictionReport] = {}
    pending: list[tuple[int, str, list[int]]] = []
    for i, text in enumerate(texts):
        if len(text) + 2 > config.max_len:
            raise InferenceError(f"sentence of {len(text)} characters exceeds the"
                                 f" {config.max_len - 2} supported by this model")
        occ = _occurrences(lexicon, text)
        if occ:
            pending.append((i, text, occ))
        else:
            reports[i] = PredictionReport(text=text, predictions=())

    for start in range(0, len(pending), batch_size):
        chunk = pending[start:start + batch_size]
        width = max(len(t) for _, t, _ in chunk) + 2
        ids = np.full((len(chunk), width), vocab.pad_id, dtype=np.int64)
        for b, (_, text, _) in enumerate(chunk):
            seq = vocab.encode_chars(text)
            ids[b, :len(seq)] = seq
        logits, _ = forward(params, config, ids, pad_id=vocab.pad_id)
        probs = softmax(logits.astype(np.float64))
        for b, (i, text, occ) in enumerate(chunk):
            preds = tuple(_decide(vocab, probs[b, j + 1], j, text[j]) for j in occ)
            reports[i] = PredictionReport(text=text, predictions=preds)

    return [reports[i] for i in range(len(texts))]


def predict(params: Parameters, config: ModelConfig, vocab: VocabMap,
            lexicon: Lexicon, text: str) -> PredictionReport:
    """Single-sentence prediction; one eval-mode forward pass, deterministic."""
    return predict_many(params, config, vocab, lexicon, [text])[0]


def g2p_annotate(params: Parameters, config: ModelConfig, vocab: VocabMap,
                 lexicon: Lexicon, text: str) -> list[Pinyin | None]:
    """Per-character pinyin: monophones by lookup, polyphones by prediction,
    unknown characters as ``None``.  All-monophone sentences skip the model."""
    out: list[Pinyin | None] = [lexicon.monophones.get(ch) for ch in text]
    report = predict(params, config, vocab, lexicon, text)
    for pred in report.predictions:
        out[pred.char_index] = pred.chosen
    return out
