"""Encoder + fully-connected classifier baseline with a freeze flag.

The head is shared across all polyphones: two linear layers over the encoder
output at each polyphone position, softmax over the global label set (the
union of all lexicon readings, sorted).  At decision time the distribution is
restricted to the observed character's candidates and renormalized, exactly
like the extended-vocabulary model, so the two systems differ only in
mechanism.  With the freeze flag set, encoder tensors receive no updates at
all and stay bitwise identical through training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import LabeledSentence
from .inference import Prediction, PredictionReport
from .model import (ModelConfig, Parameters, encode_hidden, encoder_backward,
                    gelu_forward, gelu_grad, softmax)
from .training import (OptimizerState, TrainConfig, TrainResult, TrainingError,
                       _bucketed_batches, adam_step, pad_batch, softmax_xent)
from .vocab import Lexicon, Pinyin, VocabMap

log = logging.getLogger(__name__)

HEAD_PREFIX = "clf."


class BaselineError(ValueError):
    """Classifier setup inconsistent with the lexicon or encoder."""


@dataclass(frozen=True)
class ClassifierHead:
    """Shared two-layer head metadata; tensors live in the Parameters dict
    under ``clf.*`` names."""

    hidden: int
    dropout: float
    labels: tuple[Pinyin, ...]

    @property
    def label_index(self) -> dict[Pinyin, int]:
        return {p: i for i, p in enumerate(self.labels)}


def make_head(lexicon: Lexicon, hidden: int = 64, dropout: float = 0.5) -> ClassifierHead:
    labels = lexicon.all_readings()
    if not labels:
        raise BaselineError("lexicon has no polyphone readings to classify")
    return ClassifierHead(hidden=hidden, dropout=dropout, labels=labels)


def init_head_params(params: Parameters, head: ClassifierHead, d_model: int,
                     seed: int = 0) -> None:
    """Add freshly initialized ``clf.*`` tensors to ``params`` in place."""
    rng = np.random.default_rng(seed)
    dtype = params.dtype
    params[HEAD_PREFIX + "fc1.w"] = (rng.standard_normal((d_model, head.hidden)) * 0.02).astype(dtype)
    params[HEAD_PREFIX + "fc1.b"] = np.zeros(head.hidden, dtype=dtype)
    params[HEAD_PREFIX + "fc2.w"] = (rng.standard_normal((head.hidden, len(head.labels))) * 0.02).astype(dtype)
    params[HEAD_PREFIX + "fc2.b"] = np.zeros(len(head.labels), dtype=dtype)


def _head_forward(params: Parameters, head: ClassifierHead, rows: np.ndarray,
                  *, train: bool = False, rng=None):
    """Logits over the global label set for encoder rows at polyphone positions."""
    u = rows @ params[HEAD_PREFIX + "fc1.w"] + params[HEAD_PREFIX + "fc1.b"]
    a, g = gelu_forward(u)
    if train and head.dropout > 0:
        mask = (rng.random(a.shape) >= head.dropout).astype(a.dtype)
        mask /= a.dtype.type(1.0 - head.dropout)
        a_d = a * mask
    else:
        mask = None
        a_d = a
    logits = a_d @ params[HEAD_PREFIX + "fc2.w"] + params[HEAD_PREFIX + "fc2.b"]
    return logits, (rows, u, g, mask, a_d)


def _head_backward(params: Parameters, head: ClassifierHead, cache, dlogits):
    rows, u, g, mask, a_d = cache
    grads = {
        HEAD_PREFIX + "fc2.w": a_d.T @ dlogits,
        HEAD_PREFIX + "fc2.b": dlogits.sum(axis=0),
    }
    da = dlogits @ params[HEAD_PREFIX + "fc2.w"].T
    if mask is not None:
        da = da * mask
    du = da * gelu_grad(u, g)
    grads[HEAD_PREFIX + "fc1.w"] = rows.T @ du
    grads[HEAD_PREFIX + "fc1.b"] = du.sum(axis=0)
    drows = du @ params[HEAD_PREFIX + "fc1.w"].T
    return drows, grads


def classify_many(params: Parameters, config: ModelConfig, head: ClassifierHead,
                  vocab: VocabMap, lexicon: Lexicon, texts: Sequence[str],
                  batch_size: int = 128) -> list[PredictionReport]:
    """Candidate-restricted baseline predictions, same report schema as the
    extended-vocabulary model."""
    label_index = head.label_index
    reports: dict[int, PredictionReport] = {}
    pending: list[tuple[int, str, list[int]]] = []
    for i, text in enumerate(texts):
        if len(text) + 2 > config.max_len:
            raise BaselineError(f"sentence of {len(text)} characters exceeds the"
                                f" {config.max_len - 2} supported by this model")
        occ = [j for j, ch in enumerate(text) if ch in lexicon.entries]
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
        hidden, _ = encode_hidden(params, config, ids, pad_id=vocab.pad_id)
        flat_positions = [(b, j + 1) for b, (_, _, occ) in enumerate(chunk) for j in occ]
        rows = hidden[[p[0] for p in flat_positions], [p[1] for p in flat_positions]]
        logits, _ = _head_forward(params, head, rows)
        probs = softmax(logits.astype(np.float64))
        cursor = 0
        for b, (i, text, occ) in enumerate(chunk):
            preds = []
            for j in occ:
                row = probs[cursor]
                cursor += 1
                readings = lexicon.entries[text[j]].readings
                raw = np.array([row[label_index[p]] for p in readings])
                renorm = raw / raw.sum()
                pick = int(np.argmax(renorm))
                preds.append(Prediction(
                    char_index=j, scpc=text[j], chosen=readings[pick],
                    candidate_probs=tuple((p, float(renorm[k])) for k, p in enumerate(readings)),
                    raw_probs=tuple((p, float(raw[k])) for k, p in enumerate(readings)),
                ))
            reports[i] = PredictionReport(text=text, predictions=tuple(preds))
    return [reports[i] for i in range(len(texts))]


def classify(params: Parameters, config: ModelConfig, head: ClassifierHead,
             vocab: VocabMap, lexicon: Lexicon, text: str) -> PredictionReport:
    return classify_many(params, config, head, vocab, lexicon, [text])[0]


def train_classifier(sentences: Sequence[LabeledSentence], params: Parameters,
                     head: ClassifierHead, vocab: VocabMap, lexicon: Lexicon,
                     config: ModelConfig, tc: TrainConfig,
                     freeze_encoder: bool = False,
                     heldout: Sequence[LabeledSentence] | None = None) -> TrainResult:
    """Cross-entropy on gold readings at polyphone positions.

    When ``freeze_encoder`` is set, no encoder gradient is even computed: the
    update touches ``clf.*`` tensors only.
    """
    label_index = head.label_index
    all_sentences = list(sentences)
    data = [s for s in all_sentences if s.labels]
    skipped = len(all_sentences) - len(data)
    if skipped:
        log.warning("skipping %d sentences with no polyphone labels", skipped)
    if not data:
        raise TrainingError("corpus has no labeled polyphone positions")

    encoded = [vocab.encode_chars(s.text) for s in data]
    lengths = [len(e) for e in encoded]
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(tc.seed)
    metrics: list[dict] = []

    def evaluate(step):
        if heldout is not None:
            from .evaluate import score
            reports = classify_many(params, config, head, vocab, lexicon,
                                    [s.text for s in heldout])
            acc = score(reports, list(heldout)).accuracy
            metrics.append({"step": step, "split": "heldout", "loss": None, "accuracy": acc})

    step = 0
    while step < tc.steps:
        for idx in _bucketed_batches(lengths, tc.batch_size, rng):
            if step >= tc.steps:
                break
            batch = [data[i] for i in idx]
            ids = pad_batch([encoded[i] for i in idx], vocab.pad_id)
            positions = [(b, i + 1) for b, s in enumerate(batch) for i, _ in s.labels]
            gold = [label_index[p] for s in batch for _, p in s.labels]
            hidden, trace = encode_hidden(params, config, ids, train=True, rng=rng,
                                          pad_id=vocab.pad_id, need_trace=True)
            rows = hidden[[p[0] for p in positions], [p[1] for p in positions]]
            logits, cache = _head_forward(params, head, rows, train=True, rng=rng)
            loss, dlogits = softmax_xent(logits, np.asarray(gold))
            drows, grads = _head_backward(params, head, cache, dlogits)
            if not freeze_encoder:
                dhidden = np.zeros_like(hidden)
                dhidden[[p[0] for p in positions], [p[1] for p in positions]] = drows
                grads.update(encoder_backward(params, config, trace, dhidden))
            adam_step(params, grads, state, tc)
            step += 1
            metrics.append({"step": step, "split": "train", "loss": loss, "accuracy": None})
            if tc.eval_every and step % tc.eval_every == 0 and step < tc.steps:
                evaluate(step)
    evaluate(step)
    return TrainResult(params=params, metrics=metrics)
