"""Losses, Adam, base pre-training, and the polyphone training loop.

The polyphone objective is the masked-LM variant where every target position
is "masked" by leaving the original polyphone character in place: inputs are
plain encoded text, and cross-entropy is taken only at the polyphone
positions against their per-reading token ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import LabeledSentence, TrainingExample, make_example
from .model import (ModelConfig, Parameters, backward, forward, init_random,
                    mlm_head_backward, encoder_backward)
from .vocab import VocabMap

log = logging.getLogger(__name__)

MASK_FRACTION = 0.15


class TrainingError(ValueError):
    """Unusable training inputs or a diverged optimizer step."""


@dataclass
class TrainConfig:
    lr: float
    batch_size: int = 64
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    seed: int = 0
    eval_every: int = 200
    ckpt_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainingError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise TrainingError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Parameters) -> "OptimizerState":
        return cls(m={k: np.zeros_like(t) for k, t in params.items()},
                   v={k: np.zeros_like(t) for k, t in params.items()})


def softmax_xent(rows: np.ndarray, target_ids: np.ndarray):
    """Mean cross-entropy over rows of logits; returns (loss, drows)."""
    n = rows.shape[0]
    m = rows.max(axis=1, keepdims=True)
    shifted = rows - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    loss = float((lse[:, 0] - rows[np.arange(n), target_ids]).mean())
    drows = np.exp(rows - lse)
    drows[np.arange(n), target_ids] -= 1
    drows /= rows.dtype.type(n)
    return loss, drows


def mlm_loss(logits: np.ndarray, target_positions, target_ids):
    """Cross-entropy at the target positions only.

    ``target_positions`` is a sequence of (batch, position) pairs parallel to
    ``target_ids``.  The returned logit gradient is exactly zero everywhere
    else.  An empty target set is an error: callers filter such batches.
    """
    positions = np.asarray(target_positions, dtype=np.int64).reshape(-1, 2)
    ids = np.asarray(target_ids, dtype=np.int64)
    if positions.shape[0] == 0:
        raise TrainingError("empty target set")
    if positions.shape[0] != ids.shape[0]:
        raise TrainingError("target positions and ids differ in length")
    B, T, V = logits.shape
    if positions[:, 0].max() >= B or positions[:, 1].max() >= T:
        raise TrainingError("target position out of range")
    if ids.max() >= V or ids.min() < 0:
        raise TrainingError("target id out of range")

    rows = logits[positions[:, 0], positions[:, 1]]
    loss, drows = softmax_xent(rows, ids)
    dlogits = np.zeros_like(logits)
    dlogits[positions[:, 0], positions[:, 1]] = drows
    return loss, dlogits


def adam_step(params: Parameters, grads: dict[str, np.ndarray],
              state: OptimizerState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place; only tensors named in
    ``grads`` move.  Non-finite gradients abort with diagnostics."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise TrainingError(f"non-finite gradient in {name!r} ({bad}/{g.size} entries)"
                                f" at step {state.step + 1}")

    if config.clip_norm is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > config.clip_norm:
            scale = config.clip_norm / total
            grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}

    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        params[name] -= config.lr * update


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int = 0) -> np.ndarray:
    width = max(len(s) for s in sequences)
    out = np.full((len(sequences), width), pad_id, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, :len(s)] = s
    return out


def _bucketed_batches(lengths: Sequence[int], batch_size: int, rng) -> list[np.ndarray]:
    """Indices grouped by similar length, batch order shuffled."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [chunks[i] for i in rng.permutation(len(chunks))]


def _assemble(examples: Sequence[TrainingExample], idx: np.ndarray, pad_id: int):
    batch = [examples[i] for i in idx]
    ids = pad_batch([ex.input_ids for ex in batch], pad_id)
    positions = [(b, p) for b, ex in enumerate(batch) for p in ex.target_positions]
    targets = [t for ex in batch for t in ex.target_ids]
    return ids, positions, targets


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: Parameters
    metrics: list[dict] = field(default_factory=list)


def pretrain_base(sentences: Iterable[LabeledSentence], vocab: VocabMap,
                  config: ModelConfig, tc: TrainConfig) -> TrainResult:
    """Standard masked-LM pre-training over the base vocabulary.

    15% of the character positions per sentence (at least one) are replaced
    by ``[MASK]`` and predicted; labels on the sentences are ignored.
    """
    encoded = [vocab.encode(s.text) for s in sentences]
    encoded = [ids for ids in encoded if len(ids) > 2]
    if not encoded:
        raise TrainingError("pre-training corpus is empty")
    too_long = max(len(ids) for ids in encoded)
    if too_long > config.max_len:
        raise TrainingError(f"sentence of {too_long} tokens exceeds max_len {config.max_len}")

    params = init_random(config)
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(tc.seed)
    metrics: list[dict] = []
    lengths = [len(ids) for ids in encoded]

    step = 0
    while step < tc.steps:
        for idx in _bucketed_batches(lengths, tc.batch_size, rng):
            if step >= tc.steps:
                break
            ids = pad_batch([encoded[i] for i in idx], vocab.pad_id)
            inputs = ids.copy()
            positions, targets = [], []
            for b in range(ids.shape[0]):
                n_chars = lengths[idx[b]] - 2
                n_mask = max(1, round(MASK_FRACTION * n_chars))
                picks = rng.choice(n_chars, size=n_mask, replace=False) + 1
                for p in picks:
                    positions.append((b, int(p)))
                    targets.append(int(ids[b, p]))
                    inputs[b, p] = vocab.mask_id
            logits, trace = forward(params, config, inputs, train=True, rng=rng,
                                    pad_id=vocab.pad_id, need_trace=True)
            loss, dlogits = mlm_loss(logits, positions, targets)
            grads = backward(params, config, trace, dlogits)
            adam_step(params, grads, state, tc)
            step += 1
            metrics.append({"step": step, "split": "train", "loss": loss, "accuracy": None})
    return TrainResult(params=params, metrics=metrics)


def masked_accuracy(params: Parameters, config: ModelConfig, vocab: VocabMap,
                    sentences: Iterable[LabeledSentence], seed: int = 0,
                    batch_size: int = 128) -> float:
    """Held-out masked-character accuracy under the pre-training scheme."""
    rng = np.random.default_rng(seed)
    encoded = [vocab.encode(s.text) for s in sentences if len(s.text) > 0]
    correct = scored = 0
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start:start + batch_size]
        ids = pad_batch(chunk, vocab.pad_id)
        inputs = ids.copy()
        positions, targets = [], []
        for b, seq in enumerate(chunk):
            n_chars = len(seq) - 2
            n_mask = max(1, round(MASK_FRACTION * n_chars))
            picks = rng.choice(n_chars, size=n_mask, replace=False) + 1
            for p in picks:
                positions.append((b, int(p)))
                targets.append(int(ids[b, p]))
                inputs[b, p] = vocab.mask_id
        logits, _ = forward(params, config, inputs, pad_id=vocab.pad_id)
        for (b, p), t in zip(positions, targets):
            scored += 1
            correct += int(np.argmax(logits[b, p]) == t)
    return correct / scored


def _heldout_accuracy(params, config, vocab, heldout) -> float:
    from .inference import predict_many
    from .evaluate import score
    from .vocab import lexicon_from_vocab

    lexicon = lexicon_from_vocab(vocab)
    reports = predict_many(params, config, vocab, lexicon, [s.text for s in heldout])
    return score(reports, list(heldout)).accuracy


def first_batch_loss(sentences: Sequence[LabeledSentence], params: Parameters,
                     vocab: VocabMap, config: ModelConfig, tc: TrainConfig) -> float:
    """Eval-mode loss on the first batch the training loop would draw."""
    examples = [make_example(vocab, s) for s in sentences if s.labels]
    rng = np.random.default_rng(tc.seed)
    lengths = [len(ex.input_ids) for ex in examples]
    idx = _bucketed_batches(lengths, tc.batch_size, rng)[0]
    ids, positions, targets = _assemble(examples, idx, vocab.pad_id)
    logits, _ = forward(params, config, ids, pad_id=vocab.pad_id)
    loss, _ = mlm_loss(logits, positions, targets)
    return loss


def train_polyphone(sentences: Iterable[LabeledSentence], params: Parameters,
                    vocab: VocabMap, config: ModelConfig, tc: TrainConfig,
                    heldout: Sequence[LabeledSentence] | None = None,
                    ckpt_path=None) -> TrainResult:
    """Train the extended model on the 100%-masked polyphone objective.

    Zero-label sentences are skipped with a warning.  Loss is computed only at
    polyphone positions; metrics gain a held-out accuracy record every
    ``eval_every`` steps when ``heldout`` is given.
    """
    if params["tok_emb"].shape[0] != vocab.size:
        raise TrainingError(f"parameters sized for vocab {params['tok_emb'].shape[0]},"
                            f" expected {vocab.size}")
    all_sentences = list(sentences)
    examples = [make_example(vocab, s) for s in all_sentences if s.labels]
    skipped = len(all_sentences) - len(examples)
    if skipped:
        log.warning("skipping %d sentences with no polyphone labels", skipped)
    if not examples:
        raise TrainingError("corpus has no labeled polyphone positions")

    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(tc.seed)
    metrics: list[dict] = []
    lengths = [len(ex.input_ids) for ex in examples]

    def evaluate(step):
        if heldout is not None:
            acc = _heldout_accuracy(params, config, vocab, heldout)
            metrics.append({"step": step, "split": "heldout", "loss": None, "accuracy": acc})

    step = 0
    while step < tc.steps:
        for idx in _bucketed_batches(lengths, tc.batch_size, rng):
            if step >= tc.steps:
                break
            ids, positions, targets = _assemble(examples, idx, vocab.pad_id)
            logits, trace = forward(params, config, ids, train=True, rng=rng,
                                    pad_id=vocab.pad_id, need_trace=True)
            loss, dlogits = mlm_loss(logits, positions, targets)
            grads = backward(params, config, trace, dlogits)
            adam_step(params, grads, state, tc)
            step += 1
            metrics.append({"step": step, "split": "train", "loss": loss, "accuracy": None})
            if tc.eval_every and step % tc.eval_every == 0 and step < tc.steps:
                evaluate(step)
            if ckpt_path is not None and tc.ckpt_every and step % tc.ckpt_every == 0:
                from . import checkpoint
                checkpoint.save(f"{ckpt_path}.step{step}", params, config, vocab)
    evaluate(step)
    return TrainResult(params=params, metrics=metrics)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

TINY_CONFIG = ModelConfig(vocab_size=40, d_model=16, n_layers=1, n_heads=2,
                          d_ff=32, max_len=16, dropout=0.0, seed=7)


@dataclass
class GradCheckReport:
    dtype: str
    max_rel_err: float
    per_tensor: dict[str, float]


def _gradcheck_batch(config: ModelConfig, rng):
    """Two sentences of different lengths (so padding is exercised) with a few
    target positions each."""
    lens = [9, 12]
    B, T = len(lens), max(lens)
    ids = np.zeros((B, T), dtype=np.int64)
    for b, n in enumerate(lens):
        ids[b, 0] = 2                                    # [CLS]
        ids[b, 1:n - 1] = rng.integers(5, config.vocab_size, size=n - 2)
        ids[b, n - 1] = 3                                # [SEP]
    positions = [(0, 2), (0, 5), (1, 3), (1, 8)]
    targets = rng.integers(5, config.vocab_size, size=len(positions)).tolist()
    return ids, positions, targets


def gradient_check(config: ModelConfig = TINY_CONFIG, dtypes=(np.float64, np.float32),
                   fd_step: float = 1e-5, seed: int = 11) -> dict[str, GradCheckReport]:
    """Compare reverse-mode gradients against central finite differences.

    The difference oracle always runs in float64; the analytic gradients run
    in each requested dtype, so the float32 report measures the accuracy of
    the float32 backward pass itself.  Relative error uses a unit floor in
    the denominator (``|a-b| / max(1, |a|, |b|)``): the loss is O(ln V), so
    near-zero entries are judged on that scale rather than their own.
    """
    rng = np.random.default_rng(seed)
    ids, positions, targets = _gradcheck_batch(config, rng)
    params64 = init_random(config).astype(np.float64)

    def loss_at(p: Parameters) -> float:
        logits, _ = forward(p, config, ids)
        loss, _ = mlm_loss(logits, positions, targets)
        return loss

    fd_grads: dict[str, np.ndarray] = {}
    for name, tensor in params64.items():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_step
            hi = loss_at(params64)
            flat[j] = orig - fd_step
            lo = loss_at(params64)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * fd_step)
        fd_grads[name] = g

    reports: dict[str, GradCheckReport] = {}
    for dtype in dtypes:
        p = params64.astype(dtype)
        logits, trace = forward(p, config, ids, need_trace=True)
        _, dlogits = mlm_loss(logits, positions, targets)
        grads = backward(p, config, trace, dlogits)
        per_tensor = {}
        for name, fd in fd_grads.items():
            a = grads[name].astype(np.float64)
            denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(fd)))
            per_tensor[name] = float((np.abs(a - fd) / denom).max())
        key = np.dtype(dtype).name
        reports[key] = GradCheckReport(dtype=key, max_rel_err=max(per_tensor.values()),
                                       per_tensor=per_tensor)
    return reports


def tied_gradient_parts(params: Parameters, config: ModelConfig, ids,
                        target_positions, target_ids, pad_id: int = 0):
    """The two contributions to the tied embedding gradient, separately.

    Returns (lookup_part, output_part); their sum equals ``backward``'s
    ``tok_emb`` gradient.  The lookup part is zero for any token id absent
    from the batch input.
    """
    logits, trace = forward(params, config, ids, pad_id=pad_id, need_trace=True)
    _, dlogits = mlm_loss(logits, target_positions, target_ids)
    dhidden, head_grads = mlm_head_backward(params, trace.head, dlogits)
    enc_grads = encoder_backward(params, config, trace.encoder, dhidden)
    return enc_grads["tok_emb"], head_grads["tok_emb"]
