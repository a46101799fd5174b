"""Accuracy scoring, dataset statistics, and initialization probes.

Every polyphone occurrence is scored independently (a sentence where one
character appears three times contributes three items).  Split accuracies are
combined by an unweighted mean, and the polyphone model and the baseline are
scored by this same code path so their reports line up column for column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import LabeledSentence, read_corpus
from .inference import PredictionReport
from .model import ModelConfig, Parameters, forward, softmax
from .vocab import Lexicon, VocabMap


class EvalError(ValueError):
    """Predictions and gold data do not line up."""


@dataclass(frozen=True)
class SplitScore:
    scored: int
    correct: int

    @property
    def accuracy(self) -> float:
        if self.scored == 0:
            return 0.0
        return self.correct / self.scored


@dataclass(frozen=True)
class EvalResult:
    splits: dict[str, SplitScore]
    per_scpc: dict[str, SplitScore] | None = None

    @property
    def average(self) -> float:
        """Unweighted mean of split accuracies."""
        accs = [s.accuracy for s in self.splits.values()]
        return sum(accs) / len(accs)


def score(predictions: Sequence[PredictionReport], gold: Sequence[LabeledSentence],
          per_scpc: dict | None = None) -> SplitScore:
    """Score one split; reports must align 1:1 with the gold sentences."""
    if len(predictions) != len(gold):
        raise EvalError(f"{len(predictions)} predictions for {len(gold)} gold sentences")
    scored = correct = 0
    for i, (report, sentence) in enumerate(zip(predictions, gold)):
        if report.text != sentence.text:
            raise EvalError(f"sentence {i}: prediction text {report.text!r}"
                            f" does not match gold {sentence.text!r}")
        gold_by_index = dict(sentence.labels)
        pred_indices = [p.char_index for p in report.predictions]
        if pred_indices != sorted(gold_by_index):
            raise EvalError(f"sentence {i} ({sentence.text!r}): predicted occurrence"
                            f" indices {pred_indices} != labeled {sorted(gold_by_index)}")
        for pred in report.predictions:
            scored += 1
            hit = pred.chosen == gold_by_index[pred.char_index]
            correct += int(hit)
            if per_scpc is not None:
                s, c = per_scpc.get(pred.scpc, (0, 0))
                per_scpc[pred.scpc] = (s + 1, c + int(hit))
    return SplitScore(scored=scored, correct=correct)


def evaluate_splits(named: Mapping[str, tuple[Sequence[PredictionReport], Sequence[LabeledSentence]]]
                    ) -> EvalResult:
    per_scpc_counts: dict[str, tuple[int, int]] = {}
    splits = {name: score(preds, gold, per_scpc_counts) for name, (preds, gold) in named.items()}
    per_scpc = {c: SplitScore(scored=s, correct=k) for c, (s, k) in sorted(per_scpc_counts.items())}
    return EvalResult(splits=splits, per_scpc=per_scpc)


def render_result(result: EvalResult) -> str:
    lines = [f"{'split':<12} {'scored':>8} {'correct':>8} {'accuracy':>9}"]
    for name, s in result.splits.items():
        lines.append(f"{name:<12} {s.scored:>8} {s.correct:>8} {s.accuracy:>9.4f}")
    lines.append(f"{'average':<12} {'':>8} {'':>8} {result.average:>9.4f}")
    if result.per_scpc:
        lines.append("")
        lines.append(f"{'polyphone':<12} {'scored':>8} {'correct':>8} {'accuracy':>9}")
        for ch, s in result.per_scpc.items():
            lines.append(f"{ch:<12} {s.scored:>8} {s.correct:>8} {s.accuracy:>9.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Dataset statistics
# ---------------------------------------------------------------------------

def dataset_stats(paths: Mapping[str, object]) -> dict:
    """Exact sentence/occurrence counts per split, with per-polyphone and
    per-reading breakdowns."""
    stats: dict = {}
    for split, path in paths.items():
        sentences = occurrences = 0
        per_scpc: dict[str, int] = {}
        per_reading: dict[str, int] = {}
        for s in read_corpus(path):
            sentences += 1
            for i, pinyin in s.labels:
                occurrences += 1
                ch = s.text[i]
                per_scpc[ch] = per_scpc.get(ch, 0) + 1
                key = f"{ch}:{pinyin}"
                per_reading[key] = per_reading.get(key, 0) + 1
        stats[split] = {
            "sentences": sentences,
            "occurrences": occurrences,
            "per_scpc": dict(sorted(per_scpc.items())),
            "per_reading": dict(sorted(per_reading.items())),
        }
    return stats


def render_stats(stats: Mapping[str, dict]) -> str:
    lines = [f"{'split':<12} {'sentences':>10} {'occurrences':>12}"]
    for split, s in stats.items():
        lines.append(f"{split:<12} {s['sentences']:>10} {s['occurrences']:>12}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Initialization probe
# ---------------------------------------------------------------------------

def init_probe(scpc_params: Parameters, unk_params: Parameters, config: ModelConfig,
               vocab: VocabMap, lexicon: Lexicon,
               sentences: Sequence[str]) -> list[dict]:
    """Raw candidate probabilities under both init modes, per occurrence.

    Both parameter sets must come from the same base model.  Probabilities
    are pre-renormalization (softmax over the whole vocabulary), one record
    per polyphone occurrence.
    """
    records: list[dict] = []
    for si, text in enumerate(sentences):
        occ = [i for i, ch in enumerate(text) if ch in lexicon.entries]
        if not occ:
            continue
        ids = np.asarray([vocab.encode_chars(text)], dtype=np.int64)
        rows = {}
        for mode, params in (("scpc", scpc_params), ("unk", unk_params)):
            logits, _ = forward(params, config, ids, pad_id=vocab.pad_id)
            rows[mode] = softmax(logits.astype(np.float64))[0]
        for i in occ:
            cands = vocab.candidates(text[i])
            records.append({
                "sentence": si,
                "char_index": i,
                "scpc": text[i],
                "candidates": [{
                    "pinyin": str(p),
                    "p_scpc_init": float(rows["scpc"][i + 1, tid]),
                    "p_unk_init": float(rows["unk"][i + 1, tid]),
                } for p, tid in cands],
            })
    return records


def render_probe(records: Sequence[dict]) -> str:
    lines = [f"{'sent':>4} {'idx':>4} {'scpc':<5} {'pinyin':<8} {'p(scpc init)':>13} {'p(unk init)':>13}"]
    for r in records:
        for c in r["candidates"]:
            lines.append(f"{r['sentence']:>4} {r['char_index']:>4} {r['scpc']:<5}"
                         f" {c['pinyin']:<8} {c['p_scpc_init']:>13.6f} {c['p_unk_init']:>13.6f}")
    return "\n".join(lines)
