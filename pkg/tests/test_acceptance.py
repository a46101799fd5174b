"""Acceptance suite: every criterion at its stated tolerance, one per test.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
pass/fail lines.  The synthetic-benchmark artifacts are session fixtures, so
this file plus the training-dependent tests share one build of the corpora
and models.
"""

import math

import numpy as np

from polyg2p import baseline as bl
from polyg2p import benchmark as bench_mod
from polyg2p import training as T
from polyg2p.corpus import (from_ncmc, gen_synthetic, read_corpus, to_ncmc,
                            write_corpus)
from polyg2p.evaluate import score
from polyg2p.inference import predict_many
from polyg2p.model import (ModelConfig, extend_and_init, extension_delta, forward,
                           init_random, softmax)
from polyg2p.training import TrainConfig, gradient_check, mlm_loss
from polyg2p.vocab import (Lexicon, Pinyin, PolyphoneEntry, base_tokens_from_chars,
                           base_vocab, build_vocab)

pin = Pinyin.parse


def _verdict(n: int, what: str, ok: bool, detail: str = "") -> None:
    mark = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {n:2d}: {what}: {mark}{suffix}")
    assert ok, f"criterion {n} failed: {what} {suffix}"


def test_criterion_01_vocabulary_and_parameter_accounting():
    n_entries, n_triples = 354, 741 - 2 * 354
    entries = {}
    syll = ["ba", "bo", "da", "de", "ga", "gu", "ha", "he", "ka", "ke"]
    for i in range(n_entries):
        ch = chr(0x4E00 + i)
        k = 3 if i < n_triples else 2
        entries[ch] = PolyphoneEntry(ch, tuple(
            Pinyin(syll[(i + j) % 10], 1 + (i + j) % 5) for j in range(k)))
    lexicon = Lexicon(entries=entries)
    filler = [chr(0xE000 + i) for i in range(21_128 - 5 - n_entries)]
    vocab = build_vocab(base_tokens_from_chars(list(entries) + filler), lexicon)
    ok = (vocab.base_size == 21_128 and vocab.size == 21_869
          and extension_delta(741, 768) == 569_829
          and 102_860_141 - 102_290_312 == 569_829)
    _verdict(1, "extended vocab 21,869 and extension delta 569,829 (exact)", ok,
             f"size={vocab.size}, delta={extension_delta(741, 768)}")


def test_criterion_02_initialization_equality():
    lex = Lexicon(entries={
        "泊": PolyphoneEntry("泊", (pin("po1"), pin("bo2"))),
        "扎": PolyphoneEntry("扎", (pin("zha2"), pin("zha1"), pin("za1"))),
    })
    tokens = base_tokens_from_chars("泊扎湖小在船里手破")
    base, extended = base_vocab(tokens), build_vocab(tokens, lex)
    base_config = ModelConfig(vocab_size=base.size, d_model=16, n_layers=1, n_heads=2,
                              d_ff=32, max_len=16, dropout=0.0, seed=71)
    config = ModelConfig(**{**base_config.to_dict(), "vocab_size": extended.size})
    params = init_random(base_config)
    inputs = [extended.encode_chars("小船在湖泊里"), extended.encode_chars("手扎破")]
    ok = True
    details = []
    for mode in ("scpc", "unk"):
        grown = extend_and_init(params, base, extended, mode)
        for seq in inputs:
            width = max(len(s) for s in inputs)
            ids = np.full((1, width), extended.pad_id, dtype=np.int64)
            ids[0, :len(seq)] = seq
            logits, _ = forward(grown, config, ids, pad_id=extended.pad_id)
            probs = softmax(logits)
            for scpc in ("泊", "扎"):
                cand_ids = [tid for _, tid in extended.candidates(scpc)]
                sib_logits = logits[..., cand_ids]
                exact = all(np.array_equal(sib_logits[..., 0], sib_logits[..., j])
                            for j in range(1, len(cand_ids)))
                sib_probs = probs[..., cand_ids]
                close = float(np.max(np.abs(sib_probs - sib_probs[..., :1])))
                ok &= exact and close <= 1e-6
                details.append(close)
    _verdict(2, "sibling tokens equiprobable after both init modes"
                " (exact logits, probs within 1e-6)", ok,
             f"max prob spread {max(details):.2e}")


def test_criterion_03_gradient_exactness():
    reports = gradient_check()
    e64 = reports["float64"].max_rel_err
    e32 = reports["float32"].max_rel_err
    ok = e64 <= 1e-6 and e32 <= 1e-3
    _verdict(3, "finite-difference agreement on every tensor"
                " (1e-6 in f64, 1e-3 in f32)", ok,
             f"f64 {e64:.2e}, f32 {e32:.2e}")


def test_criterion_04_loss_masking():
    rng = np.random.default_rng(17)
    logits = rng.standard_normal((3, 8, 20))
    positions = [(0, 2), (1, 5), (2, 7)]
    targets = [4, 9, 13]
    loss, dlogits = mlm_loss(logits, positions, targets)
    off_target = np.ones(logits.shape, dtype=bool)
    for b, t in positions:
        off_target[b, t] = False
    noisy = logits.copy()
    noisy[off_target] += rng.standard_normal(int(off_target.sum())) * 100
    loss_noisy, _ = mlm_loss(noisy, positions, targets)
    ok = loss_noisy == loss and (dlogits[off_target] == 0.0).all()
    _verdict(4, "off-target logits cannot move the loss; their gradient is zero"
                " (exact)", ok, f"|dloss|={abs(loss_noisy - loss):.1e}")


def test_criterion_05_benchmark_accuracies(bench, trained_model, trained_baseline):
    config, result = trained_model
    heldout = [m["accuracy"] for m in result.metrics if m["split"] == "heldout"]
    poly_acc = heldout[-1]

    _, _, bl_result = trained_baseline
    bl_heldout = [m["accuracy"] for m in bl_result.metrics if m["split"] == "heldout"]
    bl_acc = bl_heldout[-1]

    rng = np.random.default_rng(4242)
    probs, hits = [], 0
    for s in bench.splits["test1"]:
        for i, label in s.labels:
            readings = bench.lexicon.entries[s.text[i]].readings
            probs.append(1.0 / len(readings))
            hits += int(readings[rng.integers(len(readings))] == label)
    n = len(probs)
    expected = float(np.mean(probs))
    sigma = math.sqrt(sum(p * (1 - p) for p in probs)) / n
    rand_acc = hits / n
    rand_ok = abs(rand_acc - expected) <= 3 * sigma

    ok = poly_acc >= 0.95 and bl_acc >= 0.90 and rand_ok
    _verdict(5, "benchmark: polyphone >= 95%, trainable FC baseline >= 90%,"
                " random oracle within 3 sigma", ok,
             f"polyphone {poly_acc:.4f}, baseline {bl_acc:.4f},"
             f" random {rand_acc:.4f} vs {expected:.4f}+-{3 * sigma:.4f}")


def test_criterion_06_initial_loss_ordering(bench, extended_models):
    config, scpc, unk = extended_models
    tc = bench_mod.POLYPHONE_TC
    loss_scpc = T.first_batch_loss(bench.splits["train"], scpc, bench.vocab, config, tc)
    loss_unk = T.first_batch_loss(bench.splits["train"], unk, bench.vocab, config, tc)
    ok = loss_scpc <= loss_unk
    _verdict(6, "first-batch loss under source-character init <= under [UNK] init",
             ok, f"{loss_scpc:.4f} <= {loss_unk:.4f}")


def test_criterion_07_freeze_exactness(bench, base_model):
    config, base_result = base_model
    params = base_result.params.copy()
    head = bl.make_head(bench.lexicon, hidden=bench_mod.BASELINE_HEAD_HIDDEN,
                        dropout=bench_mod.BASELINE_HEAD_DROPOUT)
    bl.init_head_params(params, head, config.d_model, seed=9)
    tc = TrainConfig(lr=1e-3, batch_size=64, steps=40, seed=11, eval_every=0)
    bl.train_classifier(bench.splits["train"][:2000], params, head, bench.base,
                        bench.lexicon, config, tc, freeze_encoder=True)
    unchanged = all(np.array_equal(params[name], base_result.params[name])
                    for name in base_result.params)
    head_moved = not np.array_equal(params["clf.fc1.w"],
                                    np.zeros_like(params["clf.fc1.w"]))
    ok = unchanged and head_moved
    _verdict(7, "frozen training leaves every encoder tensor bitwise unchanged", ok)


def test_criterion_08_corpus_round_trips(bench, tmp_path):
    checked = 0
    for split, sentences in bench.splits.items():
        for s in sentences:
            assert from_ncmc(bench.vocab, to_ncmc(bench.vocab, s)) == s
            checked += 1
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    all_sentences = [s for split in bench.splits.values() for s in split]
    write_corpus(p1, all_sentences)
    write_corpus(p2, read_corpus(p1))
    byte_equal = p1.read_bytes() == p2.read_bytes()
    ok = byte_equal and checked == sum(len(v) for v in bench.splits.values())
    _verdict(8, "ncmc transforms invert on 100% of the corpus; file round-trip"
                " is byte-identical", ok, f"{checked} sentences")


def test_criterion_09_candidate_containment_at_scale(bench, trained_model):
    config, result = trained_model
    texts = [s.text for s in bench.splits["test1"]]
    # test1 averages ~2.46 occurrences/sentence; 42k extra sentences clear 100k
    extra = list(gen_synthetic(bench.spec, 42_000, stream=9, language=bench.language))
    texts += [s.text for s in extra]
    reports = predict_many(result.params, config, bench.vocab, bench.lexicon, texts,
                           batch_size=256)
    n_pred = 0
    contained = True
    for report in reports:
        for p in report.predictions:
            n_pred += 1
            contained &= p.chosen in set(bench.lexicon.entries[p.scpc].readings)

    reports4 = predict_many(result.params, config, bench.vocab, bench.lexicon,
                            [s.text for s in bench.splits["test4"]])
    split4 = score(reports4, bench.splits["test4"])
    per_occurrence = split4.scored == sum(len(s.labels) for s in bench.splits["test4"])

    ok = contained and n_pred >= 100_000 and per_occurrence
    _verdict(9, "every chosen reading lies in the candidate set; multi-occurrence"
                " sentences scored per occurrence", ok,
             f"{n_pred} predictions, test4 {split4.scored} occurrences"
             f" at {split4.accuracy:.3f}")


def test_criterion_10_pipeline_reproducibility(tmp_path):
    from test_cli import run_small_pipeline
    digests_a = run_small_pipeline(tmp_path / "run_a")
    digests_b = run_small_pipeline(tmp_path / "run_b")
    ok = digests_a == digests_b
    diff = [k for k in digests_a if digests_a[k] != digests_b.get(k)]
    _verdict(10, "documented pipeline twice with fixed seeds: identical corpora,"
                 " metrics, and checkpoints", ok,
             "all byte-identical" if ok else f"differ: {diff}")
