"""Command-line entry point: one binary, one subcommand per pipeline stage.

The documented benchmark pipeline is
``synth -> pretrain -> extend -> train -> eval`` with fixed ``--seed``
values; identical invocations produce identical corpora, metrics files and
checkpoints.  Every run logs its fully resolved configuration.  Flags
override values from ``--config <json file>``, which overrides built-in
defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import baseline, benchmark, checkpoint, corpus, evaluate, inference, model, training, vocab

log = logging.getLogger("polyg2p")

_ERRORS = (vocab.LexiconError, vocab.VocabError, corpus.CorpusError, model.ModelError,
           training.TrainingError, checkpoint.CheckpointError, evaluate.EvalError,
           baseline.BaselineError, inference.InferenceError, OSError, ValueError)


def _load_file_config(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _get(args, cfg: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _log_resolved(command: str, resolved: dict) -> None:
    log.info("resolved config: %s", json.dumps({"command": command, **resolved},
                                               ensure_ascii=False, sort_keys=True, default=str))


def _model_config(args, cfg, vocab_size: int) -> model.ModelConfig:
    return model.ModelConfig(
        vocab_size=vocab_size,
        d_model=_get(args, cfg, "d_model", 128),
        n_layers=_get(args, cfg, "layers", 2),
        n_heads=_get(args, cfg, "heads", 4),
        d_ff=_get(args, cfg, "d_ff", 256),
        max_len=_get(args, cfg, "max_len", 40),
        dropout=_get(args, cfg, "dropout", 0.1),
        seed=_get(args, cfg, "model_seed", 0),
    )


def _train_config(args, cfg, default_lr: float) -> training.TrainConfig:
    return training.TrainConfig(
        lr=_get(args, cfg, "lr", default_lr),
        batch_size=_get(args, cfg, "batch", 64),
        steps=_get(args, cfg, "steps", 1000),
        clip_norm=_get(args, cfg, "clip", None),
        seed=_get(args, cfg, "seed", 0),
        eval_every=_get(args, cfg, "eval_every", 200),
        ckpt_every=_get(args, cfg, "ckpt_every", 0),
    )


def _write_metrics(path, metrics: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in metrics:
            fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--model-seed", dest="model_seed", type=int)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--ckpt-every", dest="ckpt_every", type=int)
    p.add_argument("--metrics", help="metrics JSONL output path")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_lexicon_check(args) -> int:
    lex = vocab.load_lexicon(args.lexicon, args.monophones)
    readings = [len(e.readings) for e in lex.entries.values()]
    print(f"polyphones:        {len(lex.entries)}")
    print(f"per-reading tokens: {lex.ncmc_count}")
    print(f"readings per char: min {min(readings)} max {max(readings)}" if readings else
          "readings per char: n/a")
    print(f"monophones:        {len(lex.monophones)}")
    print(f"label set size:    {len(lex.all_readings())}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_file_config(args)
    spec = corpus.SynthSpec(
        alphabet_size=_get(args, cfg, "alphabet_size", benchmark.SPEC.alphabet_size),
        n_polyphones=_get(args, cfg, "polyphones", benchmark.SPEC.n_polyphones),
        min_readings=_get(args, cfg, "min_readings", benchmark.SPEC.min_readings),
        max_readings=_get(args, cfg, "max_readings", benchmark.SPEC.max_readings),
        window=_get(args, cfg, "window", benchmark.SPEC.window),
        min_len=_get(args, cfg, "min_len", benchmark.SPEC.min_len),
        max_len=_get(args, cfg, "max_len", benchmark.SPEC.max_len),
        noise=_get(args, cfg, "noise", benchmark.SPEC.noise),
        seed=_get(args, cfg, "seed", benchmark.SPEC.seed),
    )
    sizes = {
        "train": _get(args, cfg, "train", benchmark.TRAIN_SENTENCES),
        "test1": _get(args, cfg, "test", benchmark.TEST_SENTENCES),
        "test4": _get(args, cfg, "test4", benchmark.TEST4_SENTENCES),
        "pretrain": _get(args, cfg, "pretrain", benchmark.PRETRAIN_SENTENCES),
    }
    _log_resolved("synth", {"spec": spec.__dict__, "sizes": sizes, "out": args.out})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = benchmark.build_benchmark(spec, train=sizes["train"], test=sizes["test1"],
                                      test4=sizes["test4"], pretrain=sizes["pretrain"])
    vocab.save_lexicon(bench.lexicon, out / "lexicon.tsv", out / "monophones.tsv")
    for split, sentences in bench.splits.items():
        corpus.write_corpus(out / f"{split}.jsonl", sentences)
        print(f"{split}: {len(sentences)} sentences -> {out / f'{split}.jsonl'}")
    return 0


def cmd_stats(args) -> int:
    paths = {Path(p).stem: p for p in args.corpus}
    stats = evaluate.dataset_stats(paths)
    print(evaluate.render_stats(stats))
    if args.out:
        Path(args.out).write_text(json.dumps(stats, ensure_ascii=False, indent=2),
                                  encoding="utf-8")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_file_config(args)
    lex = vocab.load_lexicon(args.lexicon, args.monophones)
    sentences = list(corpus.read_corpus(args.corpus))
    chars = {ch for s in sentences for ch in s.text}
    chars |= set(lex.entries) | set(lex.monophones)
    base = vocab.base_vocab(vocab.base_tokens_from_chars(chars))

    config = _model_config(args, cfg, base.size)
    tc = _train_config(args, cfg, default_lr=1e-3)
    _log_resolved("pretrain", {"model": config.to_dict(), "train": tc.__dict__,
                               "corpus": args.corpus, "out": args.out})

    result = training.pretrain_base(sentences, base, config, tc)
    checkpoint.save(args.out, result.params, config, base)
    if args.metrics:
        _write_metrics(args.metrics, result.metrics)
    print(f"pre-trained base model ({result.params.count()} parameters) -> {args.out}")
    return 0


def cmd_extend(args) -> int:
    ckpt = checkpoint.load(args.base_ckpt)
    lex = vocab.load_lexicon(args.lexicon, args.monophones)
    extended = vocab.build_vocab(ckpt.vocab.base_tokens, lex)
    params = model.extend_and_init(ckpt.params, ckpt.vocab, extended, args.mode)
    config = replace(ckpt.config, vocab_size=extended.size)
    _log_resolved("extend", {"mode": args.mode, "base": args.base_ckpt, "out": args.out,
                             "base_size": ckpt.vocab.size, "extended_size": extended.size})
    checkpoint.save(args.out, params, config, extended, extra={"init_mode": args.mode})
    delta = params.count() - ckpt.params.count()
    print(f"extended vocab {ckpt.vocab.size} -> {extended.size} (+{delta} parameters,"
          f" {args.mode} init) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_file_config(args)
    ckpt = checkpoint.load(args.ckpt)
    sentences = list(corpus.read_corpus(args.corpus))
    heldout = list(corpus.read_corpus(args.heldout)) if args.heldout else None
    # the full-size rate; desk-scale runs override it (see the benchmark)
    tc = _train_config(args, cfg, default_lr=5e-6)
    _log_resolved("train", {"train": tc.__dict__, "ckpt": args.ckpt,
                            "corpus": args.corpus, "out": args.out})

    result = training.train_polyphone(sentences, ckpt.params, ckpt.vocab, ckpt.config,
                                      tc, heldout=heldout, ckpt_path=args.out)
    checkpoint.save(args.out, result.params, ckpt.config, ckpt.vocab, extra=ckpt.extra)
    if args.metrics:
        _write_metrics(args.metrics, result.metrics)
    final = [m for m in result.metrics if m["split"] == "heldout"]
    if final:
        print(f"held-out accuracy: {final[-1]['accuracy']:.4f}")
    print(f"trained model -> {args.out}")
    return 0


def cmd_train_baseline(args) -> int:
    cfg = _load_file_config(args)
    ckpt = checkpoint.load(args.base_ckpt)
    lex = vocab.load_lexicon(args.lexicon, args.monophones)
    sentences = list(corpus.read_corpus(args.corpus))
    heldout = list(corpus.read_corpus(args.heldout)) if args.heldout else None
    head = baseline.make_head(lex, hidden=_get(args, cfg, "head_hidden", 64),
                              dropout=_get(args, cfg, "head_dropout", 0.5))
    # the full-size classifier rate; desk-scale runs override it
    tc = _train_config(args, cfg, default_lr=5e-5)
    freeze = bool(_get(args, cfg, "freeze", False))
    _log_resolved("train-baseline", {"train": tc.__dict__, "freeze": freeze,
                                     "head_hidden": head.hidden, "out": args.out})

    params = ckpt.params
    baseline.init_head_params(params, head, ckpt.config.d_model,
                              seed=_get(args, cfg, "head_seed", tc.seed))
    result = baseline.train_classifier(sentences, params, head, ckpt.vocab, lex,
                                       ckpt.config, tc, freeze_encoder=freeze,
                                       heldout=heldout)
    checkpoint.save(args.out, result.params, ckpt.config, ckpt.vocab, kind="classifier",
                    extra={"labels": [str(p) for p in head.labels],
                           "hidden": head.hidden, "dropout": head.dropout,
                           "frozen_encoder": freeze})
    if args.metrics:
        _write_metrics(args.metrics, result.metrics)
    final = [m for m in result.metrics if m["split"] == "heldout"]
    if final:
        print(f"held-out accuracy: {final[-1]['accuracy']:.4f}")
    print(f"baseline classifier -> {args.out}")
    return 0


def _load_predictor(args):
    """Returns (predict_fn(texts) -> reports, lexicon) for either model kind."""
    ckpt = checkpoint.load(args.ckpt)
    if ckpt.kind == "classifier":
        if not args.lexicon:
            raise baseline.BaselineError("classifier checkpoints need --lexicon for candidates")
        lex = vocab.load_lexicon(args.lexicon, getattr(args, "monophones", None))
        head = baseline.ClassifierHead(hidden=ckpt.extra["hidden"],
                                       dropout=ckpt.extra["dropout"],
                                       labels=tuple(vocab.Pinyin.parse(p)
                                                    for p in ckpt.extra["labels"]))
        def run(texts):
            return baseline.classify_many(ckpt.params, ckpt.config, head, ckpt.vocab, lex, texts)
        return run, lex
    if args.lexicon:
        lex = vocab.load_lexicon(args.lexicon, getattr(args, "monophones", None))
    else:
        lex = vocab.lexicon_from_vocab(ckpt.vocab)

    def run(texts):
        return inference.predict_many(ckpt.params, ckpt.config, ckpt.vocab, lex, texts)
    return run, lex


def cmd_eval(args) -> int:
    run, _ = _load_predictor(args)
    named = {}
    for path in args.corpus:
        gold = list(corpus.read_corpus(path))
        reports = run([s.text for s in gold])
        named[Path(path).stem] = (reports, gold)
    result = evaluate.evaluate_splits(named)
    print(evaluate.render_result(result))
    if args.out:
        payload = {
            "splits": {name: {"scored": s.scored, "correct": s.correct,
                              "accuracy": s.accuracy} for name, s in result.splits.items()},
            "average": result.average,
            "per_scpc": {ch: {"scored": s.scored, "correct": s.correct,
                              "accuracy": s.accuracy} for ch, s in (result.per_scpc or {}).items()},
        }
        Path(args.out).write_text(json.dumps(payload, ensure_ascii=False, indent=2),
                                  encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    run, lex = _load_predictor(args)
    if args.input:
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    else:
        lines = [line.rstrip("\n") for line in sys.stdin]
    texts = [line for line in lines if line]
    for report in run(texts):
        record = {
            "text": report.text,
            "predictions": [{
                "index": p.char_index,
                "scpc": p.scpc,
                "chosen": str(p.chosen),
                "candidates": [{"pinyin": str(py), "raw": raw, "renormalized": rn}
                               for (py, raw), (_, rn) in zip(p.raw_probs, p.candidate_probs)],
            } for p in report.predictions],
        }
        print(json.dumps(record, ensure_ascii=False))
    return 0


def cmd_init_probe(args) -> int:
    ckpt = checkpoint.load(args.base_ckpt)
    lex = vocab.load_lexicon(args.lexicon, args.monophones)
    extended = vocab.build_vocab(ckpt.vocab.base_tokens, lex)
    config = replace(ckpt.config, vocab_size=extended.size)
    scpc_params = model.extend_and_init(ckpt.params, ckpt.vocab, extended, "scpc")
    unk_params = model.extend_and_init(ckpt.params, ckpt.vocab, extended, "unk")
    texts = [s.text for s in corpus.read_corpus(args.corpus)][:args.limit]
    records = evaluate.init_probe(scpc_params, unk_params, config, extended, lex, texts)
    print(evaluate.render_probe(records))
    if args.out:
        Path(args.out).write_text(json.dumps(records, ensure_ascii=False, indent=2),
                                  encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    thresholds = {"float64": 1e-6, "float32": 1e-3}
    reports = training.gradient_check()
    ok = True
    for name, report in reports.items():
        passed = report.max_rel_err <= thresholds[name]
        ok &= passed
        print(f"{name}: max relative error {report.max_rel_err:.3e}"
              f" (threshold {thresholds[name]:.0e}) {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyg2p",
                                     description="Polyphone disambiguation by masked-LM"
                                                 " vocabulary extension.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="JSON config file; flags override its values")
        return p

    p = add("lexicon-check", cmd_lexicon_check, help="validate a polyphone lexicon")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--monophones")

    p = add("synth", cmd_synth, help="generate the synthetic benchmark corpora")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--alphabet-size", dest="alphabet_size", type=int)
    p.add_argument("--polyphones", type=int)
    p.add_argument("--min-readings", dest="min_readings", type=int)
    p.add_argument("--max-readings", dest="max_readings", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--test4", type=int)
    p.add_argument("--pretrain", type=int)

    p = add("stats", cmd_stats, help="dataset statistics for corpus files")
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--out", help="JSON output path")

    p = add("pretrain", cmd_pretrain, help="masked-LM pre-training of the base model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--monophones")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("extend", cmd_extend, help="extend the vocabulary and init new tokens")
    p.add_argument("--base-ckpt", dest="base_ckpt", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--monophones")
    p.add_argument("--mode", choices=model.INIT_MODES, required=True)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, help="train the extended model on labeled text")
    p.add_argument("--ckpt", required=True, help="extended checkpoint to start from")
    p.add_argument("--corpus", required=True)
    p.add_argument("--heldout")
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    p = add("train-baseline", cmd_train_baseline, help="train the encoder+classifier baseline")
    p.add_argument("--base-ckpt", dest="base_ckpt", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--monophones")
    p.add_argument("--corpus", required=True)
    p.add_argument("--heldout")
    p.add_argument("--out", required=True)
    p.add_argument("--freeze", action=argparse.BooleanOptionalAction, default=None,
                   help="leave every encoder tensor untouched")
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--head-dropout", dest="head_dropout", type=float)
    p.add_argument("--head-seed", dest="head_seed", type=int)
    _add_train_flags(p)

    p = add("eval", cmd_eval, help="score a checkpoint on test corpora")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--lexicon", help="needed for classifier checkpoints")
    p.add_argument("--out", help="JSON output path")

    p = add("predict", cmd_predict, help="per-line predictions as JSON records")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--monophones")
    p.add_argument("--input", help="text file, one sentence per line (default: stdin)")

    p = add("init-probe", cmd_init_probe, help="initial candidate probabilities per init mode")
    p.add_argument("--base-ckpt", dest="base_ckpt", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--monophones")
    p.add_argument("--corpus", required=True, help="sample sentences")
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--out", help="JSON output path")

    add("gradcheck", cmd_gradcheck, help="finite-difference check of the backward pass")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


run = main  # the documented operation name


if __name__ == "__main__":
    sys.exit(main())
