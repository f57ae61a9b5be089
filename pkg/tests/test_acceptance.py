"""Acceptance gate: one test per shipping criterion, each printing a
single pass/fail line with its measured numbers and time budget.

Every check here is oracle- or property-based and runs at desk scale;
training-based criteria use fixed seeds so the outcomes are reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import random
import time
from collections import Counter

import numpy as np
import pytest

import codelm
import gen_minilang
from codelm import codec, denoise, infer, metrics, minilang, tokenizer, trainer
from codelm import autodiff as ad
from codelm.cli import dispatch
from codelm.model import ModelConfig, backward, forward, grad_check, init_params, make_batch
from codelm.trainer import Checkpoint, TrainConfig, VocabMismatch

DATA_DIR = os.path.join(os.path.dirname(codelm.__file__), "data")


def _verdict(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def _bundled_codes() -> list[str]:
    codes = []
    with open(os.path.join(DATA_DIR, "corpus_sample.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            codes.append(json.loads(line)["code"])
    return codes


@pytest.fixture(scope="module")
def bundle_vocab():
    texts = [codec.normalize(c) for c in _bundled_codes()]
    return tokenizer.train_vocab(texts, 8000), texts


# --- 1: codec ------------------------------------------------------------


def test_criterion_01_codec_round_trip():
    codes = _bundled_codes()
    start = time.monotonic()
    exact = sum(1 for c in codes if codec.denormalize(codec.normalize(c)) == c)
    elapsed = time.monotonic() - start
    ok = exact == len(codes) == 1000 and elapsed < 5.0
    _verdict(1, "codec round trip", ok, f"{exact}/{len(codes)} exact, {elapsed:.2f}s")


# --- 2: tokenizer ---------------------------------------------------------


def test_criterion_02_tokenizer_round_trip(bundle_vocab):
    vocab, texts = bundle_vocab
    start = time.monotonic()
    exact = sum(1 for t in texts if vocab.decode(vocab.encode(t)) == t)

    rng = random.Random(2)
    pool = (
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
        " \t(){}[]<>$^~`\\|+-*/=_.,;:!?\"'#@&%éü中文▁"
    )
    sentinel_free = 0
    hygiene_ok = 0
    while sentinel_free < 10_000:
        s = "".join(rng.choice(pool) for _ in range(rng.randrange(0, 40)))
        if "<extra_id_" in s:
            continue
        sentinel_free += 1
        ids = vocab.encode(s)
        if not any(vocab.is_sentinel(t) for t in ids) and vocab.decode(ids) == s:
            hygiene_ok += 1
    elapsed = time.monotonic() - start
    ok = exact == len(texts) and hygiene_ok == sentinel_free == 10_000 and elapsed < 30.0
    _verdict(
        2,
        "tokenizer round trip + sentinel hygiene",
        ok,
        f"{exact}/{len(texts)} corpus, {hygiene_ok}/10000 hygiene, {elapsed:.1f}s",
    )


# --- 3: span corruption ----------------------------------------------------


def test_criterion_03_span_corruption(bundle_vocab):
    vocab, _ = bundle_vocab
    rng = random.Random(3)
    start = time.monotonic()
    spliced_ok = 0
    total_examples = 0
    rate_ok = True
    rates = {}
    for r in (0.0, 0.15, 0.5, 1.0):
        cfg = denoise.CorruptionConfig(corruption_rate=r, mean_span_length=3, seed=11)
        masked_tokens = 0
        origin_tokens = 0
        for i in range(2500):
            n = rng.randrange(20, 81)
            ids = [rng.randrange(3, vocab.size - tokenizer.SENTINEL_COUNT) for _ in range(n)]
            example = denoise.corrupt(ids, cfg, denoise.rng_for_record(cfg, i), vocab)
            total_examples += 1
            if denoise.splice(example, vocab) == ids:
                spliced_ok += 1
            kept = sum(1 for t in example.input_ids if not vocab.is_sentinel(t))
            masked_tokens += n - kept
            origin_tokens += n
            if i < 25:  # determinism: the per-record stream replays exactly
                again = denoise.corrupt(ids, cfg, denoise.rng_for_record(cfg, i), vocab)
                assert again == example
        empirical = masked_tokens / origin_tokens
        rates[r] = empirical
        if abs(empirical - r) > 0.02:
            rate_ok = False
        assert origin_tokens >= 10_000
    elapsed = time.monotonic() - start
    ok = spliced_ok == total_examples == 10_000 and rate_ok and elapsed < 30.0
    rate_str = " ".join(f"r={r}:{v:.3f}" for r, v in rates.items())
    _verdict(3, "span corruption", ok, f"{spliced_ok}/10000 spliced, {rate_str}, {elapsed:.1f}s")


# --- 4: gradients, causality, padding --------------------------------------


def _logits(params, config, batch):
    with ad.no_grad():
        return forward(params, config, batch).data


def test_criterion_04_gradients_causality_padding():
    start = time.monotonic()
    # the `gradcheck` subcommand's default tiny model, at oracle defaults
    # (50 sampled coordinates per array, eps 1e-4, double precision)
    tiny = ModelConfig(
        num_layers=1, d_model=8, num_heads=2, d_ff=16, vocab_size=64,
        num_buckets=4, max_input_len=16, max_target_len=16, dropout=0.0,
    )
    tiny_report = grad_check(tiny, seed=0)
    config = ModelConfig(
        num_layers=2, d_model=8, num_heads=2, d_ff=16, vocab_size=32,
        num_buckets=4, max_input_len=12, max_target_len=12, dropout=0.0,
    )
    deep_report = grad_check(config, seed=0)  # cross-layer coverage
    grads_ok = all(
        r.passed and all(v < 1e-4 for v in r.per_array.values())
        for r in (tiny_report, deep_report)
    )
    worst = max(tiny_report.worst, deep_report.worst)

    params = init_params(config, seed=4)
    pairs = [([5, 6, 7, 8], [9, 10, 11, 1]), ([12, 13], [14, 1])]
    batch = make_batch(pairs)
    base = _logits(params, config, batch)

    # causality: changing a later decoder input leaves earlier rows bit-equal
    perturbed = dataclasses.replace(
        batch, decoder_input_ids=batch.decoder_input_ids.copy()
    )
    perturbed.decoder_input_ids[:, 3] = 29
    after = _logits(params, config, perturbed)
    causal_ok = bool(np.array_equal(base[:, :3, :], after[:, :3, :]))

    # padding invariance: content under a zero encoder mask is invisible
    repadded = dataclasses.replace(batch, encoder_ids=batch.encoder_ids.copy())
    repadded.encoder_ids[1, 2:] = 31  # masked tail positions of the short row
    pad_ok = bool(np.array_equal(base, _logits(params, config, repadded)))

    elapsed = time.monotonic() - start
    ok = grads_ok and causal_ok and pad_ok and elapsed < 120.0
    _verdict(
        4,
        "grad check + causality + padding",
        ok,
        f"worst={worst:.2e}, causal={causal_ok}, padding={pad_ok}, {elapsed:.1f}s",
    )


# --- training-criteria helpers ---------------------------------------------


def _em(ckpt: Checkpoint, pairs, max_len: int = 10) -> float:
    cfg = infer.DecodeConfig(max_length=max_len)
    hits = sum(1 for src, tgt in pairs if infer.greedy(ckpt, list(src), cfg) == list(tgt))
    return hits / len(pairs)


def _train_chunks(ckpt, mixture_fn, chunk, ceiling, lr, warmup, seed_base, stop):
    """Run `chunk`-step rounds with fresh data until `stop(ckpt)` or ceiling."""
    steps = 0
    while steps < ceiling:
        cfg = TrainConfig(
            batch_size=8, total_steps=chunk, learning_rate=lr,
            warmup_steps=warmup, seed=seed_base + steps,
        )
        ckpt = trainer.finetune(ckpt, mixture_fn(), cfg)
        steps += chunk
        if stop(ckpt):
            break
    return ckpt, steps


# --- 5: tiny overfit --------------------------------------------------------


def test_criterion_05_tiny_overfit():
    start = time.monotonic()
    rng = random.Random(0)
    pairs = []
    seen = set()
    while len(pairs) < 32:
        src = tuple(rng.randrange(3, 64) for _ in range(rng.randint(5, 8)))
        if src in seen:
            continue
        seen.add(src)
        pairs.append((list(src), [rng.randrange(3, 64) for _ in range(rng.randint(3, 6))]))
    config = ModelConfig(
        num_layers=1, d_model=32, num_heads=2, d_ff=64, vocab_size=64,
        num_buckets=4, max_input_len=16, max_target_len=16, dropout=0.0,
    )
    ckpt = trainer.init_checkpoint(config, 0, "f" * 64)
    mixture = trainer.make_mixture([("memorize", pairs)])
    ckpt, steps = _train_chunks(
        ckpt, lambda: mixture, chunk=250, ceiling=3000, lr=5e-3, warmup=50,
        seed_base=0, stop=lambda c: _em(c, pairs) >= 0.95,
    )
    em = _em(ckpt, pairs)
    elapsed = time.monotonic() - start
    ok = em >= 0.95 and steps <= 3000 and elapsed < 600.0
    _verdict(5, "tiny overfit", ok, f"em={em:.3f} at {steps} steps, {elapsed:.0f}s")


# --- 6: prefix carries task identity ----------------------------------------

COPY, REV = 3, 4
_PREFIX_MODEL = ModelConfig(
    num_layers=2, d_model=64, num_heads=4, d_ff=128, vocab_size=32,
    num_buckets=8, max_input_len=12, max_target_len=12, dropout=0.0,
)


def _content_seqs(rng: random.Random, count: int) -> list[tuple[int, ...]]:
    seqs = set()
    while len(seqs) < count:
        n = rng.randint(3, 6)
        s = tuple(rng.randrange(10, 26) for _ in range(n))
        if s != tuple(reversed(s)):  # palindromes would blur the two tasks
            seqs.add(s)
    return sorted(seqs)


def _prefix_pairs(seqs, prefix, reverse):
    out = []
    for s in seqs:
        tgt = list(reversed(s)) if reverse else list(s)
        out.append(([prefix, *s], tgt))
    return out


def test_criterion_06_prefix_mechanism():
    start = time.monotonic()
    held = _content_seqs(random.Random(999), 20)
    held_copy = _prefix_pairs(held, COPY, reverse=False)
    held_rev = _prefix_pairs(held, REV, reverse=True)

    # joint model: same sequence distribution, only the prefix differs
    data_rng = random.Random(0)

    def joint_mixture():
        seqs = _content_seqs(data_rng, 500)
        return trainer.make_mixture([
            ("copy", _prefix_pairs(seqs, COPY, reverse=False)),
            ("reverse", _prefix_pairs(seqs, REV, reverse=True)),
        ])

    joint = trainer.init_checkpoint(_PREFIX_MODEL, 0, "f" * 64)
    joint, joint_steps = _train_chunks(
        joint, joint_mixture, chunk=1000, ceiling=12000, lr=3e-3, warmup=400,
        seed_base=0, stop=lambda c: _em(c, held_copy) >= 0.9 and _em(c, held_rev) >= 0.9,
    )
    em_copy, em_rev = _em(joint, held_copy), _em(joint, held_rev)

    # control A: both mappings behind one shared prefix are irreducibly
    # ambiguous, so removing the distinguishing prefix collapses the pair
    ctl_rng = random.Random(1)

    def shared_mixture():
        seqs = _content_seqs(ctl_rng, 500)
        return trainer.make_mixture([
            ("copy", _prefix_pairs(seqs, COPY, reverse=False)),
            ("reverse", _prefix_pairs(seqs, COPY, reverse=True)),
        ])

    shared = trainer.init_checkpoint(_PREFIX_MODEL, 0, "f" * 64)
    shared, _ = _train_chunks(
        shared, shared_mixture, chunk=1000, ceiling=4000, lr=3e-3, warmup=400,
        seed_base=50000, stop=lambda c: False,
    )
    shared_min = min(
        _em(shared, held_copy),
        _em(shared, _prefix_pairs(held, COPY, reverse=True)),
    )

    # control B: each mapping is learnable alone, so the collapse above is
    # about the missing prefix, not about capacity
    solo_rng = random.Random(2)

    def solo_mixture():
        seqs = _content_seqs(solo_rng, 500)
        return trainer.make_mixture([("reverse", _prefix_pairs(seqs, REV, reverse=True))])

    solo = trainer.init_checkpoint(_PREFIX_MODEL, 0, "f" * 64)
    solo, _ = _train_chunks(
        solo, solo_mixture, chunk=1000, ceiling=8000, lr=3e-3, warmup=400,
        seed_base=90000, stop=lambda c: _em(c, held_rev) >= 0.9,
    )
    em_solo = _em(solo, held_rev)

    elapsed = time.monotonic() - start
    ok = (
        em_copy >= 0.9 and em_rev >= 0.9
        and shared_min <= 0.5 and em_solo >= 0.9
        and elapsed < 900.0
    )
    _verdict(
        6,
        "prefix mechanism",
        ok,
        f"joint copy={em_copy:.2f} rev={em_rev:.2f} at {joint_steps} steps, "
        f"shared-prefix min={shared_min:.2f}, solo rev={em_solo:.2f}, {elapsed:.0f}s",
    )


# --- 7: metric oracles -------------------------------------------------------


def _oracle_corpus_bleu(cands: list[str], refs: list[str], max_n: int = 4) -> float:
    def ngrams(toks, n):
        return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))

    cand_toks = [c.split() for c in cands]
    ref_toks = [r.split() for r in refs]
    c_len = sum(len(t) for t in cand_toks)
    r_len = sum(len(t) for t in ref_toks)
    if c_len == 0:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        clipped = 0
        total = 0
        for ct, rt in zip(cand_toks, ref_toks):
            cg, rg = ngrams(ct, n), ngrams(rt, n)
            clipped += sum(min(v, rg[g]) for g, v in cg.items())
            total += sum(cg.values())
        if clipped == 0 or total == 0:
            return 0.0
        precisions.append(clipped / total)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


def _rename(ast: minilang.AstNode, table: dict[str, str]) -> minilang.AstNode:
    if ast.kind == "Name":
        name = table.setdefault(ast.text, f"r{len(table)}")
        return minilang.AstNode("Name", name)
    return minilang.AstNode(ast.kind, ast.text, tuple(_rename(c, table) for c in ast.children))


def test_criterion_07_metric_oracles():
    start = time.monotonic()
    rng = random.Random(7)
    words = [f"w{i}" for i in range(20)]
    pairs = []
    for _ in range(100):
        ref = [rng.choice(words) for _ in range(rng.randrange(8, 15))]
        cand = list(ref)
        for _ in range(rng.randrange(0, 3)):
            cand[rng.randrange(len(cand))] = rng.choice(words)
        pairs.append((" ".join(cand), " ".join(ref)))
    cands = [c for c, _ in pairs]
    refs = [r for _, r in pairs]
    bleu_diff = abs(metrics.bleu_corpus(cands, refs) - _oracle_corpus_bleu(cands, refs))
    singleton_diff = max(
        abs(metrics.bleu_corpus([c], [r]) - _oracle_corpus_bleu([c], [r]))
        for c, r in pairs
    )
    bleu_ok = bleu_diff < 1e-9 and singleton_diff < 1e-9

    # hand counts: 3 of 5 match / 2 of 4 labels agree
    em_val = metrics.exact_match(["a b", "c", "d  e", "x", "y z"],
                                 ["a b", "c", "d e", "q", "y  z"])
    acc_val = metrics.accuracy(["positive", "negative", "positive", "negative"],
                               ["positive", "positive", "positive", "negative"])
    counts_ok = em_val == 100.0 * 4 / 5 and acc_val == 75.0

    gen_rng = random.Random(70)
    programs = [
        minilang.pretty_print(gen_minilang.gen_function(gen_rng, gen_minilang._Budget(branches=3)))
        for _ in range(50)
    ]
    same = metrics.codebleu(programs[:20], programs[:20])
    identical_ok = same.value == 100.0 and all(v == 1.0 for v in same.components.values())

    rename_ok = True
    for text in programs:
        renamed = minilang.pretty_print(_rename(minilang.parse(text), {}))
        report = metrics.codebleu([renamed], [text])
        if report.components["syntax"] != 1.0 or report.components["dataflow"] != 1.0:
            rename_ok = False
            break

    elapsed = time.monotonic() - start
    ok = bleu_ok and counts_ok and identical_ok and rename_ok and elapsed < 60.0
    _verdict(
        7,
        "metric oracles",
        ok,
        f"bleu diff={bleu_diff:.1e}/{singleton_diff:.1e}, counts={counts_ok}, "
        f"identical={identical_ok}, rename={rename_ok}, {elapsed:.1f}s",
    )


# --- 8: minilang -------------------------------------------------------------


def test_criterion_08_minilang():
    start = time.monotonic()
    rng = random.Random(8)
    round_trips = 0
    for _ in range(500):
        ast = gen_minilang.gen_program(rng)
        if minilang.parse(minilang.pretty_print(ast)) == ast:
            round_trips += 1

    def branch_counts(ast):
        kinds = [n.kind for n in ast.walk()]
        return kinds.count("If"), kinds.count("While")

    straight = 0
    single = 0
    flow_ok = True
    while straight < 120 or single < 120:
        ast = gen_minilang.gen_function(rng, gen_minilang._Budget(branches=2))
        ifs, whiles = branch_counts(ast)
        if whiles:
            continue
        if ifs == 0 and straight < 120:
            straight += 1
        elif ifs == 1 and single < 120:
            single += 1
        else:
            continue
        if minilang.dataflow(ast) != gen_minilang.oracle_dataflow(ast):
            flow_ok = False
            break

    elapsed = time.monotonic() - start
    ok = round_trips == 500 and flow_ok and elapsed < 60.0
    _verdict(
        8,
        "minilang round trip + dataflow oracle",
        ok,
        f"{round_trips}/500 trees, dataflow={flow_ok}, {elapsed:.1f}s",
    )


# --- 9: end-to-end smoke ------------------------------------------------------


def test_criterion_09_end_to_end(tmp_path):
    start = time.monotonic()
    root = str(tmp_path)
    model_flags = [
        "--set", "model.num_layers=1", "--set", "model.d_model=32",
        "--set", "model.num_heads=2", "--set", "model.d_ff=64",
        "--set", "model.num_buckets=8", "--set", "model.max_input_len=32",
        "--set", "model.max_target_len=32",
    ]
    steps_ok = True

    def run(*argv):
        nonlocal steps_ok
        steps_ok = steps_ok and dispatch(list(argv)) == 0

    run(
        "build-corpus", "--out-dir", root,
        "--set", f"corpus.codesearch={DATA_DIR}/corpus_sample.jsonl",
        "--set", "corpus.combination=2-CC",
        "--set", f"corpus.out={root}/corpus.jsonl",
    )
    run(
        "train-tokenizer", "--out-dir", root,
        "--set", f"tokenizer.corpus={root}/corpus.jsonl",
        "--set", "tokenizer.size=1200",
        "--set", f"tokenizer.out={root}/vocab.txt",
    )
    run(
        "pretrain", "--out-dir", root, *model_flags,
        "--set", f"pretrain.corpus={root}/corpus.jsonl",
        "--set", f"pretrain.vocab={root}/vocab.txt",
        "--set", "pretrain.steps=200", "--set", "pretrain.batch_size=4",
        "--set", "pretrain.warmup_steps=100",
        "--set", f"pretrain.out={root}/pre",
    )
    run(
        "finetune", "--out-dir", root, *model_flags,
        "--set", f"finetune.vocab={root}/vocab.txt",
        "--set", f"finetune.checkpoint={root}/pre",
        "--set", f"finetune.summarization={DATA_DIR}/task_summarization.jsonl",
        "--set", "finetune.steps=200", "--set", "finetune.batch_size=4",
        "--set", "finetune.warmup_steps=100",
        "--set", f"finetune.out={root}/fine",
    )
    with open(os.path.join(DATA_DIR, "task_summarization.jsonl"), encoding="utf-8") as fh:
        head = [next(fh) for _ in range(12)]
    with open(os.path.join(root, "refs.jsonl"), "w", encoding="utf-8") as fh:
        fh.writelines(head)
    run(
        "predict", "--out-dir", root,
        "--set", f"predict.vocab={root}/vocab.txt",
        "--set", f"predict.checkpoint={root}/fine",
        "--set", "predict.task=summarization",
        "--set", f"predict.input={root}/refs.jsonl",
        "--set", "predict.max_length=16",
        "--set", f"predict.out={root}/preds.jsonl",
    )
    run(
        "evaluate", "--out-dir", root,
        "--set", "evaluate.task=summarization",
        "--set", f"evaluate.predictions={root}/preds.jsonl",
        "--set", f"evaluate.references={root}/refs.jsonl",
        "--set", f"evaluate.out={root}/report.json",
    )

    def smoothed_drops(path):
        with open(path, encoding="utf-8") as fh:
            losses = json.load(fh)
        smooth = trainer.smoothed(losses, window=20)
        return (
            len(losses) == 200
            and all(math.isfinite(v) for v in losses)
            and smooth[-1] < smooth[min(19, len(smooth) - 1)]
        )

    loss_ok = smoothed_drops(os.path.join(root, "pretrain-losses.json")) and smoothed_drops(
        os.path.join(root, "finetune-losses.json")
    )
    with open(os.path.join(root, "report.json"), encoding="utf-8") as fh:
        report = json.load(fh)
    report_ok = (
        report["task"] == "summarization"
        and report["num_examples"] > 0
        and 0.0 <= report["metrics"]["bleu_smooth4"] <= 100.0
    )
    elapsed = time.monotonic() - start
    ok = steps_ok and loss_ok and report_ok and elapsed < 1800.0
    _verdict(
        9,
        "end-to-end smoke",
        ok,
        f"exit codes={steps_ok}, loss trend={loss_ok}, report={report_ok}, {elapsed:.0f}s",
    )


# --- 10: checkpoint round trip ------------------------------------------------


def test_criterion_10_checkpoint_round_trip(tmp_path):
    start = time.monotonic()
    config = ModelConfig(
        num_layers=1, d_model=8, num_heads=2, d_ff=16, vocab_size=40,
        num_buckets=4, max_input_len=10, max_target_len=10, dropout=0.0,
    )
    ckpt = trainer.init_checkpoint(config, 10, "ab" * 32)
    batch = make_batch([([5, 6, 7], [8, 9, 1])])
    _, grads = backward(ckpt.params, config, batch)
    trainer.apply_adam_step(ckpt, grads, TrainConfig(batch_size=1, total_steps=1))

    first = os.path.join(str(tmp_path), "first")
    second = os.path.join(str(tmp_path), "second")
    trainer.save(ckpt, first)
    loaded = trainer.load(first)
    trainer.save(loaded, second)
    identical = True
    for name in sorted(os.listdir(first)):
        with open(os.path.join(first, name), "rb") as fh:
            a = fh.read()
        with open(os.path.join(second, name), "rb") as fh:
            b = fh.read()
        if a != b:
            identical = False
    identical = identical and sorted(os.listdir(first)) == sorted(os.listdir(second))

    rejected = False
    try:
        trainer.load(first, expected_fingerprint="cd" * 32)
    except VocabMismatch:
        rejected = True

    elapsed = time.monotonic() - start
    ok = identical and rejected and elapsed < 10.0
    _verdict(
        10,
        "checkpoint round trip",
        ok,
        f"bit-identical={identical}, mismatch rejected={rejected}, {elapsed:.1f}s",
    )
