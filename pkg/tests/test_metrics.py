"""Metric oracles: hand-counted BLEU values, brute-force comparison,
composite code metric arithmetic."""

from __future__ import annotations

import math
import random

import pytest

from codelm.metrics import (
    DEFAULT_CODEBLEU_WEIGHTS,
    EmptyInput,
    InvalidWeights,
    LengthMismatch,
    MetricReport,
    accuracy,
    bleu_corpus,
    bleu_smooth4,
    codebleu,
    exact_match,
    read_report,
    write_report,
)


def oracle_bleu(cands: list[str], refs: list[str], max_n: int = 4) -> float:
    """Brute-force corpus BLEU: occurrence lists with explicit consumption."""
    cand_toks = [c.split() for c in cands]
    ref_toks = [r.split() for r in refs]
    precisions = []
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for ct, rt in zip(cand_toks, ref_toks):
            ref_grams = [tuple(rt[i : i + n]) for i in range(len(rt) - n + 1)]
            for i in range(len(ct) - n + 1):
                gram = tuple(ct[i : i + n])
                total += 1
                if gram in ref_grams:
                    ref_grams.remove(gram)
                    matched += 1
        if total == 0 or matched == 0:
            return 0.0
        precisions.append(matched / total)
    c = sum(len(t) for t in cand_toks)
    r = sum(len(t) for t in ref_toks)
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    return 100.0 * bp * geo


def test_bleu_identical_is_100():
    assert bleu_corpus(["a b c d"], ["a b c d"]) == pytest.approx(100.0)


def test_bleu_no_fourgram_overlap_is_0():
    assert bleu_corpus(["a b c d"], ["w x y z"]) == 0.0
    assert bleu_corpus(["a b c e d"], ["a b c d e x y z"]) == 0.0  # no common 4-gram


def test_bleu_hand_oracle():
    # precisions 4/4, 3/3, 2/2, 1/1; brevity penalty e^(1 - 5/4)
    value = bleu_corpus(["a b c d"], ["a b c d e"])
    assert value == pytest.approx(100.0 * math.exp(1.0 - 5.0 / 4.0), abs=1e-9)


def test_bleu_matches_bruteforce_on_random_pairs():
    rng = random.Random(23)
    vocab = list("abcdefg")
    for _ in range(100):
        n = rng.randrange(1, 5)
        cands = [" ".join(rng.choices(vocab, k=rng.randrange(1, 10))) for _ in range(n)]
        refs = [" ".join(rng.choices(vocab, k=rng.randrange(1, 10))) for _ in range(n)]
        assert bleu_corpus(cands, refs) == pytest.approx(oracle_bleu(cands, refs), abs=1e-9)


def test_bleu_errors():
    with pytest.raises(LengthMismatch):
        bleu_corpus(["a"], ["a", "b"])
    with pytest.raises(EmptyInput):
        bleu_corpus([], [])


def test_bleu_denormalizes_markers():
    cand = " OBRACE  a = 1 ;  CBRACE "
    ref = "{ a = 1 ; }"
    assert bleu_corpus([cand], [ref]) == pytest.approx(100.0)


def test_smooth4_identical_pair():
    assert bleu_smooth4(["x y z w"], ["x y z w"]) == pytest.approx(100.0)


def test_smooth4_single_token_identical():
    # Higher-order counts are empty; add-one smoothing makes them 1.
    assert bleu_smooth4(["a"], ["a"]) == pytest.approx(100.0)


def test_smooth4_hand_oracle():
    # p1 = 1/2, p2 = (0+1)/(1+1), p3 = p4 = (0+1)/(0+1), brevity penalty 1.
    expected = 100.0 * (0.5 * 0.5 * 1.0 * 1.0) ** 0.25
    assert bleu_smooth4(["a b"], ["a c"]) == pytest.approx(expected, abs=1e-9)


def test_smooth4_permutation_invariant():
    cands = ["a b", "c d e", "f"]
    refs = ["a x", "c d y", "f"]
    base = bleu_smooth4(cands, refs)
    assert bleu_smooth4(cands[::-1], refs[::-1]) == pytest.approx(base)


def test_exact_match_values():
    assert exact_match(["a b"], ["a  b"]) == 100.0  # whitespace-normalized
    assert exact_match(["a", "b"], ["a", "x"]) == 50.0
    assert exact_match(["a"], ["b"]) == 0.0


def test_exact_match_append_wrong_never_increases():
    rng = random.Random(5)
    for _ in range(50):
        n = rng.randrange(1, 6)
        cands = [rng.choice(["a", "b"]) for _ in range(n)]
        refs = [rng.choice(["a", "b"]) for _ in range(n)]
        before = exact_match(cands, refs)
        after = exact_match(cands + ["wrong"], refs + ["right"])
        assert after <= before


def test_accuracy():
    assert accuracy(["1", "0"], ["1", "0"]) == 100.0
    assert accuracy(["1", "0"], ["1", "1"]) == 50.0
    with pytest.raises(EmptyInput):
        accuracy([], [])


def test_codebleu_identical():
    code = "int f(int a) { if (a > 1) { return a; } return 0; }"
    report = codebleu([code], [code])
    assert report.value == pytest.approx(100.0)
    for key in ("ngram", "weighted_ngram", "syntax", "dataflow"):
        assert report.components[key] == pytest.approx(1.0)
    assert report.counts == {"evaluated": 1, "parse_failures": 0}


def test_codebleu_rename_invariance():
    ref = "int f(int a) { b = a + 1; return b; }"
    cand = "int g(int x) { y = x + 1; return y; }"
    report = codebleu([cand], [ref])
    assert report.components["syntax"] == pytest.approx(1.0)
    assert report.components["dataflow"] == pytest.approx(1.0)
    assert report.components["ngram"] < 1.0


def test_codebleu_two_pair_hand_oracle():
    cands = ["a = 1 ;", "b = 2 ;"]
    refs = ["a = 1 ;", "c = 3 ;"]
    report = codebleu(cands, refs)
    # ngram by hand: p1 = 6/8, p2 = 3/6, p3 = 2/4, p4 = 1/2; brevity penalty 1.
    p = (0.75 * 0.5 * 0.5 * 0.5) ** 0.25
    # Both pairs parse; identifier/literal normalization makes the trees equal.
    expected = 100.0 * (0.25 * p + 0.25 * p + 0.25 * 1.0 + 0.25 * 1.0)
    assert report.value == pytest.approx(expected, abs=1e-9)
    assert report.counts["parse_failures"] == 0


def test_codebleu_parse_failure_contributes_zero():
    good = "a = 1 ;"
    bad = "for (;;) {}"
    report = codebleu([bad, good], [good, good])
    assert report.counts["parse_failures"] == 1
    assert report.components["syntax"] == pytest.approx(0.5)
    assert report.components["dataflow"] == pytest.approx(0.5)


def test_codebleu_composite_equals_weighted_sum():
    report = codebleu(["a = 1 ;"], ["a = b ;"])
    c = report.components
    w = report.weights
    expected = 100.0 * (
        w["alpha"] * c["ngram"]
        + w["beta"] * c["weighted_ngram"]
        + w["gamma"] * c["syntax"]
        + w["delta"] * c["dataflow"]
    )
    assert report.value == expected


def test_codebleu_keyword_upweighting_changes_weighted_component():
    # "return" is a keyword; missing it hurts weighted ngram more.
    ref = "return a ;"
    cand_missing_kw = "give a ;"
    report = codebleu([cand_missing_kw], [ref])
    assert report.components["weighted_ngram"] <= report.components["ngram"]


def test_codebleu_invalid_weights():
    with pytest.raises(InvalidWeights):
        codebleu(["a"], ["a"], weights=(0.5, 0.5, 0.5, 0.5))


def test_codebleu_default_weights():
    assert DEFAULT_CODEBLEU_WEIGHTS == (0.25, 0.25, 0.25, 0.25)


def test_values_in_range_random():
    rng = random.Random(31)
    vocab = ["a", "b", "{", "}", "return", "1"]
    for _ in range(30):
        n = rng.randrange(1, 4)
        cands = [" ".join(rng.choices(vocab, k=rng.randrange(1, 8))) for _ in range(n)]
        refs = [" ".join(rng.choices(vocab, k=rng.randrange(1, 8))) for _ in range(n)]
        for value in (
            bleu_corpus(cands, refs),
            bleu_smooth4(cands, refs),
            exact_match(cands, refs),
            codebleu(cands, refs).value,
        ):
            assert 0.0 <= value <= 100.0


def test_report_file_round_trip(tmp_path):
    report = codebleu(["a = 1 ;"], ["a = 1 ;"], task="gen")
    path = tmp_path / "report.json"
    write_report([report], path)
    (back,) = read_report(path)
    assert back == report  # full precision preserved
    assert "gen codebleu=100.00" in back.display()
