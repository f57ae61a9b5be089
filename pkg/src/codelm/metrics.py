"""Evaluation metrics: corpus BLEU, smoothed BLEU-4, exact match,
accuracy, and the composite code metric.

All values are reported on a 0-100 scale.  Text is codec-denormalized
before tokenization, so metrics operate on real glyphs whether the
caller passes raw or marker-form text.  Every function is pure.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from . import codec, minilang
from .errors import PipelineError

DEFAULT_CODEBLEU_WEIGHTS = (0.25, 0.25, 0.25, 0.25)
KEYWORD_WEIGHT = 5


class LengthMismatch(PipelineError):
    code = "LENGTH_MISMATCH"


class EmptyInput(PipelineError):
    code = "EMPTY"


class InvalidWeights(PipelineError):
    code = "INVALID_WEIGHTS"


@dataclass(frozen=True)
class MetricReport:
    """One metric result; components/counts filled for composite metrics."""

    task: str
    metric: str
    value: float
    components: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "components": dict(self.components),
            "counts": dict(self.counts),
            "weights": dict(self.weights),
        }

    def display(self) -> str:
        parts = [f"{self.task} {self.metric}={self.value:.2f}"]
        parts += [f"{k}={v:.2f}" for k, v in self.components.items()]
        parts += [f"{k}={v}" for k, v in self.counts.items()]
        return " ".join(parts)


def write_report(reports: list[MetricReport], path) -> None:
    """Full-precision JSON report file (display strings round instead)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_json_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> list[MetricReport]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        MetricReport(
            task=r["task"],
            metric=r["metric"],
            value=r["value"],
            components=r.get("components", {}),
            counts=r.get("counts", {}),
            weights=r.get("weights", {}),
        )
        for r in raw
    ]


def _check_pairs(candidates, references, allow_empty: bool = False) -> None:
    if len(candidates) != len(references):
        raise LengthMismatch(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates and not allow_empty:
        raise EmptyInput("no pairs to score")


def _tokens(text: str) -> list[str]:
    return codec.denormalize(text).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(candidates: list[str], references: list[str], max_n: int = 4) -> float:
    """Corpus BLEU: geometric mean of clipped modified n-gram precisions
    times the brevity penalty, over whitespace tokens."""
    _check_pairs(candidates, references)
    cand_toks = [_tokens(c) for c in candidates]
    ref_toks = [_tokens(r) for r in references]
    cand_len = sum(len(t) for t in cand_toks)
    ref_len = sum(len(t) for t in ref_toks)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for ct, rt in zip(cand_toks, ref_toks):
            cg = _ngrams(ct, n)
            rg = _ngrams(rt, n)
            matched += sum(min(count, rg[g]) for g, count in cg.items())
            total += sum(cg.values())
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_sum)


def bleu_smooth4(candidates: list[str], references: list[str]) -> float:
    """Sentence BLEU-4 with add-one smoothing on numerator and denominator
    for orders >= 2, averaged over sentences."""
    _check_pairs(candidates, references)
    total = 0.0
    for cand, ref in zip(candidates, references):
        total += _sentence_bleu_smooth(_tokens(cand), _tokens(ref))
    return 100.0 * total / len(candidates)


def _sentence_bleu_smooth(cand: list[str], ref: list[str], max_n: int = 4) -> float:
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cg = _ngrams(cand, n)
        rg = _ngrams(ref, n)
        matched = sum(min(count, rg[g]) for g, count in cg.items())
        total = sum(cg.values())
        if n >= 2:
            matched += 1
            total += 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum)


def exact_match(candidates: list[str], references: list[str]) -> float:
    """100 x fraction equal after whitespace normalization."""
    _check_pairs(candidates, references)
    hits = sum(
        " ".join(c.split()) == " ".join(r.split())
        for c, r in zip(candidates, references)
    )
    return 100.0 * hits / len(candidates)


def accuracy(predicted: list[str], gold: list[str]) -> float:
    """100 x fraction of label predictions equal to gold labels."""
    _check_pairs(predicted, gold)
    hits = sum(p == g for p, g in zip(predicted, gold))
    return 100.0 * hits / len(predicted)


def _weighted_precision_counts(
    cand_toks: list[list[str]], ref_toks: list[list[str]], n: int, keywords: frozenset
) -> tuple[float, float]:
    matched = 0.0
    total = 0.0
    for ct, rt in zip(cand_toks, ref_toks):
        cg = _ngrams(ct, n)
        rg = _ngrams(rt, n)
        for gram, count in cg.items():
            w = KEYWORD_WEIGHT if any(t in keywords for t in gram) else 1
            matched += w * min(count, rg[gram])
            total += w * count
    return matched, total


def _precision_product(
    cand_toks, ref_toks, max_n: int, keywords: frozenset | None
) -> float:
    log_sum = 0.0
    for n in range(1, max_n + 1):
        if keywords is None:
            matched = 0.0
            total = 0.0
            for ct, rt in zip(cand_toks, ref_toks):
                cg = _ngrams(ct, n)
                rg = _ngrams(rt, n)
                matched += sum(min(c, rg[g]) for g, c in cg.items())
                total += sum(cg.values())
        else:
            matched, total = _weighted_precision_counts(cand_toks, ref_toks, n, keywords)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    cand_len = sum(len(t) for t in cand_toks)
    ref_len = sum(len(t) for t in ref_toks)
    if cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum)


def _multiset_match(cand: Counter, ref: Counter) -> float:
    ref_total = sum(ref.values())
    if ref_total == 0:
        return 1.0
    matched = sum(min(count, cand[item]) for item, count in ref.items())
    return matched / ref_total


def _set_match(cand: frozenset, ref: frozenset) -> float:
    if not ref:
        return 1.0
    return len(cand & ref) / len(ref)


def codebleu(
    candidates: list[str],
    references: list[str],
    weights: tuple[float, float, float, float] = DEFAULT_CODEBLEU_WEIGHTS,
    task: str = "code",
) -> MetricReport:
    """Composite code metric.

    value = 100 * (alpha*ngram + beta*weighted_ngram + gamma*syntax
    + delta*dataflow).  The syntax component matches AST subtree
    multisets and the dataflow component matches normalized def-use
    edges; a pair where either side fails to parse contributes 0 to both
    and increments the parse_failures count.
    """
    _check_pairs(candidates, references)
    alpha, beta, gamma, delta = weights
    if abs(alpha + beta + gamma + delta - 1.0) > 1e-9:
        raise InvalidWeights(f"weights {weights} do not sum to 1")

    cand_text = [codec.denormalize(c) for c in candidates]
    ref_text = [codec.denormalize(r) for r in references]
    cand_toks = [t.split() for t in cand_text]
    ref_toks = [t.split() for t in ref_text]
    keywords = frozenset(minilang.KEYWORDS)

    ngram = _precision_product(cand_toks, ref_toks, 4, None)
    weighted = _precision_product(cand_toks, ref_toks, 4, keywords)

    syntax_sum = 0.0
    dataflow_sum = 0.0
    parse_failures = 0
    for ct, rt in zip(cand_text, ref_text):
        try:
            cand_ast = minilang.parse(ct)
            ref_ast = minilang.parse(rt)
        except PipelineError:
            parse_failures += 1
            continue
        syntax_sum += _multiset_match(minilang.subtrees(cand_ast), minilang.subtrees(ref_ast))
        dataflow_sum += _set_match(minilang.dataflow(cand_ast), minilang.dataflow(ref_ast))
    n_pairs = len(candidates)
    syntax = syntax_sum / n_pairs
    flow = dataflow_sum / n_pairs

    value = 100.0 * (alpha * ngram + beta * weighted + gamma * syntax + delta * flow)
    return MetricReport(
        task=task,
        metric="codebleu",
        value=value,
        components={
            "ngram": ngram,
            "weighted_ngram": weighted,
            "syntax": syntax,
            "dataflow": flow,
        },
        counts={"evaluated": n_pairs, "parse_failures": parse_failures},
        weights={"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta},
    )
