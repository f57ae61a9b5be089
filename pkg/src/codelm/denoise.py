"""Span-corruption examples for denoising pretraining.

``corrupt`` masks random spans of a token sequence: the input keeps the
unmasked tokens with one sentinel id per span, and the target lists each
sentinel followed by the span it replaced, terminated by EOS.  ``splice``
reverses the construction exactly and doubles as the reconstruction
oracle in tests.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

from .errors import FormatError, PipelineError
from .tokenizer import EOS_ID, SENTINEL_COUNT, Vocabulary

DEFAULT_CORRUPTION_RATE = 0.15
DEFAULT_MEAN_SPAN_LENGTH = 3


class SentinelInInput(PipelineError):
    code = "SENTINEL_IN_INPUT"


class MalformedExample(PipelineError):
    code = "MALFORMED_EXAMPLE"


@dataclass(frozen=True)
class CorruptionConfig:
    corruption_rate: float = DEFAULT_CORRUPTION_RATE
    mean_span_length: int = DEFAULT_MEAN_SPAN_LENGTH
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise FormatError(f"corruption_rate {self.corruption_rate} outside [0, 1]")
        if self.mean_span_length < 1:
            raise FormatError(f"mean_span_length {self.mean_span_length} < 1")


@dataclass(frozen=True)
class DenoisingExample:
    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    origin_len: int


def rng_for_record(cfg: CorruptionConfig, index: int) -> random.Random:
    """Per-record generator so sharded corruption is order-independent."""
    return random.Random(cfg.seed ^ index)


def _composition(rng: random.Random, total: int, parts: int) -> list[int]:
    """Uniform weak composition of ``total`` into ``parts`` parts."""
    if parts == 1:
        return [total]
    slots = total + parts - 1
    bars = sorted(rng.sample(range(slots), parts - 1))
    out: list[int] = []
    prev = -1
    for b in bars:
        out.append(b - prev - 1)
        prev = b
    out.append(slots - 1 - prev)
    return out


def corrupt(
    ids: list[int] | tuple[int, ...],
    cfg: CorruptionConfig,
    rng: random.Random,
    vocab: Vocabulary,
) -> DenoisingExample:
    """Mask spans of ``ids`` per ``cfg`` using ``rng``.

    Number of spans is max(1, round(len*r / mean_span_length)) for r > 0,
    capped at the 100-sentinel budget (fewer, longer spans then absorb
    the same mask budget).  Span lengths are uniform on {1..2*mean-1},
    clamped so they total round(len*r) exactly; spans are non-adjacent
    whenever enough unmasked tokens exist to separate them.
    """
    ids = list(ids)
    if not ids:
        raise FormatError("cannot corrupt an empty sequence")
    for t in ids:
        if vocab.is_sentinel(t):
            raise SentinelInInput(f"input contains sentinel id {t}")
    n = len(ids)
    r = cfg.corruption_rate
    if r == 0.0:
        return DenoisingExample(tuple(ids), (EOS_ID,), n)

    num_spans = max(1, round(n * r / cfg.mean_span_length))
    num_spans = min(num_spans, SENTINEL_COUNT)
    masked_total = min(n, max(round(n * r), num_spans))

    max_len = max(2 * cfg.mean_span_length - 1, math.ceil(masked_total / num_spans))
    lengths: list[int] = []
    budget = masked_total
    for i in range(num_spans):
        remaining = num_spans - i - 1
        lo = max(1, budget - remaining * max_len)
        hi = min(max_len, budget - remaining)
        length = rng.randint(lo, hi)
        lengths.append(length)
        budget -= length

    unmasked = n - masked_total
    required = 1 if unmasked >= num_spans - 1 else 0
    free = unmasked - required * (num_spans - 1)
    gaps = _composition(rng, free, num_spans + 1)
    for i in range(1, num_spans):
        gaps[i] += required

    input_ids: list[int] = []
    target_ids: list[int] = []
    pos = 0
    for k, (gap, length) in enumerate(zip(gaps, lengths)):
        input_ids.extend(ids[pos : pos + gap])
        pos += gap
        sentinel = vocab.sentinel_id(k)
        input_ids.append(sentinel)
        target_ids.append(sentinel)
        target_ids.extend(ids[pos : pos + length])
        pos += length
    input_ids.extend(ids[pos:])
    target_ids.append(EOS_ID)
    return DenoisingExample(tuple(input_ids), tuple(target_ids), n)


def splice(example: DenoisingExample, vocab: Vocabulary) -> list[int]:
    """Reconstruct the pre-corruption sequence.

    Raises :class:`MalformedExample` when the sentinel structure of the
    two sides disagrees (order, pairing, or termination)."""
    input_sentinels = [t for t in example.input_ids if vocab.is_sentinel(t)]
    expected = [vocab.sentinel_id(k) for k in range(len(input_sentinels))]
    if input_sentinels != expected:
        raise MalformedExample("input sentinels not S_0, S_1, ... in order")

    target = list(example.target_ids)
    if not target or target[-1] != EOS_ID:
        raise MalformedExample("target does not end with EOS")
    body = target[:-1]
    if EOS_ID in body:
        raise MalformedExample("EOS appears before the end of the target")

    spans: dict[int, list[int]] = {}
    order: list[int] = []
    current: list[int] | None = None
    for t in body:
        if vocab.is_sentinel(t):
            if t in spans:
                raise MalformedExample(f"sentinel id {t} repeated in target")
            current = []
            spans[t] = current
            order.append(t)
        else:
            if current is None:
                raise MalformedExample("target content before any sentinel")
            current.append(t)
    if order != input_sentinels:
        raise MalformedExample("target sentinel order disagrees with input")

    out: list[int] = []
    for t in example.input_ids:
        if vocab.is_sentinel(t):
            out.extend(spans[t])
        else:
            out.append(t)
    return out


def write_examples(examples, path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "input_ids": list(ex.input_ids),
                        "target_ids": list(ex.target_ids),
                        "origin_len": ex.origin_len,
                    }
                )
                + "\n"
            )
            n += 1
    return n


def read_examples(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            yield DenoisingExample(
                tuple(obj["input_ids"]), tuple(obj["target_ids"]), obj["origin_len"]
            )
