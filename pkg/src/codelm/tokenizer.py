"""Subword vocabulary: byte-level BPE training, encoding, decoding.

Layout of a vocabulary of ``size`` pieces:

- id 0 ``<pad>``, id 1 ``</s>``, id 2 ``<unk>`` (reserved controls);
- ids 3..258: one piece per byte value, rendered through a fixed
  byte-to-printable-unicode table so the vocabulary file stays one piece
  per line;
- id 259: the word-boundary marker ``▁`` (represents one space);
- ids 260..size-101: learned merges, in the order they were learned;
- the last 100 ids: sentinels ``<extra_id_0>``..``<extra_id_99>``.

Every byte value is representable, so encode/decode round trips any
UTF-8 text exactly.  Spaces become boundary markers attached to the
following word; all other characters travel as bytes.  Sentinel ids are
produced only when the literal ``<extra_id_NN>`` string appears in the
text, and they render back to that literal.
"""

from __future__ import annotations

import hashlib
import heapq
import re
from collections import Counter, defaultdict
from typing import Iterable, Sequence

from .errors import FormatError, PipelineError

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_PIECE = "<pad>"
EOS_PIECE = "</s>"
UNK_PIECE = "<unk>"
MARKER = "▁"  # ▁
SENTINEL_COUNT = 100
# 3 controls + 256 bytes + marker + 100 sentinels.
MIN_VOCAB_SIZE = 3 + 256 + 1 + SENTINEL_COUNT

_SENTINEL_RE = re.compile(r"<extra_id_(\d{1,2})>")


class CorpusEmpty(PipelineError):
    code = "CORPUS_EMPTY"


class BadTargetSize(PipelineError):
    code = "BAD_TARGET_SIZE"


class IdOutOfRange(PipelineError):
    code = "ID_OUT_OF_RANGE"


def sentinel_literal(k: int) -> str:
    return f"<extra_id_{k}>"


def _byte_char_tables() -> tuple[dict[int, str], dict[str, int]]:
    """Bijection between byte values and printable unicode characters."""
    keep = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    to_char: dict[int, str] = {}
    shift = 0
    for b in range(256):
        if b in keep:
            to_char[b] = chr(b)
        else:
            to_char[b] = chr(256 + shift)
            shift += 1
    to_byte = {c: b for b, c in to_char.items()}
    return to_char, to_byte


_BYTE_TO_CHAR, _CHAR_TO_BYTE = _byte_char_tables()
_RESERVED_PIECES = (PAD_PIECE, EOS_PIECE, UNK_PIECE)
_SENTINEL_PIECES = tuple(sentinel_literal(k) for k in range(SENTINEL_COUNT))


def _segment_sentinels(text: str) -> list[tuple[str, str]]:
    """Split into ("plain", seg) and ("sentinel", literal) parts."""
    parts: list[tuple[str, str]] = []
    pos = 0
    for m in _SENTINEL_RE.finditer(text):
        if m.start() > pos:
            parts.append(("plain", text[pos : m.start()]))
        parts.append(("sentinel", m.group(0)))
        pos = m.end()
    if pos < len(text):
        parts.append(("plain", text[pos:]))
    return parts


def _word_symbols(word: str, marked: bool) -> str:
    chars = "".join(_BYTE_TO_CHAR[b] for b in word.encode("utf-8"))
    return MARKER + chars if marked else chars


class Vocabulary:
    """Immutable piece inventory with dense ids 0..size-1."""

    PAD = PAD_ID
    EOS = EOS_ID
    UNK = UNK_ID

    def __init__(self, pieces: Sequence[str]):
        pieces = tuple(pieces)
        if len(pieces) < MIN_VOCAB_SIZE:
            raise FormatError(
                f"vocabulary has {len(pieces)} pieces; minimum is {MIN_VOCAB_SIZE}"
            )
        if pieces[:3] != _RESERVED_PIECES:
            raise FormatError("ids 0..2 must be <pad>, </s>, <unk>")
        if pieces[-SENTINEL_COUNT:] != _SENTINEL_PIECES:
            raise FormatError("last 100 ids must be the sentinels in order")
        if len(set(pieces)) != len(pieces):
            raise FormatError("duplicate pieces in vocabulary")
        for b in range(256):
            if _BYTE_TO_CHAR[b] not in pieces[3 : 3 + 256]:
                raise FormatError(f"missing byte piece for value {b}")
        if MARKER not in pieces:
            raise FormatError("missing word-boundary marker piece")
        self.pieces = pieces
        self.size = len(pieces)
        self.sentinel_base = self.size - SENTINEL_COUNT
        self.piece_to_id = {p: i for i, p in enumerate(pieces)}
        # Greedy matching considers byte, marker, and learned pieces only.
        self._match_set = frozenset(pieces[3 : self.sentinel_base])
        self._max_piece_len = max(len(p) for p in self._match_set)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.pieces == other.pieces

    def __hash__(self) -> int:
        return hash(self.pieces)

    def sentinel_id(self, k: int) -> int:
        if not 0 <= k < SENTINEL_COUNT:
            raise IdOutOfRange(f"sentinel index {k} out of range")
        return self.sentinel_base + k

    def is_sentinel(self, token_id: int) -> bool:
        return self.sentinel_base <= token_id < self.size

    def encode(self, text: str) -> list[int]:
        """Deterministic longest-match segmentation to ids (no EOS added)."""
        ids: list[int] = []
        for kind, seg in _segment_sentinels(text):
            if kind == "sentinel":
                k = int(_SENTINEL_RE.fullmatch(seg).group(1))
                ids.append(self.sentinel_base + k)
                continue
            words = seg.split(" ")
            for j, word in enumerate(words):
                symbols = _word_symbols(word, marked=j > 0)
                ids.extend(self._match(symbols))
        return ids

    def _match(self, symbols: str) -> list[int]:
        out: list[int] = []
        i = 0
        n = len(symbols)
        while i < n:
            for length in range(min(self._max_piece_len, n - i), 0, -1):
                piece = symbols[i : i + length]
                if piece in self._match_set:
                    out.append(self.piece_to_id[piece])
                    i += length
                    break
            else:
                raise FormatError(f"unmatchable symbol {symbols[i]!r}")
        return out

    def decode(self, ids: Iterable[int]) -> str:
        """Concatenate pieces; markers become spaces, sentinels their
        literals, PAD/EOS nothing, UNK its literal."""
        parts: list[str] = []
        buf: list[str] = []

        def flush() -> None:
            if buf:
                parts.append(_chars_to_text("".join(buf)))
                buf.clear()

        for token_id in ids:
            if not 0 <= token_id < self.size:
                raise IdOutOfRange(f"id {token_id} out of range for size {self.size}")
            if token_id >= self.sentinel_base:
                flush()
                parts.append(self.pieces[token_id])
            elif token_id in (PAD_ID, EOS_ID):
                continue
            elif token_id == UNK_ID:
                flush()
                parts.append(UNK_PIECE)
            else:
                buf.append(self.pieces[token_id])
        flush()
        return "".join(parts)

    def serialize(self) -> str:
        lines = [f"#vocab-v1 size={self.size}"]
        lines.extend(self.pieces)
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def _chars_to_text(chars: str) -> str:
    raw = bytearray()
    for ch in chars:
        if ch == MARKER:
            raw.append(0x20)
        else:
            byte = _CHAR_TO_BYTE.get(ch)
            if byte is None:
                raise FormatError(f"piece character {ch!r} is not byte-mapped")
            raw.append(byte)
    return raw.decode("utf-8", errors="replace")


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(vocab.serialize())


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    header = lines[0] if lines else ""
    m = re.fullmatch(r"#vocab-v1 size=(\d+)", header)
    if not m:
        raise FormatError(f"bad vocabulary header {header!r}")
    size = int(m.group(1))
    pieces = lines[1 : 1 + size]
    if len(pieces) != size:
        raise FormatError(f"vocabulary file ended early: {len(pieces)} of {size} pieces")
    return Vocabulary(pieces)


def _merge_word(syms: tuple[str, ...], a: str, b: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    n = len(syms)
    while i < n:
        if i + 1 < n and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def train_vocab(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Greedy pair merging until ``target_size`` pieces exist or no pair
    occurs at least twice.  Deterministic given corpus order; count ties
    break toward the lexicographically smaller pair."""
    if target_size < MIN_VOCAB_SIZE:
        raise BadTargetSize(
            f"target_size {target_size} below minimum {MIN_VOCAB_SIZE} "
            "(controls + bytes + marker + sentinels)"
        )
    word_freq: Counter = Counter()
    saw_text = False
    for text in corpus:
        if text:
            saw_text = True
        for kind, seg in _segment_sentinels(text):
            if kind != "plain":
                continue
            for j, word in enumerate(seg.split(" ")):
                symbols = _word_symbols(word, marked=j > 0)
                if symbols:
                    word_freq[symbols] += 1
    if not saw_text or not word_freq:
        raise CorpusEmpty("no text to train on")

    words: list[list] = [[tuple(w), f] for w, f in word_freq.items()]
    pair_counts: Counter = Counter()
    pair_words: defaultdict = defaultdict(set)
    for idx, (syms, freq) in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freq
            pair_words[pair].add(idx)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    target_learned = target_size - MIN_VOCAB_SIZE
    learned: list[str] = []
    taken = set(_RESERVED_PIECES) | set(_SENTINEL_PIECES)
    rejected: set[tuple[str, str]] = set()

    while len(learned) < target_learned and heap:
        neg, pair = heapq.heappop(heap)
        count = -neg
        if pair_counts.get(pair, 0) != count or pair in rejected:
            continue
        if count < 2:
            break
        merged = pair[0] + pair[1]
        if merged in taken:
            rejected.add(pair)
            continue
        for idx in sorted(pair_words[pair]):
            syms, freq = words[idx]
            old_pairs = Counter(zip(syms, syms[1:]))
            if pair not in old_pairs:
                continue  # stale membership
            new_syms = _merge_word(syms, pair[0], pair[1])
            new_pairs = Counter(zip(new_syms, new_syms[1:]))
            for p, c in (old_pairs - new_pairs).items():
                pair_counts[p] -= c * freq
                if pair_counts[p] <= 0:
                    pair_counts.pop(p, None)
                else:
                    heapq.heappush(heap, (-pair_counts[p], p))
            for p, c in (new_pairs - old_pairs).items():
                pair_counts[p] += c * freq
                pair_words[p].add(idx)
                heapq.heappush(heap, (-pair_counts[p], p))
            words[idx][0] = new_syms
        pair_words.pop(pair, None)
        learned.append(merged)
        taken.add(merged)

    pieces = (
        list(_RESERVED_PIECES)
        + [_BYTE_TO_CHAR[b] for b in range(256)]
        + [MARKER]
        + learned
        + list(_SENTINEL_PIECES)
    )
    return Vocabulary(pieces)
