"""Reversible rewriting of code glyphs into word-form markers.

Subword vocabularies trained on natural text tend to lack single-glyph
code symbols such as ``{`` or ``$``.  The codec replaces each such glyph
with a space-padded marker word (``{`` -> `` OBRACE ``) before any
tokenization, and undoes the rewrite exactly on the way out.

The round trip is character-exact: ``denormalize(normalize(s)) == s``
for any ``s`` that passes :func:`validate` (i.e. contains no marker word
as a standalone token).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import FormatError, PipelineError

CODEC_FORMAT_VERSION = 1

_MARKER_RE = re.compile(r"^[A-Z_]+$")

DEFAULT_GLYPH_MARKERS = (
    ("{", "OBRACE"),
    ("}", "CBRACE"),
    ("[", "OBRACK"),
    ("]", "CBRACK"),
    ("$", "DOLLARTOK"),
    ("^", "CARETTOK"),
    ("~", "TILDETOK"),
    ("`", "BTICKTOK"),
    ("\\", "BSLASHTOK"),
    ("|", "VBARTOK"),
    ("<", "LANGLETOK"),
    (">", "RANGLETOK"),
)


class ReservedMarkerPresent(PipelineError):
    code = "RESERVED_MARKER_PRESENT"


class BadCodecTable(PipelineError):
    code = "BAD_CODEC_TABLE"


@dataclass(frozen=True)
class CodecTable:
    """Bijective glyph <-> marker mapping.

    Glyphs are single characters; markers are words of uppercase ASCII
    letters and underscores.  No marker may be a substring of another,
    and no marker may contain a glyph from the table, so marker tokens
    survive normalization untouched.
    """

    entries: tuple[tuple[str, str], ...] = field(default=DEFAULT_GLYPH_MARKERS)
    version: int = CODEC_FORMAT_VERSION

    def __post_init__(self) -> None:
        glyphs = [g for g, _ in self.entries]
        markers = [m for _, m in self.entries]
        if len(set(glyphs)) != len(glyphs):
            raise BadCodecTable("duplicate glyphs in codec table")
        if len(set(markers)) != len(markers):
            raise BadCodecTable("duplicate markers in codec table")
        for g in glyphs:
            if len(g) != 1:
                raise BadCodecTable(f"glyph {g!r} is not a single character")
        for m in markers:
            if not _MARKER_RE.match(m):
                raise BadCodecTable(f"marker {m!r} is not uppercase-ASCII word form")
            if any(g in m for g in glyphs):
                raise BadCodecTable(f"marker {m!r} contains a table glyph")
        for m in markers:
            for other in markers:
                if m is not other and m in other:
                    raise BadCodecTable(f"marker {m!r} is a substring of {other!r}")

    @property
    def glyph_to_marker(self) -> dict[str, str]:
        return dict(self.entries)

    @property
    def marker_to_glyph(self) -> dict[str, str]:
        return {m: g for g, m in self.entries}

    def to_text(self) -> str:
        lines = [f"#codec-v{self.version}"]
        lines += [f"{g}\t{m}" for g, m in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CodecTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#codec-v"):
            raise FormatError("codec table missing '#codec-v<n>' header")
        try:
            version = int(lines[0][len("#codec-v"):])
        except ValueError as exc:
            raise FormatError(f"bad codec version line: {lines[0]!r}") from exc
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"line {lineno}: expected '<glyph>\\t<marker>'")
            entries.append((parts[0], parts[1]))
        return cls(entries=tuple(entries), version=version)


DEFAULT_TABLE = CodecTable()


def to_text(table: CodecTable = DEFAULT_TABLE) -> str:
    return table.to_text()


def from_text(text: str) -> CodecTable:
    return CodecTable.from_text(text)


def validate(text: str, table: CodecTable = DEFAULT_TABLE) -> bool:
    """True iff ``text`` contains no marker word as a standalone token.

    Tokens are delimited by any whitespace; this is deliberately stricter
    than the space-only convention :func:`normalize` emits.
    """
    markers = table.marker_to_glyph
    return not any(tok in markers for tok in text.split())


def normalize(text: str, table: CodecTable = DEFAULT_TABLE) -> str:
    """Replace every table glyph with `` <MARKER> `` (space-padded).

    Raises :class:`ReservedMarkerPresent` when the input already contains
    a marker token, since the rewrite would no longer be invertible.
    """
    if not validate(text, table):
        raise ReservedMarkerPresent(
            "text contains a reserved marker word; skip or escape the record"
        )
    mapping = table.glyph_to_marker
    out: list[str] = []
    for ch in text:
        marker = mapping.get(ch)
        if marker is None:
            out.append(ch)
        else:
            out.append(f" {marker} ")
    return "".join(out)


def denormalize(text: str, table: CodecTable = DEFAULT_TABLE) -> str:
    """Replace standalone marker tokens with their glyphs.

    Exactly one space on each side of a marker is absorbed (the padding
    :func:`normalize` added), so the round trip is character-exact.
    Unknown words and marker-free text pass through unchanged.
    """
    markers = table.marker_to_glyph
    tokens = text.split(" ")
    # sep_before[i] is True when the single space between tokens i-1 and i
    # should be emitted during reconstruction.
    sep_before = [False] + [True] * (len(tokens) - 1)
    for i, tok in enumerate(tokens):
        glyph = markers.get(tok)
        if glyph is not None:
            tokens[i] = glyph
            sep_before[i] = False
            if i + 1 < len(tokens):
                sep_before[i + 1] = False
    parts: list[str] = []
    for i, tok in enumerate(tokens):
        if sep_before[i]:
            parts.append(" ")
        parts.append(tok)
    return "".join(parts)
