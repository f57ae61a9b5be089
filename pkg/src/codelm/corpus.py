"""Function-record ingestion and pretraining-sequence assembly.

The corpus file format is UTF-8 JSON Lines, one object per line with
fields ``id``, ``language``, ``code`` and ``doc`` (string or null).  The
same format stands in for both search-style and repository-extraction
sources.

Sequences are assembled either *bimodal* (doc ++ separator ++ code) or
*unimodal* (code only), after codec normalization, following one of the
named corpus combinations.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from . import codec
from .errors import FormatError, PipelineError

DEFAULT_SEPARATOR = " <SEP> "


class MissingDoc(PipelineError):
    code = "MISSING_DOC"


class MissingSource(PipelineError):
    code = "MISSING_SOURCE"


class Modality(str, enum.Enum):
    BIMODAL = "bimodal"
    UNIMODAL = "unimodal"


@dataclass(frozen=True)
class FunctionRecord:
    """One source function with an optional natural-language doc."""

    id: str
    language: str
    code: str
    doc: str | None = None

    def __post_init__(self) -> None:
        if not self.code:
            raise FormatError(f"record {self.id!r}: empty code")
        if self.language != self.language.lower():
            raise FormatError(f"record {self.id!r}: language tag must be lowercase")


@dataclass(frozen=True)
class PretrainSequence:
    text: str
    modality: Modality
    source_id: str


@dataclass(frozen=True)
class CorpusCombination:
    """A named selection of sources and the modality they are emitted in.

    The three stock combinations mirror the usual corpus mixes: one
    code-only source, the same source paired code-with-doc, and code-only
    with an extra repositories source appended.
    """

    name: str
    modality: Modality
    sources: tuple[str, ...]


ONE_CC = CorpusCombination("1-CC", Modality.UNIMODAL, ("codesearch",))
TWO_CC = CorpusCombination("2-CC", Modality.BIMODAL, ("codesearch",))
ONE_CCG = CorpusCombination("1-CCG", Modality.UNIMODAL, ("codesearch", "github"))

COMBINATIONS = {c.name: c for c in (ONE_CC, TWO_CC, ONE_CCG)}


@dataclass
class CorpusStats:
    """Mutable counters a caller can pass in to observe skip behavior."""

    ingested: int = 0
    emitted: int = 0
    skipped_malformed: int = 0
    skipped_marker: int = 0
    skipped_missing_doc: int = 0
    per_source: dict[str, dict[str, int]] = field(default_factory=dict)

    def source(self, name: str) -> dict[str, int]:
        return self.per_source.setdefault(name, {"ingested": 0, "emitted": 0, "skipped": 0})


def parse_record(obj: dict) -> FunctionRecord:
    if not isinstance(obj, dict):
        raise FormatError("record is not a JSON object")
    try:
        rid = obj["id"]
        language = obj["language"]
        code = obj["code"]
    except KeyError as exc:
        raise FormatError(f"record missing field {exc.args[0]!r}") from exc
    doc = obj.get("doc")
    if not isinstance(rid, str) or not isinstance(language, str) or not isinstance(code, str):
        raise FormatError("id/language/code must be strings")
    if doc is not None and not isinstance(doc, str):
        raise FormatError("doc must be a string or null")
    return FunctionRecord(id=rid, language=language, code=code, doc=doc)


def ingest(
    lines: Iterable[str],
    table: codec.CodecTable = codec.DEFAULT_TABLE,
    stats: CorpusStats | None = None,
) -> Iterator[FunctionRecord]:
    """Yield records from a JSON Lines stream, in input order.

    Malformed lines after the first are counted and skipped; a malformed
    first record raises FORMAT_ERROR since the stream as a whole is then
    suspect.  Records whose code or doc would collide with a codec marker
    are skipped with a counter.
    """
    stats = stats if stats is not None else CorpusStats()
    first = True
    for line in lines:
        if not line.strip():
            continue
        stats.ingested += 1
        try:
            record = parse_record(json.loads(line))
        except (json.JSONDecodeError, FormatError) as exc:
            if first:
                raise FormatError(f"first record unreadable: {exc}") from exc
            stats.skipped_malformed += 1
            continue
        finally:
            first = False
        if not codec.validate(record.code, table) or (
            record.doc is not None and not codec.validate(record.doc, table)
        ):
            stats.skipped_marker += 1
            continue
        stats.emitted += 1
        yield record


def make_bimodal(
    record: FunctionRecord,
    separator: str = DEFAULT_SEPARATOR,
    table: codec.CodecTable = codec.DEFAULT_TABLE,
) -> PretrainSequence:
    """doc ++ separator ++ code, both segments codec-normalized."""
    if not record.doc:
        raise MissingDoc(f"record {record.id!r} has no doc; cannot build bimodal sequence")
    text = codec.normalize(record.doc, table) + separator + codec.normalize(record.code, table)
    return PretrainSequence(text=text, modality=Modality.BIMODAL, source_id=record.id)


def make_unimodal(
    record: FunctionRecord,
    table: codec.CodecTable = codec.DEFAULT_TABLE,
) -> PretrainSequence:
    """Code only; any doc is ignored."""
    return PretrainSequence(
        text=codec.normalize(record.code, table),
        modality=Modality.UNIMODAL,
        source_id=record.id,
    )


def build(
    combination: CorpusCombination,
    sources: dict[str, Iterable[FunctionRecord]],
    separator: str = DEFAULT_SEPARATOR,
    table: codec.CodecTable = codec.DEFAULT_TABLE,
    stats: CorpusStats | None = None,
    nl_lines: Iterable[str] | None = None,
) -> Iterator[PretrainSequence]:
    """Emit pretraining sequences for every source in the combination.

    Sources are consumed in the combination's declared order.  Under the
    bimodal modality, doc-less records are skipped (with a counter) rather
    than downgraded, keeping every emitted sequence's modality equal to
    the combination's.

    ``nl_lines`` optionally mixes a plain-text source in after the code
    sources; it is only meaningful for unimodal combinations (plain text
    has no doc/code split) and is off by default.
    """
    stats = stats if stats is not None else CorpusStats()
    if nl_lines is not None and combination.modality is Modality.BIMODAL:
        raise PipelineError("plain-text mixing is only supported for unimodal combinations")
    for name in combination.sources:
        if name not in sources:
            raise MissingSource(f"combination {combination.name!r} needs source {name!r}")
    for name in combination.sources:
        src_stats = stats.source(name)
        for record in sources[name]:
            src_stats["ingested"] += 1
            if combination.modality is Modality.BIMODAL:
                if not record.doc:
                    src_stats["skipped"] += 1
                    stats.skipped_missing_doc += 1
                    continue
                seq = make_bimodal(record, separator, table)
            else:
                seq = make_unimodal(record, table)
            src_stats["emitted"] += 1
            yield seq
    if nl_lines is not None:
        src_stats = stats.source("text")
        for i, line in enumerate(nl_lines):
            src_stats["ingested"] += 1
            if not codec.validate(line, table):
                src_stats["skipped"] += 1
                continue
            src_stats["emitted"] += 1
            yield PretrainSequence(
                text=codec.normalize(line, table),
                modality=combination.modality,
                source_id=f"text-{i}",
            )


def write_sequences(sequences: Iterable[PretrainSequence], path) -> int:
    """Serialize sequences as JSON Lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(
                json.dumps(
                    {"text": seq.text, "modality": seq.modality.value, "source_id": seq.source_id},
                    ensure_ascii=False,
                )
                + "\n"
            )
            n += 1
    return n


def read_sequences(path) -> Iterator[PretrainSequence]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            yield PretrainSequence(
                text=obj["text"],
                modality=Modality(obj["modality"]),
                source_id=obj["source_id"],
            )
