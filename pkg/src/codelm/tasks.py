"""Task adapters: summarization, generation, refinement, defect detection.

Each loader maps raw JSON Lines records into prefixed TaskExamples whose
code fields are codec-normalized.  The prefix (ending in ": ") is what
lets one multi-task model tell the tasks apart, so loaders guarantee
every emitted input starts with it.  `fit_examples` then tokenizes and
enforces the per-task length budgets, leaving one slot for the
terminator and recording truncation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import codec
from .errors import FormatError, IOFailure, PipelineError
from .tokenizer import Vocabulary

CTX_TOKEN = "<CTX>"
POSITIVE_LABEL = "positive"
NEGATIVE_LABEL = "negative"
# index by the integer label value
DEFECT_LABELS = (NEGATIVE_LABEL, POSITIVE_LABEL)

FULL_SCALE_LENGTHS = {
    "summarization": (512, 512),
    "generation": (256, 256),
    "refinement": (512, 512),
    "defect": (1024, 5),
}
DESK_SCALE_DIVISOR = 4
# never squeeze a budget below the smallest full-scale one (the label slot)
MIN_TARGET_LEN = 5


class BadLabel(PipelineError):
    code = "BAD_LABEL"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    prefix: str
    input_len: int
    target_len: int
    metrics: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.prefix or not self.prefix.endswith(": "):
            raise FormatError("task prefix must be non-empty and end with ': '")
        if self.input_len < 1 or self.target_len < 2:
            raise FormatError("task length budgets too small")


@dataclass(frozen=True)
class TaskExample:
    id: object
    input_text: str
    target_text: str
    task: str


@dataclass
class TaskStats:
    ingested: int = 0
    emitted: int = 0
    skipped_missing_doc: int = 0
    skipped_language: int = 0

    @property
    def skipped(self) -> int:
        return self.skipped_missing_doc + self.skipped_language


def _scaled(task: str, scale: int) -> tuple[int, int]:
    full_in, full_tgt = FULL_SCALE_LENGTHS[task]
    if scale == 1:
        return full_in, full_tgt
    return max(1, full_in // scale), max(MIN_TARGET_LEN, full_tgt // scale)


def summarization_spec(language: str = "java", scale: int = DESK_SCALE_DIVISOR) -> TaskSpec:
    input_len, target_len = _scaled("summarization", scale)
    return TaskSpec("summarization", f"{language}: ", input_len, target_len, ("bleu_smooth4",))


def generation_spec(scale: int = DESK_SCALE_DIVISOR) -> TaskSpec:
    input_len, target_len = _scaled("generation", scale)
    return TaskSpec(
        "generation", "generate java: ", input_len, target_len,
        ("exact_match", "bleu_corpus", "codebleu"),
    )


def refinement_spec(size: str, scale: int = DESK_SCALE_DIVISOR) -> TaskSpec:
    if size not in ("small", "medium"):
        raise FormatError(f"refinement size must be small or medium, got {size!r}")
    input_len, target_len = _scaled("refinement", scale)
    return TaskSpec(
        "refinement", f"refine {size}: ", input_len, target_len,
        ("exact_match", "bleu_corpus"),
    )


def defect_spec(scale: int = DESK_SCALE_DIVISOR) -> TaskSpec:
    input_len, target_len = _scaled("defect", scale)
    return TaskSpec("defect", "defect: ", input_len, target_len, ("accuracy",))


def _require(record: dict, key: str, kind: type = str) -> object:
    if key not in record:
        raise FormatError(f"record missing field {key!r}: {record!r}")
    value = record[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise FormatError(f"field {key!r} must be an integer: {record!r}")
    elif not isinstance(value, kind):
        raise FormatError(f"field {key!r} must be {kind.__name__}: {record!r}")
    return value


def load_summarization(
    records, language: str = "java"
) -> tuple[list[TaskExample], TaskStats]:
    """Code-to-doc pairs; the target stays the raw natural-language doc."""
    spec = summarization_spec(language)
    stats = TaskStats()
    out: list[TaskExample] = []
    for record in records:
        stats.ingested += 1
        rec_id = _require(record, "id", object)
        if str(_require(record, "language")).lower() != language:
            stats.skipped_language += 1
            continue
        code = _require(record, "code")
        doc = record.get("doc")
        if not isinstance(doc, str) or not doc.strip():
            stats.skipped_missing_doc += 1
            continue
        out.append(TaskExample(rec_id, spec.prefix + codec.normalize(code), doc, spec.name))
        stats.emitted += 1
    return out, stats


def load_generation(records) -> tuple[list[TaskExample], TaskStats]:
    """NL-to-code pairs; optional environment context follows a <CTX> token
    at the end of the input so budget pressure truncates it first."""
    spec = generation_spec()
    stats = TaskStats()
    out: list[TaskExample] = []
    for record in records:
        stats.ingested += 1
        rec_id = _require(record, "id", object)
        nl = _require(record, "nl")
        code = _require(record, "code")
        text = spec.prefix + nl
        env = record.get("env")
        if isinstance(env, str) and env.strip():
            text = f"{text} {CTX_TOKEN} {env}"
        out.append(TaskExample(rec_id, text, codec.normalize(code), spec.name))
        stats.emitted += 1
    return out, stats


def load_refinement(records, size: str) -> tuple[list[TaskExample], TaskStats]:
    """Buggy-to-fixed pairs, routed to a size-specific prefix."""
    spec = refinement_spec(size)
    stats = TaskStats()
    out: list[TaskExample] = []
    for record in records:
        stats.ingested += 1
        rec_id = _require(record, "id", object)
        buggy = _require(record, "buggy")
        fixed = _require(record, "fixed")
        out.append(
            TaskExample(
                rec_id, spec.prefix + codec.normalize(buggy), codec.normalize(fixed), spec.name
            )
        )
        stats.emitted += 1
    return out, stats


def load_defect(records) -> tuple[list[TaskExample], TaskStats]:
    """Code with a binary vulnerability label rendered as label text."""
    spec = defect_spec()
    stats = TaskStats()
    out: list[TaskExample] = []
    for record in records:
        stats.ingested += 1
        rec_id = _require(record, "id", object)
        code = _require(record, "code")
        label = _require(record, "label", int)
        if label not in (0, 1):
            raise BadLabel(f"defect label must be 0 or 1, got {label!r}")
        out.append(
            TaskExample(rec_id, spec.prefix + codec.normalize(code), DEFECT_LABELS[label], spec.name)
        )
        stats.emitted += 1
    return out, stats


@dataclass(frozen=True)
class EncodedExample:
    id: object
    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    input_truncated: bool
    target_truncated: bool


def fit_examples(
    examples: list[TaskExample], spec: TaskSpec, vocab: Vocabulary
) -> list[EncodedExample]:
    """Tokenize and clamp to the task budgets.

    Inputs truncate from the tail, which preserves the leading prefix;
    targets keep one slot free for the terminator the trainer appends.
    """
    out: list[EncodedExample] = []
    tgt_budget = spec.target_len - 1
    for example in examples:
        input_ids = vocab.encode(example.input_text)
        target_ids = vocab.encode(example.target_text)
        out.append(
            EncodedExample(
                example.id,
                tuple(input_ids[: spec.input_len]),
                tuple(target_ids[:tgt_budget]),
                len(input_ids) > spec.input_len,
                len(target_ids) > tgt_budget,
            )
        )
    return out


# --- files ---------------------------------------------------------------


def read_task_file(path: str) -> list[dict]:
    """Parse a JSON Lines task dataset into records."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read task file {path}: {exc}") from exc
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{number}: bad JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{number}: record is not an object")
        records.append(obj)
    return records


def read_manifest(path: str) -> dict[str, int]:
    """`name=count` lines describing how many records each sample holds."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read manifest {path}: {exc}") from exc
    counts: dict[str, int] = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad manifest line: {line!r}")
        key, value = line.split("=", 1)
        try:
            counts[key.strip()] = int(value)
        except ValueError as exc:
            raise FormatError(f"non-integer manifest count: {line!r}") from exc
    return counts
