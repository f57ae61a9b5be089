"""Decoding for trained checkpoints.

Greedy and length-normalized beam search for generation, plus constrained
label scoring for classification.  Every step re-runs the full forward
pass under no_grad, so decoding is read-only over the checkpoint and
deterministic.  Beam search always retains the pure-argmax lineage as a
shadow hypothesis, which makes beam_size=1 exactly equal to greedy and
keeps the searched space a superset of the greedy path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, IOFailure, PipelineError
from .model import Batch, forward
from .tokenizer import EOS_ID, PAD_ID
from .trainer import Checkpoint


class InputTooLong(PipelineError):
    code = "INPUT_TOO_LONG"


@dataclass(frozen=True)
class DecodeConfig:
    max_length: int
    strategy: str = "greedy"
    beam_size: int = 4
    length_penalty: float = 0.6

    def __post_init__(self) -> None:
        if self.max_length < 1:
            raise FormatError("max_length must be >= 1")
        if self.beam_size < 1:
            raise FormatError("beam_size must be >= 1")
        if self.strategy not in ("greedy", "beam"):
            raise FormatError(f"unknown decode strategy: {self.strategy!r}")


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class Hypothesis:
    """ids exclude the terminator; log_prob includes it once finished."""

    ids: tuple[int, ...]
    log_prob: float
    finished: bool
    greedy_lineage: bool

    def scored_length(self) -> int:
        return len(self.ids) + (1 if self.finished else 0)

    def score(self, alpha: float) -> float:
        return self.log_prob / length_penalty(self.scored_length(), alpha)


def _check_input(checkpoint: Checkpoint, input_ids: list[int]) -> None:
    if not input_ids:
        raise FormatError("empty decode input")
    if len(input_ids) > checkpoint.config.max_input_len:
        raise InputTooLong(
            f"input has {len(input_ids)} tokens, model limit is "
            f"{checkpoint.config.max_input_len}"
        )


def _step_batch(input_ids: list[int], prefix: tuple[int, ...]) -> Batch:
    src = np.asarray([input_ids], dtype=np.int64)
    dec = np.asarray([(PAD_ID,) + prefix], dtype=np.int64)
    dummy = np.zeros_like(dec)
    return Batch(src, np.ones_like(src, dtype=np.float64), dec, dummy, np.ones_like(dec, dtype=np.float64))


def _next_log_probs(checkpoint: Checkpoint, input_ids: list[int], prefix: tuple[int, ...]) -> np.ndarray:
    """Log-distribution over the token following `prefix`."""
    with ad.no_grad():
        logits = forward(checkpoint.params, checkpoint.config, _step_batch(input_ids, prefix))
        return ad.log_softmax(logits, axis=-1).data[0, -1]


def _generation_cap(checkpoint: Checkpoint, cfg: DecodeConfig) -> int:
    return min(cfg.max_length, checkpoint.config.max_target_len - 1)


def greedy(checkpoint: Checkpoint, input_ids: list[int], cfg: DecodeConfig) -> list[int]:
    """Argmax decoding; returns generated ids without the terminator."""
    _check_input(checkpoint, input_ids)
    out: tuple[int, ...] = ()
    for _ in range(_generation_cap(checkpoint, cfg)):
        nxt = int(np.argmax(_next_log_probs(checkpoint, input_ids, out)))
        if nxt == EOS_ID:
            break
        out = out + (nxt,)
    return list(out)


def beam_search(checkpoint: Checkpoint, input_ids: list[int], cfg: DecodeConfig) -> list[Hypothesis]:
    """All surviving hypotheses, best first by length-normalized score.

    Finished hypotheses outrank unfinished ones; the argmax lineage is
    never pruned, so the search space always contains the greedy path.
    """
    _check_input(checkpoint, input_ids)
    alpha = cfg.length_penalty
    beams = [Hypothesis((), 0.0, False, True)]
    for _ in range(_generation_cap(checkpoint, cfg)):
        if all(h.finished for h in beams):
            break
        candidates: list[Hypothesis] = []
        for hyp in beams:
            if hyp.finished:
                candidates.append(hyp)
                continue
            log_probs = _next_log_probs(checkpoint, input_ids, hyp.ids)
            k = min(cfg.beam_size, log_probs.size)
            # stable sort so ties resolve to the lowest token id, like argmax
            top = np.argsort(-log_probs, kind="stable")[:k]
            argmax_token = int(top[0])
            for token in top.tolist():
                finished = token == EOS_ID
                candidates.append(
                    Hypothesis(
                        hyp.ids if finished else hyp.ids + (token,),
                        hyp.log_prob + float(log_probs[token]),
                        finished,
                        hyp.greedy_lineage and token == argmax_token,
                    )
                )
        order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score(alpha), i))
        kept = [candidates[i] for i in order[: cfg.beam_size]]
        if not any(h.greedy_lineage for h in kept):
            shadow = next(h for h in candidates if h.greedy_lineage)
            kept.append(shadow)
        beams = kept
    finished = [h for h in beams if h.finished]
    pool = finished if finished else beams
    return sorted(pool, key=lambda h: (-h.score(alpha), h.ids))


def beam(checkpoint: Checkpoint, input_ids: list[int], cfg: DecodeConfig) -> list[int]:
    """Best hypothesis from beam search; falls back to the best unfinished
    prefix when nothing terminates within max_length."""
    return list(beam_search(checkpoint, input_ids, cfg)[0].ids)


def decode(checkpoint: Checkpoint, input_ids: list[int], cfg: DecodeConfig) -> list[int]:
    if cfg.strategy == "beam":
        return beam(checkpoint, input_ids, cfg)
    return greedy(checkpoint, input_ids, cfg)


def sequence_log_prob(checkpoint: Checkpoint, input_ids: list[int], output_ids: list[int]) -> float:
    """Teacher-forced log-likelihood of output_ids followed by the
    terminator, given input_ids."""
    _check_input(checkpoint, input_ids)
    target = tuple(output_ids) + (EOS_ID,)
    if len(target) > checkpoint.config.max_target_len:
        raise InputTooLong(
            f"output has {len(target)} scored tokens, model limit is "
            f"{checkpoint.config.max_target_len}"
        )
    with ad.no_grad():
        logits = forward(
            checkpoint.params, checkpoint.config, _step_batch(input_ids, target[:-1])
        )
        log_probs = ad.log_softmax(logits, axis=-1).data[0]
    return float(sum(log_probs[t, tok] for t, tok in enumerate(target)))


def classify(checkpoint: Checkpoint, input_ids: list[int], labels: list[list[int]]) -> int:
    """Index of the label sequence with the highest teacher-forced
    log-likelihood; ties break to the lower index."""
    if not labels:
        raise FormatError("classify needs at least one label sequence")
    best_index = 0
    best_score = -np.inf
    for index, label in enumerate(labels):
        score = sequence_log_prob(checkpoint, input_ids, list(label))
        if score > best_score:
            best_index, best_score = index, score
    return best_index


def label_scores(checkpoint: Checkpoint, input_ids: list[int], labels: list[list[int]]) -> list[float]:
    return [sequence_log_prob(checkpoint, input_ids, list(label)) for label in labels]


def write_predictions(rows: list[tuple[object, str]], path: str) -> None:
    """JSON Lines, one {id, prediction} object per row."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for row_id, prediction in rows:
                fh.write(json.dumps({"id": row_id, "prediction": prediction}) + "\n")
    except OSError as exc:
        raise IOFailure(f"cannot write predictions to {path}: {exc}") from exc


def read_predictions(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line]
    except OSError as exc:
        raise IOFailure(f"cannot read predictions from {path}: {exc}") from exc
    rows = []
    for line in lines:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad prediction line: {line!r}") from exc
        if not isinstance(obj, dict) or "id" not in obj or "prediction" not in obj:
            raise FormatError(f"prediction row missing id/prediction: {line!r}")
        rows.append(obj)
    return rows
