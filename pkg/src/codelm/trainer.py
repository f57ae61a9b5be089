"""Training loops and checkpoint persistence.

Pretraining runs span-corruption denoising over a text corpus; fine-tuning
samples examples-proportionally from a multi-task mixture of prefixed
(input, target) id pairs.  Both share one optimizer: adaptive moment
estimation with linear warmup, inverse-square-root decay, and global-norm
gradient clipping.  Checkpoints are directories holding a text manifest
plus one little-endian binary file per named array; a save/load round
trip is byte-identical.
"""

from __future__ import annotations

import math
import os
import random
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import denoise as dn
from .autodiff import Tensor
from .errors import FormatError, IOFailure, PipelineError
from .model import Batch, ModelConfig, forward, init_params, loss, make_batch
from .tokenizer import EOS_ID, CorpusEmpty, Vocabulary

CHECKPOINT_FORMAT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MANIFEST_NAME = "manifest"


class Diverged(PipelineError):
    code = "DIVERGED"


class EmptyMixture(PipelineError):
    code = "EMPTY_MIXTURE"


class VersionMismatch(PipelineError):
    code = "VERSION_MISMATCH"


class VocabMismatch(PipelineError):
    code = "VOCAB_MISMATCH"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    total_steps: int
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    checkpoint_every: int = 0
    seed: int = 0
    clip_norm: float = 1.0

    def __post_init__(self) -> None:
        # learning_rate = 0 is allowed as an analytic no-op configuration
        if self.learning_rate < 0:
            raise FormatError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise FormatError("batch_size must be >= 1")
        if self.total_steps < 0 or self.warmup_steps < 0 or self.checkpoint_every < 0:
            raise FormatError("step counts must be >= 0")
        if self.clip_norm <= 0:
            raise FormatError("clip_norm must be > 0")


@dataclass
class Checkpoint:
    version: int
    step: int
    config: ModelConfig
    params: dict[str, Tensor]
    moment1: dict[str, np.ndarray]
    moment2: dict[str, np.ndarray]
    vocab_fingerprint: str

    def clone(self) -> "Checkpoint":
        return Checkpoint(
            version=self.version,
            step=self.step,
            config=self.config,
            params={k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()},
            moment1={k: v.copy() for k, v in self.moment1.items()},
            moment2={k: v.copy() for k, v in self.moment2.items()},
            vocab_fingerprint=self.vocab_fingerprint,
        )


@dataclass(frozen=True)
class MixtureEntry:
    name: str
    examples: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]


@dataclass(frozen=True)
class MixtureSpec:
    entries: tuple[MixtureEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise EmptyMixture("mixture has no tasks")
        for entry in self.entries:
            if not entry.examples:
                raise EmptyMixture(f"task {entry.name!r} contributes zero examples")

    @property
    def total_examples(self) -> int:
        return sum(len(e.examples) for e in self.entries)


def make_mixture(tasks: list[tuple[str, list[tuple[list[int], list[int]]]]]) -> MixtureSpec:
    entries = tuple(
        MixtureEntry(name, tuple((tuple(src), tuple(tgt)) for src, tgt in examples))
        for name, examples in tasks
    )
    return MixtureSpec(entries)


def draw_example(mixture: MixtureSpec, rng: random.Random) -> tuple[int, int]:
    """Examples-proportional draw: uniform over the pooled example list."""
    flat = rng.randrange(mixture.total_examples)
    for task_index, entry in enumerate(mixture.entries):
        if flat < len(entry.examples):
            return task_index, flat
        flat -= len(entry.examples)
    raise AssertionError("unreachable")


def init_checkpoint(config: ModelConfig, seed: int, vocab_fingerprint: str) -> Checkpoint:
    params = init_params(config, seed)
    return Checkpoint(
        version=CHECKPOINT_FORMAT_VERSION,
        step=0,
        config=config,
        params=params,
        moment1={k: np.zeros_like(p.data) for k, p in params.items()},
        moment2={k: np.zeros_like(p.data) for k, p in params.items()},
        vocab_fingerprint=vocab_fingerprint,
    )


def learning_rate_at(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, then inverse-square-root decay.

    `step` is the 0-based global optimizer step about to be applied."""
    warm = max(1, cfg.warmup_steps)
    if step < warm:
        return cfg.learning_rate * (step + 1) / warm
    return cfg.learning_rate * math.sqrt(warm / (step + 1))


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def apply_adam_step(checkpoint: Checkpoint, grads: dict[str, np.ndarray], cfg: TrainConfig) -> float:
    """One clipped Adam update in place; returns the learning rate used."""
    norm = global_grad_norm(grads)
    if norm > cfg.clip_norm:
        scale = cfg.clip_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    lr = learning_rate_at(cfg, checkpoint.step)
    t = checkpoint.step + 1
    correct1 = 1.0 - ADAM_BETA1**t
    correct2 = 1.0 - ADAM_BETA2**t
    for name, p in checkpoint.params.items():
        g = grads[name]
        m = checkpoint.moment1[name]
        v = checkpoint.moment2[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p.data -= lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
    checkpoint.step = t
    return lr


def _training_step(
    checkpoint: Checkpoint, batch: Batch, drop_rng: np.random.Generator
) -> tuple[float, dict[str, np.ndarray]]:
    value = loss(
        forward(checkpoint.params, checkpoint.config, batch, rng=drop_rng, training=True), batch
    )
    ad.backward(value)
    grads: dict[str, np.ndarray] = {}
    for name, p in checkpoint.params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return float(value.data), grads


def _run_loop(
    checkpoint: Checkpoint,
    cfg: TrainConfig,
    next_batch,
    on_step,
    checkpoint_dir: str | None,
) -> Checkpoint:
    drop_rng = np.random.default_rng(cfg.seed + 1)
    for local_step in range(cfg.total_steps):
        batch = next_batch(local_step)
        value, grads = _training_step(checkpoint, batch, drop_rng)
        if not math.isfinite(value):
            raise Diverged(f"non-finite loss at step {checkpoint.step}")
        lr = apply_adam_step(checkpoint, grads, cfg)
        if on_step is not None:
            on_step(checkpoint.step, value, lr)
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and checkpoint.step % cfg.checkpoint_every == 0
        ):
            save(checkpoint, os.path.join(checkpoint_dir, f"step-{checkpoint.step}"))
    return checkpoint


def _pretrain_length_cap(config: ModelConfig) -> int:
    # worst-case denoising target is 2n + 1 tokens for an n-token original
    return max(1, min(config.max_input_len, (config.max_target_len - 1) // 2))


def pretrain(
    texts: list[str],
    vocab: Vocabulary,
    denoise_cfg: dn.CorruptionConfig,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    start: Checkpoint | None = None,
    on_step=None,
    checkpoint_dir: str | None = None,
) -> Checkpoint:
    """Denoising pretraining over a text corpus.

    Each batch samples sequences uniformly, corrupts them with a fresh
    per-draw record index, and fits the sentinel-delimited targets.
    Deterministic given seeds; raises Diverged on a non-finite loss.
    """
    cap = _pretrain_length_cap(model_cfg)
    encoded = [ids[:cap] for ids in (vocab.encode(t) for t in texts) if ids]
    if not encoded:
        raise CorpusEmpty("no non-empty sequences to pretrain on")
    checkpoint = start if start is not None else init_checkpoint(
        model_cfg, train_cfg.seed, vocab.fingerprint()
    )
    data_rng = random.Random(train_cfg.seed)
    draw_counter = 0

    def next_batch(_local_step: int) -> Batch:
        nonlocal draw_counter
        pairs = []
        for _ in range(train_cfg.batch_size):
            ids = encoded[data_rng.randrange(len(encoded))]
            record_rng = dn.rng_for_record(denoise_cfg, draw_counter)
            draw_counter += 1
            example = dn.corrupt(ids, denoise_cfg, record_rng, vocab)
            pairs.append((list(example.input_ids), list(example.target_ids)))
        return make_batch(pairs)

    return _run_loop(checkpoint, train_cfg, next_batch, on_step, checkpoint_dir)


def _fit_pair(
    src: tuple[int, ...], tgt: tuple[int, ...], config: ModelConfig
) -> tuple[list[int], list[int]]:
    source = list(src)[: config.max_input_len]
    target = list(tgt)
    if not target or target[-1] != EOS_ID:
        target = target + [EOS_ID]
    if len(target) > config.max_target_len:
        target = target[: config.max_target_len - 1] + [EOS_ID]
    return source, target


def finetune(
    checkpoint: Checkpoint,
    mixture: MixtureSpec,
    train_cfg: TrainConfig,
    on_step=None,
    checkpoint_dir: str | None = None,
) -> Checkpoint:
    """Multi-task fine-tuning with examples-proportional batch sampling.

    Inputs are truncated to the model's input limit; targets get EOS
    appended when missing and are truncated to fit the target limit.
    """
    data_rng = random.Random(train_cfg.seed)
    config = checkpoint.config

    def next_batch(_local_step: int) -> Batch:
        pairs = []
        for _ in range(train_cfg.batch_size):
            task_index, example_index = draw_example(mixture, data_rng)
            src, tgt = mixture.entries[task_index].examples[example_index]
            pairs.append(_fit_pair(src, tgt, config))
        return make_batch(pairs)

    return _run_loop(checkpoint, train_cfg, next_batch, on_step, checkpoint_dir)


def smoothed(losses: list[float], window: int = 20) -> list[float]:
    """Trailing-window mean of a loss curve."""
    out = []
    for i in range(len(losses)):
        lo = max(0, i - window + 1)
        out.append(sum(losses[lo : i + 1]) / (i + 1 - lo))
    return out


# --- persistence ---------------------------------------------------------


def _array_file(name: str) -> str:
    return name + ".bin"


def _write_array(path: str, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def _read_array(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IOFailure(f"cannot read array file {path}: {exc}") from exc
    if len(raw) < 8:
        raise FormatError(f"array file {path} is truncated")
    (rank,) = struct.unpack_from("<q", raw, 0)
    if rank < 0 or len(raw) < 8 + 8 * rank:
        raise FormatError(f"array file {path} has a bad header")
    shape = struct.unpack_from(f"<{rank}q", raw, 8)
    count = 1
    for dim in shape:
        count *= dim
    body = raw[8 + 8 * rank :]
    if len(body) != 8 * count:
        raise FormatError(f"array file {path} has {len(body)} payload bytes, expected {8 * count}")
    return np.frombuffer(body, dtype="<f8").reshape(shape).copy()


def save(checkpoint: Checkpoint, path: str) -> None:
    """Write manifest plus one binary file per parameter and moment array."""
    try:
        os.makedirs(path, exist_ok=True)
        names = list(checkpoint.params)
        lines = [
            f"#checkpoint-v{CHECKPOINT_FORMAT_VERSION}",
            f"version={checkpoint.version}",
            f"step={checkpoint.step}",
            f"vocab_fingerprint={checkpoint.vocab_fingerprint}",
        ]
        for key, value in sorted(checkpoint.config.to_dict().items()):
            lines.append(f"config.{key}={value!r}")
        lines.append("arrays=" + ",".join(names))
        with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        for name in names:
            _write_array(os.path.join(path, _array_file(name)), checkpoint.params[name].data)
            _write_array(os.path.join(path, _array_file(name + ".m1")), checkpoint.moment1[name])
            _write_array(os.path.join(path, _array_file(name + ".m2")), checkpoint.moment2[name])
    except OSError as exc:
        raise IOFailure(f"cannot write checkpoint to {path}: {exc}") from exc


def load(path: str, expected_fingerprint: str | None = None) -> Checkpoint:
    """Read a checkpoint directory; verify format version and, when given,
    the vocabulary fingerprint."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read checkpoint manifest {manifest_path}: {exc}") from exc
    if not raw_lines or not raw_lines[0].startswith("#checkpoint-v"):
        raise FormatError("missing checkpoint header line")
    fields: dict[str, str] = {}
    for line in raw_lines[1:]:
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"bad manifest line: {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value
    try:
        version = int(fields["version"])
    except (KeyError, ValueError) as exc:
        raise FormatError("manifest missing a numeric version") from exc
    if version != CHECKPOINT_FORMAT_VERSION or raw_lines[0] != f"#checkpoint-v{version}":
        raise VersionMismatch(
            f"checkpoint format {fields.get('version')} != {CHECKPOINT_FORMAT_VERSION}"
        )
    fingerprint = fields.get("vocab_fingerprint", "")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise VocabMismatch(
            f"checkpoint was trained with vocabulary {fingerprint[:12]}..., "
            f"got {expected_fingerprint[:12]}..."
        )
    config_fields: dict[str, float] = {}
    for key, value in fields.items():
        if key.startswith("config."):
            try:
                parsed = int(value)
            except ValueError:
                try:
                    parsed = float(value)
                except ValueError as exc:
                    raise FormatError(f"non-numeric config value: {key}={value}") from exc
            config_fields[key[len("config.") :]] = parsed
    config = ModelConfig.from_dict(config_fields)
    names = fields.get("arrays", "")
    if not names:
        raise FormatError("manifest lists no arrays")
    params: dict[str, Tensor] = {}
    moment1: dict[str, np.ndarray] = {}
    moment2: dict[str, np.ndarray] = {}
    for name in names.split(","):
        params[name] = Tensor(
            _read_array(os.path.join(path, _array_file(name))), requires_grad=True
        )
        moment1[name] = _read_array(os.path.join(path, _array_file(name + ".m1")))
        moment2[name] = _read_array(os.path.join(path, _array_file(name + ".m2")))
    return Checkpoint(
        version=version,
        step=int(fields.get("step", "0")),
        config=config,
        params=params,
        moment1=moment1,
        moment2=moment2,
        vocab_fingerprint=fingerprint,
    )
