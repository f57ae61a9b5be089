"""Encoder-decoder transformer with relative position biases.

Pre-layernorm (RMS variant, scale only, no biases anywhere), multi-head
attention with T5-style logarithmic position buckets (one table per
stack, shared across layers, one bias per head), ReLU feed-forward, and
a linear vocabulary projection.  All math runs in double precision on
the embedded reverse-mode core, so gradients can be checked against
central finite differences.

``forward``/``loss``/``backward`` are pure given (params, batch);
dropout only activates when a training rng is passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, PipelineError

NEG_INF = -1e9
RMSNORM_EPS = 1e-6
RELPOS_MAX_DISTANCE = 128


class ShapeMismatch(PipelineError):
    code = "SHAPE_MISMATCH"


class AllMasked(PipelineError):
    code = "ALL_MASKED"


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    d_model: int
    num_heads: int
    d_ff: int
    vocab_size: int
    num_buckets: int = 32
    max_input_len: int = 64
    max_target_len: int = 64
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise FormatError("num_layers must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise FormatError("d_model must be divisible by num_heads")
        if self.max_input_len < 1 or self.max_target_len < 1:
            raise FormatError("sequence length limits must be >= 1")
        if self.vocab_size < 4:
            raise FormatError("vocab_size too small")
        if self.num_buckets < 2:
            raise FormatError("num_buckets must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise FormatError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "num_buckets": self.num_buckets,
            "max_input_len": self.max_input_len,
            "max_target_len": self.max_target_len,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_layers=int(d["num_layers"]),
            d_model=int(d["d_model"]),
            num_heads=int(d["num_heads"]),
            d_ff=int(d["d_ff"]),
            vocab_size=int(d["vocab_size"]),
            num_buckets=int(d["num_buckets"]),
            max_input_len=int(d["max_input_len"]),
            max_target_len=int(d["max_target_len"]),
            dropout=float(d["dropout"]),
        )


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every named parameter array, derivable from config alone."""
    d, f, h, v = config.d_model, config.d_ff, config.num_heads, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embed": (v, d),
        "relpos_encoder": (config.num_buckets, h),
        "relpos_decoder": (config.num_buckets, h),
    }
    for i in range(config.num_layers):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"enc.{i}.attn.{w}"] = (d, d)
        shapes[f"enc.{i}.ln1"] = (d,)
        shapes[f"enc.{i}.ff.w1"] = (d, f)
        shapes[f"enc.{i}.ff.w2"] = (f, d)
        shapes[f"enc.{i}.ln2"] = (d,)
    for i in range(config.num_layers):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"dec.{i}.self.{w}"] = (d, d)
        shapes[f"dec.{i}.ln1"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"dec.{i}.cross.{w}"] = (d, d)
        shapes[f"dec.{i}.ln2"] = (d,)
        shapes[f"dec.{i}.ff.w1"] = (d, f)
        shapes[f"dec.{i}.ff.w2"] = (f, d)
        shapes[f"dec.{i}.ln3"] = (d,)
    shapes["enc.final_ln"] = (d,)
    shapes["dec.final_ln"] = (d,)
    shapes["lm_head"] = (d, config.vocab_size)
    return shapes


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Deterministic random initialization; layer-norm scales start at 1,
    relative-position tables at 0."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith("relpos"):
            data = np.zeros(shape)
        elif name.endswith(("ln1", "ln2", "ln3", "final_ln")):
            data = np.ones(shape)
        elif name == "embed":
            data = rng.normal(0.0, 0.05, size=shape)
        elif name.endswith("ff.w2"):
            data = rng.normal(0.0, 1.0 / math.sqrt(config.d_ff), size=shape)
        else:
            data = rng.normal(0.0, 1.0 / math.sqrt(d), size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def relative_position_bucket(
    relative_position: np.ndarray,
    bidirectional: bool,
    num_buckets: int,
    max_distance: int = RELPOS_MAX_DISTANCE,
) -> np.ndarray:
    """Logarithmic distance bucketing; exact for small offsets, log-spaced
    up to max_distance, clamped beyond."""
    rel = relative_position
    buckets = np.zeros_like(rel)
    if bidirectional:
        num_buckets //= 2
        buckets = buckets + (rel > 0).astype(np.int64) * num_buckets
        rel = np.abs(rel)
    else:
        rel = -np.minimum(rel, 0)
    max_exact = num_buckets // 2
    is_small = rel < max_exact
    safe = np.maximum(rel, 1)
    if_large = max_exact + (
        np.log(safe / max_exact) / math.log(max_distance / max_exact) * (num_buckets - max_exact)
    ).astype(np.int64)
    if_large = np.minimum(if_large, num_buckets - 1)
    return buckets + np.where(is_small, rel, if_large)


@dataclass
class Batch:
    """Padded ids plus masks.  decoder_input[t] = target[t-1] with PAD as
    the start symbol; loss_mask is 1 through each example's EOS."""

    encoder_ids: np.ndarray
    encoder_mask: np.ndarray
    decoder_input_ids: np.ndarray
    target_ids: np.ndarray
    loss_mask: np.ndarray


def make_batch(pairs: list[tuple[list[int], list[int]]], pad_id: int = 0) -> Batch:
    """Pad (input_ids, target_ids) pairs; targets must already end in EOS."""
    if not pairs:
        raise FormatError("empty batch")
    src_len = max(len(src) for src, _ in pairs)
    tgt_len = max(len(tgt) for _, tgt in pairs)
    if min(len(src) for src, _ in pairs) == 0 or tgt_len == 0:
        raise FormatError("batch contains an empty sequence")
    n = len(pairs)
    enc = np.full((n, src_len), pad_id, dtype=np.int64)
    enc_mask = np.zeros((n, src_len))
    dec_in = np.full((n, tgt_len), pad_id, dtype=np.int64)
    tgt = np.full((n, tgt_len), pad_id, dtype=np.int64)
    loss_mask = np.zeros((n, tgt_len))
    for i, (src, target) in enumerate(pairs):
        enc[i, : len(src)] = src
        enc_mask[i, : len(src)] = 1.0
        tgt[i, : len(target)] = target
        dec_in[i, 1 : len(target)] = target[:-1]
        loss_mask[i, : len(target)] = 1.0
    return Batch(enc, enc_mask, dec_in, tgt, loss_mask)


def _check_batch(config: ModelConfig, batch: Batch) -> None:
    b, s = batch.encoder_ids.shape
    if batch.encoder_mask.shape != (b, s):
        raise ShapeMismatch("encoder mask shape disagrees with encoder ids")
    b2, t = batch.decoder_input_ids.shape
    if b2 != b:
        raise ShapeMismatch("encoder and decoder batch sizes differ")
    if batch.target_ids.shape != (b, t) or batch.loss_mask.shape != (b, t):
        raise ShapeMismatch("decoder-side arrays disagree in shape")
    if s > config.max_input_len or t > config.max_target_len:
        raise ShapeMismatch(
            f"batch lengths ({s}, {t}) exceed config limits "
            f"({config.max_input_len}, {config.max_target_len})"
        )
    for arr in (batch.encoder_ids, batch.decoder_input_ids, batch.target_ids):
        if arr.min() < 0 or arr.max() >= config.vocab_size:
            raise ShapeMismatch("token id outside vocabulary range")


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, l, d = x.shape
    x = ad.reshape(x, (b, l, num_heads, d // num_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, l, h * dh))


def _rmsnorm(x: Tensor, scale: Tensor) -> Tensor:
    ms = ad.reduce_mean(ad.mul(x, x), axis=-1, keepdims=True)
    inv = ad.power(ad.add(ms, RMSNORM_EPS), -0.5)
    return ad.mul(ad.mul(x, inv), scale)


def _attention(
    q_in: Tensor,
    kv_in: Tensor,
    weights: dict[str, Tensor],
    prefix: str,
    num_heads: int,
    bias: Tensor | None,
    additive_mask: np.ndarray | None,
    cfg: ModelConfig,
    rng,
    training: bool,
) -> Tensor:
    q = _split_heads(ad.matmul(q_in, weights[f"{prefix}.wq"]), num_heads)
    k = _split_heads(ad.matmul(kv_in, weights[f"{prefix}.wk"]), num_heads)
    v = _split_heads(ad.matmul(kv_in, weights[f"{prefix}.wv"]), num_heads)
    dh = q.shape[-1]
    logits = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if bias is not None:
        logits = ad.add(logits, bias)
    if additive_mask is not None:
        logits = ad.add(logits, Tensor(additive_mask))
    probs = ad.softmax(logits, axis=-1)
    probs = ad.dropout(probs, cfg.dropout, rng, training)
    out = _merge_heads(ad.matmul(probs, v))
    return ad.matmul(out, weights[f"{prefix}.wo"])


def _ff(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    return ad.matmul(ad.relu(ad.matmul(x, w1)), w2)


def _position_bias(table: Tensor, length: int, bidirectional: bool, num_buckets: int) -> Tensor:
    pos = np.arange(length)
    rel = pos[None, :] - pos[:, None]  # memory position minus query position
    bucket = relative_position_bucket(rel, bidirectional, num_buckets)
    bias = ad.embedding(table, bucket)  # [L, L, H]
    return ad.transpose(bias, (2, 0, 1))  # [H, L, L] broadcasting over batch


def forward(
    params: dict[str, Tensor],
    config: ModelConfig,
    batch: Batch,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Logits [batch, target_len, vocab_size]."""
    _check_batch(config, batch)
    h = config.num_heads
    drop = lambda x: ad.dropout(x, config.dropout, rng, training)  # noqa: E731

    enc_pad = (1.0 - batch.encoder_mask)[:, None, None, :] * NEG_INF  # [B,1,1,S]
    enc_bias = _position_bias(
        params["relpos_encoder"], batch.encoder_ids.shape[1], True, config.num_buckets
    )
    x = drop(ad.embedding(params["embed"], batch.encoder_ids))
    for i in range(config.num_layers):
        attn_in = _rmsnorm(x, params[f"enc.{i}.ln1"])
        x = ad.add(
            x,
            drop(
                _attention(
                    attn_in, attn_in, params, f"enc.{i}.attn", h,
                    enc_bias, enc_pad, config, rng, training,
                )
            ),
        )
        ff_in = _rmsnorm(x, params[f"enc.{i}.ln2"])
        x = ad.add(x, drop(_ff(ff_in, params[f"enc.{i}.ff.w1"], params[f"enc.{i}.ff.w2"])))
    enc_out = _rmsnorm(x, params["enc.final_ln"])

    t = batch.decoder_input_ids.shape[1]
    causal = np.triu(np.full((t, t), NEG_INF), k=1)[None, None, :, :]  # [1,1,T,T]
    dec_bias = _position_bias(params["relpos_decoder"], t, False, config.num_buckets)
    y = drop(ad.embedding(params["embed"], batch.decoder_input_ids))
    for i in range(config.num_layers):
        self_in = _rmsnorm(y, params[f"dec.{i}.ln1"])
        y = ad.add(
            y,
            drop(
                _attention(
                    self_in, self_in, params, f"dec.{i}.self", h,
                    dec_bias, causal, config, rng, training,
                )
            ),
        )
        cross_in = _rmsnorm(y, params[f"dec.{i}.ln2"])
        y = ad.add(
            y,
            drop(
                _attention(
                    cross_in, enc_out, params, f"dec.{i}.cross", h,
                    None, enc_pad, config, rng, training,
                )
            ),
        )
        ff_in = _rmsnorm(y, params[f"dec.{i}.ln3"])
        y = ad.add(y, drop(_ff(ff_in, params[f"dec.{i}.ff.w1"], params[f"dec.{i}.ff.w2"])))
    dec_out = _rmsnorm(y, params["dec.final_ln"])
    return ad.matmul(dec_out, params["lm_head"])


def loss(logits: Tensor, batch: Batch) -> Tensor:
    """Mean token cross-entropy over loss-unmasked positions."""
    mask = batch.loss_mask
    denom = float(mask.sum())
    if denom == 0.0:
        raise AllMasked("every target position is loss-masked")
    b, t, v = logits.shape
    log_probs = ad.log_softmax(logits, axis=-1)
    flat = ad.reshape(log_probs, (b * t, v))
    picked = ad.take_index(flat, batch.target_ids.reshape(-1))
    masked = ad.mul(picked, Tensor(mask.reshape(-1)))
    return ad.mul(ad.reduce_sum(masked), -1.0 / denom)


def loss_value(params: dict[str, Tensor], config: ModelConfig, batch: Batch) -> float:
    with ad.no_grad():
        return float(loss(forward(params, config, batch), batch).data)


def backward(
    params: dict[str, Tensor], config: ModelConfig, batch: Batch
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and d(loss)/d(param) for every named array.

    Dropout stays off so the gradient is a deterministic function of
    (params, batch); parameters with no path to an unmasked loss position
    get zero gradients."""
    value = loss(forward(params, config, batch), batch)
    ad.backward(value)
    grads: dict[str, np.ndarray] = {}
    for name, p in params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return float(value.data), grads


@dataclass
class GradCheckReport:
    seed: int
    epsilon: float
    tolerance: float
    per_array: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.per_array.values()) if self.per_array else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.worst < self.tolerance)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epsilon": self.epsilon,
            "tolerance": self.tolerance,
            "per_array": dict(self.per_array),
            "worst": self.worst,
            "passed": self.passed,
        }


def _random_batch(config: ModelConfig, rng: np.random.Generator) -> Batch:
    b = 2
    s = min(6, config.max_input_len)
    t = min(5, config.max_target_len)
    pairs = []
    for _ in range(b):
        src = rng.integers(3, config.vocab_size, size=rng.integers(2, s + 1)).tolist()
        tgt = rng.integers(3, config.vocab_size, size=rng.integers(2, t + 1)).tolist()
        tgt[-1] = 1  # EOS
        pairs.append((src, tgt))
    return make_batch(pairs)


def grad_check(
    config: ModelConfig,
    seed: int = 0,
    samples_per_array: int = 50,
    epsilon: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare every parameter array's analytic gradient against central
    finite differences on sampled coordinates."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    batch = _random_batch(config, rng)
    _, grads = backward(params, config, batch)
    report = GradCheckReport(seed=seed, epsilon=epsilon, tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        k = min(samples_per_array, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for c in coords:
            old = flat[c]
            flat[c] = old + epsilon
            up = loss_value(params, config, batch)
            flat[c] = old - epsilon
            down = loss_value(params, config, batch)
            flat[c] = old
            numeric = (up - down) / (2.0 * epsilon)
            analytic = grad_flat[c]
            denom = max(abs(numeric) + abs(analytic), 1e-8)
            rel = abs(analytic - numeric) / denom
            worst = max(worst, rel)
        report.per_array[name] = float(worst)
    return report
