"""Command-line pipeline driver.

One entry point with subcommands covering the whole flow: build-corpus,
train-tokenizer, pretrain, finetune, predict, evaluate, gradcheck.
Configuration lives in a TOML file of flat, typed sections; `--set
section.key=value` flags override file keys.  Every run derives all
randomness from one seed and writes a deterministic `run-manifest`
(config hash, seed, artifact format versions) into its output directory.
Exit codes: 0 success, 1 domain error (machine-readable JSON on stderr),
2 usage error.  Logs are line-oriented `key=value` pairs on stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, codec, corpus, denoise, infer, metrics, model, tasks, tokenizer, trainer
from .errors import FormatError, IOFailure, PipelineError

LOG_EVERY_DEFAULT = 10


class UsageError(Exception):
    pass


def _emit(**kv) -> None:
    parts = []
    for key, value in kv.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6f}")
        else:
            parts.append(f"{key}={value}")
    print(" ".join(parts))


# --- configuration -------------------------------------------------------


class Config:
    """Merged TOML sections plus command-line overrides."""

    def __init__(self, data: dict):
        self.data = data

    def get(self, section: str, key: str, default=None):
        return self.data.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise UsageError(f"config is missing required key [{section}] {key}")
        return value

    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _parse_override(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_config(path: str | None, overrides: list[str], seed: int | None, out_dir: str | None) -> Config:
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"config file {path} is not valid TOML: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        section, key = dotted.split(".", 1)
        if raw == "":
            # empty value unsets the key, falling back to the default
            data.setdefault(section, {}).pop(key, None)
        else:
            data.setdefault(section, {})[key] = _parse_override(raw)
    if seed is not None:
        data["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = out_dir
    data.setdefault("seed", 0)
    return Config(data)


def _out_dir(cfg: Config, subcommand: str) -> str:
    out = cfg.data.get("out_dir", os.path.join("runs", subcommand))
    os.makedirs(out, exist_ok=True)
    return out


def _write_run_manifest(cfg: Config, subcommand: str, out_dir: str, artifacts: dict) -> None:
    manifest = {
        "subcommand": subcommand,
        "seed": cfg.data["seed"],
        "config_hash": cfg.hash(),
        "versions": {
            "package": __version__,
            "codec_format": codec.CODEC_FORMAT_VERSION,
            "checkpoint_format": trainer.CHECKPOINT_FORMAT_VERSION,
            "vocab_min_size": tokenizer.MIN_VOCAB_SIZE,
        },
        "artifacts": artifacts,
    }
    path = os.path.join(out_dir, "run-manifest")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _model_config(cfg: Config, vocab_size: int) -> model.ModelConfig:
    get = lambda key, default: cfg.get("model", key, default)  # noqa: E731
    return model.ModelConfig(
        num_layers=get("num_layers", 2),
        d_model=get("d_model", 64),
        num_heads=get("num_heads", 4),
        d_ff=get("d_ff", 128),
        vocab_size=vocab_size,
        num_buckets=get("num_buckets", 8),
        max_input_len=get("max_input_len", 48),
        max_target_len=get("max_target_len", 48),
        dropout=get("dropout", 0.1),
    )


def _train_config(cfg: Config, section: str) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        batch_size=cfg.get(section, "batch_size", 8),
        total_steps=cfg.get(section, "steps", 200),
        learning_rate=cfg.get(section, "learning_rate", 1e-3),
        warmup_steps=cfg.get(section, "warmup_steps", 100),
        checkpoint_every=cfg.get(section, "checkpoint_every", 0),
        seed=cfg.data["seed"],
        clip_norm=cfg.get(section, "clip_norm", 1.0),
    )


def _step_logger(event: str, every: int):
    def on_step(step: int, value: float, lr: float) -> None:
        if step % every == 0 or step == 1:
            _emit(event=event, step=step, loss=value, lr=lr)

    return on_step


# --- task plumbing -------------------------------------------------------

TASK_NAMES = ("summarization", "generation", "refinement_small", "refinement_medium", "defect")


def _load_task(name: str, path: str, language: str):
    """(examples, stats, spec) for one task dataset file."""
    records = tasks.read_task_file(path)
    if name == "summarization":
        examples, stats = tasks.load_summarization(records, language)
        spec = tasks.summarization_spec(language)
    elif name == "generation":
        examples, stats = tasks.load_generation(records)
        spec = tasks.generation_spec()
    elif name in ("refinement_small", "refinement_medium"):
        size = name.split("_", 1)[1]
        examples, stats = tasks.load_refinement(records, size)
        spec = tasks.refinement_spec(size)
    elif name == "defect":
        examples, stats = tasks.load_defect(records)
        spec = tasks.defect_spec()
    else:
        raise UsageError(f"unknown task {name!r}; expected one of {', '.join(TASK_NAMES)}")
    return examples, stats, spec


# --- subcommands ---------------------------------------------------------


def cmd_build_corpus(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "build-corpus")
    name = cfg.get("corpus", "combination", "2-CC")
    if name not in corpus.COMBINATIONS:
        raise UsageError(
            f"unknown combination {name!r}; expected one of {', '.join(sorted(corpus.COMBINATIONS))}"
        )
    combination = corpus.COMBINATIONS[name]
    stats = corpus.CorpusStats()
    sources = {}
    handles = []
    try:
        for source_name in combination.sources:
            path = cfg.require("corpus", source_name)
            fh = open(path, encoding="utf-8")
            handles.append(fh)
            sources[source_name] = corpus.ingest(fh, stats=stats)
        nl_lines = None
        nl_path = cfg.get("corpus", "nl")
        if nl_path is not None:
            fh = open(nl_path, encoding="utf-8")
            handles.append(fh)
            nl_lines = (line.rstrip("\n") for line in fh)
        out_path = cfg.get("corpus", "out", os.path.join(out_dir, "corpus.jsonl"))
        sequences = corpus.build(combination, sources, stats=stats, nl_lines=nl_lines)
        written = corpus.write_sequences(sequences, out_path)
    except OSError as exc:
        raise IOFailure(f"cannot read corpus source: {exc}") from exc
    finally:
        for fh in handles:
            fh.close()
    _emit(
        event="corpus_built",
        combination=name,
        sequences=written,
        ingested=stats.ingested,
        skipped_missing_doc=stats.skipped_missing_doc,
        out=out_path,
    )
    _write_run_manifest(cfg, "build-corpus", out_dir, {"corpus": out_path, "sequences": written})
    return 0


def cmd_train_tokenizer(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "train-tokenizer")
    corpus_path = cfg.require("tokenizer", "corpus")
    size = cfg.get("tokenizer", "size", 8000)
    texts = [seq.text for seq in corpus.read_sequences(corpus_path)]
    vocab = tokenizer.train_vocab(texts, size)
    out_path = cfg.get("tokenizer", "out", os.path.join(out_dir, "vocab.txt"))
    tokenizer.save_vocab(vocab, out_path)
    _emit(event="tokenizer_trained", size=vocab.size, fingerprint=vocab.fingerprint(), out=out_path)
    _write_run_manifest(
        cfg,
        "train-tokenizer",
        out_dir,
        {"vocab": out_path, "size": vocab.size, "fingerprint": vocab.fingerprint()},
    )
    return 0


def cmd_pretrain(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "pretrain")
    vocab = tokenizer.load_vocab(cfg.require("pretrain", "vocab"))
    texts = [seq.text for seq in corpus.read_sequences(cfg.require("pretrain", "corpus"))]
    model_cfg = _model_config(cfg, vocab.size)
    train_cfg = _train_config(cfg, "pretrain")
    denoise_cfg = denoise.CorruptionConfig(
        corruption_rate=cfg.get("pretrain", "corruption_rate", 0.15),
        mean_span_length=cfg.get("pretrain", "mean_span_length", 3),
        seed=cfg.data["seed"],
    )
    losses: list[float] = []
    log_every = cfg.get("pretrain", "log_every", LOG_EVERY_DEFAULT)
    logger = _step_logger("pretrain_step", log_every)

    def on_step(step: int, value: float, lr: float) -> None:
        losses.append(value)
        logger(step, value, lr)

    out_path = cfg.get("pretrain", "out", os.path.join(out_dir, "pretrained"))
    checkpoint = trainer.pretrain(
        texts,
        vocab,
        denoise_cfg,
        model_cfg,
        train_cfg,
        on_step=on_step,
        checkpoint_dir=out_path if train_cfg.checkpoint_every > 0 else None,
    )
    trainer.save(checkpoint, out_path)
    with open(os.path.join(out_dir, "pretrain-losses.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(losses) + "\n")
    smooth = trainer.smoothed(losses, window=20)
    first = smooth[min(19, len(smooth) - 1)] if smooth else float("nan")
    last = smooth[-1] if smooth else float("nan")
    _emit(
        event="pretrain_done",
        steps=checkpoint.step,
        smoothed_first=first,
        smoothed_last=last,
        out=out_path,
    )
    _write_run_manifest(
        cfg, "pretrain", out_dir, {"checkpoint": out_path, "vocab_fingerprint": vocab.fingerprint()}
    )
    return 0


def _mixture_from_config(cfg: Config, vocab: tokenizer.Vocabulary) -> trainer.MixtureSpec:
    language = cfg.get("finetune", "language", "java")
    entries = []
    for name in TASK_NAMES:
        path = cfg.get("finetune", name)
        if path is None:
            continue
        examples, stats, spec = _load_task(name, path, language)
        fitted = tasks.fit_examples(examples, spec, vocab)
        pairs = [(list(e.input_ids), list(e.target_ids)) for e in fitted]
        _emit(
            event="task_loaded",
            task=name,
            ingested=stats.ingested,
            emitted=stats.emitted,
            skipped=stats.skipped,
        )
        entries.append((name, pairs))
    if not entries:
        raise UsageError(
            "finetune needs at least one task dataset key "
            f"({', '.join(TASK_NAMES)}) in the [finetune] section"
        )
    return trainer.make_mixture(entries)


def cmd_finetune(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "finetune")
    vocab = tokenizer.load_vocab(cfg.require("finetune", "vocab"))
    checkpoint_path = cfg.get("finetune", "checkpoint")
    if checkpoint_path is not None:
        checkpoint = trainer.load(checkpoint_path, expected_fingerprint=vocab.fingerprint())
    else:
        checkpoint = trainer.init_checkpoint(
            _model_config(cfg, vocab.size), cfg.data["seed"], vocab.fingerprint()
        )
    mixture = _mixture_from_config(cfg, vocab)
    train_cfg = _train_config(cfg, "finetune")
    losses: list[float] = []
    log_every = cfg.get("finetune", "log_every", LOG_EVERY_DEFAULT)
    logger = _step_logger("finetune_step", log_every)

    def on_step(step: int, value: float, lr: float) -> None:
        losses.append(value)
        logger(step, value, lr)

    out_path = cfg.get("finetune", "out", os.path.join(out_dir, "finetuned"))
    checkpoint = trainer.finetune(
        checkpoint,
        mixture,
        train_cfg,
        on_step=on_step,
        checkpoint_dir=out_path if train_cfg.checkpoint_every > 0 else None,
    )
    trainer.save(checkpoint, out_path)
    with open(os.path.join(out_dir, "finetune-losses.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(losses) + "\n")
    _emit(event="finetune_done", steps=checkpoint.step, out=out_path)
    _write_run_manifest(
        cfg, "finetune", out_dir, {"checkpoint": out_path, "vocab_fingerprint": vocab.fingerprint()}
    )
    return 0


def cmd_predict(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "predict")
    vocab = tokenizer.load_vocab(cfg.require("predict", "vocab"))
    checkpoint = trainer.load(
        cfg.require("predict", "checkpoint"), expected_fingerprint=vocab.fingerprint()
    )
    task_name = cfg.require("predict", "task")
    language = cfg.get("predict", "language", "java")
    examples, _, spec = _load_task(task_name, cfg.require("predict", "input"), language)
    limit = cfg.get("predict", "limit")
    if limit is not None:
        examples = examples[: int(limit)]
    # the model window wins over the task budget when it is smaller
    spec = dataclasses.replace(
        spec,
        input_len=min(spec.input_len, checkpoint.config.max_input_len),
        target_len=min(spec.target_len, checkpoint.config.max_target_len),
    )
    fitted = tasks.fit_examples(examples, spec, vocab)
    decode_cfg = infer.DecodeConfig(
        max_length=cfg.get("predict", "max_length", spec.target_len),
        strategy=cfg.get("predict", "strategy", "greedy"),
        beam_size=cfg.get("predict", "beam_size", 4),
        length_penalty=cfg.get("predict", "length_penalty", 0.6),
    )
    rows: list[tuple[object, str]] = []
    if task_name == "defect":
        labels = [vocab.encode(label) for label in tasks.DEFECT_LABELS]
        for item in fitted:
            picked = infer.classify(checkpoint, list(item.input_ids), labels)
            rows.append((item.id, tasks.DEFECT_LABELS[picked]))
    else:
        for item in fitted:
            ids = infer.decode(checkpoint, list(item.input_ids), decode_cfg)
            rows.append((item.id, codec.denormalize(vocab.decode(ids))))
    out_path = cfg.get("predict", "out", os.path.join(out_dir, "predictions.jsonl"))
    infer.write_predictions(rows, out_path)
    _emit(event="predictions_written", task=task_name, count=len(rows), out=out_path)
    _write_run_manifest(cfg, "predict", out_dir, {"predictions": out_path, "count": len(rows)})
    return 0


def cmd_evaluate(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "evaluate")
    task_name = cfg.require("evaluate", "task")
    language = cfg.get("evaluate", "language", "java")
    examples, _, spec = _load_task(task_name, cfg.require("evaluate", "references"), language)
    predictions = infer.read_predictions(cfg.require("evaluate", "predictions"))
    by_id = {row["id"]: row["prediction"] for row in predictions}
    candidates: list[str] = []
    references: list[str] = []
    for example in examples:
        if example.id not in by_id:
            raise FormatError(f"no prediction for example id {example.id!r}")
        candidates.append(by_id[example.id])
        if task_name in ("summarization", "defect"):
            references.append(example.target_text)
        else:
            # code targets are stored normalized; compare in plain-glyph space
            references.append(codec.denormalize(example.target_text))
    results: dict[str, object] = {}
    for metric_name in spec.metrics:
        if metric_name == "bleu_smooth4":
            results[metric_name] = metrics.bleu_smooth4(candidates, references)
        elif metric_name == "bleu_corpus":
            results[metric_name] = metrics.bleu_corpus(candidates, references)
        elif metric_name == "exact_match":
            results[metric_name] = metrics.exact_match(candidates, references)
        elif metric_name == "accuracy":
            results[metric_name] = metrics.accuracy(candidates, references)
        elif metric_name == "codebleu":
            results[metric_name] = metrics.codebleu(candidates, references, task=task_name).to_json_dict()
        else:
            raise UsageError(f"unknown metric {metric_name!r} for task {task_name!r}")
    report = {"task": task_name, "num_examples": len(candidates), "metrics": results}
    out_path = cfg.get("evaluate", "out", os.path.join(out_dir, "report.json"))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    flat = {
        k: (v if isinstance(v, float) else v["value"])  # type: ignore[index]
        for k, v in results.items()
    }
    _emit(event="evaluated", task=task_name, examples=len(candidates), out=out_path, **flat)
    _write_run_manifest(cfg, "evaluate", out_dir, {"report": out_path})
    return 0


def cmd_gradcheck(cfg: Config) -> int:
    out_dir = _out_dir(cfg, "gradcheck")
    vocab_size = cfg.get("gradcheck", "vocab_size", 64)
    model_cfg = model.ModelConfig(
        num_layers=cfg.get("model", "num_layers", 1),
        d_model=cfg.get("model", "d_model", 8),
        num_heads=cfg.get("model", "num_heads", 2),
        d_ff=cfg.get("model", "d_ff", 16),
        vocab_size=vocab_size,
        num_buckets=cfg.get("model", "num_buckets", 4),
        max_input_len=cfg.get("model", "max_input_len", 16),
        max_target_len=cfg.get("model", "max_target_len", 16),
        dropout=0.0,
    )
    report = model.grad_check(
        model_cfg,
        seed=cfg.data["seed"],
        samples_per_array=cfg.get("gradcheck", "samples_per_array", 20),
    )
    out_path = cfg.get("gradcheck", "out", os.path.join(out_dir, "gradcheck.json"))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    _emit(event="gradcheck", worst=report.worst, passed=report.passed, out=out_path)
    _write_run_manifest(cfg, "gradcheck", out_dir, {"report": out_path})
    if not report.passed:
        raise PipelineError(f"gradient check failed: worst relative error {report.worst}")
    return 0


# --- dispatch ------------------------------------------------------------

_COMMANDS = {
    "build-corpus": cmd_build_corpus,
    "train-tokenizer": cmd_train_tokenizer,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codelm", description="Code-and-text sequence model pipeline."
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (an empty value unsets it)",
        )
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out-dir", help="override the output directory")
    return parser


def dispatch(argv: list[str]) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return code
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out_dir)
        return _COMMANDS[args.subcommand](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
