"""Command-line front end for vocabulary building, pretraining and evaluation.

Every run resolves its inputs into a single flat configuration dictionary,
echoes it as JSON, and (for commands that produce files) writes the same JSON
to ``config.json`` inside the output directory.  Re-running a subcommand with
``--config config.json`` reproduces the run; in f64 mode with ``--threads 1``
the reported values are bit-identical.

Exit codes: 0 on success, 1 on usage errors (bad flags, unknown presets,
missing paths), 2 on data or format errors (corrupt checkpoints, malformed
CSV, numeric failures).

The numerical modules are imported lazily inside the command handlers so that
``--threads`` can pin the BLAS thread pools before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

# Env vars honoured by the common BLAS backends; all are set so the pin
# holds regardless of which library this numpy build links against.
_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

_PRESET_NAMES = ("tiny", "mini", "small", "medium", "base")


class UsageError(Exception):
    """Bad invocation: wrong flags, unknown preset, missing input path."""


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit, so main() owns codes."""

    def error(self, message):
        raise UsageError(message)


def _set_thread_count(n: int) -> None:
    if n < 1:
        raise UsageError("--threads must be a positive integer")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="resolved config JSON from a previous run")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", metavar="DIR",
                        help="output directory (falls back to $BSB_OUT)")
    common.add_argument("--batch-size", type=int, default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP thread pools (1 = deterministic)")
    common.add_argument("--numeric", choices=("f32", "f64"), default=None)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--preset", metavar="NAME",
                       help="model size preset: " + ", ".join(_PRESET_NAMES))
    model.add_argument("--model-config", metavar="JSON",
                       help="model configuration JSON (alternative to --preset)")

    parser = _Parser(prog="bsb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("build-vocab", parents=[common],
                       help="learn a word-piece vocabulary from a text corpus")
    p.add_argument("--data", metavar="TXT",
                   help="corpus file, one sentence per line")
    p.add_argument("--target-size", type=int, default=None)
    p.add_argument("--min-frequency", type=int, default=None)
    p.add_argument("--min-words", type=int, default=None,
                   help="drop corpus lines shorter than this many words")

    p = sub.add_parser("pretrain", parents=[common, model],
                       help="run masked-token pretraining")
    p.add_argument("--data", metavar="TXT")
    p.add_argument("--vocab", metavar="TXT")
    p.add_argument("--checkpoint", metavar="CKPT",
                   help="resume from an existing checkpoint")
    p.add_argument("--train-config", metavar="JSON",
                   help="training configuration JSON")
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("eval-mask", parents=[common],
                       help="masked-token prediction accuracy")
    p.add_argument("--data", metavar="FILE",
                   help="CSV dataset (text,label) or plain text, one per line")
    p.add_argument("--vocab", metavar="TXT")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--k-masks", type=int, default=None)

    p = sub.add_parser("eval-probe", parents=[common],
                       help="classifier-probe accuracy on frozen embeddings")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--vocab", metavar="TXT")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--classes", metavar="JSON",
                   help="JSON list of class names for the label column")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("eval-zeroshot", parents=[common],
                       help="template-based classification without training")
    p.add_argument("--data", metavar="CSV")
    p.add_argument("--vocab", metavar="TXT")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--zeroshot-spec", metavar="JSON",
                   help="JSON with a template string and a label list")

    p = sub.add_parser("bench-vectorize", parents=[common],
                       help="throughput benchmark across model presets")
    p.add_argument("--presets", metavar="LIST",
                   help="comma-separated preset names (default: all five)")
    p.add_argument("--n-sentences", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)

    p = sub.add_parser("count-params", parents=[common, model],
                       help="print the exact trainable parameter count")

    p = sub.add_parser("inspect-checkpoint", parents=[common],
                       help="print a checkpoint's config and tensor summary")
    p.add_argument("--checkpoint", metavar="CKPT")

    return parser


# ---------------------------------------------------------------------------
# resolution helpers


def _load_json_file(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    from .evalsuite import DataError

    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{what} is not valid JSON: {e}") from None
    if not isinstance(obj, (dict, list)):
        raise DataError(f"{what} must hold a JSON object or list")
    return obj


def _require_path(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _pick(flag, file_cfg: dict, key: str, default):
    """Flag beats config file beats default; the winner lands in the echo."""
    if flag is not None:
        return flag
    if key in file_cfg and file_cfg[key] is not None:
        return file_cfg[key]
    return default


def _file_config(args) -> dict:
    if not args.config:
        return {}
    cfg = _load_json_file(args.config, "config file")
    got = cfg.get("subcommand")
    if got is not None and got != args.subcommand:
        raise UsageError(
            f"config file was written by '{got}', not '{args.subcommand}'")
    return cfg


def _resolve_out(args, cfg: dict, required: bool = True) -> Path | None:
    out = args.out or cfg.get("out") or os.environ.get("BSB_OUT")
    if not out:
        if required:
            raise UsageError("--out (or the BSB_OUT variable) is required")
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_model(args, cfg: dict) -> tuple[dict, str | None]:
    """Return (model config dict, preset name or None)."""
    from .encoder import ModelConfig

    preset = getattr(args, "preset", None) or cfg.get("preset")
    path = getattr(args, "model_config", None)
    if preset and path:
        raise UsageError("--preset and --model-config are mutually exclusive")
    if preset:
        return ModelConfig.preset(preset).to_dict(), preset
    if path:
        return ModelConfig.from_dict(_load_json_file(path, "model config")).to_dict(), None
    if isinstance(cfg.get("model"), dict):
        return ModelConfig.from_dict(cfg["model"]).to_dict(), None
    raise UsageError("a model is required: pass --preset or --model-config")


def _echo(resolved: dict, out: Path | None) -> None:
    text = json.dumps(resolved, indent=2, sort_keys=True, ensure_ascii=False)
    if out is not None:
        (out / "config.json").write_text(text + "\n", encoding="utf-8")
    print(text)


def _model_label(config) -> str:
    """Preset name when the geometry matches one, else a descriptive tag."""
    from .encoder import PRESETS

    for name in _PRESET_NAMES:
        p = PRESETS[name]
        if (config.hidden_size, config.num_attention_heads,
                config.num_hidden_layers) == p:
            return name
    return f"custom-h{config.hidden_size}-l{config.num_hidden_layers}"


def _read_texts(path: str) -> tuple[list[str], "object | None"]:
    """Load evaluation texts: CSV datasets keep labels, plain text does not."""
    if path.endswith(".csv"):
        from .evalsuite import load_dataset

        ds = load_dataset(path)
        return list(ds.texts), ds
    from .evalsuite import DataError

    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    texts = [ln for ln in lines if ln]
    if not texts:
        raise DataError(f"no usable lines in {path}")
    return texts, None


def _load_store(path: str, numeric: str):
    from .checkpoint import load_checkpoint

    store = load_checkpoint(_require_path(path, "--checkpoint"))
    return store.astype(numeric) if store.dtype != numeric else store


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_count_params(args) -> int:
    cfg = _file_config(args)
    from .encoder import ModelConfig, count_parameters

    model, _ = _resolve_model(args, cfg)
    print(count_parameters(ModelConfig.from_dict(model)))
    return EXIT_OK


def _cmd_inspect_checkpoint(args) -> int:
    _file_config(args)
    from .checkpoint import load_checkpoint, read_header

    path = _require_path(args.checkpoint, "--checkpoint")
    header = read_header(path)
    store = load_checkpoint(path)
    info = {
        "config": header.get("config", {}),
        "dtype": store.dtype,
        "tensors": sum(1 for k in header if k not in ("config", "aliases")),
        "aliases": header.get("aliases", {}),
        "total_parameters": store.total_parameters(),
    }
    print(json.dumps(info, indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def _cmd_build_vocab(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    from .tokenization import build_vocab, corpus_filter

    data = _require_path(args.data or cfg.get("data"), "--data")
    resolved = {
        "subcommand": "build-vocab",
        "data": data,
        "out": str(out),
        "seed": _pick(args.seed, cfg, "seed", 0),
        "target_size": int(_pick(args.target_size, cfg, "target_size", 2000)),
        "min_frequency": int(_pick(args.min_frequency, cfg, "min_frequency", 1)),
        "min_words": int(_pick(args.min_words, cfg, "min_words", 5)),
        "numeric": _pick(args.numeric, cfg, "numeric", "f64"),
        "threads": args.threads,
    }
    lines = [ln for ln in Path(data).read_text(encoding="utf-8").splitlines() if ln.strip()]
    kept = list(corpus_filter(lines, min_words=resolved["min_words"]))
    from .evalsuite import DataError

    if not kept:
        raise DataError(f"corpus {data} has no line with >= {resolved['min_words']} words")
    vocab = build_vocab(kept, resolved["target_size"],
                        min_frequency=resolved["min_frequency"])
    vocab.to_file(out / "vocab.txt")
    _echo(resolved, out)
    print(f"wrote {out / 'vocab.txt'} ({len(vocab)} tokens, "
          f"{len(kept)}/{len(lines)} corpus lines kept)")
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    from .encoder import ModelConfig, init_parameters
    from .pretraining import TrainingConfig, train
    from .tokenization import Vocabulary

    data = _require_path(args.data or cfg.get("data"), "--data")
    vocab_path = _require_path(args.vocab or cfg.get("vocab"), "--vocab")
    model, preset = _resolve_model(args, cfg)

    if args.train_config:
        train_dict = _load_json_file(args.train_config, "train config")
    elif isinstance(cfg.get("train"), dict):
        train_dict = dict(cfg["train"])
    else:
        train_dict = TrainingConfig().to_dict()
    for key, flag in (("seed", args.seed), ("batch_size", args.batch_size),
                      ("max_steps", args.max_steps)):
        if flag is not None:
            train_dict[key] = flag
    train_cfg = TrainingConfig.from_dict(train_dict)

    numeric = _pick(args.numeric, cfg, "numeric", "f64")
    resolved = {
        "subcommand": "pretrain",
        "data": data,
        "vocab": vocab_path,
        "checkpoint": args.checkpoint or cfg.get("checkpoint"),
        "model": model,
        "preset": preset,
        "train": train_cfg.to_dict(),
        "seed": train_cfg.seed,
        "numeric": numeric,
        "out": str(out),
        "threads": args.threads,
    }

    vocab = Vocabulary.from_file(vocab_path)
    corpus = [ln for ln in Path(data).read_text(encoding="utf-8").splitlines() if ln.strip()]
    model_cfg = ModelConfig.from_dict(model)
    if resolved["checkpoint"]:
        init_store = _load_store(resolved["checkpoint"], numeric)
    else:
        init_store = init_parameters(model_cfg, seed=train_cfg.seed, dtype=numeric)

    _echo(resolved, out)
    result = train(corpus, vocab, model_cfg, train_cfg,
                   out_dir=out, init_store=init_store)
    last = result.curve[-1]
    print(f"finished step {last.step}: loss {last.loss:.6f}; "
          f"checkpoint at {result.checkpoint_path}")
    return EXIT_OK


def _cmd_eval_mask(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    import numpy as np

    from .evalsuite import ReportRow, mask_eval, write_report
    from .tokenization import Vocabulary

    numeric = _pick(args.numeric, cfg, "numeric", "f64")
    resolved = {
        "subcommand": "eval-mask",
        "data": _require_path(args.data or cfg.get("data"), "--data"),
        "vocab": _require_path(args.vocab or cfg.get("vocab"), "--vocab"),
        "checkpoint": args.checkpoint or cfg.get("checkpoint"),
        "k_masks": int(_pick(args.k_masks, cfg, "k_masks", 5)),
        "batch_size": int(_pick(args.batch_size, cfg, "batch_size", 32)),
        "seed": int(_pick(args.seed, cfg, "seed", 0)),
        "numeric": numeric,
        "out": str(out),
        "threads": args.threads,
    }
    store = _load_store(resolved["checkpoint"], numeric)
    vocab = Vocabulary.from_file(resolved["vocab"])
    texts, _ = _read_texts(resolved["data"])

    res = mask_eval(store, vocab, texts, k_masks=resolved["k_masks"],
                    rng=np.random.default_rng(resolved["seed"]),
                    batch_size=resolved["batch_size"])
    label = _model_label(store.config)
    dataset = Path(resolved["data"]).stem
    rows = [
        ReportRow(label, "mask-eval", dataset, "top1", res.top1, 0.0,
                  res.wall_s, res.n_predictions),
        ReportRow(label, "mask-eval", dataset, "top5", res.top5, 0.0,
                  res.wall_s, res.n_predictions),
    ]
    write_report(out / "report.csv", rows)
    _echo(resolved, out)
    print(f"top1 {res.top1:.4f}  top5 {res.top5:.4f}  "
          f"({res.n_examples} examples, {res.n_skipped} skipped)")
    return EXIT_OK


def _cmd_eval_probe(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    from .evalsuite import (ProbeSpec, ReportRow, embed_sentences, load_dataset,
                            probe_eval, write_report)
    from .tokenization import Vocabulary

    numeric = _pick(args.numeric, cfg, "numeric", "f64")
    resolved = {
        "subcommand": "eval-probe",
        "data": _require_path(args.data or cfg.get("data"), "--data"),
        "vocab": _require_path(args.vocab or cfg.get("vocab"), "--vocab"),
        "checkpoint": args.checkpoint or cfg.get("checkpoint"),
        "classes": args.classes or cfg.get("classes"),
        "repetitions": int(_pick(args.repetitions, cfg, "repetitions", 10)),
        "epochs": int(_pick(args.epochs, cfg, "epochs", 30)),
        "batch_size": int(_pick(args.batch_size, cfg, "batch_size", 32)),
        "seed": int(_pick(args.seed, cfg, "seed", 0)),
        "numeric": numeric,
        "out": str(out),
        "threads": args.threads,
    }
    if resolved["classes"]:
        _require_path(resolved["classes"], "--classes")
    store = _load_store(resolved["checkpoint"], numeric)
    vocab = Vocabulary.from_file(resolved["vocab"])
    ds = load_dataset(resolved["data"], classes_path=resolved["classes"])

    embeddings, embed_wall = embed_sentences(store, vocab, list(ds.texts),
                                             batch_size=resolved["batch_size"])
    spec = ProbeSpec(n_classes=ds.n_classes,
                     repetitions=resolved["repetitions"],
                     epochs=resolved["epochs"],
                     seed=resolved["seed"])
    t0 = time.perf_counter()
    res = probe_eval(embeddings, ds.labels, spec)
    wall = embed_wall + (time.perf_counter() - t0)

    label = _model_label(store.config)
    rows = [ReportRow(label, "probe", Path(resolved["data"]).stem, "accuracy",
                      res.mean, res.std, wall, len(ds.texts))]
    write_report(out / "report.csv", rows)
    _echo(resolved, out)
    print(f"probe accuracy {res.mean:.4f} +/- {res.std:.4f} "
          f"over {resolved['repetitions']} repetitions")
    return EXIT_OK


def _cmd_eval_zeroshot(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    from .evalsuite import (ReportRow, ZeroShotSpec, load_dataset, write_report,
                            zero_shot_eval)
    from .tokenization import Vocabulary

    numeric = _pick(args.numeric, cfg, "numeric", "f64")
    spec_path = args.zeroshot_spec
    if spec_path:
        spec = ZeroShotSpec.from_file(_require_path(spec_path, "--zeroshot-spec"))
    elif isinstance(cfg.get("zeroshot"), dict):
        spec = ZeroShotSpec.from_dict(cfg["zeroshot"])
    else:
        raise UsageError("--zeroshot-spec is required")
    resolved = {
        "subcommand": "eval-zeroshot",
        "data": _require_path(args.data or cfg.get("data"), "--data"),
        "vocab": _require_path(args.vocab or cfg.get("vocab"), "--vocab"),
        "checkpoint": args.checkpoint or cfg.get("checkpoint"),
        "zeroshot": spec.to_dict(),
        "batch_size": int(_pick(args.batch_size, cfg, "batch_size", 32)),
        "seed": int(_pick(args.seed, cfg, "seed", 0)),
        "numeric": numeric,
        "out": str(out),
        "threads": args.threads,
    }
    store = _load_store(resolved["checkpoint"], numeric)
    vocab = Vocabulary.from_file(resolved["vocab"])
    ds = load_dataset(resolved["data"])

    res = zero_shot_eval(store, vocab, ds, spec,
                         batch_size=resolved["batch_size"])
    label = _model_label(store.config)
    rows = [ReportRow(label, "zero-shot", Path(resolved["data"]).stem,
                      "accuracy", res.accuracy, 0.0, res.wall_s, res.n)]
    write_report(out / "report.csv", rows)
    _echo(resolved, out)
    print(f"zero-shot accuracy {res.accuracy:.4f} on {res.n} texts")
    return EXIT_OK


def _synthetic_texts(seed: int, n: int, n_words: int = 100,
                     words_per_sentence: int = 8) -> list[str]:
    """Deterministic pseudo-corpus for benchmarking without external data."""
    import numpy as np

    words = [f"kelime{i:03d}" for i in range(n_words)]
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, n_words, size=(n, words_per_sentence))
    return [" ".join(words[j] for j in row) for row in picks]


def _cmd_bench_vectorize(args) -> int:
    cfg = _file_config(args)
    out = _resolve_out(args, cfg)
    from .encoder import ModelConfig, init_parameters
    from .evalsuite import bench_report_rows, bench_vectorize, write_report
    from .tokenization import SPECIAL_TOKENS, Vocabulary

    presets_flag = args.presets or cfg.get("presets")
    if isinstance(presets_flag, str):
        presets = tuple(p.strip() for p in presets_flag.split(",") if p.strip())
    elif isinstance(presets_flag, (list, tuple)):
        presets = tuple(presets_flag)
    else:
        presets = _PRESET_NAMES
    if not presets:
        raise UsageError("--presets must name at least one preset")

    numeric = _pick(args.numeric, cfg, "numeric", "f32")
    resolved = {
        "subcommand": "bench-vectorize",
        "presets": list(presets),
        "n_sentences": int(_pick(args.n_sentences, cfg, "n_sentences", 1000)),
        "repeats": int(_pick(args.repeats, cfg, "repeats", 5)),
        "batch_size": int(_pick(args.batch_size, cfg, "batch_size", 32)),
        "seed": int(_pick(args.seed, cfg, "seed", 0)),
        "numeric": numeric,
        "out": str(out),
        "threads": args.threads,
    }
    texts = _synthetic_texts(resolved["seed"], resolved["n_sentences"])
    words = sorted({w for t in texts for w in t.split()})
    vocab = Vocabulary(list(SPECIAL_TOKENS) + words)

    # Build each model right before timing it so peak memory stays at one
    # model; per-model medians are independent, so rows merge cleanly.
    rows = []
    for name in presets:
        model_cfg = ModelConfig.preset(name)
        store = init_parameters(model_cfg, seed=resolved["seed"], dtype=numeric)
        rows.extend(bench_vectorize([(name, store)], vocab, texts,
                                    batch_size=resolved["batch_size"],
                                    repeats=resolved["repeats"]))
        del store
    write_report(out / "report.csv", bench_report_rows(rows))
    _echo(resolved, out)
    for row in rows:
        print(f"{row.model}: {row.sentences_per_s:.2f} sentences/s "
              f"(median of {resolved['repeats']})")
    return EXIT_OK


_HANDLERS = {
    "build-vocab": _cmd_build_vocab,
    "pretrain": _cmd_pretrain,
    "eval-mask": _cmd_eval_mask,
    "eval-probe": _cmd_eval_probe,
    "eval-zeroshot": _cmd_eval_zeroshot,
    "bench-vectorize": _cmd_bench_vectorize,
    "count-params": _cmd_count_params,
    "inspect-checkpoint": _cmd_inspect_checkpoint,
}


def _data_error_types() -> tuple:
    """Exception classes that mean bad data rather than bad invocation.

    Imported lazily: by the time an exception needs classifying the heavy
    modules are already loaded, so this costs nothing extra.
    """
    from .checkpoint import FormatError, ValidationError
    from .evalsuite import DataError, SimilarityError, StratificationError
    from .pretraining import LossError, TrainingError
    from .tensor import GradientError, NumericError, ShapeError
    from .tokenization import InputError

    return (FormatError, ValidationError, DataError, StratificationError,
            SimilarityError, LossError, TrainingError, NumericError,
            ShapeError, GradientError, InputError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"bsb: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.subcommand is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        print("bsb: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE

    # Must happen before any handler import pulls in numpy.
    try:
        if args.threads is not None:
            _set_thread_count(args.threads)
        return _HANDLERS[args.subcommand](args)
    except UsageError as e:
        print(f"bsb: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        from .encoder import ConfigError, ParameterError

        if isinstance(e, ConfigError):
            print(f"bsb: error: {e}", file=sys.stderr)
            return EXIT_USAGE
        if isinstance(e, _data_error_types() + (ParameterError,)):
            kind = type(e).__name__
            print(f"bsb: {kind}: {e}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
