"""``permlm`` command line: vocab building, pretraining, fine-tuning, evaluation.

Exit codes: 0 success, 1 data/domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, metrics, training
from .errors import DataError, PermLMError
from .model import ModelConfig, TransformerWeights
from .serialization import load_model, read_metadata, save_model, write_bytes_atomic
from .tokenizer import Vocab, build_vocab

log = logging.getLogger("permlm")

DEFAULTS = {
    "seed": 0,
    "data.language": "tamil-english",
    "vocab.max_size": 5000,
    "vocab.min_freq": 1,
    "vocab.level": "char",
    "model.n_layers": 2,
    "model.d_model": 32,
    "model.n_heads": 4,
    "model.d_ff": 64,
    "model.max_len": 128,
    "model.dropout": 0.1,
    "model.predict_fraction": 1 / 6,
    "pretrain.epochs": 1,
    "pretrain.batch_size": 16,
    "pretrain.max_lr": 1e-3,
    "pretrain.clip_norm": 1.0,
    "finetune.epochs": 4,
    "finetune.max_lr": 0.005,
    "finetune.batch_size": 16,
    "finetune.resampling": "none",
    "finetune.pooling": "cls",
    "finetune.clip_norm": 1.0,
}


class UsageError(Exception):
    pass


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise UsageError(f"{key}: cannot parse {value!r}") from None
    if isinstance(default, bool) or isinstance(value, bool):
        ok = isinstance(value, bool) == isinstance(default, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
        value = float(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise UsageError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def resolve_config(config_path=None, overrides=None) -> dict:
    """defaults <- JSON config file <- command-line overrides; unknown keys are errors."""
    cfg = dict(DEFAULTS)
    layers = []
    if config_path is not None:
        try:
            tree = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path}: {exc}") from None
        if not isinstance(tree, dict):
            raise UsageError("config file must hold a JSON object")
        layers.append(_flatten(tree))
    layers.append(overrides or {})
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    return cfg


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        n_layers=cfg["model.n_layers"],
        d_model=cfg["model.d_model"],
        n_heads=cfg["model.n_heads"],
        d_ff=cfg["model.d_ff"],
        vocab_size=vocab_size,
        max_len=cfg["model.max_len"],
        dropout=cfg["model.dropout"],
        predict_fraction=cfg["model.predict_fraction"],
    )


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def _read_texts(paths) -> list:
    texts = []
    for p in paths:
        if str(p).endswith(".tsv"):
            texts.extend(e.text for e in data.load_tsv(p))
        else:
            raw = Path(p).read_bytes().decode("utf-8")
            texts.extend(line.rstrip("\r") for line in raw.split("\n") if line.strip())
    return texts


def _load_vocab_for(model_path, vocab_path) -> Vocab:
    level = read_metadata(model_path).get("vocab.level", "char")
    return Vocab.load(vocab_path, level=level)


def _write_text(path, text: str):
    write_bytes_atomic(path, text.encode("utf-8"))


def _config_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_build_vocab(args, cfg):
    _require(*args.corpus)
    vocab = build_vocab(
        _read_texts(args.corpus), max_size=cfg["vocab.max_size"], min_freq=cfg["vocab.min_freq"], level=cfg["vocab.level"]
    )
    _write_text(args.out, vocab.to_text())
    log.info("wrote %d tokens to %s", len(vocab), args.out)


def _init_or_load(args, cfg, vocab) -> TransformerWeights:
    if args.init is not None:
        weights, _ = load_model(args.init, vocab)
        return weights
    return TransformerWeights.init(_model_config(cfg, len(vocab)), seed=cfg["seed"])


def cmd_pretrain(args, cfg):
    _require(*args.corpus, args.vocab, args.init)
    vocab = Vocab.load(args.vocab, level=cfg["vocab.level"])
    weights = _init_or_load(args, cfg, vocab)
    config = training.PretrainConfig(
        epochs=cfg["pretrain.epochs"],
        batch_size=cfg["pretrain.batch_size"],
        max_lr=cfg["pretrain.max_lr"],
        seed=cfg["seed"],
        max_len=weights.config.max_len,
        predict_fraction=cfg["model.predict_fraction"],
        clip_norm=cfg["pretrain.clip_norm"],
    )
    weights, report = training.pretrain(_read_texts(args.corpus), vocab, config, weights=weights)
    if args.report_dir:
        Path(args.report_dir).mkdir(parents=True, exist_ok=True)
        _write_text(Path(args.report_dir) / "losses.tsv", report.loss_table())
        _write_text(Path(args.report_dir) / "config.json", _config_json(cfg))
    save_model(args.out, weights, vocab, kind="pretrained", seed=cfg["seed"])


def cmd_finetune(args, cfg):
    _require(args.train, args.dev, args.vocab, args.init)
    vocab = Vocab.load(args.vocab, level=cfg["vocab.level"])
    weights = _init_or_load(args, cfg, vocab)
    train = data.load_tsv(args.train, cfg["data.language"])
    dev = data.load_tsv(args.dev, cfg["data.language"]) if args.dev else []
    config = training.FinetuneConfig(
        epochs=cfg["finetune.epochs"],
        max_lr=cfg["finetune.max_lr"],
        batch_size=cfg["finetune.batch_size"],
        seed=cfg["seed"],
        resampling=cfg["finetune.resampling"],
        pooling=cfg["finetune.pooling"],
        clip_norm=cfg["finetune.clip_norm"],
    )
    best, report = training.finetune(weights, train, dev, vocab, config)
    if args.report_dir:
        out = Path(args.report_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "losses.tsv", report.loss_table())
        _write_text(out / "config.json", _config_json(cfg))
        if report.best_epoch is not None and report.epochs[report.best_epoch - 1].dev_metrics is not None:
            _write_text(out / "dev_metrics.tsv", metrics.report_to_tsv(report.epochs[report.best_epoch - 1].dev_metrics))
    save_model(args.out, best, vocab, kind="classifier", pooling=config.pooling, seed=cfg["seed"])


def cmd_evaluate(args, cfg):
    _require(args.gold, args.model, args.vocab, args.predictions)
    gold = data.load_tsv(args.gold, cfg["data.language"])
    if args.predictions:
        predicted = data.load_tsv(args.predictions, cfg["data.language"])
        if len(predicted) != len(gold):
            raise DataError(f"{len(predicted)} predictions for {len(gold)} gold examples")
        preds = [e.label for e in predicted]
    else:
        if not (args.model and args.vocab):
            raise UsageError("evaluate needs --predictions or both --model and --vocab")
        vocab = _load_vocab_for(args.model, args.vocab)
        weights, meta = load_model(args.model, vocab)
        preds = training.predict_labels(weights, [e.text for e in gold], vocab, meta.get("pooling", "cls"))
    report = metrics.evaluate_labels([e.label for e in gold], preds)
    sys.stdout.write(metrics.render_table(report, cfg["data.language"]))
    if args.report_out:
        _write_text(args.report_out, metrics.report_to_tsv(report))


def cmd_predict(args, cfg):
    _require(args.model, args.vocab, args.input)
    if args.input:
        raw = Path(args.input).read_bytes().decode("utf-8")
    else:
        raw = sys.stdin.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [line.rstrip("\r") for line in lines]
    vocab = _load_vocab_for(args.model, args.vocab)
    weights, meta = load_model(args.model, vocab)
    labels = training.predict_labels(weights, lines, vocab, meta.get("pooling", "cls"))
    sys.stdout.write("".join(f"{label.name}\n" for label in labels))


def cmd_alpha(args, cfg):
    _require(args.annotations)
    print(f"{data.krippendorff_alpha(data.load_annotations(args.annotations)):.4f}")


def cmd_stats(args, cfg):
    _require(args.train, args.dev, args.test)
    dataset = data.load_splits(args.train, args.dev, args.test, cfg["data.language"])
    print(data.split_stats(dataset).render())


def cmd_resample(args, cfg):
    _require(args.input)
    examples = data.load_tsv(args.input, cfg["data.language"])
    out = training.resample(examples, args.policy, np.random.default_rng(cfg["seed"]))
    with_header = ["text\tcategory"] + [f"{data.sanitize_text(e.text)}\t{e.label.name}" for e in out]
    _write_text(args.out, "\n".join(with_header) + "\n")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS: a global flag given before the subcommand must survive the subparser's defaults
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--config", help="JSON config file (nested or dotted keys)")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--language", choices=data.LANGUAGES, help="data.language")

    parser = _Parser(prog="permlm", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", parents=[common], help="build a vocabulary file")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, dest="vocab.max_size")
    p.add_argument("--min-freq", type=int, dest="vocab.min_freq")
    p.add_argument("--level", choices=("char", "word"), dest="vocab.level")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", parents=[common], help="permutation-LM pretraining")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    p.add_argument("--report-dir")
    p.add_argument("--epochs", type=int, dest="pretrain.epochs")
    p.add_argument("--batch-size", type=int, dest="pretrain.batch_size")
    p.add_argument("--max-lr", type=float, dest="pretrain.max_lr")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune the sentiment classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    p.add_argument("--report-dir")
    p.add_argument("--epochs", type=int, dest="finetune.epochs")
    p.add_argument("--batch-size", type=int, dest="finetune.batch_size")
    p.add_argument("--max-lr", type=float, dest="finetune.max_lr")
    p.add_argument("--resampling", choices=[r.value for r in training.ResamplingPolicy], dest="finetune.resampling")
    p.add_argument("--pooling", choices=("cls", "mean"), dest="finetune.pooling")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against a gold TSV")
    p.add_argument("--gold", required=True)
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--predictions", help="TSV of predicted labels, instead of a model")
    p.add_argument("--report-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="one label per input line")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", help="text file; defaults to stdin")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("alpha", parents=[common], help="Krippendorff's alpha of an annotation TSV")
    p.add_argument("annotations")
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("stats", parents=[common], help="per-split, per-class counts")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("resample", parents=[common], help="rebalance a training TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--policy", required=True, choices=[r.value for r in training.ResamplingPolicy])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resample)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if hasattr(args, "seed"):
        out["seed"] = args.seed
    if hasattr(args, "language"):
        out["data.language"] = args.language
    for key, value in vars(args).items():
        if "." in key and value is not None:
            out[key] = value
    return out


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(getattr(args, "config", None), _overrides(args))
    except UsageError as exc:
        print(f"permlm: usage error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args, cfg)
    except UsageError as exc:
        print(f"permlm: usage error: {exc}", file=sys.stderr)
        return 2
    except (PermLMError, OSError, UnicodeDecodeError) as exc:
        print(f"permlm: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("permlm: interrupted", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
