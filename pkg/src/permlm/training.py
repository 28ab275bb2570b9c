"""Permutation-LM pretraining, classifier fine-tuning and class rebalancing."""

from __future__ import annotations

import enum
import logging
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import Label, LabeledExample
from .errors import DataError, NonFiniteError, ParameterError, VocabMismatchError
from .metrics import MetricsReport, evaluate_labels
from .model import ModelConfig, TransformerWeights, forward_classifier, permlm_loss, sample_permutation
from .tokenizer import Vocab, encode, pad_batch

log = logging.getLogger(__name__)


class ResamplingPolicy(str, enum.Enum):
    NONE = "none"
    OVERSAMPLE = "oversample_minority"
    UNDERSAMPLE = "undersample_majority"
    BOTH = "both"


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 1
    batch_size: int = 16
    max_lr: float = 1e-3
    seed: int = 0
    max_len: int = 128
    predict_fraction: float = 1 / 6
    clip_norm: float = 1.0
    add_special: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be at least 1")
        if self.max_lr < 0:
            raise ParameterError(f"max_lr must be non-negative, got {self.max_lr}")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 4
    max_lr: float = 0.005
    batch_size: int = 16
    seed: int = 0
    resampling: ResamplingPolicy = ResamplingPolicy.NONE
    pooling: str = "cls"
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be at least 1")
        if self.max_lr < 0:
            raise ParameterError(f"max_lr must be non-negative, got {self.max_lr}")
        object.__setattr__(self, "resampling", ResamplingPolicy(self.resampling))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float | None = None
    dev_metrics: MetricsReport | None = None


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    # excluded from equality: reports from identically seeded runs compare equal
    wall_seconds: float = field(default=0.0, compare=False)

    @property
    def train_losses(self) -> list:
        return [e.train_loss for e in self.epochs]

    def loss_table(self) -> str:
        """TSV: epoch, train_loss, dev_loss, dev_weighted_f1 (nan where absent)."""
        lines = ["epoch\ttrain_loss\tdev_loss\tdev_weighted_f1"]
        for e in self.epochs:
            dev_loss = e.dev_loss if e.dev_loss is not None else math.nan
            dev_f1 = e.dev_metrics.weighted_avg_f1 if e.dev_metrics is not None else math.nan
            lines.append(f"{e.epoch}\t{e.train_loss!r}\t{dev_loss!r}\t{dev_f1!r}")
        return "\n".join(lines) + "\n"


def step_lr(update: int, total_updates: int, max_lr: float) -> float:
    """Learning rate for 0-based ``update`` out of ``total_updates``.

    Samples :func:`lr_at_step` on ``1..total_updates`` of a schedule one step
    longer, so neither the first nor the last update is spent at lr 0.
    """
    if max_lr == 0:
        return 0.0
    return nx.lr_at_step(update + 1, total_updates + 1, max_lr)


def _optimizer_step(weights: TransformerWeights, loss: nx.Tensor, tape: nx.Tape, opt: nx.Adam, lr: float, clip: float):
    if not math.isfinite(loss.item()):
        raise NonFiniteError(f"loss is {loss.item()}; aborting step")
    nx.backward(loss, tape)
    params = list(weights.params.values())
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in {p.name}")
    if clip:
        nx.clip_grad_norm(params, clip)
    opt.step(weights.params, lr)
    weights.zero_grad()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# --------------------------------------------------------------------------
# pretraining
# --------------------------------------------------------------------------


def pretrain(
    corpus: Sequence[str],
    vocab: Vocab,
    config: PretrainConfig = PretrainConfig(),
    model_config: ModelConfig | None = None,
    weights: TransformerWeights | None = None,
    on_step=None,
) -> tuple[TransformerWeights, TrainReport]:
    """Minimize the permutation-LM negative log-likelihood.

    Each sequence gets one freshly sampled factorization order per step.
    ``on_step(epoch, update, loss)`` is called after every optimizer update.
    """
    if not corpus:
        raise DataError("pretraining corpus is empty")
    if weights is None:
        base = model_config or ModelConfig()
        cfg = replace(base, vocab_size=len(vocab), max_len=config.max_len, predict_fraction=config.predict_fraction)
        weights = TransformerWeights.init(cfg, seed=config.seed)
    else:
        if weights.config.vocab_size != len(vocab):
            raise VocabMismatchError(f"model has vocab_size={weights.config.vocab_size}, vocab has {len(vocab)}")
        cfg = replace(weights.config, predict_fraction=config.predict_fraction)
        weights = TransformerWeights(cfg, weights.copy().params)
    seqs = [np.asarray(encode(t, vocab, cfg.max_len, add_special=config.add_special).ids) for t in corpus]
    if any(len(s) == 0 for s in seqs):
        raise DataError("corpus contains a text that encodes to an empty sequence")

    rng = np.random.default_rng(config.seed)
    opt = nx.Adam()
    n_batches = math.ceil(len(seqs) / config.batch_size)
    total = config.epochs * n_batches
    report = TrainReport()
    start = time.perf_counter()
    update = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch in _batches(len(seqs), config.batch_size, rng):
            with nx.Tape() as tape:
                terms = [
                    permlm_loss(seqs[i], sample_permutation(len(seqs[i]), rng), weights, training=True, rng=rng)
                    for i in batch
                ]
                loss = terms[0]
                for term in terms[1:]:
                    loss = loss + term
                loss = loss * (1.0 / len(terms))
            _optimizer_step(weights, loss, tape, opt, step_lr(update, total, config.max_lr), config.clip_norm)
            losses.append(loss.item())
            if on_step is not None:
                on_step(epoch, update, loss.item())
            update += 1
        mean = math.fsum(losses) / len(losses)
        report.epochs.append(EpochRecord(epoch, mean))
        log.info("pretrain epoch %d: loss %.4f", epoch, mean)
    report.wall_seconds = time.perf_counter() - start
    return weights, report


# --------------------------------------------------------------------------
# fine-tuning
# --------------------------------------------------------------------------


def _check_vocab(weights: TransformerWeights, vocab: Vocab):
    if weights.config.vocab_size != len(vocab):
        raise VocabMismatchError(f"model has vocab_size={weights.config.vocab_size}, vocab has {len(vocab)}")


def encode_examples(texts: Sequence[str], vocab: Vocab, max_len: int) -> list:
    return [encode(t, vocab, max_len) for t in texts]


def classify_loss_and_preds(weights, encoded, labels, pooling="cls", batch_size=64):
    """Mean cross-entropy and argmax predictions in inference mode."""
    total, preds = 0.0, []
    for i in range(0, len(encoded), batch_size):
        ids, mask = pad_batch(encoded[i : i + batch_size])
        logits = forward_classifier(ids, mask, weights, pooling=pooling)
        if labels is not None:
            total += nx.cross_entropy(logits, labels[i : i + batch_size]).item() * len(ids)
        preds.extend(int(p) for p in np.argmax(logits.data, axis=1))
    return (total / len(encoded) if labels is not None else None), preds


def predict_labels(weights: TransformerWeights, texts: Sequence[str], vocab: Vocab, pooling="cls") -> list:
    _check_vocab(weights, vocab)
    if not texts:
        return []
    _, preds = classify_loss_and_preds(weights, encode_examples(texts, vocab, weights.config.max_len), None, pooling)
    return [Label(p) for p in preds]


def evaluate(weights, examples: Sequence[LabeledExample], vocab: Vocab, pooling="cls"):
    """``(mean loss, MetricsReport)`` of ``weights`` on labeled examples."""
    _check_vocab(weights, vocab)
    encoded = encode_examples([e.text for e in examples], vocab, weights.config.max_len)
    labels = np.asarray([int(e.label) for e in examples])
    loss, preds = classify_loss_and_preds(weights, encoded, labels, pooling)
    return loss, evaluate_labels(list(labels), preds)


def finetune(
    weights: TransformerWeights,
    train_split: Sequence[LabeledExample],
    dev_split: Sequence[LabeledExample],
    vocab: Vocab,
    config: FinetuneConfig = FinetuneConfig(),
    on_step=None,
) -> tuple[TransformerWeights, TrainReport]:
    """Train the 5-way head and encoder; return the best-dev-weighted-F1 weights.

    Without a dev split the final weights are returned.  The input weights
    and splits are left untouched.
    """
    if not train_split:
        raise DataError("training split is empty")
    _check_vocab(weights, vocab)
    rng = np.random.default_rng(config.seed)
    train = resample(train_split, config.resampling, rng)
    weights = weights.copy()
    max_len = weights.config.max_len
    encoded = encode_examples([e.text for e in train], vocab, max_len)
    labels = np.asarray([int(e.label) for e in train])

    opt = nx.Adam()
    n_batches = math.ceil(len(train) / config.batch_size)
    total = config.epochs * n_batches
    report = TrainReport()
    best, best_f1 = None, -1.0
    start = time.perf_counter()
    update = 0
    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        for batch in _batches(len(train), config.batch_size, rng):
            ids, mask = pad_batch([encoded[i] for i in batch])
            with nx.Tape() as tape:
                logits = forward_classifier(ids, mask, weights, pooling=config.pooling, training=True, rng=rng)
                loss = nx.cross_entropy(logits, labels[batch])
            _optimizer_step(weights, loss, tape, opt, step_lr(update, total, config.max_lr), config.clip_norm)
            loss_sum += loss.item() * len(batch)
            if on_step is not None:
                on_step(epoch, update, loss.item())
            update += 1
        dev_loss = dev_report = None
        if dev_split:
            dev_loss, dev_report = evaluate(weights, dev_split, vocab, config.pooling)
            if dev_report.weighted_avg_f1 > best_f1:
                best, best_f1 = weights.copy(), dev_report.weighted_avg_f1
                report.best_epoch = epoch
        report.epochs.append(EpochRecord(epoch, loss_sum / len(train), dev_loss, dev_report))
        log.info("finetune epoch %d: train loss %.4f dev loss %s", epoch, loss_sum / len(train), dev_loss)
    report.wall_seconds = time.perf_counter() - start
    if best is None:
        best = weights
        report.best_epoch = config.epochs
    return best, report


# --------------------------------------------------------------------------
# rebalancing
# --------------------------------------------------------------------------


def _by_class(examples) -> dict:
    groups: dict = {}
    for i, e in enumerate(examples):
        groups.setdefault(e.label, []).append(i)
    return dict(sorted(groups.items()))


def _oversample(examples, rng) -> list:
    groups = _by_class(examples)
    target = max(len(idx) for idx in groups.values())
    out = list(examples)
    for idx in groups.values():
        if len(idx) < target:
            out.extend(examples[int(i)] for i in rng.choice(idx, size=target - len(idx), replace=True))
    return out


def _undersample(examples, rng) -> list:
    groups = _by_class(examples)
    target = statistics.median_high(len(idx) for idx in groups.values())
    keep = []
    for idx in groups.values():
        keep.extend(idx if len(idx) <= target else rng.choice(idx, size=target, replace=False))
    return [examples[int(i)] for i in sorted(keep)]


def resample(examples: Sequence[LabeledExample], policy, rng: np.random.Generator) -> tuple:
    """Rebalance a training split. Never apply this to validation or test data."""
    if not examples:
        raise DataError("cannot resample an empty split")
    policy = ResamplingPolicy(policy)
    examples = list(examples)
    if policy is ResamplingPolicy.NONE:
        out = examples
    elif policy is ResamplingPolicy.OVERSAMPLE:
        out = _oversample(examples, rng)
    elif policy is ResamplingPolicy.UNDERSAMPLE:
        out = _undersample(examples, rng)
    else:
        out = _oversample(_undersample(examples, rng), rng)
    return tuple(out)
