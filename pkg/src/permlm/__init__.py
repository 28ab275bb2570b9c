"""Permutation language modeling with two-stream attention, built on numpy,
plus a 5-class sentiment pipeline for code-mixed text."""

from .data import Label, LabeledExample, SplitDataset, krippendorff_alpha, load_tsv, normalize_label, split_stats
from .errors import DataError, LabelError, ParameterError, ParseError, PermLMError, ShapeError
from .metrics import class_report, confusion, render_table
from .model import (
    ModelConfig,
    PermutationOrder,
    TransformerWeights,
    build_masks,
    forward_classifier,
    forward_permlm,
    sample_permutation,
)
from .tokenizer import Vocab, build_vocab, decode, encode, pad_batch
from .training import FinetuneConfig, PretrainConfig, ResamplingPolicy, finetune, pretrain, resample

__version__ = "0.1.0"
