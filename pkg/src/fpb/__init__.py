"""Attention seq2seq translation with future-prediction decoding heads.

The decoder predicts, alongside each output word, the bag of words it has
not yet translated and the remaining output length, and feeds the
bag-of-words estimate back into the next decoding step. Everything runs on
a small self-contained reverse-mode autodiff core over numpy float64.
"""

from .autodiff import Tape, Tensor, finite_difference_check, no_grad
from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    DataBundle,
    ParallelCorpus,
    TrainingBatch,
    Vocab,
    build_task,
    build_vocab,
    bow_target,
    detokenize,
    gen_synthetic,
    length_target,
    make_batches,
    read_corpus,
    tokenize,
    write_corpus,
)
from .decoding import (
    AblationResult,
    BowAccuracyCurve,
    ablation_run,
    beam_search,
    beam_search_scored,
    bow_accuracy_curve,
    corpus_bleu,
    corpus_bleu_details,
    decode_corpus,
    eos_length_gate,
    greedy_decode,
    greedy_decode_batch,
    length_accuracy,
    sequence_logprob,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DomainError,
    FpbError,
    OracleError,
    ShapeError,
    TrainingError,
)
from .model import (
    BowPrediction,
    FpbConfig,
    FpbModel,
    ForwardResult,
    LengthDistribution,
    bow_feedback,
    load_checkpoint,
    loss_bow,
    loss_len,
    loss_nll,
    loss_total,
    save_checkpoint,
)
from .seeding import derive_seed, rng_for
from .training import AdamState, TrainConfig, TrainResult, adam_step, clip_global_norm, train

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "no_grad",
    "finite_difference_check",
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "UNK_ID",
    "Vocab",
    "ParallelCorpus",
    "TrainingBatch",
    "DataBundle",
    "tokenize",
    "detokenize",
    "build_vocab",
    "build_task",
    "gen_synthetic",
    "make_batches",
    "read_corpus",
    "write_corpus",
    "bow_target",
    "length_target",
    "FpbConfig",
    "FpbModel",
    "ForwardResult",
    "BowPrediction",
    "LengthDistribution",
    "bow_feedback",
    "loss_nll",
    "loss_bow",
    "loss_len",
    "loss_total",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "train",
    "greedy_decode",
    "greedy_decode_batch",
    "beam_search",
    "beam_search_scored",
    "decode_corpus",
    "sequence_logprob",
    "eos_length_gate",
    "corpus_bleu",
    "corpus_bleu_details",
    "bow_accuracy_curve",
    "BowAccuracyCurve",
    "length_accuracy",
    "ablation_run",
    "AblationResult",
    "rng_for",
    "derive_seed",
    "FpbError",
    "ShapeError",
    "DomainError",
    "ContractError",
    "ConfigError",
    "OracleError",
    "TrainingError",
    "CheckpointError",
]
