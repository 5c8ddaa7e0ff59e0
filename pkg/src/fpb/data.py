"""Corpora, vocabularies, synthetic tasks, and batch construction.

File formats are deliberately plain: a corpus file is UTF-8 text with one
``source<TAB>target`` pair per line (whitespace tokenization), and a vocab
file lists one content token per line, where line number = id - 4. Ids
0..3 are reserved for <pad>, <bos>, <eos>, <unk> in every vocabulary.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

# hard cap on sequence length (tokens per side); longer pairs are skipped
MAX_SEQ_LEN = 64

SYNTHETIC_TASKS = ("copy", "reverse", "lexicon")
LEXICON_SWAP_PROB = 0.2


def tokenize(line: str) -> list[str]:
    """Whitespace tokenization. detokenize(tokenize(s)) == s for
    single-spaced strings with no leading/trailing whitespace."""
    return line.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocab:
    """Token table with four reserved ids followed by content tokens."""

    def __init__(self, content_tokens: Sequence[str]):
        seen = set()
        for tok in content_tokens:
            if not tok or tok.split() != [tok]:
                raise ContractError(f"vocab: token {tok!r} is empty or has whitespace")
            if tok in RESERVED_TOKENS:
                raise ContractError(f"vocab: token {tok!r} collides with a reserved token")
            if tok in seen:
                raise ContractError(f"vocab: duplicate token {tok!r}")
            seen.add(tok)
        self.tokens: list[str] = list(RESERVED_TOKENS) + list(content_tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise IndexError(f"vocab: id {i} out of range [0, {len(self.tokens)})")
        return self.tokens[i]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens[len(RESERVED_TOKENS) :]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            content = [line.rstrip("\n") for line in f]
        while content and content[-1] == "":
            content.pop()
        return cls(content)


def build_vocab(sequences: Iterable[Sequence[str]], max_size: int) -> Vocab:
    """Frequency vocabulary: descending count, ties alphabetical, truncated
    to ``max_size`` total ids (reserved ids included in the budget)."""
    if max_size < len(RESERVED_TOKENS) + 1:
        raise ConfigError(f"build_vocab: max_size must be >= 5, got {max_size}")
    counts = Counter()
    for seq in sequences:
        counts.update(seq)
    for tok in RESERVED_TOKENS:
        if tok in counts:
            raise ContractError(f"build_vocab: corpus contains reserved token {tok!r}")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ordered[: max_size - len(RESERVED_TOKENS)]]
    return Vocab(keep)


class ParallelCorpus:
    """Immutable-by-convention list of (source tokens, target tokens) pairs."""

    def __init__(self, pairs: Sequence[tuple[Sequence[str], Sequence[str]]]):
        checked = []
        for i, (src, tgt) in enumerate(pairs):
            src, tgt = list(src), list(tgt)
            if not src or not tgt:
                raise ContractError(f"corpus: pair {i} has an empty side")
            checked.append((src, tgt))
        self.pairs = checked

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def sources(self) -> list[list[str]]:
        return [src for src, _ in self.pairs]

    def targets(self) -> list[list[str]]:
        return [tgt for _, tgt in self.pairs]


def read_corpus(path) -> ParallelCorpus:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ContractError(
                    f"corpus {path}: line {lineno} has {len(fields)} tab-separated "
                    "fields, expected 2"
                )
            src, tgt = tokenize(fields[0]), tokenize(fields[1])
            if not src or not tgt:
                raise ContractError(f"corpus {path}: line {lineno} has an empty side")
            pairs.append((src, tgt))
    return ParallelCorpus(pairs)


def write_corpus(path, corpus: ParallelCorpus) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for src, tgt in corpus:
            f.write(detokenize(src) + "\t" + detokenize(tgt) + "\n")


def gen_synthetic(
    task: str,
    n_pairs: int,
    vocab_size: int,
    len_range: tuple[int, int],
    seed: int,
) -> ParallelCorpus:
    """Deterministic toy translation corpora.

    copy: target equals source. reverse: target is the source reversed.
    lexicon: a bijective word substitution (sNN -> tNN) followed by random
    non-overlapping adjacent swaps with probability 0.2, giving mild
    reordering on top of the substitution.
    """
    if task not in SYNTHETIC_TASKS:
        raise ConfigError(f"gen_synthetic: unknown task {task!r}")
    if n_pairs < 1:
        raise ConfigError(f"gen_synthetic: n_pairs must be >= 1, got {n_pairs}")
    if vocab_size < 2:
        raise ConfigError(f"gen_synthetic: vocab_size must be >= 2, got {vocab_size}")
    lo, hi = len_range
    if not 1 <= lo <= hi <= MAX_SEQ_LEN:
        raise ConfigError(
            f"gen_synthetic: len_range {len_range} must satisfy 1 <= lo <= hi <= {MAX_SEQ_LEN}"
        )
    rng = rng_for(seed, f"synthetic-{task}")
    width = len(str(vocab_size - 1))
    if task == "lexicon":
        src_words = [f"s{i:0{width}d}" for i in range(vocab_size)]
        tgt_words = [f"t{i:0{width}d}" for i in range(vocab_size)]
    else:
        src_words = tgt_words = [f"w{i:0{width}d}" for i in range(vocab_size)]
    pairs = []
    for _ in range(n_pairs):
        length = int(rng.integers(lo, hi + 1))
        ids = rng.integers(0, vocab_size, size=length)
        src = [src_words[i] for i in ids]
        if task == "copy":
            tgt = [tgt_words[i] for i in ids]
        elif task == "reverse":
            tgt = [tgt_words[i] for i in ids[::-1]]
        else:
            out = [tgt_words[i] for i in ids]
            j = 0
            while j < length - 1:
                if rng.random() < LEXICON_SWAP_PROB:
                    out[j], out[j + 1] = out[j + 1], out[j]
                    j += 2
                else:
                    j += 1
            tgt = out
        pairs.append((src, tgt))
    return ParallelCorpus(pairs)


# ---------------------------------------------------------------------------
# future-prediction supervision
# ---------------------------------------------------------------------------


def bow_target(remaining_ids: Sequence[int], vocab_size: int) -> np.ndarray:
    """Distribution over the target vocab putting mass 1/m on each remaining
    token (duplicates accumulate). <pad> and <eos> never carry mass; with no
    remaining content the row is all zeros (callers skip such steps)."""
    v = np.zeros(vocab_size)
    ids = [int(i) for i in remaining_ids if i not in (PAD_ID, EOS_ID)]
    if any(i < 0 or i >= vocab_size for i in ids):
        raise IndexError(f"bow_target: id out of range [0, {vocab_size})")
    if not ids:
        return v
    np.add.at(v, ids, 1.0)
    return v / v.sum()


def length_target(remaining_count: int, k_len: int) -> int:
    """Bucket index for a remaining length: identity below k_len - 1, with
    everything longer clamped into the final bucket."""
    if k_len < 2:
        raise ConfigError(f"length_target: k_len must be >= 2, got {k_len}")
    if remaining_count < 0:
        raise ContractError(f"length_target: negative remaining count {remaining_count}")
    return min(remaining_count, k_len - 1)


@dataclass
class TrainingBatch:
    """One padded batch with per-step supervision.

    ``tgt`` rows are [<bos>, content..., <eos>, <pad>...]; prediction step t
    consumes tgt[:, t] and is scored against tgt[:, t+1], so all per-step
    arrays have tgt.shape[1] - 1 columns. ``step_mask`` marks real steps
    (the <eos> step included). ``bow_targets[b, t]`` is the bag of content
    tokens still unemitted after step t's prediction; ``len_targets[b, t]``
    is the matching clamped remaining-length bucket.
    """

    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    step_mask: np.ndarray
    bow_targets: np.ndarray
    len_targets: np.ndarray

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @property
    def steps(self) -> int:
        return self.tgt.shape[1] - 1


def make_batches(
    corpus: ParallelCorpus,
    vocab_src: Vocab,
    vocab_tgt: Vocab,
    batch_size: int,
    k_len: int,
    seed: int,
    max_len: int = MAX_SEQ_LEN,
) -> list[TrainingBatch]:
    """Length-bucketed batches covering the corpus exactly once.

    Pairs are sorted by target length so batches are mostly uniform, grouped
    into consecutive chunks, and the chunk order is shuffled by ``seed``.
    Pairs with either side longer than ``max_len`` are skipped with a
    warning. The final partial batch is kept.
    """
    if batch_size < 1:
        raise ConfigError(f"make_batches: batch_size must be >= 1, got {batch_size}")
    encoded = []
    skipped = 0
    for src, tgt in corpus:
        if len(src) > max_len or len(tgt) > max_len:
            skipped += 1
            continue
        encoded.append((vocab_src.encode(src), vocab_tgt.encode(tgt)))
    if skipped:
        log.warning("make_batches: skipped %d pairs longer than %d tokens", skipped, max_len)
    if not encoded:
        raise ContractError("make_batches: no pairs within the length cap")
    order = sorted(range(len(encoded)), key=lambda i: (len(encoded[i][1]), len(encoded[i][0]), i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    rng = rng_for(seed, "batch-order")
    chunks = [chunks[i] for i in rng.permutation(len(chunks))]

    vocab_size = len(vocab_tgt)
    batches = []
    for chunk in chunks:
        rows = [encoded[i] for i in chunk]
        s_max = max(len(s) for s, _ in rows)
        t_max = max(len(t) for _, t in rows) + 2  # <bos> and <eos>
        b = len(rows)
        src_arr = np.full((b, s_max), PAD_ID, dtype=np.int64)
        tgt_arr = np.full((b, t_max), PAD_ID, dtype=np.int64)
        steps = t_max - 1
        bow = np.zeros((b, steps, vocab_size))
        lens = np.zeros((b, steps), dtype=np.int64)
        for r, (src_ids, tgt_ids) in enumerate(rows):
            src_arr[r, : len(src_ids)] = src_ids
            tgt_arr[r, 0] = BOS_ID
            tgt_arr[r, 1 : 1 + len(tgt_ids)] = tgt_ids
            tgt_arr[r, 1 + len(tgt_ids)] = EOS_ID
            for t in range(len(tgt_ids) + 1):  # real steps: content then <eos>
                remaining = tgt_ids[t + 1 :]
                bow[r, t] = bow_target(remaining, vocab_size)
                lens[r, t] = length_target(len(remaining), k_len)
        src_mask = src_arr != PAD_ID
        step_mask = tgt_arr[:, 1:] != PAD_ID
        batches.append(
            TrainingBatch(
                src=src_arr,
                src_mask=src_mask,
                tgt=tgt_arr,
                step_mask=step_mask,
                bow_targets=bow,
                len_targets=lens,
            )
        )
    return batches


@dataclass
class DataBundle:
    """Everything decoding and training need about one task setup."""

    train: ParallelCorpus
    dev: ParallelCorpus
    test: ParallelCorpus
    vocab_src: Vocab
    vocab_tgt: Vocab


def build_task(
    task: str,
    n_train: int,
    n_dev: int,
    n_test: int,
    vocab_size: int,
    len_range: tuple[int, int],
    seed: int,
    vocab_max: int = 50000,
) -> DataBundle:
    """Generate a synthetic task's splits and fit vocabularies on train."""
    train = gen_synthetic(task, n_train, vocab_size, len_range, derive_seed(seed, "data-train"))
    dev = gen_synthetic(task, n_dev, vocab_size, len_range, derive_seed(seed, "data-dev"))
    test = gen_synthetic(task, n_test, vocab_size, len_range, derive_seed(seed, "data-test"))
    vocab_src = build_vocab(train.sources(), vocab_max)
    vocab_tgt = build_vocab(train.targets(), vocab_max)
    return DataBundle(train=train, dev=dev, test=test, vocab_src=vocab_src, vocab_tgt=vocab_tgt)
