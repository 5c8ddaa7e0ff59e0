"""Decoding, BLEU, and the analyses built on the future-prediction heads.

Beam search keeps the usual sum-of-log-probabilities score with no length
normalization by default (a flag turns it on), holds finished hypotheses
aside, and stops once ``width`` of them exist. A width-1 beam runs the
exact same computation as single-sentence greedy decoding, so the two are
identical, not merely equivalent in expectation.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace as dc_replace
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    DataBundle,
    ParallelCorpus,
    Vocab,
    make_batches,
)
from .errors import ContractError, TrainingError
from .model import EncoderState, FpbModel, FpbConfig, LengthDistribution
from .seeding import derive_seed, rng_for


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise log softmax over the last axis, safe for -inf entries."""
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    with np.errstate(divide="ignore"):  # exp(-inf) rows are handled upstream
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _tile_encoder(enc: EncoderState, n: int) -> EncoderState:
    """Replicate a single-sentence encoder state across n batch rows."""
    idx = np.zeros(n, dtype=np.int64)
    return EncoderState(
        annotations=Tensor(enc.annotations.data[idx]),
        final_summary=Tensor(enc.final_summary.data[idx]),
        src_mask=None if enc.src_mask is None else enc.src_mask[idx],
        enc_keys=Tensor(enc.enc_keys.data[idx]),
    )


def eos_length_gate(
    logits: np.ndarray,
    length: LengthDistribution | np.ndarray,
    enabled: bool,
    threshold: int = 1,
) -> np.ndarray:
    """Suppress <eos> while the predicted remaining-length bucket exceeds
    ``threshold``: its logit goes to -inf so no renormalization leaks mass.
    Disabled, the logits come back unchanged."""
    if not enabled:
        return logits
    probs = length.probs.data if isinstance(length, LengthDistribution) else np.asarray(length)
    out = np.array(logits, dtype=np.float64, copy=True)
    if out.ndim == 1:
        if int(np.argmax(probs)) > threshold:
            out[EOS_ID] = -np.inf
        return out
    for r in range(out.shape[0]):
        if int(np.argmax(probs[r])) > threshold:
            out[r, EOS_ID] = -np.inf
    return out


def greedy_decode_batch(
    model: FpbModel,
    src_ids_list: Sequence[Sequence[int]],
    max_len: int = 50,
    eos_gate: bool = False,
    eos_threshold: int = 1,
) -> list[list[int]]:
    """Argmax decoding for a batch of sources. Each row stops at <eos> or
    after emitting ``max_len`` content tokens. Returns content ids only."""
    if eos_gate and not model.config.use_len:
        raise ContractError("greedy: eos_gate needs a model with use_len=True")
    if not src_ids_list:
        return []
    with no_grad():
        b = len(src_ids_list)
        s_max = max(len(s) for s in src_ids_list)
        src = np.full((b, s_max), PAD_ID, dtype=np.int64)
        for r, ids in enumerate(src_ids_list):
            if not ids:
                raise ContractError(f"greedy: source {r} is empty")
            src[r, : len(ids)] = ids
        mask = src != PAD_ID
        enc = model.encode(src, mask)
        state = model.init_state(enc)
        prev = np.full(b, BOS_ID, dtype=np.int64)
        finished = np.zeros(b, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_len):
            logits, state = model.decode_step(prev, state, enc)
            arr = eos_length_gate(logits.data, state.length, eos_gate, eos_threshold) if eos_gate else logits.data
            nxt = np.argmax(arr, axis=1)
            for r in range(b):
                if finished[r]:
                    continue
                if nxt[r] == EOS_ID:
                    finished[r] = True
                else:
                    outputs[r].append(int(nxt[r]))
                    if len(outputs[r]) == max_len:
                        finished[r] = True
            if finished.all():
                break
            prev = np.where(finished, PAD_ID, nxt)
        return outputs


def greedy_decode(
    model: FpbModel,
    src_ids: Sequence[int],
    max_len: int = 50,
    eos_gate: bool = False,
    eos_threshold: int = 1,
) -> list[int]:
    return greedy_decode_batch(model, [src_ids], max_len, eos_gate, eos_threshold)[0]


def beam_search(
    model: FpbModel,
    src_ids: Sequence[int],
    width: int = 10,
    max_len: int = 50,
    length_norm: bool = False,
    eos_gate: bool = False,
    eos_threshold: int = 1,
) -> list[int]:
    """Beam decoding of one source sentence; returns content ids of the best
    hypothesis. With no finished hypothesis within the length cap, the best
    truncated partial is returned."""
    tokens, _ = beam_search_scored(
        model, src_ids, width, max_len, length_norm, eos_gate, eos_threshold
    )
    return tokens


def beam_search_scored(
    model: FpbModel,
    src_ids: Sequence[int],
    width: int = 10,
    max_len: int = 50,
    length_norm: bool = False,
    eos_gate: bool = False,
    eos_threshold: int = 1,
) -> tuple[list[int], float]:
    """Beam decoding returning (content ids, sum of step log-probabilities
    including the <eos> step for finished hypotheses).

    The greedy rollout is always kept as a candidate, so the returned score
    never falls below the greedy score even if beam pruning would have
    dropped that path.
    """
    if width < 1:
        raise ContractError(f"beam: width must be >= 1, got {width}")
    if max_len < 1:
        raise ContractError(f"beam: max_len must be >= 1, got {max_len}")
    if eos_gate and not model.config.use_len:
        raise ContractError("beam: eos_gate needs a model with use_len=True")
    if not src_ids:
        raise ContractError("beam: empty source")
    with no_grad():
        base_enc = model.encode(np.asarray([src_ids], dtype=np.int64))
        state = model.init_state(base_enc)
        enc = _tile_encoder(base_enc, 1)
        live_tokens: list[list[int]] = [[]]
        live_scores = np.zeros(1)
        prev = np.full(1, BOS_ID, dtype=np.int64)
        # pool items are (tokens, score, paid_eos): finished hypotheses paid
        # for their <eos> step, truncated partials did not
        finished: list[tuple[list[int], float, bool]] = []
        partials: list[tuple[list[int], float, bool]] = []

        for _ in range(max_len):
            logits, new_state = model.decode_step(prev, state, enc)
            arr = logits.data
            if eos_gate:
                arr = eos_length_gate(arr, new_state.length, True, eos_threshold)
            logp = log_softmax(arr)
            cand = live_scores[:, None] + logp
            vocab = cand.shape[1]
            order = np.argsort(-cand, axis=None, kind="stable")
            rows, prevs, tokens_next, scores_next = [], [], [], []
            for flat in order[:width]:
                r, w = divmod(int(flat), vocab)
                sc = float(cand[r, w])
                if sc == -np.inf:
                    continue
                if w == EOS_ID:
                    finished.append((live_tokens[r], sc, True))
                else:
                    toks = live_tokens[r] + [w]
                    if len(toks) == max_len:
                        partials.append((toks, sc, False))
                    else:
                        rows.append(r)
                        prevs.append(w)
                        tokens_next.append(toks)
                        scores_next.append(sc)
            if len(finished) >= width or not rows:
                break
            idx = np.asarray(rows, dtype=np.int64)
            state = new_state.reorder(idx)
            enc = _tile_encoder(base_enc, len(rows))
            prev = np.asarray(prevs, dtype=np.int64)
            live_tokens = tokens_next
            live_scores = np.asarray(scores_next)

        pool = list(finished if finished else partials)
        if width > 1:
            pool.append(_greedy_scored(model, src_ids, max_len, eos_gate, eos_threshold))
        if not pool:
            return [], -math.inf

        def rank(item: tuple[list[int], float, bool]) -> float:
            toks, sc, paid_eos = item
            if not length_norm:
                return sc
            return sc / max(len(toks) + int(paid_eos), 1)

        best_toks, best_sc, _ = max(pool, key=rank)
        return list(best_toks), best_sc


def _greedy_scored(
    model: FpbModel,
    src_ids: Sequence[int],
    max_len: int,
    eos_gate: bool,
    eos_threshold: int,
) -> tuple[list[int], float, bool]:
    """Greedy rollout with its running log-probability, as (tokens, score,
    ended_with_eos)."""
    with no_grad():
        enc = model.encode(np.asarray([src_ids], dtype=np.int64))
        state = model.init_state(enc)
        prev = np.full(1, BOS_ID, dtype=np.int64)
        tokens: list[int] = []
        total = 0.0
        for _ in range(max_len):
            logits, state = model.decode_step(prev, state, enc)
            arr = logits.data
            if eos_gate:
                arr = eos_length_gate(arr, state.length, True, eos_threshold)
            lp = log_softmax(arr)[0]
            w = int(np.argmax(lp))
            total += float(lp[w])
            if w == EOS_ID:
                return tokens, total, True
            tokens.append(w)
            prev = np.full(1, w, dtype=np.int64)
        return tokens, total, False


def sequence_logprob(
    model: FpbModel,
    src_ids: Sequence[int],
    tokens: Sequence[int],
    include_eos: bool = True,
) -> float:
    """Sum of step log-probabilities the model assigns to ``tokens`` (and,
    by default, a final <eos>) given the source. Matches beam scoring."""
    with no_grad():
        enc = model.encode(np.asarray([src_ids], dtype=np.int64))
        state = model.init_state(enc)
        seq = list(tokens) + ([EOS_ID] if include_eos else [])
        prev = np.full(1, BOS_ID, dtype=np.int64)
        total = 0.0
        for tok in seq:
            logits, state = model.decode_step(prev, state, enc)
            total += float(log_softmax(logits.data)[0, int(tok)])
            prev = np.full(1, int(tok), dtype=np.int64)
        return total


def decode_corpus(
    model: FpbModel,
    src_ids_list: Sequence[Sequence[int]],
    width: int = 1,
    max_len: int = 50,
    length_norm: bool = False,
    eos_gate: bool = False,
    eos_threshold: int = 1,
) -> list[list[int]]:
    """Translate a list of sources: batched greedy for width 1, per-sentence
    beam otherwise."""
    if width == 1:
        return greedy_decode_batch(model, src_ids_list, max_len, eos_gate, eos_threshold)
    return [
        beam_search(model, s, width, max_len, length_norm, eos_gate, eos_threshold)
        for s in src_ids_list
    ]


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


@dataclass
class BleuDetails:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu_details(
    hypotheses: Sequence[Sequence],
    references: Sequence[Sequence],
    max_n: int = 4,
    smooth: bool = False,
) -> BleuDetails:
    """Corpus-level case-sensitive BLEU with clipped n-gram counts up to
    ``max_n``, geometric mean, and brevity penalty.

    Any order with zero matches gives score 0 unless ``smooth`` adds one to
    numerator and denominator. Orders longer than every hypothesis (zero
    candidate n-grams in the whole corpus) are treated as neutral so short
    identical corpora still score 1.0.
    """
    if len(hypotheses) != len(references):
        raise ContractError(
            f"bleu: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ContractError("bleu: empty corpus")
    num = [0] * max_n
    den = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        if not ref:
            raise ContractError("bleu: empty reference")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hc = _ngrams(hyp, n)
            if not hc:
                continue
            rc = _ngrams(ref, n)
            num[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            den[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = []
    for n in range(max_n):
        if den[n] == 0:
            precisions.append(1.0)
        elif smooth:
            precisions.append((num[n] + 1) / (den[n] + 1))
        else:
            precisions.append(num[n] / den[n])
    if hyp_len == 0:
        return BleuDetails(0.0, precisions, 0.0, hyp_len, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(math.fsum(math.log(p) for p in precisions) / max_n)
    return BleuDetails(score, precisions, bp, hyp_len, ref_len)


def corpus_bleu(
    hypotheses: Sequence[Sequence],
    references: Sequence[Sequence],
    max_n: int = 4,
    smooth: bool = False,
) -> float:
    return corpus_bleu_details(hypotheses, references, max_n, smooth).score


# ---------------------------------------------------------------------------
# future-prediction analyses
# ---------------------------------------------------------------------------


def top_m_with_random_ties(
    probs: np.ndarray, m: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of the m largest entries, with exact ties broken uniformly at
    random (a uniform distribution yields a uniformly random m-subset)."""
    perm = rng.permutation(len(probs))
    order = np.argsort(-probs[perm], kind="stable")
    return perm[order[:m]]


def bow_topm_accuracy(
    probs: np.ndarray, remaining_ids: Sequence[int], rng: np.random.Generator
) -> float:
    """Fraction of the distinct remaining words found in the top-m of
    ``probs``, m being the number of distinct remaining words."""
    distinct = set(int(i) for i in remaining_ids)
    if not distinct:
        raise ContractError("bow_topm_accuracy: nothing remaining")
    m = len(distinct)
    top = set(int(i) for i in top_m_with_random_ties(np.asarray(probs), m, rng))
    return len(top & distinct) / m


@dataclass
class BowAccuracyCurve:
    """Mean top-m accuracy of the bag-of-words head, binned by the number of
    tokens still untranslated at the step."""

    accuracy: dict[int, float]
    counts: dict[int, int]

    def rows(self) -> list[tuple[int, float, int]]:
        return [(r, self.accuracy[r], self.counts[r]) for r in sorted(self.accuracy)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["remaining", "accuracy", "count"])
            for r, acc, cnt in self.rows():
                w.writerow([r, f"{acc:.6f}", cnt])


def bow_accuracy_curve(
    model: FpbModel,
    vocab_src: Vocab,
    vocab_tgt: Vocab,
    corpus: ParallelCorpus,
    seed: int = 0,
    batch_size: int = 64,
) -> BowAccuracyCurve:
    """Teacher-forced evaluation of the bag-of-words head over a corpus.

    At every real step with r > 0 remaining tokens the averaged prediction's
    top-m (m distinct remaining words, ties randomized by ``seed``) is
    compared with the true remaining set; accuracies are averaged per r.
    """
    if not model.config.use_bow:
        raise ContractError("bow_accuracy_curve: model built with use_bow=False")
    rng = rng_for(seed, "bow-curve-ties")
    batches = make_batches(
        corpus, vocab_src, vocab_tgt, batch_size, model.config.k_len,
        seed=derive_seed(seed, "bow-curve-batches"),
    )
    sums: dict[int, float] = defaultdict(float)
    counts: dict[int, int] = defaultdict(int)
    with no_grad():
        for batch in batches:
            fwd = model.forward_teacher(batch, training=False)
            for t, bow in enumerate(fwd.step_bows):
                probs = bow.averaged.data
                for b in np.flatnonzero(batch.step_mask[:, t]):
                    tail = batch.tgt[b, t + 2 :]
                    remaining = tail[(tail != PAD_ID) & (tail != EOS_ID)]
                    if remaining.size == 0:
                        continue
                    r = int(remaining.size)
                    sums[r] += bow_topm_accuracy(probs[b], remaining, rng)
                    counts[r] += 1
    accuracy = {r: sums[r] / counts[r] for r in counts}
    return BowAccuracyCurve(accuracy=accuracy, counts=dict(counts))


def length_accuracy(
    model: FpbModel,
    vocab_src: Vocab,
    vocab_tgt: Vocab,
    corpus: ParallelCorpus,
    seed: int = 0,
    batch_size: int = 64,
) -> float:
    """Fraction of real steps where the argmax remaining-length bucket (ties
    randomized) matches the true clamped bucket."""
    if not model.config.use_len:
        raise ContractError("length_accuracy: model built with use_len=False")
    rng = rng_for(seed, "len-ties")
    batches = make_batches(
        corpus, vocab_src, vocab_tgt, batch_size, model.config.k_len,
        seed=derive_seed(seed, "len-batches"),
    )
    correct = 0
    total = 0
    with no_grad():
        for batch in batches:
            fwd = model.forward_teacher(batch, training=False)
            for t, dist in enumerate(fwd.step_lengths):
                probs = dist.probs.data
                for b in np.flatnonzero(batch.step_mask[:, t]):
                    row = probs[b]
                    cands = np.flatnonzero(row == row.max())
                    pick = int(cands[rng.integers(len(cands))]) if len(cands) > 1 else int(cands[0])
                    correct += pick == batch.len_targets[b, t]
                    total += 1
    if total == 0:
        raise ContractError("length_accuracy: no supervised steps in corpus")
    return correct / total


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_ROWS = (
    ("baseline", False, False),
    ("+length", False, True),
    ("+BOW", True, False),
    ("full", True, True),
)


@dataclass
class AblationRow:
    label: str
    per_seed: dict[int, float | None]
    median: float | None


@dataclass
class AblationResult:
    seeds: list[int]
    rows: list[AblationRow]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["variant"] + [f"seed_{s}" for s in self.seeds] + ["median"])
            for row in self.rows:
                cells = [
                    "failed" if row.per_seed[s] is None else f"{row.per_seed[s]:.6f}"
                    for s in self.seeds
                ]
                med = "failed" if row.median is None else f"{row.median:.6f}"
                w.writerow([row.label] + cells + [med])

    def to_json_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "rows": [
                {
                    "variant": row.label,
                    "bleu_per_seed": {str(s): row.per_seed[s] for s in self.seeds},
                    "median": row.median,
                }
                for row in self.rows
            ],
        }

    def format_table(self) -> str:
        lines = [f"{'variant':<10} " + " ".join(f"seed {s:>4}" for s in self.seeds) + "  median"]
        for row in self.rows:
            cells = " ".join(
                "   failed" if row.per_seed[s] is None else f"{row.per_seed[s]:9.4f}"
                for s in self.seeds
            )
            med = "  failed" if row.median is None else f"{row.median:8.4f}"
            lines.append(f"{row.label:<10} {cells}{med}")
        return "\n".join(lines)


def ablation_run(
    config: FpbConfig,
    bundle: DataBundle,
    train_cfg,
    seeds: Sequence[int],
    beam_width: int = 10,
    max_len: int = 50,
) -> AblationResult:
    """Train and score the four head configurations (baseline, +length,
    +BOW, full) across seeds, reporting test BLEU per run and the per-row
    median. A diverging run marks its cell failed and the sweep continues.
    Head loss weights are zeroed along with the head they belong to."""
    from .training import train  # deferred to avoid a cycle

    test_src = [bundle.vocab_src.encode(s) for s in bundle.test.sources()]
    test_refs = bundle.test.targets()
    seeds = [int(s) for s in seeds]
    rows = []
    for label, use_bow, use_len in ABLATION_ROWS:
        per_seed: dict[int, float | None] = {}
        for seed in seeds:
            cfg = dc_replace(
                config,
                use_bow=use_bow,
                use_len=use_len,
                lambda2=config.lambda2 if use_bow else 0.0,
                lambda3=config.lambda3 if use_len else 0.0,
            )
            model = FpbModel(cfg, seed=seed)
            tc = dc_replace(train_cfg, seed=seed)
            try:
                train(model, bundle, tc, out_dir=None)
                hyps = decode_corpus(model, test_src, width=beam_width, max_len=max_len)
                hyp_tokens = [bundle.vocab_tgt.decode(h) for h in hyps]
                per_seed[seed] = corpus_bleu(hyp_tokens, test_refs)
            except TrainingError:
                per_seed[seed] = None
        vals = [v for v in per_seed.values() if v is not None]
        med = float(np.median(vals)) if vals else None
        rows.append(AblationRow(label=label, per_seed=per_seed, median=med))
    return AblationResult(seeds=seeds, rows=rows)
