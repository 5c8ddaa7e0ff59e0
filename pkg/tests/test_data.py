"""Vocabulary, synthetic tasks, corpus IO, and supervision-target assembly."""

import numpy as np
import pytest

from fpb.data import (
    BOS_ID,
    EOS_ID,
    MAX_SEQ_LEN,
    PAD_ID,
    RESERVED_TOKENS,
    UNK_ID,
    ParallelCorpus,
    Vocab,
    bow_target,
    build_task,
    build_vocab,
    detokenize,
    gen_synthetic,
    length_target,
    make_batches,
    read_corpus,
    tokenize,
    write_corpus,
)
from fpb.errors import ConfigError, ContractError


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def test_reserved_ids_are_fixed():
    v = Vocab(["a", "b"])
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)
    assert [v.token_of(i) for i in range(4)] == list(RESERVED_TOKENS)
    assert v.id_of("a") == 4 and v.id_of("b") == 5
    assert len(v) == 6


def test_vocab_unknown_lookup():
    v = Vocab(["a"])
    assert v.id_of("zzz") == UNK_ID
    with pytest.raises(IndexError):
        v.token_of(len(v))


def test_vocab_encode_decode_round_trip():
    v = Vocab(["cat", "dog"])
    ids = v.encode(["dog", "cat", "dog"])
    assert v.decode(ids) == ["dog", "cat", "dog"]


def test_vocab_rejects_bad_content_tokens():
    with pytest.raises(ContractError):
        Vocab([""])
    with pytest.raises(ContractError):
        Vocab(["a b"])
    with pytest.raises(ContractError):
        Vocab([RESERVED_TOKENS[0]])
    with pytest.raises(ContractError):
        Vocab(["a", "a"])


def test_vocab_save_load_round_trip(tmp_path):
    v = Vocab(["x", "y", "z"])
    path = tmp_path / "v.vocab"
    v.save(path)
    w = Vocab.load(path)
    assert len(w) == len(v)
    assert all(w.token_of(i) == v.token_of(i) for i in range(len(v)))


def test_build_vocab_frequency_order():
    v = build_vocab([["a", "a", "b"]], max_size=10)
    assert v.token_of(4) == "a" and v.token_of(5) == "b"
    assert len(v) == 6


def test_build_vocab_tie_breaks_alphabetically():
    v = build_vocab([["b", "a", "b", "a", "c"]], max_size=10)
    # a and b tie at 2, a first; c trails with 1
    assert [v.token_of(i) for i in (4, 5, 6)] == ["a", "b", "c"]


def test_build_vocab_truncates():
    v = build_vocab([["a", "b", "b", "c", "c", "c"]], max_size=5)
    assert len(v) == 5
    assert v.token_of(4) == "c"
    assert v.id_of("a") == UNK_ID


def test_build_vocab_config_and_contract_errors():
    with pytest.raises(ConfigError):
        build_vocab([["a"]], max_size=4)
    with pytest.raises(ContractError):
        build_vocab([[RESERVED_TOKENS[1]]], max_size=10)


def test_tokenize_detokenize():
    assert tokenize("  the cat  sat ") == ["the", "cat", "sat"]
    assert detokenize(["the", "cat"]) == "the cat"


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------


def test_copy_task_pairs():
    corpus = gen_synthetic("copy", 20, 5, (3, 6), seed=1)
    assert len(corpus) == 20
    for src, tgt in corpus:
        assert tgt == src
        assert 3 <= len(src) <= 6


def test_reverse_task_pairs():
    corpus = gen_synthetic("reverse", 20, 5, (3, 6), seed=1)
    for src, tgt in corpus:
        assert tgt == src[::-1]


def test_lexicon_task_translates_word_for_word():
    corpus = gen_synthetic("lexicon", 50, 6, (4, 8), seed=2)
    for src, tgt in corpus:
        assert len(src) == len(tgt)
        assert all(w.startswith("s") for w in src)
        assert all(w.startswith("t") for w in tgt)
        # reordering permutes adjacent pairs, so the translated multiset of
        # suffixes is preserved exactly
        assert sorted(w[1:] for w in src) == sorted(w[1:] for w in tgt)


def test_lexicon_task_reorders_sometimes():
    corpus = gen_synthetic("lexicon", 200, 6, (4, 8), seed=3)
    moved = sum(
        1
        for src, tgt in corpus
        if [w[1:] for w in src] != [w[1:] for w in tgt]
    )
    assert moved > 0, "no swap occurred in 200 draws at swap rate 0.2"


def test_gen_synthetic_deterministic():
    a = gen_synthetic("copy", 10, 5, (3, 6), seed=7)
    b = gen_synthetic("copy", 10, 5, (3, 6), seed=7)
    assert list(a) == list(b)
    c = gen_synthetic("copy", 10, 5, (3, 6), seed=8)
    assert list(a) != list(c)


def test_gen_synthetic_validation():
    with pytest.raises(ConfigError):
        gen_synthetic("nope", 10, 5, (3, 6), seed=0)
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 0, 5, (3, 6), seed=0)
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 10, 1, (3, 6), seed=0)
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 10, 5, (6, 3), seed=0)
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 10, 5, (0, 3), seed=0)
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 10, 5, (3, MAX_SEQ_LEN + 1), seed=0)


# ---------------------------------------------------------------------------
# corpus IO
# ---------------------------------------------------------------------------


def test_corpus_round_trip(tmp_path):
    corpus = gen_synthetic("copy", 5, 4, (2, 4), seed=0)
    path = tmp_path / "pairs.tsv"
    write_corpus(path, corpus)
    again = read_corpus(path)
    assert list(again) == list(corpus)


def test_read_corpus_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a b\tc d\nno tab here\n", encoding="utf-8")
    with pytest.raises(ContractError, match="line 2"):
        read_corpus(path)


def test_read_corpus_rejects_empty_side(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a\t\n", encoding="utf-8")
    with pytest.raises(ContractError, match="line 1"):
        read_corpus(path)


def test_read_corpus_skips_blank_lines(tmp_path):
    path = tmp_path / "ok.tsv"
    path.write_text("a\tb\n\nc\td\n", encoding="utf-8")
    corpus = read_corpus(path)
    assert len(corpus) == 2


def test_parallel_corpus_rejects_empty():
    with pytest.raises(ContractError):
        ParallelCorpus([(["a"], [])])


# ---------------------------------------------------------------------------
# supervision targets
# ---------------------------------------------------------------------------


def test_bow_target_uniform_over_distinct():
    # four distinct remaining words -> 1/4 mass each
    q = bow_target([4, 5, 6, 7], vocab_size=10)
    np.testing.assert_allclose(q[[4, 5, 6, 7]], 0.25)
    assert q.sum() == pytest.approx(1.0, abs=1e-15)


def test_bow_target_counts_duplicates():
    # (the, the, cat) -> 2/3 and 1/3
    q = bow_target([4, 4, 5], vocab_size=8)
    assert q[4] == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert q[5] == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_bow_target_excludes_pad_eos_and_empty():
    q = bow_target([PAD_ID, EOS_ID], vocab_size=8)
    np.testing.assert_array_equal(q, np.zeros(8))
    np.testing.assert_array_equal(bow_target([], 8), np.zeros(8))


def test_bow_target_range_check():
    with pytest.raises(IndexError):
        bow_target([9], vocab_size=8)


def test_length_target_values():
    assert length_target(10, 50) == 10
    assert length_target(0, 50) == 0
    assert length_target(80, 50) == 49
    assert length_target(49, 50) == 49
    with pytest.raises(ConfigError):
        length_target(3, 1)
    with pytest.raises(ContractError):
        length_target(-1, 50)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def small_corpus():
    return ParallelCorpus(
        [
            (["a", "b"], ["x", "y", "z"]),
            (["c"], ["x"]),
            (["a", "b", "c"], ["y", "z"]),
        ]
    )


def small_vocabs():
    src_v = build_vocab([["a", "b", "c"]], 10)
    tgt_v = build_vocab([["x", "y", "z"]], 10)
    return src_v, tgt_v


def test_make_batches_layout_and_masks():
    src_v, tgt_v = small_vocabs()
    batches = make_batches(small_corpus(), src_v, tgt_v, batch_size=8, k_len=6, seed=0)
    assert sum(b.size for b in batches) == 3
    for b in batches:
        assert b.tgt[:, 0].tolist() == [BOS_ID] * b.size
        for r in range(b.size):
            row = b.tgt[r]
            content = row[(row != PAD_ID) & (row != BOS_ID) & (row != EOS_ID)]
            assert EOS_ID in row
            # step mask covers content plus the <eos> step
            assert b.step_mask[r].sum() == len(content) + 1
            # mask is a prefix: no active step after the first inactive one
            m = b.step_mask[r]
            assert not m[np.argmin(m):].any() or m.all()


def test_make_batches_supervision_example():
    # target "x y z": after consuming <bos> (step predicting x) the remaining
    # words are {y, z} -> bow mass 0.5/0.5, length bucket 2
    src_v, tgt_v = small_vocabs()
    batches = make_batches(small_corpus(), src_v, tgt_v, batch_size=8, k_len=6, seed=0)
    found = False
    xyz = [tgt_v.id_of(w) for w in ("x", "y", "z")]
    for b in batches:
        for r in range(b.size):
            row = b.tgt[r]
            content = row[(row != PAD_ID) & (row != BOS_ID) & (row != EOS_ID)]
            if content.tolist() == xyz:
                found = True
                q0 = b.bow_targets[r, 0]
                assert q0[tgt_v.id_of("y")] == pytest.approx(0.5)
                assert q0[tgt_v.id_of("z")] == pytest.approx(0.5)
                assert q0.sum() == pytest.approx(1.0)
                assert b.len_targets[r, 0] == 2
                # last real step: nothing remains
                last = b.step_mask[r].sum() - 1
                np.testing.assert_array_equal(b.bow_targets[r, last], 0.0)
                assert b.len_targets[r, last] == 0
    assert found


def test_make_batches_length_buckets_decrement():
    # with C content tokens the bucket at step t is C-1-t until it reaches
    # zero, where it stays for the <eos> step (clamped at k_len-1 above)
    src_v, tgt_v = small_vocabs()
    k_len = 6
    batches = make_batches(small_corpus(), src_v, tgt_v, batch_size=8, k_len=k_len, seed=0)
    for b in batches:
        for r in range(b.size):
            steps = int(b.step_mask[r].sum())
            content = steps - 1
            expected = [min(max(content - 1 - t, 0), k_len - 1) for t in range(steps)]
            assert b.len_targets[r, :steps].tolist() == expected


def test_make_batches_bow_rows_sum_to_one_or_zero():
    src_v, tgt_v = small_vocabs()
    batches = make_batches(small_corpus(), src_v, tgt_v, batch_size=8, k_len=6, seed=0)
    for b in batches:
        sums = b.bow_targets.sum(axis=2)
        active = b.step_mask
        ok = np.isclose(sums, 1.0, atol=1e-12) | np.isclose(sums, 0.0, atol=1e-12)
        assert ok[active].all()
        # inactive steps never carry mass
        assert np.allclose(sums[~active], 0.0)


def test_make_batches_groups_similar_lengths():
    corpus = gen_synthetic("copy", 40, 8, (2, 10), seed=5)
    v = build_vocab(corpus.sources(), 50)
    batches = make_batches(corpus, v, v, batch_size=8, k_len=12, seed=1)
    for b in batches:
        lens = b.step_mask.sum(axis=1)
        assert lens.max() - lens.min() <= 8


def test_make_batches_order_depends_on_seed_only():
    corpus = gen_synthetic("copy", 40, 8, (2, 10), seed=5)
    v = build_vocab(corpus.sources(), 50)
    a = make_batches(corpus, v, v, 8, 12, seed=1)
    b = make_batches(corpus, v, v, 8, 12, seed=1)
    c = make_batches(corpus, v, v, 8, 12, seed=2)
    key = lambda bs: [bb.src.tolist() for bb in bs]
    assert key(a) == key(b)
    assert key(a) != key(c)


def test_make_batches_drops_overlong_pairs(caplog):
    long_tgt = ["w"] * (MAX_SEQ_LEN + 1)
    corpus = ParallelCorpus([(["a"], long_tgt), (["a"], ["w"])])
    v = build_vocab([["a", "w"]], 10)
    batches = make_batches(corpus, v, v, 8, 6, seed=0, max_len=MAX_SEQ_LEN)
    assert sum(b.size for b in batches) == 1


def test_build_task_splits_are_disjoint_seeds():
    bundle = build_task("copy", n_train=20, n_dev=5, n_test=5, vocab_size=6,
                        len_range=(3, 5), seed=11, vocab_max=50)
    assert len(bundle.train) == 20
    assert len(bundle.dev) == 5
    assert len(bundle.test) == 5
    assert list(bundle.train) != list(bundle.dev)
    # vocabularies come from the training split
    for src, tgt in bundle.train:
        assert all(bundle.vocab_src.id_of(w) != UNK_ID for w in src)
        assert all(bundle.vocab_tgt.id_of(w) != UNK_ID for w in tgt)
