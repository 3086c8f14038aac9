import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsam.embeddings import (
    PAD,
    PAD_INDEX,
    UNK,
    UNK_INDEX,
    EmbeddingMatrix,
    Vocabulary,
    embed,
    embed_batch,
    load_pretrained,
    random_embeddings,
    tokenize,
)
from vsam.exceptions import DegenerateInputError, DimensionError, EmptyEmbeddingError


@pytest.fixture
def vec_file(tmp_path):
    def write(text):
        path = tmp_path / "vectors.txt"
        path.write_text(text, encoding="utf-8")
        return path
    return write


def test_two_line_file_gives_four_entries(vec_file):
    vocab, emb = load_pretrained(vec_file("cat 0.1 0.2 0.3\ndog 1 2 3\n"), 3)
    assert len(vocab) == 4
    assert emb.weight.shape == (3, 4)
    assert vocab.tokens[:2] == [PAD, UNK]


def test_readback_of_a_vector(vec_file):
    vocab, emb = load_pretrained(vec_file("cat 0.1 0.2 0.3\n"), 3)
    np.testing.assert_array_equal(emb.column(vocab.lookup("cat")), [0.1, 0.2, 0.3])


def test_unk_is_mean_of_loaded_vectors(vec_file):
    vocab, emb = load_pretrained(vec_file("a 1 0\nb 3 2\n"), 2)
    np.testing.assert_array_equal(emb.column(UNK_INDEX), [2.0, 1.0])
    np.testing.assert_array_equal(emb.column(PAD_INDEX), [0.0, 0.0])


def test_malformed_lines_are_skipped_and_counted(vec_file):
    text = "\n".join([
        "400000 3",           # header: skipped, not counted
        "good 1 2 3",
        "short 1 2",          # wrong width
        "bad 1 x 3",          # unparseable
        "inf 1 inf 3",        # non-finite
        "good 4 5 6",         # duplicate
        "<unk> 1 1 1",        # reserved
        "",
        "fine -1 -2 -3",
    ])
    vocab, emb = load_pretrained(vec_file(text), 3)
    assert emb.skipped_lines == 5
    assert vocab.tokens == [PAD, UNK, "good", "fine"]
    np.testing.assert_array_equal(emb.column(vocab.lookup("good")), [1, 2, 3])


def test_numeric_tokens_with_full_records_are_kept(vec_file):
    vocab, _ = load_pretrained(vec_file("1990 0.5 0.5\n"), 2)
    assert "1990" in vocab


def test_no_parseable_lines(vec_file):
    with pytest.raises(EmptyEmbeddingError):
        load_pretrained(vec_file("a 1\nb 2\n"), 3)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_pretrained(tmp_path / "nope.txt", 3)


def test_embedding_matrix_zeroes_pad_column():
    emb = EmbeddingMatrix(np.ones((2, 3)))
    np.testing.assert_array_equal(emb.weight[:, PAD_INDEX], 0.0)
    with pytest.raises(DimensionError):
        EmbeddingMatrix(np.ones(3))


@pytest.fixture
def small():
    return random_embeddings(["the", "cat", "sat", "on", "mat"], 4, seed=0)


def test_embed_single_token_mask(small):
    vocab, emb = small
    batch = embed(["cat"], vocab, emb, 4)
    np.testing.assert_array_equal(batch.mask, [[True, False, False, False]])


def test_embed_truncates(small):
    vocab, emb = small
    tokens = ["the", "cat", "sat", "on", "mat"] * 2
    batch = embed(tokens, vocab, emb, 4)
    assert batch.mask.all()
    for j, tok in enumerate(tokens[:4]):
        np.testing.assert_array_equal(batch.H[0, :, j], emb.column(vocab.lookup(tok)))


def test_unknown_token_uses_unk(small):
    vocab, emb = small
    batch = embed(["zebra"], vocab, emb, 2)
    np.testing.assert_array_equal(batch.H[0, :, 0], emb.column(UNK_INDEX))


def test_embed_empty_list(small):
    vocab, emb = small
    with pytest.raises(DegenerateInputError):
        embed([], vocab, emb, 3)


def test_tokenize_examples():
    assert tokenize("The cat, sat.") == ["the", "cat", "sat"]
    assert tokenize("") == []
    assert tokenize("A  B") == ["a", "b"]
    assert tokenize("...  !!") == []
    assert tokenize("Tab\tand nbsp") == ["tab", "and", "nbsp"]


def test_vocabulary_lookup_never_fails():
    vocab = Vocabulary(["x", "y", "x"])
    assert len(vocab) == 4
    assert vocab.lookup("missing") == UNK_INDEX
    assert sorted(vocab.index.values()) == list(range(len(vocab)))


@settings(max_examples=200, deadline=None)
@given(st.text())
def test_tokenize_is_idempotent(text):
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


_SMALL = random_embeddings(["the", "cat", "sat", "on", "mat"], 4, seed=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["the", "cat", "sat", "on", "mat", "zebra"]), min_size=1, max_size=12),
       st.integers(1, 8))
def test_round_trip_and_padding(tokens, n_max):
    vocab, emb = _SMALL
    batch = embed_batch([tokens], vocab, emb, n_max)
    n = min(len(tokens), n_max)
    assert batch.mask[0].sum() == n
    for j in range(n):
        np.testing.assert_array_equal(batch.H[0, :, j], emb.weight[:, vocab.lookup(tokens[j])])
    assert not batch.H[0][:, ~batch.mask[0]].any()
