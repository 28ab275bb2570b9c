from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permlm.errors import DataError, ParameterError
from permlm.tokenizer import CLS, PAD, SEP, UNK, Encoded, Vocab, build_vocab, decode, encode, pad_batch

texts = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)


def brute_force_ranking(corpus, min_freq=1):
    counts, order = Counter(), []
    for text in corpus:
        for ch in text:
            counts[ch] += 1
            if ch not in order:
                order.append(ch)
    kept = [ch for ch in order if counts[ch] >= min_freq]
    return sorted(kept, key=lambda ch: (-counts[ch], order.index(ch)))


def test_build_vocab_ranking():
    vocab = build_vocab(["aa b"], min_freq=1)
    assert vocab.tokens == tuple(brute_force_ranking(["aa b"])) == ("a", " ", "b")
    assert [vocab.token_to_id[t] for t in "a b"] == [4, 5, 6]


def test_build_vocab_minimal_and_deterministic():
    vocab = build_vocab(["x"], max_size=5)
    assert vocab.id_to_token == ("<pad>", "<unk>", "<sep>", "<cls>", "x")
    corpus = ["enna padam da", "semma mass", "മലയാളം super"]
    assert build_vocab(corpus) == build_vocab(corpus)


def test_build_vocab_errors_and_caps():
    with pytest.raises(DataError):
        build_vocab([])
    with pytest.raises(ParameterError):
        build_vocab(["abc"], max_size=4)
    vocab = build_vocab(["aaabbc"], max_size=6)
    assert vocab.tokens == ("a", "b")
    assert build_vocab(["aab"], min_freq=2).tokens == ("a",)


@settings(max_examples=50, deadline=None)
@given(st.lists(texts, min_size=1, max_size=5), st.integers(1, 3))
def test_build_vocab_matches_brute_force(corpus, min_freq):
    vocab = build_vocab(corpus, max_size=10_000, min_freq=min_freq)
    assert list(vocab.tokens) == brute_force_ranking(corpus, min_freq)
    assert len(vocab) == 4 + len(vocab.tokens)
    assert sorted(vocab.token_to_id.values()) == list(range(4, len(vocab)))


def test_encode_examples():
    vocab = build_vocab(["abc"])
    assert encode("", vocab, 8).ids == (SEP, CLS)
    enc = encode("axb", vocab, 8)
    assert enc.ids[1] == UNK and enc.ids[-2:] == (SEP, CLS)
    assert decode(encode("cab", vocab, 8).ids, vocab) == "cab"
    truncated = encode("abcabc", vocab, 5)
    assert truncated.length == 5 and decode(truncated.ids, vocab) == "abc"
    with pytest.raises(ParameterError):
        encode("a", vocab, 2)


def test_decode_examples():
    vocab = build_vocab(["abc"])
    assert decode([SEP, CLS], vocab) == ""
    ids = [vocab.token_to_id[c] for c in "abc"]
    assert decode(ids + [SEP, CLS], vocab) == "abc"
    assert decode([ids[0], PAD, ids[1], SEP, CLS, PAD, PAD], vocab) == "ab"
    with pytest.raises(IndexError):
        decode([len(vocab)], vocab)


@settings(max_examples=80, deadline=None)
@given(texts)
def test_roundtrip_on_in_vocab_text(text):
    vocab = build_vocab([text, "x"])
    enc = encode(text, vocab, max_len=max(3, len(text) + 2))
    assert decode(enc.ids, vocab) == text
    assert enc.ids[-2:] == (SEP, CLS)


@settings(max_examples=80, deadline=None)
@given(texts, st.integers(3, 12))
def test_every_encoding_ends_with_sep_cls(text, max_len):
    enc = encode(text, build_vocab(["abc"]), max_len)
    assert enc.ids[-2:] == (SEP, CLS) and enc.length <= max_len


def test_word_level_mode():
    vocab = build_vocab(["semma mass padam", "mass"], level="word")
    assert vocab.tokens[0] == "mass"
    assert decode(encode("semma padam", vocab, 10).ids, vocab) == "semma padam"


def test_pad_batch_examples():
    ids, mask = pad_batch([Encoded((1, 2), 2, (True, True)), Encoded((3,), 1, (True,))])
    assert ids.tolist() == [[1, 2], [3, 0]]
    assert mask.tolist() == [[True, True], [True, False]]
    ids, mask = pad_batch([Encoded((5, 6, 7), 3, (True,) * 3)])
    assert ids.tolist() == [[5, 6, 7]] and mask.all()
    ids, _ = pad_batch([Encoded((1, 2), 2, (True,) * 2), Encoded((3, 4), 2, (True,) * 2)])
    assert ids.shape == (2, 2)
    with pytest.raises(DataError):
        pad_batch([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(4, 50), min_size=1, max_size=8), min_size=1, max_size=5))
def test_pad_batch_keeps_real_tokens(rows):
    encs = [Encoded(tuple(r), len(r), (True,) * len(r)) for r in rows]
    ids, mask = pad_batch(encs)
    for i, r in enumerate(rows):
        assert ids[i, : len(r)].tolist() == r
        assert mask[i].sum() == len(r)
    assert np.all(ids[~mask] == PAD)


@settings(max_examples=50, deadline=None)
@given(tokens=st.lists(st.text(min_size=1, max_size=3), min_size=0, max_size=10, unique=True))
def test_vocab_file_roundtrip(tokens, tmp_path_factory):
    path = tmp_path_factory.mktemp("v") / "vocab.txt"
    vocab = Vocab(tuple(tokens))
    vocab.save(path)
    assert Vocab.load(path) == vocab
    raw = path.read_bytes().decode("utf-8")
    assert raw.count("\n") == len(tokens)


def test_vocab_file_escapes():
    vocab = Vocab(("\n", "\\", "\t", "\r", "a"))
    assert vocab.to_text() == "\\n\n\\\\\n\\t\n\\r\na\n"
