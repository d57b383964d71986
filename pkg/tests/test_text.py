import unicodedata

import numpy as np
import pytest

from intentfuse.text import (
    CLS,
    PAD,
    UNK,
    TextEncoder,
    TextEncoderConfig,
    Vocabulary,
    build_vocab,
    encode_text,
    normalize_text,
    pad_batch,
)


def test_normalize_punctuation_and_spaces():
    assert normalize_text("hello,,  world!") == "hello world"


def test_normalize_empty():
    assert normalize_text("") == ""


def test_normalize_composed_forms_agree():
    precomposed = unicodedata.lookup("LATIN SMALL LETTER E WITH ACUTE")
    decomposed = "e" + unicodedata.lookup("COMBINING ACUTE ACCENT")
    assert precomposed != decomposed
    assert normalize_text(f"caf{decomposed}") == normalize_text(f"caf{precomposed}") == f"caf{precomposed}"


def test_normalize_keeps_case_and_bangla():
    assert normalize_text("  Dhaka  আমার।সোনার ") == "Dhaka আমার সোনার"


def test_emoji_is_an_ordinary_token():
    text = normalize_text("great 😀 day")
    vocab = build_vocab([text], 10)
    assert "😀" in vocab.tokens
    assert vocab.encode(text, 8)[2] == vocab.token_id("😀")


def test_vocab_frequency_order():
    v = build_vocab(["a a b"], 10)
    assert v.tokens == ("a", "b")
    assert v.token_id("a") == 3 and v.token_id("b") == 4


def test_vocab_tie_break_lexicographic():
    assert build_vocab(["b a"], 10).tokens == ("a", "b")


def test_vocab_truncates_to_max_size():
    v = build_vocab(["a a a b b c d"], 5)
    assert len(v) == 5 and v.tokens == ("a", "b")


def test_vocab_empty_corpus():
    v = build_vocab([], 8)
    assert len(v) == 3 and v.tokens_for([0, 1, 2]) == ["[PAD]", "[CLS]", "[UNK]"]


def test_vocab_min_size():
    with pytest.raises(ValueError):
        build_vocab(["a"], 3)


def test_vocab_ids_round_trip(rng):
    corpus = [" ".join(f"t{int(i)}" for i in rng.integers(0, 40, size=12)) for _ in range(30)]
    v = build_vocab(corpus, 25)
    seen = set()
    for i in range(len(v)):
        tok = v.token(i)
        assert tok not in seen
        seen.add(tok)
        assert v.token_id(tok) == i
    ids = [i for i in range(3, len(v))]
    assert v.ids_for(v.tokens_for(ids)) == ids


def test_encode_unknown_and_truncation():
    v = Vocabulary(("x", "y"))
    log = []
    ids = v.encode("x zz y y", 4, sample_id="s7", log=log)
    assert ids == [CLS, 3, UNK, 4]
    assert log == ["TRUNCATED s7 5"]
    assert v.encode("x", 4, "s8", log) == [CLS, 3] and len(log) == 1


def test_vocab_file_format(tmp_path):
    v = Vocabulary(("alpha", "beta", "গ"))
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()
    # line number (0-based) + 3 = id
    assert [v.token_id(t) - 3 for t in lines] == [0, 1, 2]
    assert Vocabulary.load(tmp_path / "vocab.txt") == v


def test_pad_batch():
    out = pad_batch([[1, 5], [1]], 4)
    np.testing.assert_array_equal(out, [[1, 5, 0, 0], [1, 0, 0, 0]])
    with pytest.raises(ValueError):
        pad_batch([[1, 2, 3]], 2)


def test_config_invariants():
    with pytest.raises(ValueError):
        TextEncoderConfig(10, d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        TextEncoderConfig(10, max_len=1)


@pytest.fixture
def encoder(rng):
    return TextEncoder(TextEncoderConfig(20, d_model=8, n_layers=2, n_heads=2, max_len=10), rng)


def test_no_layer_cls_is_embedded_input(rng):
    enc = TextEncoder(TextEncoderConfig(20, d_model=8, n_layers=0, n_heads=2, max_len=6), rng)
    feats = encode_text(enc, [CLS, 5, 6])
    np.testing.assert_array_equal(feats.cls.data, enc.token_emb.data[CLS] + enc.pos_emb.data[0])
    ref = (enc.token_emb.data[[CLS, 5, 6]] + enc.pos_emb.data[:3]).mean(axis=0)
    np.testing.assert_allclose(feats.shallow.data, ref, rtol=1e-14)


def test_pad_tail_does_not_change_features(encoder):
    a = encode_text(encoder, [CLS, 4, 9, 7])
    b = encode_text(encoder, [CLS, 4, 9, 7, PAD, PAD, PAD])
    assert np.array_equal(a.cls.data, b.cls.data) and np.array_equal(a.shallow.data, b.shallow.data)


def test_features_ignore_padded_positions(encoder, rng):
    ids = pad_batch([[CLS, 4, 9, 7]], 10)
    before = encoder(ids)
    # scramble everything a padded slot could read: the PAD row and unused positions
    encoder.token_emb.data[PAD] = rng.normal(size=8)
    encoder.pos_emb.data[4:] = rng.normal(size=(6, 8))
    after = encoder(ids)
    assert np.array_equal(before.cls.data, after.cls.data)
    assert np.array_equal(before.shallow.data, after.shallow.data)


def test_batch_neighbours_do_not_matter(encoder):
    alone = encoder(pad_batch([[CLS, 4, 9]], 10))
    together = encoder(pad_batch([[CLS, 4, 9], [CLS, 3, 3, 3, 3, 3, 3]], 10))
    assert np.array_equal(alone.cls.data[0], together.cls.data[0])


def test_token_order_matters(encoder):
    a = encode_text(encoder, [CLS, 4, 9, 7])
    b = encode_text(encoder, [CLS, 7, 4, 9])
    assert not np.allclose(a.cls.data, b.cls.data)


def test_feature_widths_and_determinism(encoder):
    f1 = encode_text(encoder, [CLS, 3, 11])
    f2 = encode_text(encoder, [CLS, 3, 11])
    assert f1.cls.shape == f1.shallow.shape == (8,)
    assert np.array_equal(f1.cls.data, f2.cls.data)
    assert np.all(np.isfinite(f1.cls.data))


def test_encode_text_requires_cls(encoder):
    with pytest.raises(ValueError):
        encode_text(encoder, [4, 5])
