"""Tokenizer, vocabulary, prompt encoding, and the causal text encoder."""

import numpy as np
import pytest

from viewfuse.nn import ParameterRegistry
from viewfuse.tensor import ShapeError
from viewfuse.text import (
    EOS,
    PAD,
    SOS,
    SPECIAL_TOKENS,
    UNK,
    TextConfig,
    TextEncoder,
    Vocabulary,
    canonical_prompts,
    encode_prompt_pair,
    tokenize_words,
)


class TestTokenizer:
    def test_lowercases_and_strips_punctuation(self):
        assert tokenize_words("This is, a CASE.") == ["this", "is", "a", "case"]

    def test_keeps_digits(self):
        assert tokenize_words("view 2 of 4") == ["view", "2", "of", "4"]

    def test_empty_text(self):
        assert tokenize_words("...") == []


class TestVocabulary:
    def test_build_puts_specials_first_then_sorted_words(self):
        v = Vocabulary.build(["b a", "c a"])
        assert v.tokens == SPECIAL_TOKENS + ("a", "b", "c")
        assert len(v) == 7

    def test_rejects_missing_specials(self):
        with pytest.raises(ValueError, match="special tokens"):
            Vocabulary(("a", "b"))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError, match="duplicate"):
            Vocabulary(SPECIAL_TOKENS + ("a", "a"))

    def test_encode_frames_and_pads(self):
        v = Vocabulary.build(["hello world"])
        ids = v.encode("hello world", context_length=6)
        assert ids[0] == SOS
        assert ids[3] == EOS
        assert list(ids[4:]) == [PAD, PAD]
        assert v.decode_words(ids) == ["hello", "world"]

    def test_unknown_word_maps_to_unk(self):
        v = Vocabulary.build(["hello"])
        ids = v.encode("hello stranger", context_length=6)
        assert ids[2] == UNK

    def test_too_long_prompt_rejected(self):
        v = Vocabulary.build(["a b c"])
        with pytest.raises(ValueError, match="prompt needs"):
            v.encode("a b c", context_length=4)

    def test_save_load_roundtrip(self, tmp_path):
        v = Vocabulary.build(canonical_prompts().all())
        path = tmp_path / "vocab.txt"
        v.save(path)
        assert Vocabulary.load(path).tokens == v.tokens


class TestPrompts:
    def test_zero_shot_prompts_are_the_short_pair(self):
        p = canonical_prompts()
        assert p.zeroshot_negative == "This is a normal mammogram case."
        assert p.zeroshot_positive == "This is an abnormal mammogram case."
        assert p.pair(zero_shot=True) == (p.zeroshot_negative, p.zeroshot_positive)
        assert p.pair() == (p.train_negative, p.train_positive)

    def test_training_prompts_name_all_four_views(self):
        for prompt in canonical_prompts().pair():
            words = tokenize_words(prompt)
            for needed in ("craniocaudal", "mediolateral", "oblique", "left", "right"):
                assert needed in words

    def test_short_prompts_are_word_prefixes_of_long(self):
        """The shared prefix is what makes zero-shot transfer possible."""
        p = canonical_prompts()
        for short, long in ((p.zeroshot_negative, p.train_negative),
                            (p.zeroshot_positive, p.train_positive)):
            sw, lw = tokenize_words(short), tokenize_words(long)
            assert lw[: len(sw)] == sw

    def test_encode_pair_shapes_and_trim(self):
        vocab = Vocabulary.build(canonical_prompts().all())
        full = encode_prompt_pair(vocab, 64, trim=False)
        assert full.shape == (2, 64)
        trimmed = encode_prompt_pair(vocab, 64)
        eos_cols = np.argmax(full == EOS, axis=1)
        assert trimmed.shape == (2, int(eos_cols.max()) + 1)
        np.testing.assert_array_equal(trimmed, full[:, : trimmed.shape[1]])

    def test_zero_shot_pair_is_shorter(self):
        vocab = Vocabulary.build(canonical_prompts().all())
        long_ids = encode_prompt_pair(vocab, 64)
        short_ids = encode_prompt_pair(vocab, 64, zero_shot=True)
        assert short_ids.shape[1] < long_ids.shape[1]


class TestTextConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            TextConfig(width=10, heads=4)
        with pytest.raises(ValueError, match="at least one block"):
            TextConfig(depth=0)
        with pytest.raises(ValueError, match="vocab size"):
            TextConfig(vocab_size=3)
        with pytest.raises(ValueError, match="context"):
            TextConfig(context_length=2)


@pytest.fixture(scope="module")
def text_encoder():
    cfg = TextConfig(vocab_size=64, context_length=40, width=16, heads=2, depth=2, embed_dim=8)
    enc = TextEncoder(cfg)
    reg = ParameterRegistry()
    enc.register(reg)
    reg.materialize(seed=4)
    enc.bind(reg)
    vocab = Vocabulary.build(canonical_prompts().all())
    return enc, vocab


class TestTextEncoder:
    def test_output_shape(self, text_encoder):
        enc, vocab = text_encoder
        ids = encode_prompt_pair(vocab, 40)
        assert enc.forward(ids).shape == (2, 8)

    def test_padding_beyond_eos_cannot_change_embedding(self, text_encoder):
        """EOS pooling + causal mask: rows after EOS are invisible."""
        enc, vocab = text_encoder
        ids = vocab.encode("this is a normal mammogram case", 40)[None]
        noisy = ids.copy()
        eos = int(np.argmax(ids[0] == EOS))
        noisy[0, eos + 2 :] = 9  # arbitrary non-EOS vocabulary ids
        np.testing.assert_array_equal(enc.forward(ids).data, enc.forward(noisy).data)

    def test_trimmed_and_padded_prompts_agree(self, text_encoder):
        # same math, different BLAS tile sizes: equal to float accumulation noise
        enc, vocab = text_encoder
        full = encode_prompt_pair(vocab, 40, trim=False)
        trimmed = encode_prompt_pair(vocab, 40, trim=True)
        np.testing.assert_allclose(enc.forward(full).data, enc.forward(trimmed).data,
                                   atol=1e-6)

    def test_tokens_before_eos_do_matter(self, text_encoder):
        enc, vocab = text_encoder
        a = vocab.encode("this is a normal mammogram case", 40)[None]
        b = vocab.encode("this is an abnormal mammogram case", 40)[None]
        assert np.abs(enc.forward(a).data - enc.forward(b).data).max() > 0

    def test_input_validation(self, text_encoder):
        enc, vocab = text_encoder
        with pytest.raises(ShapeError, match=r"\(B, T\)"):
            enc.forward(np.zeros(5, dtype=np.int64))
        with pytest.raises(ShapeError, match="exceeds context"):
            enc.forward(np.full((1, 41), EOS, dtype=np.int64))
        bad = np.full((1, 5), 99, dtype=np.int64)
        with pytest.raises(ValueError, match="out of vocabulary"):
            enc.forward(bad)
        no_eos = np.full((1, 5), PAD, dtype=np.int64)
        with pytest.raises(ValueError, match="EOS missing"):
            enc.forward(no_eos)
