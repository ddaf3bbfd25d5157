import hashlib
import json

import numpy as np
import pytest

from diffuscope.numerics import Tensor, masked_softmax_rows
from diffuscope.text_encoder import (
    EncoderConfig,
    EncoderWeights,
    encode_tokens,
    init_encoder,
    load_encoder_weights,
    save_encoder_weights,
    unconditional_representation,
)
from diffuscope.tokenizer import TokenSequence, encode, load_vocabulary

MINI_VOCAB = json.dumps(
    {"<|startoftext|>": 0, "<|endoftext|>": 1, "a</w>": 2, "b</w>": 3, "ab</w>": 4, "a": 5, "b": 6}
)
SMALL_CFG = EncoderConfig(d_model=8, n_layers=1, n_heads=2, context_len=6, vocab_size=7)

# sha256 of the (6, 8) float32 output for seed 0, input [0, 2, 1, 1, 1, 1];
# recorded once from the first run after the hand-checked attention test below
# validated the layer math.
GOLDEN_OUTPUT_SHA256 = "2f0d7622430ab72c365db4eee69604a9b89b108eeaec89035f1647ff07b40b17"


@pytest.fixture(scope="module")
def mini():
    return load_vocabulary(MINI_VOCAB, "a b</w>\n")


class TestInitEncoder:
    def test_same_seed_byte_identical(self):
        a = init_encoder(3, SMALL_CFG)
        b = init_encoder(3, SMALL_CFG)
        for ta, tb in zip(a.random_parameters(), b.random_parameters()):
            assert ta.tobytes() == tb.tobytes()

    def test_distinct_seeds_differ(self):
        a = init_encoder(1, SMALL_CFG)
        b = init_encoder(2, SMALL_CFG)
        assert a.token_embedding.tobytes() != b.token_embedding.tobytes()

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(d_model=10, n_heads=4)
        with pytest.raises(ValueError):
            EncoderConfig(n_layers=0)

    def test_weight_sample_mean_default_config(self):
        w = init_encoder(7)
        flat = np.concatenate([m.reshape(-1).astype(np.float64) for m in w.random_parameters()])
        bound = 3.0 * 0.02 / np.sqrt(flat.size)
        assert abs(flat.mean()) < bound


class TestEncodeTokens:
    def test_output_shape_defaults(self):
        w = init_encoder(0, EncoderConfig(vocab_size=64))
        seq = TokenSequence(ids=tuple([0] + [2] * 75 + [1]), length=77)
        rep = encode_tokens(seq, w)
        assert rep.vectors.shape == (77, 64)

    def test_causality_prefix_rows_bit_identical(self, mini):
        w = init_encoder(11, SMALL_CFG)
        base = TokenSequence(ids=(0, 2, 3, 2, 3, 1), length=6)
        out_base = encode_tokens(base, w).vectors.array
        for j in range(1, 6):
            ids = list(base.ids)
            ids[j] = 4 if ids[j] != 4 else 5
            out_mod = encode_tokens(TokenSequence(ids=tuple(ids), length=6), w).vectors.array
            assert out_base[:j].tobytes() == out_mod[:j].tobytes()
            assert not np.array_equal(out_base[j:], out_mod[j:])

    def test_id_out_of_range_rejected(self):
        w = init_encoder(0, SMALL_CFG)
        with pytest.raises(ValueError):
            encode_tokens(TokenSequence(ids=(0, 9, 1, 1, 1, 1), length=3), w)

    def test_context_len_mismatch_rejected(self):
        w = init_encoder(0, SMALL_CFG)
        with pytest.raises(ValueError):
            encode_tokens(TokenSequence(ids=(0, 1), length=2), w)

    def test_deterministic_across_runs(self, mini):
        vocab, merges = mini
        w = init_encoder(0, SMALL_CFG)
        seq = encode("ab", vocab, merges, 6)
        assert encode_tokens(seq, w).vectors.tobytes() == encode_tokens(seq, w).vectors.tobytes()

    def test_golden_output_hash(self):
        w = init_encoder(0, SMALL_CFG)
        seq = TokenSequence(ids=(0, 2, 1, 1, 1, 1), length=3)
        digest = hashlib.sha256(encode_tokens(seq, w).vectors.tobytes()).hexdigest()
        assert digest == GOLDEN_OUTPUT_SHA256


def test_attention_hand_check():
    """One causal attention row worked out by hand on a 2-token example.

    With q = k = v = x (identity projections), row 1 attends to rows 0 and 1
    with weights softmax([x1.x0, x1.x1] / sqrt(d)); the output must equal the
    weighted sum of the value rows.
    """
    x = np.array([[1.0, 0.0], [1.0, 1.0]], dtype=np.float32)
    scale = 1.0 / np.sqrt(2.0)
    scores = (x.astype(np.float64) @ x.T.astype(np.float64)) * scale
    mask = np.triu(np.ones((2, 2), dtype=bool), k=1)
    weights = masked_softmax_rows(scores.astype(np.float32), mask)
    # row 0 sees only itself
    assert np.allclose(weights[0], [1.0, 0.0])
    # row 1: scores [1, 2] / sqrt(2) -> softmax
    e = np.exp((np.array([1.0, 2.0]) * scale) - 2.0 * scale)
    expect = e / e.sum()
    assert np.allclose(weights[1], expect, atol=1e-7)
    out = weights.astype(np.float64) @ x.astype(np.float64)
    assert np.allclose(out[1], expect[0] * x[0] + expect[1] * x[1], atol=1e-7)


class TestUnconditionalRepresentation:
    def test_equals_empty_prompt_encoding(self, mini):
        vocab, merges = mini
        w = init_encoder(0, SMALL_CFG)
        rep = unconditional_representation(w, vocab, merges)
        direct = encode_tokens(encode("", vocab, merges, 6), w)
        assert np.array_equal(rep.vectors.array, direct.vectors.array)

    def test_independent_of_prompt_and_cached(self, mini):
        vocab, merges = mini
        w = init_encoder(0, SMALL_CFG)
        first = unconditional_representation(w, vocab, merges)
        encode_tokens(encode("a b", vocab, merges, 6), w)  # unrelated work
        second = unconditional_representation(w, vocab, merges)
        assert first is second


class TestWeightFile:
    def test_round_trip(self, tmp_path):
        w = init_encoder(5, SMALL_CFG)
        path = tmp_path / "encoder.bin"
        save_encoder_weights(w, path)
        loaded = load_encoder_weights(path, SMALL_CFG)
        seq = TokenSequence(ids=(0, 2, 3, 1, 1, 1), length=4)
        assert encode_tokens(seq, loaded).vectors.tobytes() == encode_tokens(seq, w).vectors.tobytes()

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_encoder_weights(path, SMALL_CFG)
