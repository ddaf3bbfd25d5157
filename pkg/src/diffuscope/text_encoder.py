"""Desk-scale causal transformer turning token sequences into per-token vectors.

Untrained by default: weights come from a seeded normal initializer, which is
all the pipeline structure needs (shapes, conditioning mechanics, causality).
A flat binary weight file can be dropped in to replace them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tokenizer as tok
from . import weightio
from .numerics import RngState, Tensor, gelu, layer_norm_nd, masked_softmax_rows, matmul64, seeded_rng, standard_normal_tensor

INIT_GAIN = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context_len: int = 77
    vocab_size: int = 49408

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "context_len", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


@dataclass(frozen=True)
class LayerWeights:
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray


@dataclass(frozen=True)
class EncoderWeights:
    config: EncoderConfig
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    layers: tuple[LayerWeights, ...]
    final_gain: np.ndarray
    final_bias: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def random_parameters(self):
        """The normally initialized matrices (norm gains/biases excluded)."""
        mats = [self.token_embedding, self.position_embedding]
        for layer in self.layers:
            mats.extend([layer.wq, layer.wk, layer.wv, layer.wo, layer.w_up, layer.w_down])
        return mats


@dataclass(frozen=True)
class TextRepresentation:
    vectors: Tensor

    def __post_init__(self):
        if len(self.vectors.shape) != 2:
            raise ValueError("text representation must be rank 2")


def _normal(rng: RngState, shape, scale=INIT_GAIN) -> np.ndarray:
    return standard_normal_tensor(rng, shape).array * np.float32(scale)


def init_encoder(seed: int, cfg: EncoderConfig = EncoderConfig()) -> EncoderWeights:
    """Deterministic scaled-normal initialization from a dedicated stream."""
    rng = seeded_rng(seed)
    d, h = cfg.d_model, 4 * cfg.d_model
    layers = []
    token_embedding = _normal(rng, (cfg.vocab_size, d))
    position_embedding = _normal(rng, (cfg.context_len, d))
    for _ in range(cfg.n_layers):
        layers.append(
            LayerWeights(
                ln1_gain=np.ones(d, dtype=np.float32),
                ln1_bias=np.zeros(d, dtype=np.float32),
                wq=_normal(rng, (d, d)),
                wk=_normal(rng, (d, d)),
                wv=_normal(rng, (d, d)),
                wo=_normal(rng, (d, d)),
                ln2_gain=np.ones(d, dtype=np.float32),
                ln2_bias=np.zeros(d, dtype=np.float32),
                w_up=_normal(rng, (d, h)),
                b_up=np.zeros(h, dtype=np.float32),
                w_down=_normal(rng, (h, d)),
                b_down=np.zeros(d, dtype=np.float32),
            )
        )
    return EncoderWeights(
        config=cfg,
        token_embedding=token_embedding,
        position_embedding=position_embedding,
        layers=tuple(layers),
        final_gain=np.ones(d, dtype=np.float32),
        final_bias=np.zeros(d, dtype=np.float32),
    )


def _causal_attention(x: np.ndarray, layer: LayerWeights, n_heads: int) -> np.ndarray:
    t, d = x.shape
    dh = d // n_heads
    q = matmul64(x, layer.wq)
    k = matmul64(x, layer.wk)
    v = matmul64(x, layer.wv)
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)  # True above the diagonal
    out = np.empty((t, d), dtype=np.float32)
    scale = 1.0 / np.sqrt(dh)
    for head in range(n_heads):
        sl = slice(head * dh, (head + 1) * dh)
        scores = matmul64(q[:, sl] * np.float32(scale), k[:, sl].T)
        weights = masked_softmax_rows(scores, mask)
        out[:, sl] = matmul64(weights, v[:, sl])
    return matmul64(out, layer.wo)


def encode_tokens(seq: tok.TokenSequence, w: EncoderWeights) -> TextRepresentation:
    """Embed, run the causal pre-norm transformer stack, and final-normalize."""
    cfg = w.config
    if seq.context_len != cfg.context_len:
        raise ValueError(f"sequence length {seq.context_len} != context_len {cfg.context_len}")
    ids = np.asarray(seq.ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range for vocab size {cfg.vocab_size}")
    x = (w.token_embedding[ids].astype(np.float64) + w.position_embedding.astype(np.float64)).astype(np.float32)
    for layer in w.layers:
        normed = layer_norm_nd(x, layer.ln1_gain, layer.ln1_bias)
        x = (x.astype(np.float64) + _causal_attention(normed, layer, cfg.n_heads).astype(np.float64)).astype(np.float32)
        normed = layer_norm_nd(x, layer.ln2_gain, layer.ln2_bias)
        hidden = gelu(matmul64(normed, layer.w_up) + layer.b_up)
        mlp_out = matmul64(hidden, layer.w_down) + layer.b_down
        x = (x.astype(np.float64) + mlp_out.astype(np.float64)).astype(np.float32)
    x = layer_norm_nd(x, w.final_gain, w.final_bias)
    return TextRepresentation(vectors=Tensor(x))


def unconditional_representation(w: EncoderWeights, vocab: tok.Vocabulary, merges: tok.MergeRules) -> TextRepresentation:
    """Representation of the empty prompt (the generic conditioning branch); cached."""
    cached = w._cache.get("uncond")
    if cached is None:
        seq = tok.encode("", vocab, merges, w.config.context_len)
        cached = encode_tokens(seq, w)
        w._cache["uncond"] = cached
    return cached


# --- flat binary weight file ----------------------------------------------------


def _weight_tensors(w: EncoderWeights) -> list[np.ndarray]:
    out = [w.token_embedding, w.position_embedding]
    for layer in w.layers:
        out.extend(
            [
                layer.ln1_gain, layer.ln1_bias, layer.wq, layer.wk, layer.wv, layer.wo,
                layer.ln2_gain, layer.ln2_bias, layer.w_up, layer.b_up, layer.w_down, layer.b_down,
            ]
        )
    out.extend([w.final_gain, w.final_bias])
    return out


def save_encoder_weights(w: EncoderWeights, path) -> None:
    weightio.save_tensors(path, _weight_tensors(w))


def load_encoder_weights(path, cfg: EncoderConfig = EncoderConfig()) -> EncoderWeights:
    template = init_encoder(0, cfg)
    shapes = [t.shape for t in _weight_tensors(template)]
    loaded = weightio.load_tensors(path, shapes)
    it = iter(loaded)
    token_embedding = next(it)
    position_embedding = next(it)
    layers = []
    for _ in range(cfg.n_layers):
        layers.append(LayerWeights(*(next(it) for _ in range(12))))
    return EncoderWeights(
        config=cfg,
        token_embedding=token_embedding,
        position_embedding=position_embedding,
        layers=tuple(layers),
        final_gain=next(it),
        final_bias=next(it),
    )
