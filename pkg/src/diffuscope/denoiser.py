"""Toy UNet noise predictor with text cross-attention, plus guidance mixing.

The network is deliberately small but honestly UNet-shaped: a down/up pair
with mirrored skip connections, group norms, residual blocks carrying a
sinusoidal noise-level embedding, and cross-attention from spatial positions
onto the text vectors. Untrained seeded weights by default; loadable from the
shared flat binary format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import weightio
from .numerics import (
    RngState,
    Tensor,
    conv2d,
    conv_transpose2d,
    group_norm,
    groups_for,
    masked_softmax_rows,
    matmul64,
    seeded_rng,
    silu,
    standard_normal_tensor,
)
from .scheduler import sigma_to_training_index
from .text_encoder import TextRepresentation

INIT_GAIN = 0.02


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 4
    latent_size: int = 8
    base_channels: int = 32
    n_resolutions: int = 2
    d_text: int = 64

    def __post_init__(self):
        for name in ("latent_channels", "latent_size", "base_channels", "n_resolutions", "d_text"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.latent_size % (2 ** (self.n_resolutions - 1)) != 0:
            raise ValueError(
                f"latent_size {self.latent_size} not divisible by 2^{self.n_resolutions - 1}"
            )

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * (2**r) for r in range(self.n_resolutions))

    @property
    def time_dim(self) -> int:
        return 2 * self.base_channels


@dataclass(frozen=True)
class NoisePrediction:
    eps: Tensor


class _Params:
    """Ordered bag of named arrays; order doubles as the weight-file layout."""

    def __init__(self):
        self.names: list[str] = []
        self.arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, arr: np.ndarray) -> None:
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name}")
        self.names.append(name)
        self.arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def tensors(self) -> list[np.ndarray]:
        return [self.arrays[n] for n in self.names]

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())


@dataclass(frozen=True)
class DenoiserWeights:
    config: DenoiserConfig
    params: _Params


def _normal(rng: RngState, shape) -> np.ndarray:
    return standard_normal_tensor(rng, shape).array * np.float32(INIT_GAIN)


def _add_resblock(p: _Params, prefix: str, cin: int, cout: int, time_dim: int, rng: RngState) -> None:
    p.add(f"{prefix}.gn1.gain", np.ones(cin, dtype=np.float32))
    p.add(f"{prefix}.gn1.bias", np.zeros(cin, dtype=np.float32))
    p.add(f"{prefix}.conv1.w", _normal(rng, (cout, cin, 3, 3)))
    p.add(f"{prefix}.conv1.b", np.zeros(cout, dtype=np.float32))
    p.add(f"{prefix}.temb.w", _normal(rng, (time_dim, cout)))
    p.add(f"{prefix}.temb.b", np.zeros(cout, dtype=np.float32))
    p.add(f"{prefix}.gn2.gain", np.ones(cout, dtype=np.float32))
    p.add(f"{prefix}.gn2.bias", np.zeros(cout, dtype=np.float32))
    p.add(f"{prefix}.conv2.w", _normal(rng, (cout, cout, 3, 3)))
    p.add(f"{prefix}.conv2.b", np.zeros(cout, dtype=np.float32))
    if cin != cout:
        p.add(f"{prefix}.skip.w", _normal(rng, (cout, cin, 1, 1)))
        p.add(f"{prefix}.skip.b", np.zeros(cout, dtype=np.float32))


def _add_crossattn(p: _Params, prefix: str, ch: int, d_text: int, rng: RngState) -> None:
    p.add(f"{prefix}.gn.gain", np.ones(ch, dtype=np.float32))
    p.add(f"{prefix}.gn.bias", np.zeros(ch, dtype=np.float32))
    p.add(f"{prefix}.q.w", _normal(rng, (ch, ch)))
    p.add(f"{prefix}.k.w", _normal(rng, (d_text, ch)))
    p.add(f"{prefix}.v.w", _normal(rng, (d_text, ch)))
    p.add(f"{prefix}.out.w", _normal(rng, (ch, ch)))
    p.add(f"{prefix}.out.b", np.zeros(ch, dtype=np.float32))


def init_denoiser(seed: int, cfg: DenoiserConfig = DenoiserConfig()) -> DenoiserWeights:
    """Deterministic scaled-normal initialization from a dedicated stream."""
    rng = seeded_rng(seed)
    p = _Params()
    chans = cfg.level_channels
    td = cfg.time_dim

    p.add("time.w1", _normal(rng, (cfg.base_channels, td)))
    p.add("time.b1", np.zeros(td, dtype=np.float32))
    p.add("time.w2", _normal(rng, (td, td)))
    p.add("time.b2", np.zeros(td, dtype=np.float32))

    p.add("conv_in.w", _normal(rng, (chans[0], cfg.latent_channels, 3, 3)))
    p.add("conv_in.b", np.zeros(chans[0], dtype=np.float32))

    for r in range(cfg.n_resolutions):
        _add_resblock(p, f"down{r}.res", chans[r], chans[r], td, rng)
        _add_crossattn(p, f"down{r}.attn", chans[r], cfg.d_text, rng)
        if r < cfg.n_resolutions - 1:
            p.add(f"down{r}.pool.w", _normal(rng, (chans[r + 1], chans[r], 3, 3)))
            p.add(f"down{r}.pool.b", np.zeros(chans[r + 1], dtype=np.float32))

    _add_resblock(p, "mid.res1", chans[-1], chans[-1], td, rng)
    _add_crossattn(p, "mid.attn", chans[-1], cfg.d_text, rng)
    _add_resblock(p, "mid.res2", chans[-1], chans[-1], td, rng)

    for r in reversed(range(cfg.n_resolutions)):
        _add_resblock(p, f"up{r}.res", 2 * chans[r], chans[r], td, rng)
        _add_crossattn(p, f"up{r}.attn", chans[r], cfg.d_text, rng)
        if r > 0:
            p.add(f"up{r}.grow.w", _normal(rng, (chans[r], chans[r - 1], 4, 4)))
            p.add(f"up{r}.grow.b", np.zeros(chans[r - 1], dtype=np.float32))

    p.add("out.gn.gain", np.ones(chans[0], dtype=np.float32))
    p.add("out.gn.bias", np.zeros(chans[0], dtype=np.float32))
    p.add("out.conv.w", _normal(rng, (cfg.latent_channels, chans[0], 3, 3)))
    p.add("out.conv.b", np.zeros(cfg.latent_channels, dtype=np.float32))

    return DenoiserWeights(config=cfg, params=p)


def _sinusoidal_embedding(index: float, dim: int) -> np.ndarray:
    half = dim // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / (half - 1))
    else:
        freqs = np.ones(1, dtype=np.float64)
    angles = index * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2 == 1:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb.astype(np.float32)


def _resblock(p: _Params, prefix: str, x: np.ndarray, temb: np.ndarray) -> np.ndarray:
    cin = x.shape[0]
    h = conv2d(silu(group_norm(x, groups_for(cin), p[f"{prefix}.gn1.gain"], p[f"{prefix}.gn1.bias"])),
               p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    shift = matmul64(silu(temb)[None, :], p[f"{prefix}.temb.w"])[0] + p[f"{prefix}.temb.b"]
    h = (h.astype(np.float64) + shift.astype(np.float64)[:, None, None]).astype(np.float32)
    cout = h.shape[0]
    h = conv2d(silu(group_norm(h, groups_for(cout), p[f"{prefix}.gn2.gain"], p[f"{prefix}.gn2.bias"])),
               p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
    if f"{prefix}.skip.w" in p.arrays:
        x = conv2d(x, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"], padding=0)
    return (h.astype(np.float64) + x.astype(np.float64)).astype(np.float32)


def _crossattn(p: _Params, prefix: str, x: np.ndarray, text: np.ndarray) -> np.ndarray:
    ch, h, w = x.shape
    normed = group_norm(x, groups_for(ch), p[f"{prefix}.gn.gain"], p[f"{prefix}.gn.bias"])
    spatial = normed.reshape(ch, h * w).T  # (hw, ch): queries from positions
    q = matmul64(spatial, p[f"{prefix}.q.w"])
    k = matmul64(text, p[f"{prefix}.k.w"])
    v = matmul64(text, p[f"{prefix}.v.w"])
    scores = matmul64(q * np.float32(1.0 / math.sqrt(ch)), k.T)
    weights = masked_softmax_rows(scores)
    attended = matmul64(weights, v)
    out = matmul64(attended, p[f"{prefix}.out.w"]) + p[f"{prefix}.out.b"]
    return (x.astype(np.float64) + out.T.reshape(ch, h, w).astype(np.float64)).astype(np.float32)


def predict_noise(latent: Tensor, sigma: float, text: TextRepresentation, w: DenoiserWeights) -> NoisePrediction:
    """Predict the noise carried by a latent at a given noise level.

    The latent is pre-scaled by 1/sqrt(sigma^2 + 1); the sinusoidal embedding
    of sigma's training-grid index conditions every residual block.
    """
    cfg = w.config
    expect = (cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    if latent.shape != expect:
        raise ValueError(f"latent shape {latent.shape} != {expect}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    tv = text.vectors.array
    if tv.shape[1] != cfg.d_text:
        raise ValueError(f"text width {tv.shape[1]} != d_text {cfg.d_text}")
    p = w.params

    c_in = 1.0 / math.sqrt(sigma * sigma + 1.0)
    x = (latent.array.astype(np.float64) * c_in).astype(np.float32)

    emb = _sinusoidal_embedding(sigma_to_training_index(sigma), cfg.base_channels)
    temb = matmul64(emb[None, :], p["time.w1"])[0] + p["time.b1"]
    temb = matmul64(silu(temb)[None, :], p["time.w2"])[0] + p["time.b2"]

    x = conv2d(x, p["conv_in.w"], p["conv_in.b"])
    skips = []
    for r in range(cfg.n_resolutions):
        x = _resblock(p, f"down{r}.res", x, temb)
        x = _crossattn(p, f"down{r}.attn", x, tv)
        skips.append(x)
        if r < cfg.n_resolutions - 1:
            x = conv2d(x, p[f"down{r}.pool.w"], p[f"down{r}.pool.b"], stride=2)

    x = _resblock(p, "mid.res1", x, temb)
    x = _crossattn(p, "mid.attn", x, tv)
    x = _resblock(p, "mid.res2", x, temb)

    for r in reversed(range(cfg.n_resolutions)):
        x = np.concatenate([x, skips[r]], axis=0)
        x = _resblock(p, f"up{r}.res", x, temb)
        x = _crossattn(p, f"up{r}.attn", x, tv)
        if r > 0:
            x = conv_transpose2d(x, p[f"up{r}.grow.w"], p[f"up{r}.grow.b"], stride=2, padding=1)

    x = silu(group_norm(x, groups_for(x.shape[0]), p["out.gn.gain"], p["out.gn.bias"]))
    x = conv2d(x, p["out.conv.w"], p["out.conv.b"])
    return NoisePrediction(eps=Tensor(x))


def guided_noise(eps_uncond: NoisePrediction, eps_cond: NoisePrediction, scale: float) -> NoisePrediction:
    """eps_final = eps_uncond + scale * (eps_cond - eps_uncond), element-wise."""
    if eps_uncond.eps.shape != eps_cond.eps.shape:
        raise ValueError(f"shape mismatch {eps_uncond.eps.shape} vs {eps_cond.eps.shape}")
    if not math.isfinite(scale):
        raise ValueError("guidance scale must be finite")
    u = eps_uncond.eps.array.astype(np.float64)
    c = eps_cond.eps.array.astype(np.float64)
    return NoisePrediction(eps=Tensor((u + scale * (c - u)).astype(np.float32)))


def save_denoiser_weights(w: DenoiserWeights, path) -> None:
    weightio.save_tensors(path, w.params.tensors())


def load_denoiser_weights(path, cfg: DenoiserConfig = DenoiserConfig()) -> DenoiserWeights:
    template = init_denoiser(0, cfg)
    shapes = [t.shape for t in template.params.tensors()]
    loaded = weightio.load_tensors(path, shapes)
    p = _Params()
    for name, arr in zip(template.params.names, loaded):
        p.add(name, arr)
    return DenoiserWeights(config=cfg, params=p)
