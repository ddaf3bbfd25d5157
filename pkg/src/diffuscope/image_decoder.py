"""Latent-to-image conversion, two ways.

Per-step previews use a pure linear-affine map from the 4 latent channels to
RGB (coefficients are configuration, fitted once against the toy upscaler and
shipped as data). The final image comes from a seeded 8x upscaling decoder:
three stride-2 transposed-convolution stages with group norms, then a sigmoid
projection to RGB. PNG output is written directly (8-bit RGB, round-half-up).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import weightio
from .numerics import (
    RngState,
    Tensor,
    conv2d,
    conv_transpose2d,
    group_norm,
    groups_for,
    seeded_rng,
    sigmoid,
    silu,
    standard_normal_tensor,
)

INIT_GAIN = 0.02
UPSCALE_FACTOR = 8  # three doubling stages


@dataclass(frozen=True)
class LinearDecodeMatrix:
    """4x3 latent-channel-to-RGB map plus per-channel bias."""

    m: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float32)
        bias = np.asarray(self.bias, dtype=np.float32)
        if m.shape != (4, 3) or bias.shape != (3,):
            raise ValueError(f"decode matrix must be 4x3 with 3-bias, got {m.shape}/{bias.shape}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(bias))):
            raise ValueError("decode matrix must be finite")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class PreviewImage:
    pixels: np.ndarray  # (h, w, 3) float32 in [0, 1]

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"preview pixels must be (h, w, 3), got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("preview pixels out of [0, 1]")


@dataclass(frozen=True)
class OutputImage:
    pixels: np.ndarray  # (8h, 8w, 3) float32 in [0, 1]

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"output pixels must be (h, w, 3), got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("output pixels out of [0, 1]")


@lru_cache(maxsize=1)
def load_default_preview_matrix() -> LinearDecodeMatrix:
    """The fitted coefficients shipped with the package (see tools/fit_preview_matrix.py)."""
    blob = resources.files("diffuscope").joinpath("data/preview_matrix.json").read_text("utf-8")
    raw = json.loads(blob)
    return LinearDecodeMatrix(m=np.array(raw["matrix"], dtype=np.float32), bias=np.array(raw["bias"], dtype=np.float32))


def linear_preview(latent: Tensor, d: LinearDecodeMatrix) -> PreviewImage:
    """rgb[y, x, k] = clamp(bias[k] + sum_c m[c, k] * latent[c, y, x], 0, 1)."""
    if len(latent.shape) != 3 or latent.shape[0] != 4:
        raise ValueError(f"latent must be (4, h, w), got {latent.shape}")
    z = latent.array.astype(np.float64)
    rgb = np.tensordot(z, d.m.astype(np.float64), axes=([0], [0])) + d.bias.astype(np.float64)
    return PreviewImage(pixels=np.clip(rgb, 0.0, 1.0).astype(np.float32))


@dataclass(frozen=True)
class DecoderConfig:
    latent_channels: int = 4
    base_channels: int = 32  # stage plan: base, base/2, base/4

    def __post_init__(self):
        if self.latent_channels <= 0 or self.base_channels < 4:
            raise ValueError("invalid decoder config")

    @property
    def stage_channels(self) -> tuple[int, int, int]:
        return (self.base_channels, self.base_channels // 2, self.base_channels // 4)


@dataclass(frozen=True)
class DecoderWeights:
    config: DecoderConfig
    tensors: dict[str, np.ndarray]

    def ordered(self) -> list[np.ndarray]:
        return [self.tensors[k] for k in sorted(self.tensors)]


def init_image_decoder(seed: int, cfg: DecoderConfig = DecoderConfig()) -> DecoderWeights:
    rng = seeded_rng(seed)
    chans = cfg.stage_channels
    t: dict[str, np.ndarray] = {}

    def normal(shape):
        return standard_normal_tensor(rng, shape).array * np.float32(INIT_GAIN)

    t["00.conv_in.w"] = normal((chans[0], cfg.latent_channels, 3, 3))
    t["00.conv_in.b"] = np.zeros(chans[0], dtype=np.float32)
    prev = chans[0]
    for i, ch in enumerate(chans):
        t[f"{10 + i}.gn.gain"] = np.ones(prev, dtype=np.float32)
        t[f"{10 + i}.gn.bias"] = np.zeros(prev, dtype=np.float32)
        t[f"{10 + i}.up.w"] = normal((prev, ch, 4, 4))
        t[f"{10 + i}.up.b"] = np.zeros(ch, dtype=np.float32)
        prev = ch
    t["90.gn.gain"] = np.ones(prev, dtype=np.float32)
    t["90.gn.bias"] = np.zeros(prev, dtype=np.float32)
    t["90.conv_out.w"] = normal((3, prev, 3, 3))
    t["90.conv_out.b"] = np.zeros(3, dtype=np.float32)
    return DecoderWeights(config=cfg, tensors=t)


def upscale_decode(latent: Tensor, w: DecoderWeights) -> OutputImage:
    """Deterministic 8x decode: conv in, three doubling stages, sigmoid RGB out."""
    cfg = w.config
    if len(latent.shape) != 3 or latent.shape[0] != cfg.latent_channels:
        raise ValueError(f"latent must be ({cfg.latent_channels}, h, w), got {latent.shape}")
    t = w.tensors
    x = conv2d(latent.array, t["00.conv_in.w"], t["00.conv_in.b"])
    for i in range(3):
        x = group_norm(x, groups_for(x.shape[0]), t[f"{10 + i}.gn.gain"], t[f"{10 + i}.gn.bias"])
        x = conv_transpose2d(silu(x), t[f"{10 + i}.up.w"], t[f"{10 + i}.up.b"], stride=2, padding=1)
    x = group_norm(x, groups_for(x.shape[0]), t["90.gn.gain"], t["90.gn.bias"])
    x = conv2d(silu(x), t["90.conv_out.w"], t["90.conv_out.b"])
    rgb = sigmoid(x)
    return OutputImage(pixels=np.transpose(rgb, (1, 2, 0)).astype(np.float32))


def quantize_pixels(pixels: np.ndarray) -> np.ndarray:
    """round(v * 255) with half-up ties, to uint8."""
    return np.floor(pixels.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    raw = tag + payload
    return struct.pack(">I", len(payload)) + raw + struct.pack(">I", zlib.crc32(raw) & 0xFFFFFFFF)


def encode_png(img: PreviewImage | OutputImage) -> bytes:
    """Lossless 8-bit RGB PNG bytes (fixed zlib level, no filtering)."""
    q = quantize_pixels(img.pixels)
    h, w, _ = q.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + q[y].tobytes() for y in range(h))
    return b"".join(
        [
            b"\x89PNG\r\n\x1a\n",
            _chunk(b"IHDR", ihdr),
            _chunk(b"IDAT", zlib.compress(raw, 9)),
            _chunk(b"IEND", b""),
        ]
    )


def save_decoder_weights(w: DecoderWeights, path) -> None:
    weightio.save_tensors(path, w.ordered())


def load_decoder_weights(path, cfg: DecoderConfig = DecoderConfig()) -> DecoderWeights:
    template = init_image_decoder(0, cfg)
    keys = sorted(template.tensors)
    shapes = [template.tensors[k].shape for k in keys]
    loaded = weightio.load_tensors(path, shapes)
    return DecoderWeights(config=cfg, tensors=dict(zip(keys, loaded)))
