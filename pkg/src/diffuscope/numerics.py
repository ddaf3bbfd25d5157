"""Deterministic tensor container, PRNG, and the numeric kernels the models need.

Everything here is built for reproducibility: the random stream is an integer-only
splitmix64 + xoshiro256** implementation (no platform math in the state path), values
are stored as float32, and any kernel that reduces over more than a handful of
elements accumulates in float64 before casting back down.
"""

from __future__ import annotations

import math

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


class Tensor:
    """Immutable float32 tensor with a row-major flat payload.

    Wraps a read-only numpy array. Construction validates that every value is
    finite, so any Tensor floating around the system is known-good.
    """

    __slots__ = ("_array",)

    def __init__(self, values) -> None:
        arr = np.ascontiguousarray(values, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def size(self) -> int:
        return int(self._array.size)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the payload."""
        return self._array.reshape(-1)

    def tobytes(self) -> bytes:
        return self._array.tobytes()

    @classmethod
    def frombytes(cls, shape, payload: bytes) -> "Tensor":
        arr = np.frombuffer(payload, dtype=np.float32).reshape(tuple(shape))
        return cls(arr)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _splitmix64(x: int):
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _U64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return x, z ^ (z >> 31)


class RngState:
    """xoshiro256** stream seeded via splitmix64 expansion.

    The four state words are advanced only by the explicit draw methods; two
    states built from the same seed always produce identical streams.
    """

    __slots__ = ("seed", "s0", "s1", "s2", "s3")

    def __init__(self, seed: int, words) -> None:
        self.seed = seed
        self.s0, self.s1, self.s2, self.s3 = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        x = (s1 * 5) & _U64
        result = ((((x << 7) | (x >> 57)) & _U64) * 9) & _U64
        t = (s1 << 17) & _U64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self.s0, self.s1, self.s2 = s0, s1, s2
        self.s3 = ((s3 << 45) | (s3 >> 19)) & _U64
        return result

    def raw_block(self, n: int) -> list[int]:
        """n consecutive raw 64-bit outputs (hot loop, kept local-variable only)."""
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        out = [0] * n
        for i in range(n):
            x = (s1 * 5) & _U64
            out[i] = ((((x << 7) | (x >> 57)) & _U64) * 9) & _U64
            t = (s1 << 17) & _U64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _U64
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return out

    def next_uniform(self) -> float:
        """Uniform in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * _INV_2_53


def seeded_rng(seed: int) -> RngState:
    """Build a deterministic RngState from a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    x = seed
    words = []
    for _ in range(4):
        x, w = _splitmix64(x)
        words.append(w)
    if not any(words):
        # xoshiro must never sit at the all-zero fixed point
        words[0] = 1
    return RngState(seed, words)


def standard_normal_tensor(rng: RngState, shape) -> Tensor:
    """Fill a tensor with i.i.d. standard normals via Box-Muller.

    Consumes exactly one uniform pair per two normals (2 * ceil(n/2) raw draws
    for n elements), so everything drawn afterwards is seed-stable regardless
    of tensor shape.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d <= 0 for d in shape):
        raise ValueError(f"invalid shape {shape}")
    n = 1
    for d in shape:
        n *= d
    pairs = (n + 1) // 2
    raws = np.array(rng.raw_block(2 * pairs), dtype=np.uint64)
    u = (raws >> np.uint64(11)).astype(np.float64) * _INV_2_53
    u1 = 1.0 - u[0::2]  # (0, 1]: keeps the log finite
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return Tensor(z[:n].astype(np.float32).reshape(shape))


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor, max-subtracted for stability."""
    if len(t.shape) != 2:
        raise ValueError(f"softmax_rows expects rank 2, got shape {t.shape}")
    x = t.array.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return Tensor((e / e.sum(axis=1, keepdims=True)).astype(np.float32))


def layer_norm(t: Tensor, gain, bias, eps: float) -> Tensor:
    """Per-row layer normalization of a rank-2 tensor.

    eps >= 0; eps = 0 is allowed for rows with nonzero variance (the analytic
    case), while constant rows need eps > 0 to stay finite.
    """
    if len(t.shape) != 2:
        raise ValueError(f"layer_norm expects rank 2, got shape {t.shape}")
    gain = np.asarray(gain, dtype=np.float64).reshape(-1)
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if gain.shape[0] != t.shape[1] or bias.shape[0] != t.shape[1]:
        raise ValueError(
            f"gain/bias length {gain.shape[0]}/{bias.shape[0]} does not match last dim {t.shape[1]}"
        )
    if eps < 0:
        raise ValueError("eps must be non-negative")
    x = t.array.astype(np.float64)
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    out = (x - mu) / np.sqrt(var + eps) * gain + bias
    return Tensor(out.astype(np.float32))


# ---------------------------------------------------------------------------
# ndarray kernels shared by the encoder / denoiser / decoder.
# Convention: float32 in, float64 internally, float32 out.


def matmul64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated in float64, returned as float32."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def masked_softmax_rows(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax over the last axis; mask entries set True are excluded exactly.

    Masked positions get weight 0.0 (not merely tiny), so downstream sums are
    bit-independent of masked values.
    """
    x = scores.astype(np.float64)
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)  # exp(-inf) == +0.0
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def layer_norm_nd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Layer norm over the last axis of an ndarray (float64 internals)."""
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
    out = (x64 - mu) / np.sqrt(var + eps) * gain.astype(np.float64) + bias.astype(np.float64)
    return out.astype(np.float32)


def groups_for(channels: int) -> int:
    """Largest group count in {8, 4, 2, 1} dividing the channel count."""
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def group_norm(x: np.ndarray, num_groups: int, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Group normalization over (C, H, W), per-channel affine."""
    c, h, w = x.shape
    if c % num_groups != 0:
        raise ValueError(f"channels {c} not divisible by groups {num_groups}")
    g = x.astype(np.float64).reshape(num_groups, c // num_groups, h, w)
    mu = g.mean(axis=(1, 2, 3), keepdims=True)
    var = ((g - mu) ** 2).mean(axis=(1, 2, 3), keepdims=True)
    g = (g - mu) / np.sqrt(var + eps)
    out = g.reshape(c, h, w) * gain.astype(np.float64)[:, None, None] + bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x64 = np.clip(x.astype(np.float64), -60.0, 60.0)
    return (1.0 / (1.0 + np.exp(-x64))).astype(np.float32)


def silu(x: np.ndarray) -> np.ndarray:
    x64 = np.clip(x.astype(np.float64), -60.0, 60.0)
    return (x.astype(np.float64) / (1.0 + np.exp(-x64))).astype(np.float32)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU (self-contained, no erf dependency)."""
    x64 = x.astype(np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x64 + 0.044715 * x64**3)
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(np.float32)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 1) -> np.ndarray:
    """2-D convolution, (C_in, H, W) x (C_out, C_in, K, K) -> (C_out, H', W').

    im2col + float64 matmul; plenty for desk-scale spatial sizes.
    """
    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    xp = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((c_in * kh * kw, h_out * w_out), dtype=np.float64)
    idx = 0
    for ci in range(c_in):
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[ci, dy : dy + stride * h_out : stride, dx : dx + stride * w_out : stride]
                cols[idx] = patch.reshape(-1)
                idx += 1
    flat = weight.astype(np.float64).reshape(c_out, -1) @ cols
    flat += bias.astype(np.float64)[:, None]
    return flat.reshape(c_out, h_out, w_out).astype(np.float32)


def conv_transpose2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 2, padding: int = 1) -> np.ndarray:
    """Transposed 2-D convolution, (C_in, H, W) x (C_in, C_out, K, K) -> upsampled map.

    Output size: (H - 1) * stride - 2 * padding + K. With K=4, stride=2, padding=1
    this doubles the spatial size.
    """
    c_in, h, w = x.shape
    c_in_w, c_out, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv_transpose2d channel mismatch: input {c_in}, weight {c_in_w}")
    h_out = (h - 1) * stride - 2 * padding + kh
    w_out = (w - 1) * stride - 2 * padding + kw
    full = np.zeros((c_out, h_out + 2 * padding, w_out + 2 * padding), dtype=np.float64)
    w64 = weight.astype(np.float64)
    x64 = x.astype(np.float64)
    # scatter each input pixel's weighted kernel onto the padded output
    contrib = np.einsum("chw,cokl->ohwkl", x64, w64, optimize=True)
    for dy in range(kh):
        for dx in range(kw):
            full[:, dy : dy + stride * h : stride, dx : dx + stride * w : stride] += contrib[
                :, :, :, dy, dx
            ]
    out = full[:, padding : padding + h_out, padding : padding + w_out]
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)
