"""Noise-level schedule and the linear multistep update that drives refinement.

The sigma schedule comes from the classic 1000-step scaled-linear beta grid
(beta range 0.00085..0.012): sigma_t = sqrt((1 - abar_t) / abar_t). Inference
schedules sample that table at evenly spaced fractional indices, descending,
with a final exact 0 appended. Steps combine the most recent noise-derivative
estimates with coefficients that integrate the Lagrange basis over the next
sigma interval.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import Tensor

BETA_START = 0.00085
BETA_END = 0.012
TRAIN_STEPS = 1000
MAX_ORDER = 4

_SIMPSON_SUBINTERVALS = 1000


@lru_cache(maxsize=1)
def training_sigma_table() -> np.ndarray:
    """sigma_t for every training step t in 0..999 (float64, ascending)."""
    t = np.arange(TRAIN_STEPS, dtype=np.float64)
    betas = (np.sqrt(BETA_START) + t / (TRAIN_STEPS - 1) * (np.sqrt(BETA_END) - np.sqrt(BETA_START))) ** 2
    abar = np.cumprod(1.0 - betas)
    table = np.sqrt((1.0 - abar) / abar)
    table.flags.writeable = False
    return table


def sigma_to_training_index(sigma: float) -> float:
    """Fractional training-step index whose interpolated sigma equals `sigma`.

    Inverse of the linear interpolation used to build schedules; clamps to
    [0, 999] outside the table range (sigma 0 maps to index 0).
    """
    table = training_sigma_table()
    if sigma <= table[0]:
        return 0.0
    if sigma >= table[-1]:
        return float(TRAIN_STEPS - 1)
    hi = int(np.searchsorted(table, sigma))
    lo = hi - 1
    frac = (sigma - table[lo]) / (table[hi] - table[lo])
    return lo + float(frac)


@dataclass(frozen=True)
class SigmaSchedule:
    """Strictly decreasing noise levels; sigmas[num_steps] is exactly 0."""

    sigmas: tuple[float, ...]
    num_steps: int

    def __post_init__(self):
        if len(self.sigmas) != self.num_steps + 1:
            raise ValueError("schedule length must be num_steps + 1")
        if self.sigmas[-1] != 0.0:
            raise ValueError("terminal sigma must be exactly 0")
        diffs = np.diff(self.sigmas)
        if not np.all(diffs < 0):
            raise ValueError("sigmas must be strictly decreasing")
        if self.sigmas[0] <= 0:
            raise ValueError("sigma_max must be positive")

    @property
    def sigma_max(self) -> float:
        return self.sigmas[0]

    def checksum(self) -> str:
        import hashlib

        payload = ",".join(repr(s) for s in self.sigmas)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_sigma_schedule(num_steps: int = 50) -> SigmaSchedule:
    """Sample the training sigma table at num_steps evenly spaced points.

    Fractional indices span [0, 999] with linear interpolation, ordered from
    sigma_max down; an exact 0 terminates the schedule.
    """
    if not 1 <= num_steps <= 1000:
        raise ValueError(f"num_steps must be in 1..1000, got {num_steps}")
    table = training_sigma_table()
    idx = np.linspace(0.0, float(TRAIN_STEPS - 1), num_steps)[::-1]
    sampled = np.interp(idx, np.arange(TRAIN_STEPS, dtype=np.float64), table)
    sigmas = tuple(float(s) for s in sampled) + (0.0,)
    return SigmaSchedule(sigmas=sigmas, num_steps=num_steps)


class DerivativeHistory:
    """Ring buffer of the most recent derivative tensors, newest first."""

    def __init__(self, order: int = MAX_ORDER) -> None:
        if order < 1:
            raise ValueError("order must be >= 1")
        self._buf: deque[Tensor] = deque(maxlen=order)

    def push(self, d: Tensor) -> None:
        if self._buf and d.shape != self._buf[0].shape:
            raise ValueError(f"derivative shape {d.shape} != history shape {self._buf[0].shape}")
        self._buf.appendleft(d)

    def __len__(self) -> int:
        return len(self._buf)

    def __getitem__(self, j: int) -> Tensor:
        return self._buf[j]


def _sigmas_of(s) -> tuple[float, ...]:
    return s.sigmas if isinstance(s, SigmaSchedule) else tuple(float(x) for x in s)


def lms_coefficients(s, i: int, order: int) -> list[float]:
    """Integrals of the Lagrange basis over [sigma_i, sigma_{i+1}].

    coeffs[j] weights the derivative recorded j steps ago. Accepts either a
    SigmaSchedule or any decreasing sigma sequence (convergence studies use
    custom grids). Order 1 is the exact integral of the constant basis; higher
    orders use composite Simpson quadrature with 1000 subintervals, which is
    exact to rounding for the cubic-and-below integrands that arise.
    """
    sigmas = _sigmas_of(s)
    if i < 0 or i + 1 >= len(sigmas):
        raise ValueError(f"step index {i} out of range for schedule of {len(sigmas)} sigmas")
    if order < 1 or order > min(MAX_ORDER, i + 1):
        raise ValueError(f"order {order} invalid at step {i} (max {min(MAX_ORDER, i + 1)})")
    lo, hi = sigmas[i], sigmas[i + 1]
    if order == 1:
        return [hi - lo]

    points = [sigmas[i - k] for k in range(order)]
    grid = np.linspace(lo, hi, _SIMPSON_SUBINTERVALS + 1)
    weights = np.ones(_SIMPSON_SUBINTERVALS + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (hi - lo) / (3.0 * _SIMPSON_SUBINTERVALS)

    coeffs = []
    for j in range(order):
        values = np.ones_like(grid)
        for k in range(order):
            if k != j:
                values *= (grid - points[k]) / (points[j] - points[k])
        coeffs.append(float(values @ weights))
    return coeffs


def lms_step(latent: Tensor, history: DerivativeHistory, coeffs) -> Tensor:
    """x_{i+1} = x_i + sum_j coeffs[j] * d_{i-j} (float64 accumulation)."""
    if len(history) < len(coeffs):
        raise ValueError(f"history holds {len(history)} derivatives, need {len(coeffs)}")
    acc = latent.array.astype(np.float64)
    for j, c in enumerate(coeffs):
        d = history[j]
        if d.shape != latent.shape:
            raise ValueError(f"derivative shape {d.shape} != latent shape {latent.shape}")
        acc = acc + c * d.array.astype(np.float64)
    return Tensor(acc.astype(np.float32))


def derivative_from_noise(noise_pred: Tensor) -> Tensor:
    """The ODE derivative under epsilon parameterization.

    With x = x_denoised + sigma * eps, dx/dsigma = (x - x_denoised) / sigma,
    which is exactly the predicted noise: the mapping is the identity, kept
    explicit so the parameterization is visible at the call site.
    """
    return noise_pred
