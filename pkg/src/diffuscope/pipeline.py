"""One full generation: encode, refine over the schedule, record everything.

A Trajectory holds the initial noise plus one frame per refinement step, each
with the latent, the three noise predictions (prompt-specific, generic, and
guided), and PNG previews, so any moment of the generation can be inspected
after the fact. Generation is a pure function of its config: the only random
draw is the initial latent, taken from the config seed.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from . import tokenizer as tok
from .catalog import PromptEntry, prompt_by_id, prompt_catalog  # noqa: F401  (re-exported)
from .denoiser import (
    DenoiserConfig,
    DenoiserWeights,
    NoisePrediction,
    guided_noise,
    init_denoiser,
    predict_noise,
)
from .image_decoder import (
    DecoderWeights,
    LinearDecodeMatrix,
    encode_png,
    init_image_decoder,
    linear_preview,
    load_default_preview_matrix,
    upscale_decode,
)
from .numerics import Tensor, seeded_rng, standard_normal_tensor
from .scheduler import (
    MAX_ORDER,
    DerivativeHistory,
    SigmaSchedule,
    build_sigma_schedule,
    derivative_from_noise,
    lms_coefficients,
    lms_step,
)
from .text_encoder import (
    EncoderConfig,
    EncoderWeights,
    TextRepresentation,
    encode_tokens,
    init_encoder,
    unconditional_representation,
)

ENGINE_VERSION = "1.0.0"
TRAJECTORY_FORMAT = "diffuscope-trajectory"
TRAJECTORY_FORMAT_VERSION = 1

DEFAULT_NUM_STEPS = 50
MAX_GUIDANCE_SCALE = 20.0
GUIDANCE_SWEEP_SCALES = (0.0, 1.0, 7.0, 20.0)

# seeds of the shipped untrained weights; part of the engine's identity
ENCODER_WEIGHTS_SEED = 101
DENOISER_WEIGHTS_SEED = 202
DECODER_WEIGHTS_SEED = 303


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    prompt: str
    seed: int
    guidance_scale: float
    num_steps: int = DEFAULT_NUM_STEPS

    def __post_init__(self):
        if not isinstance(self.prompt, str):
            raise ValueError("prompt must be a string")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if not (math.isfinite(self.guidance_scale) and 0.0 <= self.guidance_scale <= MAX_GUIDANCE_SCALE):
            raise ValueError(f"guidance_scale must be in [0, {MAX_GUIDANCE_SCALE}], got {self.guidance_scale}")
        if not 1 <= self.num_steps <= 1000:
            raise ValueError(f"num_steps must be in 1..1000, got {self.num_steps}")


def trajectory_id(cfg: GenerationConfig) -> str:
    """Content hash of the canonical config plus engine version."""
    canonical = json.dumps(
        {
            "engine": ENGINE_VERSION,
            "guidance_scale": cfg.guidance_scale,
            "num_steps": cfg.num_steps,
            "prompt": cfg.prompt,
            "seed": cfg.seed,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TrajectoryFrame:
    timestep: int
    sigma: float
    latent: Tensor
    eps_cond: NoisePrediction | None
    eps_uncond: NoisePrediction | None
    eps_final: NoisePrediction | None
    preview_png: bytes
    noise_previews_png: tuple[bytes, bytes, bytes] | None  # cond, uncond, final


@dataclass(frozen=True)
class Trajectory:
    id: str
    config: GenerationConfig
    frames: tuple[TrajectoryFrame, ...]
    final_image_png: bytes
    token_ids: tok.TokenSequence
    created_at: float | None = field(default=None, compare=False)


@dataclass(frozen=True)
class WeightsBundle:
    """Everything generate() needs. predict_fn is the denoiser seam: tests can
    swap in an analytic noise oracle without touching the loop."""

    vocab: tok.Vocabulary
    merges: tok.MergeRules
    encoder: EncoderWeights
    denoiser: DenoiserWeights
    decoder: DecoderWeights
    preview_matrix: LinearDecodeMatrix
    predict_fn: Callable[[Tensor, float, TextRepresentation], NoisePrediction] | None = None

    def predict(self, latent: Tensor, sigma: float, text: TextRepresentation) -> NoisePrediction:
        if self.predict_fn is not None:
            return self.predict_fn(latent, sigma, text)
        return predict_noise(latent, sigma, text, self.denoiser)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        cfg = self.denoiser.config
        return (cfg.latent_channels, cfg.latent_size, cfg.latent_size)


@lru_cache(maxsize=1)
def default_bundle() -> WeightsBundle:
    """The shipped engine: packaged vocabulary, seeded untrained weights."""
    vocab, merges = tok.load_default_vocabulary()
    return WeightsBundle(
        vocab=vocab,
        merges=merges,
        encoder=init_encoder(ENCODER_WEIGHTS_SEED),
        denoiser=init_denoiser(DENOISER_WEIGHTS_SEED),
        decoder=init_image_decoder(DECODER_WEIGHTS_SEED),
        preview_matrix=load_default_preview_matrix(),
    )


def _noise_preview_png(eps: NoisePrediction, bundle: WeightsBundle) -> bytes:
    return encode_png(linear_preview(eps.eps, bundle.preview_matrix))


def generate(cfg: GenerationConfig, bundle: WeightsBundle | None = None) -> Trajectory:
    """Run one deterministic generation and record the full trajectory."""
    bundle = bundle or default_bundle()
    try:
        seq = tok.encode(cfg.prompt, bundle.vocab, bundle.merges, bundle.encoder.config.context_len)
    except tok.TokenizerError as exc:
        raise GenerationError(f"prompt {cfg.prompt!r} failed to tokenize: {exc}") from exc

    text_cond = encode_tokens(seq, bundle.encoder)
    text_uncond = unconditional_representation(bundle.encoder, bundle.vocab, bundle.merges)

    schedule = build_sigma_schedule(cfg.num_steps)
    noise = standard_normal_tensor(seeded_rng(cfg.seed), bundle.latent_shape)
    x = Tensor((noise.array.astype(np.float64) * schedule.sigma_max).astype(np.float32))

    frames = [
        TrajectoryFrame(
            timestep=0,
            sigma=schedule.sigmas[0],
            latent=x,
            eps_cond=None,
            eps_uncond=None,
            eps_final=None,
            preview_png=encode_png(linear_preview(x, bundle.preview_matrix)),
            noise_previews_png=None,
        )
    ]

    history = DerivativeHistory(MAX_ORDER)
    for i in range(cfg.num_steps):
        sigma_i = schedule.sigmas[i]
        eps_cond = bundle.predict(x, sigma_i, text_cond)
        eps_uncond = bundle.predict(x, sigma_i, text_uncond)
        eps_final = guided_noise(eps_uncond, eps_cond, cfg.guidance_scale)
        history.push(derivative_from_noise(eps_final.eps))
        coeffs = lms_coefficients(schedule, i, min(MAX_ORDER, i + 1))
        x = lms_step(x, history, coeffs)
        frames.append(
            TrajectoryFrame(
                timestep=i + 1,
                sigma=schedule.sigmas[i + 1],
                latent=x,
                eps_cond=eps_cond,
                eps_uncond=eps_uncond,
                eps_final=eps_final,
                preview_png=encode_png(linear_preview(x, bundle.preview_matrix)),
                noise_previews_png=(
                    _noise_preview_png(eps_cond, bundle),
                    _noise_preview_png(eps_uncond, bundle),
                    _noise_preview_png(eps_final, bundle),
                ),
            )
        )

    final_image = encode_png(upscale_decode(frames[-1].latent, bundle.decoder))
    return Trajectory(
        id=trajectory_id(cfg),
        config=cfg,
        frames=tuple(frames),
        final_image_png=final_image,
        token_ids=seq,
        created_at=time.time(),
    )


def guidance_sweep(prompt: str, seed: int, bundle: WeightsBundle | None = None) -> list[Trajectory]:
    """Trajectories at guidance scales 0, 1, 7, 20 sharing one seed."""
    return [
        generate(GenerationConfig(prompt=prompt, seed=seed, guidance_scale=s), bundle)
        for s in GUIDANCE_SWEEP_SCALES
    ]


# --- trajectory file format ------------------------------------------------------
# Canonical JSON (sorted keys, fixed separators), tensors as base64 float32.
# created_at is deliberately not serialized: files are content-addressed and
# must be byte-identical for identical configs.


def _tensor_to_json(t: Tensor) -> dict:
    return {"shape": list(t.shape), "data": base64.b64encode(t.tobytes()).decode("ascii")}


def _tensor_from_json(obj) -> Tensor:
    return Tensor.frombytes(obj["shape"], base64.b64decode(obj["data"]))


def _frame_to_json(f: TrajectoryFrame) -> dict:
    return {
        "timestep": f.timestep,
        "sigma": f.sigma,
        "latent": _tensor_to_json(f.latent),
        "eps_cond": _tensor_to_json(f.eps_cond.eps) if f.eps_cond else None,
        "eps_uncond": _tensor_to_json(f.eps_uncond.eps) if f.eps_uncond else None,
        "eps_final": _tensor_to_json(f.eps_final.eps) if f.eps_final else None,
        "preview_png": base64.b64encode(f.preview_png).decode("ascii"),
        "noise_previews_png": (
            [base64.b64encode(p).decode("ascii") for p in f.noise_previews_png]
            if f.noise_previews_png
            else None
        ),
    }


def _frame_from_json(obj) -> TrajectoryFrame:
    noise_previews = obj["noise_previews_png"]
    return TrajectoryFrame(
        timestep=obj["timestep"],
        sigma=obj["sigma"],
        latent=_tensor_from_json(obj["latent"]),
        eps_cond=NoisePrediction(eps=_tensor_from_json(obj["eps_cond"])) if obj["eps_cond"] else None,
        eps_uncond=NoisePrediction(eps=_tensor_from_json(obj["eps_uncond"])) if obj["eps_uncond"] else None,
        eps_final=NoisePrediction(eps=_tensor_from_json(obj["eps_final"])) if obj["eps_final"] else None,
        preview_png=base64.b64decode(obj["preview_png"]),
        noise_previews_png=(
            tuple(base64.b64decode(p) for p in noise_previews) if noise_previews else None
        ),
    )


def serialize_trajectory(t: Trajectory) -> bytes:
    doc = {
        "format": TRAJECTORY_FORMAT,
        "format_version": TRAJECTORY_FORMAT_VERSION,
        "engine": ENGINE_VERSION,
        "id": t.id,
        "config": {
            "prompt": t.config.prompt,
            "seed": t.config.seed,
            "guidance_scale": t.config.guidance_scale,
            "num_steps": t.config.num_steps,
        },
        "token_ids": list(t.token_ids.ids),
        "token_length": t.token_ids.length,
        "frames": [_frame_to_json(f) for f in t.frames],
        "final_image_png": base64.b64encode(t.final_image_png).decode("ascii"),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def deserialize_trajectory(payload: bytes) -> Trajectory:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt trajectory payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != TRAJECTORY_FORMAT:
        raise ValueError("not a trajectory file")
    if doc.get("format_version") != TRAJECTORY_FORMAT_VERSION:
        raise ValueError(f"unsupported trajectory format version {doc.get('format_version')}")
    if doc.get("engine") != ENGINE_VERSION:
        raise ValueError(f"trajectory from engine {doc.get('engine')!r}, this engine is {ENGINE_VERSION!r}")
    try:
        cfg = GenerationConfig(**doc["config"])
        frames = tuple(_frame_from_json(f) for f in doc["frames"])
        traj = Trajectory(
            id=doc["id"],
            config=cfg,
            frames=frames,
            final_image_png=base64.b64decode(doc["final_image_png"]),
            token_ids=tok.TokenSequence(ids=tuple(doc["token_ids"]), length=doc["token_length"]),
            created_at=None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"corrupt trajectory payload: {exc}") from exc
    if len(traj.frames) != cfg.num_steps + 1:
        raise ValueError(f"trajectory has {len(traj.frames)} frames, config says {cfg.num_steps + 1}")
    if trajectory_id(cfg) != traj.id:
        raise ValueError("trajectory id does not match its config")
    return traj
