"""HTTP service exposing prompts, generation, frames, and guidance sweeps.

Trajectories are stored content-addressed under cache/<first-2-hex>/<digest>.traj;
an in-flight table deduplicates concurrent identical requests so each config is
computed exactly once. Validation is explicit so the status codes stay honest:
400 for a bad body, 422 for a prompt the tokenizer rejects, 500 for engine
failures.
"""

from __future__ import annotations

import base64
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .catalog import prompt_catalog
from .pipeline import (
    ENGINE_VERSION,
    GUIDANCE_SWEEP_SCALES,
    MAX_GUIDANCE_SCALE,
    GenerationConfig,
    GenerationError,
    Trajectory,
    WeightsBundle,
    default_bundle,
    deserialize_trajectory,
    generate,
    serialize_trajectory,
    trajectory_id,
)
from .scheduler import build_sigma_schedule

DEFAULT_PORT = 7860
CACHE_ENV_VAR = "DIFFUSCOPE_CACHE"
DEFAULT_CACHE_DIR = "trajectory-cache"


@dataclass
class CacheEntry:
    key: str
    path: Path
    status: str  # pending | ready | failed


class TrajectoryCache:
    """Content-addressed on-disk store with single-writer dedup per key."""

    def __init__(self, root: Path, mem_capacity: int = 8) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Event] = {}
        self._failures: dict[str, Exception] = {}
        self._mem: OrderedDict[str, Trajectory] = OrderedDict()
        self._mem_capacity = mem_capacity

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.traj"

    def entry(self, key: str) -> CacheEntry:
        with self._lock:
            if key in self._inflight:
                return CacheEntry(key=key, path=self.path_for(key), status="pending")
            if key in self._failures:
                return CacheEntry(key=key, path=self.path_for(key), status="failed")
        status = "ready" if self.path_for(key).exists() else "failed"
        return CacheEntry(key=key, path=self.path_for(key), status=status)

    def _remember(self, key: str, traj: Trajectory) -> None:
        self._mem[key] = traj
        self._mem.move_to_end(key)
        while len(self._mem) > self._mem_capacity:
            self._mem.popitem(last=False)

    def load(self, key: str) -> Trajectory | None:
        with self._lock:
            cached = self._mem.get(key)
            if cached is not None:
                self._mem.move_to_end(key)
                return cached
        path = self.path_for(key)
        if not path.exists():
            return None
        traj = deserialize_trajectory(path.read_bytes())
        with self._lock:
            self._remember(key, traj)
        return traj

    def get_or_compute(self, cfg: GenerationConfig, bundle: WeightsBundle) -> tuple[Trajectory, bool]:
        """Returns (trajectory, was_cached). Concurrent callers for one key
        wait on the single computation instead of redoing it."""
        key = trajectory_id(cfg)
        while True:
            existing = self.load(key)
            if existing is not None:
                return existing, True
            with self._lock:
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    break
            waiter.wait()
            failure = self._failures.get(key)
            if failure is not None:
                raise failure

        try:
            traj = generate(cfg, bundle)
            payload = serialize_trajectory(traj)
            path = self.path_for(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            tmp.replace(path)
            with self._lock:
                self._remember(key, traj)
                self._failures.pop(key, None)
            return traj, False
        except Exception as exc:
            with self._lock:
                self._failures[key] = exc
            raise
        finally:
            with self._lock:
                event = self._inflight.pop(key)
            event.set()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _parse_seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError("seed must be an integer")
    if not 0 <= value < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return value


def _parse_scale(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("guidance_scale must be a number")
    scale = float(value)
    if not 0.0 <= scale <= MAX_GUIDANCE_SCALE:
        raise ValueError(f"guidance_scale must be in [0, {MAX_GUIDANCE_SCALE}]")
    return scale


def _resolve_prompt(prompt_id, prompt_text) -> str:
    if (prompt_id is None) == (prompt_text is None):
        raise ValueError("provide exactly one of prompt_id or prompt_text")
    if prompt_id is not None:
        if isinstance(prompt_id, bool) or not isinstance(prompt_id, int):
            raise ValueError("prompt_id must be an integer")
        catalog = prompt_catalog()
        if not 1 <= prompt_id <= len(catalog):
            raise ValueError(f"prompt_id must be in 1..{len(catalog)}")
        return catalog[prompt_id - 1].text
    if not isinstance(prompt_text, str) or not prompt_text.strip():
        raise ValueError("prompt_text must be a non-empty string")
    return prompt_text


def _frame_payload(traj: Trajectory, t: int) -> dict:
    frame = traj.frames[t]
    latent = frame.latent.array.astype(np.float64)
    payload = {
        "timestep": frame.timestep,
        "sigma": frame.sigma,
        "preview_png_base64": base64.b64encode(frame.preview_png).decode("ascii"),
        "latent_stats": {
            "min": float(latent.min()),
            "max": float(latent.max()),
            "mean": float(latent.mean()),
        },
    }
    if frame.noise_previews_png is not None:
        payload["noise_previews_base64"] = [
            base64.b64encode(p).decode("ascii") for p in frame.noise_previews_png
        ]
    return payload


def create_app(
    cache_dir: str | Path = DEFAULT_CACHE_DIR,
    bundle: WeightsBundle | None = None,
    cors: bool = True,
) -> FastAPI:
    app = FastAPI(title="diffuscope", version=ENGINE_VERSION)
    cache = TrajectoryCache(Path(cache_dir))
    app.state.cache = cache
    app.state.bundle = bundle

    if cors:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
        )

    def engine() -> WeightsBundle:
        if app.state.bundle is None:
            app.state.bundle = default_bundle()
        return app.state.bundle

    @app.get("/health")
    def health():
        return {
            "engine_version": ENGINE_VERSION,
            "schedule_checksum": build_sigma_schedule().checksum(),
        }

    @app.get("/api/prompts")
    def prompts():
        return [{"id": e.id, "text": e.text} for e in prompt_catalog()]

    @app.post("/api/generate")
    async def generate_endpoint(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        try:
            prompt = _resolve_prompt(body.get("prompt_id"), body.get("prompt_text"))
            seed = _parse_seed(body.get("seed"))
            scale = _parse_scale(body.get("guidance_scale"))
            cfg = GenerationConfig(prompt=prompt, seed=seed, guidance_scale=scale)
        except (ValueError, TypeError) as exc:
            return _error(400, str(exc))
        try:
            traj, cached = await run_in_threadpool(cache.get_or_compute, cfg, engine())
        except GenerationError as exc:
            return _error(422, str(exc))
        except Exception as exc:  # engine failure
            return _error(500, f"generation failed: {exc}")
        return {"trajectory_id": traj.id, "cached": cached}

    @app.get("/api/trajectories/{traj_id}/frames/{t}")
    def frame(traj_id: str, t: int):
        traj = cache.load(traj_id)
        if traj is None:
            return _error(404, f"unknown trajectory {traj_id}")
        if not 0 <= t < len(traj.frames):
            return _error(404, f"timestep {t} out of range 0..{len(traj.frames) - 1}")
        return _frame_payload(traj, t)

    @app.get("/api/trajectories/{traj_id}/file")
    def trajectory_file(traj_id: str):
        path = cache.path_for(traj_id)
        if not path.exists():
            return _error(404, f"unknown trajectory {traj_id}")
        return Response(content=path.read_bytes(), media_type="application/octet-stream")

    @app.get("/api/guidance-sweep")
    async def sweep(request: Request):
        params = request.query_params
        try:
            prompt_id = int(params["prompt_id"]) if "prompt_id" in params else None
            seed_raw = params.get("seed")
            if seed_raw is None:
                raise ValueError("seed is required")
            prompt = _resolve_prompt(prompt_id, params.get("prompt_text"))
            seed = _parse_seed(int(seed_raw))
        except (ValueError, TypeError) as exc:
            return _error(400, str(exc))
        ids = {}
        for scale in GUIDANCE_SWEEP_SCALES:
            cfg = GenerationConfig(prompt=prompt, seed=seed, guidance_scale=scale)
            try:
                traj, _ = await run_in_threadpool(cache.get_or_compute, cfg, engine())
            except GenerationError as exc:
                return _error(422, str(exc))
            ids[str(int(scale))] = traj.id
        return ids

    return app
