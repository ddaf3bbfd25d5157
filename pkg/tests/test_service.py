import base64
import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from diffuscope.denoiser import DenoiserConfig, init_denoiser, predict_noise
from diffuscope.image_decoder import DecoderConfig, init_image_decoder, load_default_preview_matrix
from diffuscope.pipeline import (
    ENGINE_VERSION,
    GenerationConfig,
    WeightsBundle,
    deserialize_trajectory,
    trajectory_id,
)
from diffuscope.service import TrajectoryCache, create_app
from diffuscope.text_encoder import EncoderConfig, init_encoder
from diffuscope.tokenizer import load_default_vocabulary, load_vocabulary


def _small_bundle(predict_fn=None):
    vocab, merges = load_default_vocabulary()
    return WeightsBundle(
        vocab=vocab,
        merges=merges,
        encoder=init_encoder(1, EncoderConfig(d_model=16, n_layers=1, n_heads=2, vocab_size=49408)),
        denoiser=init_denoiser(2, DenoiserConfig(base_channels=8, d_text=16)),
        decoder=init_image_decoder(3, DecoderConfig(base_channels=8)),
        preview_matrix=load_default_preview_matrix(),
        predict_fn=predict_fn,
    )


@pytest.fixture(scope="module")
def small_bundle():
    return _small_bundle()


@pytest.fixture(scope="module")
def client(small_bundle, tmp_path_factory):
    app = create_app(cache_dir=tmp_path_factory.mktemp("cache"), bundle=small_bundle)
    return TestClient(app)


class TestHealth:
    def test_reports_engine_and_schedule(self, client):
        body = client.get("/health").json()
        assert body["engine_version"] == ENGINE_VERSION
        assert len(body["schedule_checksum"]) == 16


class TestPrompts:
    def test_thirteen_entries(self, client):
        body = client.get("/api/prompts").json()
        assert len(body) == 13

    def test_ids_unique_one_to_thirteen(self, client):
        ids = [e["id"] for e in client.get("/api/prompts").json()]
        assert sorted(ids) == list(range(1, 14))

    def test_first_entry_mentions_bunny(self, client):
        assert "bunny" in client.get("/api/prompts").json()[0]["text"]


class TestGenerateEndpoint:
    def test_compute_then_cache_hit(self, client):
        body = {"prompt_id": 1, "seed": 1, "guidance_scale": 7}
        first = client.post("/api/generate", json=body).json()
        second = client.post("/api/generate", json=body).json()
        assert first["trajectory_id"] == second["trajectory_id"]
        assert second["cached"] is True

    def test_id_matches_engine_hash(self, client):
        body = {"prompt_id": 2, "seed": 3, "guidance_scale": 7}
        resp = client.post("/api/generate", json=body).json()
        prompt = client.get("/api/prompts").json()[1]["text"]
        cfg = GenerationConfig(prompt=prompt, seed=3, guidance_scale=7.0)
        assert resp["trajectory_id"] == trajectory_id(cfg)

    @pytest.mark.parametrize(
        "body",
        [
            {"prompt_id": 1, "seed": 1, "guidance_scale": 25},
            {"prompt_id": 1, "seed": 1, "guidance_scale": -1},
            {"prompt_id": 1, "seed": -1, "guidance_scale": 7},
            {"prompt_id": 1, "seed": 2**64, "guidance_scale": 7},
            {"prompt_id": 99, "seed": 1, "guidance_scale": 7},
            {"prompt_id": 1, "prompt_text": "also", "seed": 1, "guidance_scale": 7},
            {"seed": 1, "guidance_scale": 7},
            {"prompt_text": "", "seed": 1, "guidance_scale": 7},
            {"prompt_id": 1, "seed": "one", "guidance_scale": 7},
            {"prompt_id": 1, "seed": 1, "guidance_scale": "strong"},
        ],
    )
    def test_invalid_bodies_return_400(self, client, body):
        assert client.post("/api/generate", json=body).status_code == 400

    def test_malformed_json_returns_400(self, client):
        resp = client.post("/api/generate", content=b"{nope", headers={"content-type": "application/json"})
        assert resp.status_code == 400
        assert client.post("/api/generate", json=[1, 2]).status_code == 400

    def test_untokenizable_prompt_returns_422(self, tmp_path):
        vocab, merges = load_vocabulary(
            json.dumps({"<|startoftext|>": 0, "<|endoftext|>": 1, "a</w>": 2, "a": 3}), ""
        )
        bundle = WeightsBundle(
            vocab=vocab,
            merges=merges,
            encoder=init_encoder(1, EncoderConfig(d_model=8, n_layers=1, n_heads=2, vocab_size=4)),
            denoiser=init_denoiser(2, DenoiserConfig(latent_size=4, base_channels=8, d_text=8)),
            decoder=init_image_decoder(3, DecoderConfig(base_channels=8)),
            preview_matrix=load_default_preview_matrix(),
        )
        mini_client = TestClient(create_app(cache_dir=tmp_path, bundle=bundle))
        resp = mini_client.post(
            "/api/generate", json={"prompt_text": "zzz", "seed": 1, "guidance_scale": 7}
        )
        assert resp.status_code == 422


@pytest.fixture(scope="module")
def traj_id(client):
    body = {"prompt_id": 1, "seed": 1, "guidance_scale": 7}
    return client.post("/api/generate", json=body).json()["trajectory_id"]


class TestFrames:

    def test_frame_zero_omits_noise_previews(self, client, traj_id):
        body = client.get(f"/api/trajectories/{traj_id}/frames/0").json()
        assert body["timestep"] == 0
        assert "noise_previews_base64" not in body
        assert body["preview_png_base64"]

    def test_mid_frame_has_three_noise_previews(self, client, traj_id):
        body = client.get(f"/api/trajectories/{traj_id}/frames/25").json()
        assert len(body["noise_previews_base64"]) == 3

    def test_terminal_frame_sigma_zero(self, client, traj_id):
        body = client.get(f"/api/trajectories/{traj_id}/frames/50").json()
        assert body["timestep"] == 50
        assert body["sigma"] == 0.0

    def test_latent_stats_match_exported_file(self, client, traj_id):
        frame = client.get(f"/api/trajectories/{traj_id}/frames/17").json()
        payload = client.get(f"/api/trajectories/{traj_id}/file").content
        traj = deserialize_trajectory(payload)
        latent = traj.frames[17].latent.array.astype(np.float64)
        assert frame["latent_stats"]["mean"] == pytest.approx(float(latent.mean()), abs=1e-12)
        assert frame["latent_stats"]["min"] == pytest.approx(float(latent.min()), abs=1e-12)
        assert frame["latent_stats"]["max"] == pytest.approx(float(latent.max()), abs=1e-12)

    def test_unknown_id_404(self, client):
        assert client.get("/api/trajectories/deadbeef/frames/0").status_code == 404

    def test_timestep_out_of_range_404(self, client, traj_id):
        assert client.get(f"/api/trajectories/{traj_id}/frames/51").status_code == 404
        assert client.get(f"/api/trajectories/{traj_id}/frames/-1").status_code == 404

    def test_immutable_across_restart(self, client, traj_id, small_bundle):
        frame_before = client.get(f"/api/trajectories/{traj_id}/frames/3").json()
        cache_dir = client.app.state.cache.root
        restarted = TestClient(create_app(cache_dir=cache_dir, bundle=small_bundle))
        frame_after = restarted.get(f"/api/trajectories/{traj_id}/frames/3").json()
        assert frame_before == frame_after


class TestGuidanceSweep:
    def test_keys_exactly_the_four_scales(self, client):
        body = client.get("/api/guidance-sweep", params={"prompt_id": 3, "seed": 2}).json()
        assert set(body.keys()) == {"0", "1", "7", "20"}

    def test_repeated_call_identical_ids(self, client):
        a = client.get("/api/guidance-sweep", params={"prompt_id": 3, "seed": 2}).json()
        b = client.get("/api/guidance-sweep", params={"prompt_id": 3, "seed": 2}).json()
        assert a == b

    def test_frame_zero_previews_identical_across_scales(self, client):
        ids = client.get("/api/guidance-sweep", params={"prompt_id": 3, "seed": 2}).json()
        previews = set()
        for traj_id in ids.values():
            frame = client.get(f"/api/trajectories/{traj_id}/frames/0").json()
            previews.add(frame["preview_png_base64"])
        assert len(previews) == 1

    def test_missing_seed_400(self, client):
        assert client.get("/api/guidance-sweep", params={"prompt_id": 3}).status_code == 400

    def test_bad_prompt_id_400(self, client):
        resp = client.get("/api/guidance-sweep", params={"prompt_id": "x", "seed": 2})
        assert resp.status_code == 400


class TestCacheDedup:
    def test_layout_two_hex_prefix(self, tmp_path, small_bundle):
        cache = TrajectoryCache(tmp_path)
        cfg = GenerationConfig(prompt="a cute and adorable fox", seed=1, guidance_scale=7.0, num_steps=2)
        traj, cached = cache.get_or_compute(cfg, small_bundle)
        assert not cached
        path = cache.path_for(traj.id)
        assert path.exists()
        assert path.parent.name == traj.id[:2]
        assert path.name == f"{traj.id}.traj"

    def test_concurrent_identical_requests_compute_once(self, tmp_path):
        calls = []
        lock = threading.Lock()
        base = _small_bundle()

        def counting_predict(latent, sigma, text):
            with lock:
                calls.append(sigma)
            return predict_noise(latent, sigma, text, base.denoiser)

        bundle = _small_bundle(predict_fn=counting_predict)
        cache = TrajectoryCache(tmp_path)
        cfg = GenerationConfig(prompt="a cute and adorable owl", seed=5, guidance_scale=7.0, num_steps=3)
        results = []

        def worker():
            results.append(cache.get_or_compute(cfg, bundle))

        threads = [threading.Thread(target=worker) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        assert len(calls) == 2 * cfg.num_steps  # one computation: cond+uncond per step
        ids = {traj.id for traj, _ in results}
        assert len(ids) == 1
        assert sum(1 for _, cached in results if not cached) == 1
        assert len(list(tmp_path.rglob("*.traj"))) == 1

    def test_failure_propagates_then_recovers(self, tmp_path, small_bundle):
        boom = {"fail": True}

        def flaky_predict(latent, sigma, text):
            if boom["fail"]:
                raise RuntimeError("injected failure")
            return predict_noise(latent, sigma, text, small_bundle.denoiser)

        bundle = _small_bundle(predict_fn=flaky_predict)
        cache = TrajectoryCache(tmp_path)
        cfg = GenerationConfig(prompt="a cute and adorable otter", seed=9, guidance_scale=7.0, num_steps=2)
        with pytest.raises(RuntimeError, match="injected failure"):
            cache.get_or_compute(cfg, bundle)
        assert cache.entry(trajectory_id(cfg)).status == "failed"
        boom["fail"] = False
        traj, cached = cache.get_or_compute(cfg, bundle)
        assert not cached
        assert cache.entry(traj.id).status == "ready"

    def test_engine_failure_returns_500(self, tmp_path):
        def broken_predict(latent, sigma, text):
            raise RuntimeError("kaput")

        bundle = _small_bundle(predict_fn=broken_predict)
        api = TestClient(create_app(cache_dir=tmp_path, bundle=bundle), raise_server_exceptions=False)
        resp = api.post("/api/generate", json={"prompt_id": 1, "seed": 1, "guidance_scale": 7})
        assert resp.status_code == 500
        assert "kaput" in resp.json()["error"]


def test_frame_preview_decodes_as_png(client):
    body = {"prompt_id": 4, "seed": 2, "guidance_scale": 7}
    traj_id = client.post("/api/generate", json=body).json()["trajectory_id"]
    frame = client.get(f"/api/trajectories/{traj_id}/frames/0").json()
    assert base64.b64decode(frame["preview_png_base64"]).startswith(b"\x89PNG")
