import json

import numpy as np
import pytest

from diffuscope.catalog import prompt_catalog
from diffuscope.denoiser import DenoiserConfig, NoisePrediction, init_denoiser
from diffuscope.image_decoder import DecoderConfig, init_image_decoder, load_default_preview_matrix
from diffuscope.numerics import Tensor, seeded_rng, standard_normal_tensor
from diffuscope.pipeline import (
    GUIDANCE_SWEEP_SCALES,
    GenerationConfig,
    GenerationError,
    Trajectory,
    WeightsBundle,
    deserialize_trajectory,
    generate,
    guidance_sweep,
    serialize_trajectory,
    trajectory_id,
)
from diffuscope.scheduler import build_sigma_schedule, lms_coefficients
from diffuscope.text_encoder import EncoderConfig, encode_tokens, init_encoder, unconditional_representation
from diffuscope.tokenizer import encode, load_default_vocabulary, load_vocabulary


@pytest.fixture(scope="module")
def bundle():
    """Small but fully real engine: CLIP vocabulary, tiny seeded weights."""
    vocab, merges = load_default_vocabulary()
    return WeightsBundle(
        vocab=vocab,
        merges=merges,
        encoder=init_encoder(1, EncoderConfig(d_model=16, n_layers=1, n_heads=2, vocab_size=49408)),
        denoiser=init_denoiser(2, DenoiserConfig(base_channels=8, d_text=16)),
        decoder=init_image_decoder(3, DecoderConfig(base_channels=8)),
        preview_matrix=load_default_preview_matrix(),
    )


@pytest.fixture(scope="module")
def mini_bundle():
    vocab, merges = load_vocabulary(
        json.dumps({"<|startoftext|>": 0, "<|endoftext|>": 1, "a</w>": 2, "b</w>": 3, "ab</w>": 4, "a": 5, "b": 6}),
        "a b</w>\n",
    )
    return WeightsBundle(
        vocab=vocab,
        merges=merges,
        encoder=init_encoder(1, EncoderConfig(d_model=8, n_layers=1, n_heads=2, vocab_size=7)),
        denoiser=init_denoiser(2, DenoiserConfig(latent_size=4, base_channels=8, d_text=8)),
        decoder=init_image_decoder(3, DecoderConfig(base_channels=8)),
        preview_matrix=load_default_preview_matrix(),
    )


def _single_branch_oracle(cfg, bundle, text_rep):
    """Reference loop that conditions on a single branch (no guidance mixing)."""
    schedule = build_sigma_schedule(cfg.num_steps)
    noise = standard_normal_tensor(seeded_rng(cfg.seed), bundle.latent_shape)
    x = Tensor((noise.array.astype(np.float64) * schedule.sigma_max).astype(np.float32))
    latents = [x]
    hist = []
    for i in range(cfg.num_steps):
        eps = bundle.predict(x, schedule.sigmas[i], text_rep)
        hist.insert(0, eps.eps.array.astype(np.float64))
        hist = hist[:4]
        coeffs = lms_coefficients(schedule, i, min(4, i + 1))
        acc = x.array.astype(np.float64)
        for j, c in enumerate(coeffs):
            acc = acc + c * hist[j]
        x = Tensor(acc.astype(np.float32))
        latents.append(x)
    return latents


class TestGenerate:
    def test_deterministic_trajectory_bytes(self, bundle):
        cfg = GenerationConfig(prompt="a cute and adorable bunny", seed=1, guidance_scale=7.0, num_steps=4)
        a, b = generate(cfg, bundle), generate(cfg, bundle)
        assert a.id == b.id
        assert serialize_trajectory(a) == serialize_trajectory(b)

    def test_seed_variation_changes_initial_latent(self, bundle):
        frames0 = []
        for seed in (1, 2, 3):
            cfg = GenerationConfig(prompt="a cute and adorable bunny", seed=seed, guidance_scale=7.0, num_steps=1)
            frames0.append(generate(cfg, bundle).frames[0].latent)
        for i in range(3):
            for j in range(i + 1, 3):
                assert float(np.linalg.norm(frames0[i].array - frames0[j].array)) > 0

    def test_frame_structure(self, bundle):
        cfg = GenerationConfig(prompt="a cute and adorable fox", seed=5, guidance_scale=7.0, num_steps=5)
        traj = generate(cfg, bundle)
        schedule = build_sigma_schedule(5)
        assert len(traj.frames) == 6
        for t, frame in enumerate(traj.frames):
            assert frame.timestep == t
            assert frame.sigma == schedule.sigmas[t]
            assert frame.latent.shape == bundle.latent_shape
            assert frame.preview_png.startswith(b"\x89PNG")
        head = traj.frames[0]
        assert head.eps_cond is None and head.eps_uncond is None and head.eps_final is None
        assert head.noise_previews_png is None
        for frame in traj.frames[1:]:
            assert frame.eps_cond is not None and frame.eps_uncond is not None and frame.eps_final is not None
            assert len(frame.noise_previews_png) == 3
        assert traj.final_image_png.startswith(b"\x89PNG")

    def test_scale_zero_equals_unconditional_oracle(self, bundle):
        cfg = GenerationConfig(prompt="a cute and adorable panda", seed=7, guidance_scale=0.0, num_steps=6)
        traj = generate(cfg, bundle)
        uncond = unconditional_representation(bundle.encoder, bundle.vocab, bundle.merges)
        oracle = _single_branch_oracle(cfg, bundle, uncond)
        for frame, expect in zip(traj.frames, oracle):
            assert np.array_equal(frame.latent.array, expect.array)

    def test_scale_one_equals_conditional_oracle(self, bundle):
        cfg = GenerationConfig(prompt="a cute and adorable panda", seed=7, guidance_scale=1.0, num_steps=6)
        traj = generate(cfg, bundle)
        seq = encode(cfg.prompt, bundle.vocab, bundle.merges, bundle.encoder.config.context_len)
        cond = encode_tokens(seq, bundle.encoder)
        oracle = _single_branch_oracle(cfg, bundle, cond)
        for frame, expect in zip(traj.frames, oracle):
            assert np.max(np.abs(frame.latent.array - expect.array)) <= 1e-5

    def test_untokenizable_prompt_propagates_with_context(self, mini_bundle):
        cfg = GenerationConfig(prompt="xyz", seed=1, guidance_scale=7.0, num_steps=2)
        with pytest.raises(GenerationError, match="xyz"):
            generate(cfg, mini_bundle)

    def test_oracle_denoiser_converges_to_target(self, bundle):
        target = standard_normal_tensor(seeded_rng(99), bundle.latent_shape).array.astype(np.float64)

        def oracle_predict(latent, sigma, text):
            eps = (latent.array.astype(np.float64) - target) / sigma
            return NoisePrediction(eps=Tensor(eps.astype(np.float32)))

        oracle_bundle = WeightsBundle(
            vocab=bundle.vocab,
            merges=bundle.merges,
            encoder=bundle.encoder,
            denoiser=bundle.denoiser,
            decoder=bundle.decoder,
            preview_matrix=bundle.preview_matrix,
            predict_fn=oracle_predict,
        )
        cfg = GenerationConfig(prompt="a cute and adorable owl", seed=11, guidance_scale=7.0, num_steps=50)
        traj = generate(cfg, oracle_bundle)
        err = float(np.linalg.norm(traj.frames[-1].latent.array.astype(np.float64) - target))
        assert err <= 1e-3 * float(np.linalg.norm(target))


def test_catalog_prompts_condition_the_denoiser_differently(bundle):
    # two real catalog prompts must steer the noise prediction apart
    from diffuscope.denoiser import predict_noise

    latent = standard_normal_tensor(seeded_rng(1), bundle.latent_shape)
    preds = []
    for entry in prompt_catalog()[:2]:
        seq = encode(entry.text, bundle.vocab, bundle.merges, bundle.encoder.config.context_len)
        text = encode_tokens(seq, bundle.encoder)
        preds.append(predict_noise(latent, 7.0, text, bundle.denoiser))
    l2 = float(np.linalg.norm(preds[0].eps.array - preds[1].eps.array))
    assert l2 > 0


class TestGenerationConfig:
    def test_scale_bounds(self):
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=1, guidance_scale=25.0)
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=1, guidance_scale=-0.5)
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=1, guidance_scale=float("nan"))

    def test_seed_bounds(self):
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=-1, guidance_scale=7.0)
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=2**64, guidance_scale=7.0)

    def test_num_steps_bounds(self):
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=1, guidance_scale=7.0, num_steps=0)
        with pytest.raises(ValueError):
            GenerationConfig(prompt="x", seed=1, guidance_scale=7.0, num_steps=1001)

    def test_id_depends_on_every_field(self):
        base = GenerationConfig(prompt="a", seed=1, guidance_scale=7.0)
        assert trajectory_id(base) == trajectory_id(GenerationConfig(prompt="a", seed=1, guidance_scale=7.0))
        for other in (
            GenerationConfig(prompt="b", seed=1, guidance_scale=7.0),
            GenerationConfig(prompt="a", seed=2, guidance_scale=7.0),
            GenerationConfig(prompt="a", seed=1, guidance_scale=7.5),
            GenerationConfig(prompt="a", seed=1, guidance_scale=7.0, num_steps=49),
        ):
            assert trajectory_id(other) != trajectory_id(base)


class TestGuidanceSweep:
    def test_four_scales_and_shared_initial_noise(self, bundle):
        # small step count keeps the sweep fast; scales are what matter here
        trajs = [
            generate(GenerationConfig(prompt="a cute and adorable robot", seed=4, guidance_scale=s, num_steps=2), bundle)
            for s in GUIDANCE_SWEEP_SCALES
        ]
        assert [t.config.guidance_scale for t in trajs] == [0.0, 1.0, 7.0, 20.0]
        first = trajs[0].frames[0].latent.tobytes()
        for t in trajs[1:]:
            assert t.frames[0].latent.tobytes() == first
        assert len({t.id for t in trajs}) == 4

    def test_full_helper_uses_default_steps(self, bundle):
        trajs = guidance_sweep("a cute and adorable duckling", 6, bundle)
        assert len(trajs) == 4
        assert all(t.config.num_steps == 50 for t in trajs)
        assert [t.config.guidance_scale for t in trajs] == list(GUIDANCE_SWEEP_SCALES)


class TestSerialization:
    def _debug_traj(self, bundle):
        cfg = GenerationConfig(prompt="a cute and adorable otter", seed=8, guidance_scale=7.0, num_steps=3)
        return generate(cfg, bundle)

    def test_round_trip(self, bundle):
        traj = self._debug_traj(bundle)
        payload = serialize_trajectory(traj)
        back = deserialize_trajectory(payload)
        assert serialize_trajectory(back) == payload
        assert back.id == traj.id
        assert back.config == traj.config
        assert len(back.frames) == len(traj.frames)
        for fa, fb in zip(traj.frames, back.frames):
            assert np.array_equal(fa.latent.array, fb.latent.array)
            assert fa.preview_png == fb.preview_png

    def test_id_recomputed_matches(self, bundle):
        back = deserialize_trajectory(serialize_trajectory(self._debug_traj(bundle)))
        assert trajectory_id(back.config) == back.id

    def test_tampered_id_rejected(self, bundle):
        doc = json.loads(serialize_trajectory(self._debug_traj(bundle)))
        doc["id"] = "0" * 64
        with pytest.raises(ValueError, match="id does not match"):
            deserialize_trajectory(json.dumps(doc).encode())

    def test_version_mismatch_rejected(self, bundle):
        doc = json.loads(serialize_trajectory(self._debug_traj(bundle)))
        doc["format_version"] = 999
        with pytest.raises(ValueError, match="version"):
            deserialize_trajectory(json.dumps(doc).encode())

    def test_corrupt_payload_rejected(self):
        with pytest.raises(ValueError):
            deserialize_trajectory(b"{not json")
        with pytest.raises(ValueError):
            deserialize_trajectory(json.dumps({"format": "something-else"}).encode())


class TestPromptCatalog:
    def test_thirteen_entries(self):
        catalog = prompt_catalog()
        assert len(catalog) == 13
        assert [e.id for e in catalog] == list(range(1, 14))

    def test_showcase_entry(self):
        first = prompt_catalog()[0]
        assert first.text.startswith("a cute and adorable bunny")
        assert "pixar character" in first.text

    def test_template_shape(self):
        for entry in prompt_catalog():
            assert entry.text.startswith("a cute and adorable ")
            assert entry.keywords

    def test_all_entries_tokenize(self):
        vocab, merges = load_default_vocabulary()
        for entry in prompt_catalog():
            seq = encode(entry.text, vocab, merges, 77)
            assert seq.ids[0] == vocab.bos_id
            assert seq.length <= 77
