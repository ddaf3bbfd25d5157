"""One-time least-squares fit of the linear preview coefficients.

The preview map is configuration, not learned truth: we fit the 4x3 matrix so
that, over seeded random latents, bias + latent . M approximates the toy
upscaling decoder's output mean-pooled back down to latent resolution. Bias is
pinned at 0.5 per channel so a zero latent previews as mid-gray. The result is
frozen into src/diffuscope/data/preview_matrix.json.

Usage: python tools/fit_preview_matrix.py [--decoder-seed 303] [--samples 64]
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from diffuscope.image_decoder import init_image_decoder, upscale_decode  # noqa: E402
from diffuscope.numerics import seeded_rng, standard_normal_tensor  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--decoder-seed", type=int, default=303, help="seed of the shipped decoder weights")
    parser.add_argument("--fit-seed", type=int, default=2024, help="seed for the latent sample")
    parser.add_argument("--samples", type=int, default=64)
    parser.add_argument("--latent-size", type=int, default=8)
    args = parser.parse_args()

    weights = init_image_decoder(args.decoder_seed)
    rng = seeded_rng(args.fit_seed)
    zs, targets = [], []
    for _ in range(args.samples):
        latent = standard_normal_tensor(rng, (4, args.latent_size, args.latent_size))
        decoded = upscale_decode(latent, weights).pixels.astype(np.float64)  # (8h, 8w, 3)
        h = args.latent_size
        pooled = decoded.reshape(h, 8, h, 8, 3).mean(axis=(1, 3))  # mean-pool back to (h, w, 3)
        zs.append(latent.array.reshape(4, -1).T.astype(np.float64))  # (h*w, 4)
        targets.append(pooled.reshape(-1, 3))

    z = np.concatenate(zs)
    t = np.concatenate(targets) - 0.5  # bias pinned at mid-gray
    m, residuals, rank, _ = np.linalg.lstsq(z, t, rcond=None)
    rms = float(np.sqrt(np.mean((z @ m - t) ** 2)))

    out = {
        "matrix": [[float(v) for v in row] for row in m],
        "bias": [0.5, 0.5, 0.5],
        "fit": {
            "decoder_seed": args.decoder_seed,
            "fit_seed": args.fit_seed,
            "samples": args.samples,
            "rank": int(rank),
            "rms_residual": rms,
            "method": "least squares, latents vs 8x-decoder output mean-pooled to latent resolution",
        },
    }
    path = REPO / "src" / "diffuscope" / "data" / "preview_matrix.json"
    path.write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {path} (rms residual {rms:.5f}, rank {rank})")


if __name__ == "__main__":
    main()
