"""Command line interface: generate, serve, export, prompts.

Exit codes: 0 success, 2 validation error, 1 engine error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .catalog import prompt_catalog
from .pipeline import (
    GenerationConfig,
    GenerationError,
    default_bundle,
    deserialize_trajectory,
    generate,
    serialize_trajectory,
)
from .service import CACHE_ENV_VAR, DEFAULT_CACHE_DIR, DEFAULT_PORT, TrajectoryCache, create_app

EXIT_OK = 0
EXIT_ENGINE_ERROR = 1
EXIT_VALIDATION = 2


def _cache_dir(flag_value: str | None) -> Path:
    return Path(flag_value or os.environ.get(CACHE_ENV_VAR) or DEFAULT_CACHE_DIR)


def _cmd_prompts(_args) -> int:
    for entry in prompt_catalog():
        print(f"{entry.id}\t{entry.text}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    if (args.prompt_id is None) == (args.prompt_text is None):
        print("error: provide exactly one of --prompt-id or --prompt-text", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.prompt_id is not None:
            catalog = prompt_catalog()
            if not 1 <= args.prompt_id <= len(catalog):
                raise ValueError(f"prompt id must be in 1..{len(catalog)}")
            prompt = catalog[args.prompt_id - 1].text
        else:
            prompt = args.prompt_text
        cfg = GenerationConfig(prompt=prompt, seed=args.seed, guidance_scale=args.scale)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        traj = generate(cfg, default_bundle())
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE_ERROR
    Path(args.out).write_bytes(serialize_trajectory(traj))
    print(traj.id)
    return EXIT_OK


def _cmd_export(args) -> int:
    cache = TrajectoryCache(_cache_dir(args.cache))
    path = cache.path_for(args.id)
    if not path.exists():
        print(f"error: no cached trajectory {args.id}", file=sys.stderr)
        return EXIT_VALIDATION
    payload = path.read_bytes()
    try:
        deserialize_trajectory(payload)  # refuse to export corrupt data
    except ValueError as exc:
        print(f"engine error: cached trajectory is corrupt: {exc}", file=sys.stderr)
        return EXIT_ENGINE_ERROR
    Path(args.out).write_bytes(payload)
    print(args.id)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    app = create_app(cache_dir=_cache_dir(args.cache), cors=not args.no_cors)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffuscope")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prompts", help="list the prompt catalog").set_defaults(func=_cmd_prompts)

    gen = sub.add_parser("generate", help="run one generation and write the trajectory file")
    gen.add_argument("--prompt-id", type=int)
    gen.add_argument("--prompt-text")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--scale", type=float, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_generate)

    srv = sub.add_parser("serve", help="run the HTTP API")
    srv.add_argument("--port", type=int, default=DEFAULT_PORT)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--cache")
    srv.add_argument("--no-cors", action="store_true", help="disable permissive CORS")
    srv.set_defaults(func=_cmd_serve)

    exp = sub.add_parser("export", help="copy a cached trajectory file")
    exp.add_argument("--id", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--cache")
    exp.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
