"""Command-line entry points.

`worldseed run` executes the full construction pipeline from a JSON
config, `worldseed render` renders a checkpoint at a pose, and
`worldseed eval` scores a checkpoint against saved evaluation views.

Exit codes: 0 success, 2 configuration error, 3 backend error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DIVERGED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldseed",
        description="Build a 3D splat scene from a single image.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the construction pipeline")
    run_p.add_argument("--config", required=True,
                       help="pipeline config JSON")
    run_p.add_argument("--sidecar", default=None,
                       help="base URL of a backend sidecar; overrides the "
                            "config's backend block")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    run_p.add_argument("--out", default=None,
                       help="override the config output directory")

    render_p = sub.add_parser("render", help="render a trained scene")
    render_p.add_argument("--scene", required=True,
                          help="scene checkpoint (.ckpt)")
    render_p.add_argument("--pose", required=True,
                          help="camera pose JSON with rotation/translation")
    render_p.add_argument("--out", default="render.png",
                          help="output PNG path (default render.png)")

    eval_p = sub.add_parser("eval", help="score a scene on saved views")
    eval_p.add_argument("--scene", required=True,
                        help="scene checkpoint (.ckpt)")
    eval_p.add_argument("--views", required=True,
                        help="directory with eval_{view,mask,pose}_* files")
    return parser


def _cmd_run(args) -> int:
    from .pipeline import load_config, run
    config = load_config(args.config)
    if args.sidecar is not None:
        config = replace(config, backend={"kind": "remote",
                                          "url": args.sidecar})
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    report = run(config)
    print(json.dumps(report.to_dict()["metrics"], indent=2))
    print(f"artifacts written to {config.out_dir}")
    return EXIT_OK


def _cmd_render(args) -> int:
    import numpy as np

    from .io import write_image_png
    from .pipeline import read_pose
    from .splats import load_checkpoint, rasterize

    scene = load_checkpoint(args.scene)
    pose = read_pose(args.pose)
    image, _ = rasterize(scene, scene.intrinsics, pose)
    write_image_png(args.out, np.clip(image, 0.0, 1.0))
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .pipeline import evaluate, load_views
    from .splats import load_checkpoint

    scene = load_checkpoint(args.scene)
    views = load_views(args.views)
    metrics = evaluate(scene, views)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    from .backends import BackendError
    from .pipeline import ConfigError
    from .splats import DivergenceError

    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "render": _cmd_render,
               "eval": _cmd_eval}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        # Bad checkpoints, unreadable poses, malformed view directories.
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
