"""Run the sidecar under uvicorn: ``python -m worldseed_sidecar``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import SidecarConfig, load_config
from .service import create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="worldseed-sidecar",
        description="Serve /inpaint, /depth, and /caption over HTTP.")
    parser.add_argument("--config", default=None,
                        help="sidecar config JSON (defaults apply if omitted)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None,
                        help="override the configured port")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config) if args.config else SidecarConfig()
        if args.port is not None:
            config = replace(config, port=args.port)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    import uvicorn

    uvicorn.run(create_app(config), host=args.host, port=config.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
