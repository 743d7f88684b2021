"""Run the scoring service under uvicorn."""

from __future__ import annotations

import argparse
import logging

import uvicorn

from .service import DEFAULT_MAX_BATCH, DEFAULT_METRICS, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description="Translation-quality scoring service.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9100)
    parser.add_argument(
        "--metrics",
        default=",".join(DEFAULT_METRICS),
        help="Comma-separated metric names to load.",
    )
    parser.add_argument("--max-batch", type=int, default=DEFAULT_MAX_BATCH)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)
    metrics = tuple(name.strip() for name in args.metrics.split(",") if name.strip())
    app = create_app(metrics=metrics, max_batch=args.max_batch)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
