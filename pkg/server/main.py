#!/usr/bin/env python3
"""twinwatch - Store Query API Entry Point"""

import logging
import os
from contextlib import asynccontextmanager

from fastapi import FastAPI

from store.errors import NotFoundError
from store.timeseries import TimeSeriesStore

from .api import init_api, router as api_router

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

DEFAULT_STORE_DIR = "out/store"


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Open the store named by TWINWATCH_STORE for the lifetime of the app."""
    path = os.environ.get("TWINWATCH_STORE", DEFAULT_STORE_DIR)
    try:
        store = TimeSeriesStore.open(path)
    except NotFoundError:
        logger.warning(f"No store at {path}; run endpoints will answer 503")
        store = None
    init_api(store)
    if store is not None:
        logger.info(f"Serving store {store.root} ({len(store.list_runs())} runs)")

    yield

    init_api(None)
    logger.info("Query API shutting down")


app = FastAPI(
    title="twinwatch query API",
    description="Read-only access to runs, traces, metrics and verdicts of a validation store",
    version="0.1.0",
    lifespan=lifespan,
)

# Mount API routes
app.include_router(api_router)


def main_cli():
    """CLI entry point."""
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="twinwatch store query API")
    parser.add_argument("--store", help="Store directory (default: $TWINWATCH_STORE or out/store)")
    parser.add_argument("--host", default="127.0.0.1", help="Bind host")
    parser.add_argument("--port", "-p", type=int, default=8766, help="Bind port")
    parser.add_argument("--reload", action="store_true", help="Enable auto-reload")
    args = parser.parse_args()

    if args.store:
        os.environ["TWINWATCH_STORE"] = args.store

    uvicorn.run(
        "server.main:app",
        host=args.host,
        port=args.port,
        reload=args.reload,
    )


if __name__ == "__main__":
    main_cli()
