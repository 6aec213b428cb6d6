from fastapi import FastAPI
from datetime import datetime
from pathlib import Path
import logging
from .routes import runs

logger = logging.getLogger(__name__)


def create_app(run_root) -> FastAPI:
    """Read-only API over the run directories below ``run_root``."""
    app = FastAPI(title="tapsb run browser", version="0.1.0",
                  docs_url="/api/docs", redoc_url="/api/redoc")
    app.state.run_root = Path(run_root)
    logger.info(f"Serving run directories from {app.state.run_root.resolve()}")

    app.include_router(runs.router, prefix="/api/runs", tags=["runs"])

    @app.get("/")
    def read_root():
        return {"message": "tapsb run browser", "run_root": str(app.state.run_root)}

    @app.get("/health")
    def health_check():
        return {"status": "healthy", "timestamp": datetime.now().isoformat()}

    return app
