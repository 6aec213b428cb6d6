from sqlalchemy import create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker
import logging

logger = logging.getLogger(__name__)

# Create a base for models
Base = declarative_base()


def database_url(path) -> str:
    return f"sqlite:///{path}"


def init_database(url: str):
    """Create an engine and session factory for one record database."""
    try:
        engine = create_engine(
            url, connect_args={"check_same_thread": False})
        SessionLocal = sessionmaker(
            autocommit=False, autoflush=False, bind=engine)
        # models must be imported before create_all sees their tables
        from . import models  # noqa: F401
        Base.metadata.create_all(bind=engine)
        logger.info(f"Record database ready at {url}")
        return engine, SessionLocal
    except Exception as e:
        logger.error(f"Failed to create record database: {e}")
        raise
