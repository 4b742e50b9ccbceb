"""
Database connection and session management for the run ledger
"""
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from config import settings

DATABASE_URL = settings.database_url


def make_engine(url: str = DATABASE_URL):
    """SQLite needs check_same_thread off; other backends get pool health checks"""
    if url.startswith("sqlite"):
        return create_engine(url, connect_args={"check_same_thread": False}, echo=False)
    return create_engine(url, pool_pre_ping=True, echo=False)


engine = make_engine()

SessionLocal = sessionmaker(
    autocommit=False,
    autoflush=False,
    bind=engine
)


def init_db(bind=None):
    """
    Initialize database - create all tables
    Called before the first write to the ledger
    """
    from models import Base
    Base.metadata.create_all(bind=bind or engine)
