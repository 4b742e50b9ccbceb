"""
SQLAlchemy models for the reconstruction run ledger
"""
from sqlalchemy import Column, DateTime, Float, Integer, String, UniqueConstraint
from sqlalchemy.orm import declarative_base
from sqlalchemy.sql import func

Base = declarative_base()


class RunRecord(Base):
    """
    One report row: a model reconstructed under one camera strategy
    """
    __tablename__ = "reconstruction_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)

    # Run identification
    run_name = Column(String(200), nullable=False, index=True)
    model = Column(String(200), nullable=False, index=True)
    camera_strategy = Column(String(50), nullable=False, index=True)  # 'uniform' or 'collaborative'

    # Metrics
    chamfer = Column(Float, nullable=False)
    volume_iou = Column(Float, nullable=False)

    # Budget
    views = Column(Integer, nullable=False)
    steps = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    config_hash = Column(String(64), nullable=False)  # sha256 of the resolved config

    created_at = Column(DateTime, default=func.now(), nullable=False)

    __table_args__ = (
        UniqueConstraint('run_name', 'camera_strategy', name='uix_run_strategy'),
    )

    def __repr__(self):
        return f"<RunRecord(id={self.id}, run={self.run_name}, model={self.model}, strategy={self.camera_strategy}, chamfer={self.chamfer})>"
