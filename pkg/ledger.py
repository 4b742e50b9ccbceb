"""
Run ledger: stores pipeline report rows in the database at settings.database_url
"""
import hashlib
import logging
from typing import List, Optional

from sqlalchemy.orm import Session

from config import PipelineConfig
from database import SessionLocal, init_db
from models import RunRecord
from schemas import MetricsReport, RunRecordOut

logger = logging.getLogger(__name__)


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode("utf-8")).hexdigest()


def record_report(report: MetricsReport, run_name: str, cfg: PipelineConfig, db: Optional[Session] = None) -> int:
    """Insert one ledger row per report row; rows already recorded for ``run_name`` are skipped"""
    own_session = db is None
    if own_session:
        init_db()
        db = SessionLocal()
    added_count = 0
    digest = config_hash(cfg)
    try:
        for row in report.rows:
            existing = db.query(RunRecord).filter(
                RunRecord.run_name == run_name,
                RunRecord.camera_strategy == row.camera_strategy
            ).first()
            if existing:
                logger.warning("⚠️  run %s/%s already recorded, skipping", run_name, row.camera_strategy)
                continue
            db.add(RunRecord(
                run_name=run_name,
                model=row.model,
                camera_strategy=row.camera_strategy,
                chamfer=row.chamfer,
                volume_iou=row.volume_iou,
                views=row.views,
                steps=row.steps,
                seed=cfg.optimize.seed,
                config_hash=digest,
            ))
            added_count += 1
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        if own_session:
            db.close()
    logger.info("✅ recorded %d run rows for %s", added_count, run_name)
    return added_count


def list_runs(db: Optional[Session] = None, limit: Optional[int] = None) -> List[RunRecordOut]:
    """Most recent first"""
    own_session = db is None
    if own_session:
        init_db()
        db = SessionLocal()
    try:
        query = db.query(RunRecord).order_by(RunRecord.id.desc())
        if limit:
            query = query.limit(limit)
        return [RunRecordOut.model_validate(r) for r in query.all()]
    finally:
        if own_session:
            db.close()
