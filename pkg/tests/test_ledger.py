import logging

import pytest
from sqlalchemy import create_engine, inspect
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from config import PipelineConfig, build_config
from database import init_db, make_engine
from ledger import config_hash, list_runs, record_report
from models import RunRecord
from schemas import MetricsReport, MetricsRow


@pytest.fixture
def db():
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    init_db(bind=engine)
    session = sessionmaker(autocommit=False, autoflush=False, bind=engine)()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()


def _report():
    rows = [
        MetricsRow(model="torus", camera_strategy=s, chamfer=cd, volume_iou=iou, views=24, steps=600,
                   final_phi=1e-3, final_flips=0)
        for s, cd, iou in (("uniform", 0.004, 0.91), ("collaborative", 0.003, 0.94))
    ]
    return MetricsReport(rows=rows)


def test_tables_are_created(db):
    assert "reconstruction_runs" in inspect(db.get_bind()).get_table_names()


def test_record_and_list(db):
    cfg = PipelineConfig()
    assert record_report(_report(), "torus@run1", cfg, db=db) == 2
    runs = list_runs(db=db)
    assert [r.camera_strategy for r in runs] == ["collaborative", "uniform"]
    assert runs[0].config_hash == config_hash(cfg)
    assert runs[0].seed == cfg.optimize.seed
    assert runs[0].created_at is not None
    assert len(list_runs(db=db, limit=1)) == 1


def test_recorded_runs_are_not_duplicated(db, caplog):
    cfg = PipelineConfig()
    record_report(_report(), "torus@run1", cfg, db=db)
    with caplog.at_level(logging.WARNING):
        assert record_report(_report(), "torus@run1", cfg, db=db) == 0
    assert "already recorded" in caplog.text
    assert db.query(RunRecord).count() == 2
    assert record_report(_report(), "torus@run2", cfg, db=db) == 2


def test_config_hash_tracks_the_config():
    a = PipelineConfig()
    b = build_config({"optimize": {"steps": 10}})
    assert config_hash(a) == config_hash(PipelineConfig())
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 64


def test_file_engine(tmp_path):
    engine = make_engine(f"sqlite:///{tmp_path / 'runs.db'}")
    init_db(bind=engine)
    assert "reconstruction_runs" in inspect(engine).get_table_names()
    engine.dispose()

