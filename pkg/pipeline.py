"""
End-to-end reconstruction run

fixture -> loops -> cameras -> target silhouettes -> initial mesh ->
optimisation per camera strategy -> metrics -> report
"""
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, List, Optional

import pandas as pd

from camera import collaborative_cameras, ph_guided_cameras, save_cameras, uniform_sphere_cameras
from config import FixtureConfig, PipelineConfig, settings
from diffrender import RenderConfig, render_all
from errors import ConfigurationError, PipelineStageError
from ledger import record_report
from mesh_io import (TetComplex, TriMesh, cone_interior, genus, load_obj, load_tetgen, make_icosphere, make_torus,
                     make_voxel_genus_solid, normalize_unit_box, save_obj, torus_interior)
from metrics import evaluate
from optimizer import laplacian_smooth, optimize, save_history
from schemas import Camera, MetricsReport, MetricsRow
from topo_loops import LoopReport, detect_loops, save_loops

logger = logging.getLogger(__name__)

STRATEGIES = ("uniform", "collaborative")
STAGE_COUNT = 8
REPORT_COLUMNS = list(MetricsRow.model_fields)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Unit-box surface with its conforming volumetric complexes"""
    name: str
    surface: TriMesh
    interior: TetComplex
    exterior: Optional[TetComplex] = None


def _normalized(name: str, surface: TriMesh, interior: TetComplex, exterior: Optional[TetComplex]) -> GroundTruth:
    unit, transform = normalize_unit_box(surface)
    interior = TetComplex(transform.apply(interior.vertices), interior.tets)
    if exterior is not None:
        exterior = TetComplex(transform.apply(exterior.vertices), exterior.tets)
    return GroundTruth(name, unit, interior, exterior)


def load_fixture(fc: FixtureConfig) -> GroundTruth:
    """Generate or load the ground truth named by the fixture section"""
    if fc.kind == "torus":
        surface = make_torus(fc.major_radius, fc.minor_radius, fc.nu, fc.nv)
        return _normalized(fc.model_name, surface, torus_interior(fc.major_radius, fc.minor_radius, fc.nu, fc.nv), None)
    if fc.kind == "voxel":
        surface, interior, exterior = make_voxel_genus_solid(fc.holes, fc.resolution)
        return _normalized(fc.model_name, surface, interior, exterior)
    if fc.kind == "sphere":
        surface = make_icosphere(fc.subdivisions)
        return _normalized(fc.model_name, surface, cone_interior(surface), None)

    if not fc.mesh_path:
        raise ConfigurationError("fixture.mesh_path is required for kind 'obj'")
    surface = load_obj(fc.mesh_path)
    if fc.interior_node and fc.interior_ele:
        interior = load_tetgen(fc.interior_node, fc.interior_ele).conformed_to(surface)
    elif genus(surface) == 0:
        interior = cone_interior(surface)
    else:
        raise ConfigurationError("fixture.interior_node/interior_ele are required for a surface of positive genus")
    exterior = None
    if fc.exterior_node and fc.exterior_ele:
        exterior = load_tetgen(fc.exterior_node, fc.exterior_ele).conformed_to(surface)
    return _normalized(fc.model_name, surface, interior, exterior)


def uniform_radius(mesh: TriMesh, fov: float) -> float:
    """Distance at which the bounding sphere fills the vertical field of view, plus 10%"""
    _, rho = mesh.bounding_sphere()
    return 1.1 * rho / math.sin(math.radians(fov) / 2.0)


def build_camera_sets(cfg: PipelineConfig, truth: TriMesh, loops: LoopReport) -> Dict[str, List[Camera]]:
    cc = cfg.cameras
    resolution = (cfg.render.resolution, cfg.render.resolution)
    center, _ = truth.bounding_sphere()
    radius = cc.radius if cc.radius is not None else uniform_radius(truth, cc.fov)
    uniform = uniform_sphere_cameras(cc.total, radius, center, cc.fov, resolution)
    guided = ph_guided_cameras(loops.loops, truth, cc.per_loop, cc.distance_factor, cc.cone_angle, cc.fov, resolution,
                               cc.include_handles)
    collaborative = collaborative_cameras(guided, cc.total, radius, center, cc.min_angle, cc.fov, resolution)
    logger.info("📷 %d uniform cameras, %d guided, %d collaborative", len(uniform), len(guided), len(collaborative))
    return {"uniform": uniform, "collaborative": collaborative}


def _format_report_md(report: MetricsReport) -> str:
    """Markdown table with one line per model: CD and IoU under each strategy"""
    lines = [
        "| Model | CD ↓ (uniform) | CD ↓ (collaborative) | Volume IoU ↑ (uniform) | Volume IoU ↑ (collaborative) |",
        "|---|---|---|---|---|",
    ]
    models = []
    for row in report.rows:
        if row.model not in models:
            models.append(row.model)
    for model in models:
        by_strategy = {r.camera_strategy: r for r in report.rows if r.model == model}
        cd = [f"{by_strategy[s].chamfer:.6f}" if s in by_strategy else "-" for s in STRATEGIES]
        iou = [f"{by_strategy[s].volume_iou:.4f}" if s in by_strategy else "-" for s in STRATEGIES]
        lines.append(f"| {model} | {cd[0]} | {cd[1]} | {iou[0]} | {iou[1]} |")
    return "\n".join(lines) + "\n"


def save_report(report: MetricsReport, out_dir: str) -> None:
    frame = pd.DataFrame([r.model_dump() for r in report.rows], columns=REPORT_COLUMNS)
    frame.to_csv(os.path.join(out_dir, "report.csv"), index=False, float_format="%.17g")
    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(_format_report_md(report))


@contextmanager
def _stage(index: int, name: str):
    logger.info("\n[%d/%d] %s", index, STAGE_COUNT, name)
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as e:
        logger.error("❌ %s failed: %s", name, e)
        raise PipelineStageError(name, e) from e


def run_pipeline(cfg: PipelineConfig, out_dir: Optional[str] = None, record: bool = False,
                 progress: bool = True) -> MetricsReport:
    """
    Reconstruct the configured fixture under the uniform and collaborative
    camera strategies and write the report plus every intermediate artifact
    to ``out_dir``.
    """
    out_dir = out_dir or settings.out_dir
    os.makedirs(out_dir, exist_ok=True)
    logger.info("=" * 60)
    logger.info("🚀 reconstruction pipeline: %s -> %s", cfg.fixture.model_name, out_dir)
    logger.info("=" * 60)

    with _stage(1, "fixture"):
        truth = load_fixture(cfg.fixture)
        save_obj(truth.surface, os.path.join(out_dir, "ground_truth.obj"))
        target_genus = genus(truth.surface)
        logger.info("✅ %s: %d vertices, %d faces, genus %d", truth.name, truth.surface.n_vertices,
                    len(truth.surface.faces), target_genus)

    with _stage(2, "loops"):
        loops = detect_loops(truth.surface, truth.interior, truth.exterior)
        save_loops(loops, os.path.join(out_dir, "loops.txt"))
        for note in loops.notes:
            logger.warning("⚠️  %s", note)

    with _stage(3, "cameras"):
        camera_sets = build_camera_sets(cfg, truth.surface, loops)
        for strategy, cams in camera_sets.items():
            save_cameras(cams, os.path.join(out_dir, f"cameras_{strategy}.json"))

    render_cfg = RenderConfig(tau=cfg.render.tau, near=cfg.render.near)
    with _stage(4, "targets"):
        targets = {s: render_all(truth.surface, cams, render_cfg) for s, cams in camera_sets.items()}
        logger.info("✅ rendered %d target silhouettes", sum(len(t) for t in targets.values()))

    with _stage(5, "initialize"):
        mesh0 = laplacian_smooth(truth.surface, cfg.optimize.smoothing_rounds, cfg.optimize.smoothing_step)
        save_obj(mesh0, os.path.join(out_dir, "initial.obj"))

    finals: Dict[str, TriMesh] = {}
    histories = {}
    with _stage(6, "optimize"):
        for strategy in STRATEGIES:
            logger.info("🎯 strategy: %s (%d views)", strategy, len(camera_sets[strategy]))
            final, history = optimize(mesh0, camera_sets[strategy], targets[strategy], cfg.optimize, render_cfg,
                                      target_genus=target_genus,
                                      checkpoint_dir=os.path.join(out_dir, "checkpoints", strategy),
                                      progress=progress)
            save_obj(final, os.path.join(out_dir, f"final_{strategy}.obj"))
            save_history(history, os.path.join(out_dir, f"loss_{strategy}.csv"))
            finals[strategy] = final
            histories[strategy] = history

    rows = []
    with _stage(7, "metrics"):
        for strategy in STRATEGIES:
            cd, iou = evaluate(truth.surface, finals[strategy], cfg.metrics)
            last = histories[strategy][-1]
            rows.append(MetricsRow(model=truth.name, camera_strategy=strategy, chamfer=cd, volume_iou=iou,
                                   views=len(camera_sets[strategy]), steps=cfg.optimize.steps,
                                   final_phi=last.phi, final_flips=last.flips))

    report = MetricsReport(rows=rows)
    with _stage(8, "report"):
        save_report(report, out_dir)
        if record:
            record_report(report, f"{truth.name}@{os.path.basename(os.path.abspath(out_dir))}", cfg)

    logger.info("\n" + "=" * 60)
    logger.info("📊 REPORT")
    logger.info("=" * 60)
    for row in rows:
        logger.info("%-14s CD=%.6f IoU=%.4f flips=%d", row.camera_strategy, row.chamfer, row.volume_iou, row.final_flips)
    return report

