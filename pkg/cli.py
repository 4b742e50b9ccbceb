#!/usr/bin/env python3
"""
Command line entry point

    python cli.py pipeline --config configs/genus1.toml
    python cli.py rips --points circle.csv --max-eps 2.5

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
import argparse
import glob
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from camera import ph_guided_cameras, load_cameras, save_cameras
from config import PipelineConfig, configure_logging, configure_torch, load_config, settings
from diffrender import ImageBuffer, RenderConfig, render_all
from errors import ConfigurationError, ReconstructionError
from ledger import list_runs
from mesh_io import genus, load_obj, save_obj, save_tetgen
from metrics import chamfer, volume_iou
from optimizer import optimize, save_history
from persistence import cech_filtration, diagram, pair, read_points_csv, rips_filtration
from pipeline import build_camera_sets, load_fixture, run_pipeline
from topo_loops import detect_loops, save_loops

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse reports usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"❌ {self.prog}: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _global_flags() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    parent.add_argument("--config", default=argparse.SUPPRESS, help="TOML file merged over defaults.toml")
    parent.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for optimisation and sampling")
    parent.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    parent.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="warnings and errors only")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _global_flags()
    parser = _Parser(prog="toporec", description="Topology-guided multi-view silhouette reconstruction",
                     parents=[parent])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("fixture", parents=[parent], help="write a synthetic fixture (OBJ + TetGen complexes)")
    p.add_argument("--kind", choices=["torus", "voxel", "sphere"])
    p.add_argument("--holes", type=int, help="voxel plate hole count")
    p.add_argument("--resolution", type=int, help="voxel plate cells along its length")
    p.set_defaults(handler=cmd_fixture)

    p = sub.add_parser("loops", parents=[parent], help="detect handle and tunnel loops")
    p.add_argument("--out", help="loop line-set path (default <out-dir>/loops.txt)")
    p.set_defaults(handler=cmd_loops)

    p = sub.add_parser("cameras", parents=[parent], help="write camera sets as JSON")
    p.add_argument("--strategy", choices=["uniform", "guided", "collaborative", "all"], default="all")
    p.set_defaults(handler=cmd_cameras)

    p = sub.add_parser("render", parents=[parent], help="render silhouettes of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cameras", required=True)
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("reconstruct", parents=[parent], help="optimise a mesh against target silhouettes")
    p.add_argument("--init", required=True, help="initial mesh (OBJ)")
    p.add_argument("--cameras", required=True)
    targets = p.add_mutually_exclusive_group(required=True)
    targets.add_argument("--targets", help="directory of view_*.raw images, one per camera")
    targets.add_argument("--truth", help="mesh whose silhouettes are the targets")
    p.add_argument("--steps", type=int)
    p.add_argument("--precondition", action="store_true")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("eval", parents=[parent], help="Chamfer distance and volume IoU of two meshes")
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--grid-res", type=int)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("pipeline", parents=[parent], help="full reconstruction under both camera strategies")
    p.add_argument("--record", action="store_true", help="store report rows in the run ledger")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("rips", parents=[parent], help="persistence diagram of a point cloud")
    p.add_argument("--points", required=True, help="CSV with x,y[,z] columns")
    p.add_argument("--max-eps", type=float, required=True)
    p.add_argument("--max-dim", type=int, default=2, choices=[0, 1, 2])
    p.add_argument("--cech", action="store_true", help="Čech instead of Vietoris-Rips")
    p.add_argument("--keep-zero", action="store_true", help="keep zero-persistence points")
    p.add_argument("--out", help="diagram CSV path (default <out-dir>/diagram.csv)")
    p.set_defaults(handler=cmd_rips)

    p = sub.add_parser("runs", parents=[parent], help="list recorded runs")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(handler=cmd_runs)
    return parser


def _overrides(args) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["optimize"] = {"seed": args.seed}
        overrides["metrics"] = {"seed": args.seed}
    return overrides


def _out_dir(args) -> str:
    out_dir = getattr(args, "out_dir", None) or settings.out_dir
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _progress(args) -> bool:
    return not getattr(args, "quiet", False)


def cmd_fixture(args, cfg: PipelineConfig) -> int:
    fixture = cfg.fixture.model_copy(update={k: v for k, v in (("kind", args.kind), ("holes", args.holes),
                                                               ("resolution", args.resolution)) if v is not None})
    truth = load_fixture(fixture)
    out_dir = _out_dir(args)
    base = os.path.join(out_dir, truth.name)
    save_obj(truth.surface, base + ".obj")
    save_tetgen(truth.interior, base + "_interior.node", base + "_interior.ele")
    if truth.exterior is not None:
        save_tetgen(truth.exterior, base + "_exterior.node", base + "_exterior.ele")
    print(f"✅ {truth.name}: genus {genus(truth.surface)}, written to {base}.*")
    return EXIT_OK


def cmd_loops(args, cfg: PipelineConfig) -> int:
    truth = load_fixture(cfg.fixture)
    report = detect_loops(truth.surface, truth.interior, truth.exterior)
    path = args.out or os.path.join(_out_dir(args), "loops.txt")
    sidecar = save_loops(report, path)
    print(f"✅ genus {report.genus}: {len(report.handles)} handle, {len(report.tunnels)} tunnel loops -> {path}, {sidecar}")
    return EXIT_OK


def cmd_cameras(args, cfg: PipelineConfig) -> int:
    truth = load_fixture(cfg.fixture)
    report = detect_loops(truth.surface, truth.interior, truth.exterior)
    sets = build_camera_sets(cfg, truth.surface, report)
    resolution = (cfg.render.resolution, cfg.render.resolution)
    cc = cfg.cameras
    sets["guided"] = ph_guided_cameras(report.loops, truth.surface, cc.per_loop, cc.distance_factor, cc.cone_angle,
                                       cc.fov, resolution, cc.include_handles)
    out_dir = _out_dir(args)
    names = list(sets) if args.strategy == "all" else [args.strategy]
    for name in names:
        path = os.path.join(out_dir, f"cameras_{name}.json")
        save_cameras(sets[name], path)
        print(f"✅ {len(sets[name])} {name} cameras -> {path}")
    return EXIT_OK


def _render_cfg(cfg: PipelineConfig) -> RenderConfig:
    return RenderConfig(tau=cfg.render.tau, near=cfg.render.near)


def cmd_render(args, cfg: PipelineConfig) -> int:
    mesh = load_obj(args.mesh)
    cams = load_cameras(args.cameras)
    out_dir = _out_dir(args)
    for i, img in enumerate(render_all(mesh, cams, _render_cfg(cfg))):
        img.save_raw(os.path.join(out_dir, f"view_{i:03d}.raw"))
        img.save_png(os.path.join(out_dir, f"view_{i:03d}.png"))
    print(f"✅ rendered {len(cams)} views -> {out_dir}")
    return EXIT_OK


def _load_targets(directory: str) -> List[ImageBuffer]:
    paths = sorted(glob.glob(os.path.join(directory, "view_*.raw")))
    if not paths:
        raise ConfigurationError(f"no view_*.raw images in {directory}")
    return [ImageBuffer.load_raw(p) for p in paths]


def cmd_reconstruct(args, cfg: PipelineConfig) -> int:
    mesh0 = load_obj(args.init)
    cams = load_cameras(args.cameras)
    render_cfg = _render_cfg(cfg)
    if args.truth:
        targets = render_all(load_obj(args.truth), cams, render_cfg)
    else:
        targets = _load_targets(args.targets)
    update = {k: v for k, v in (("steps", args.steps), ("precondition", args.precondition or None)) if v is not None}
    opt_cfg = cfg.optimize.model_copy(update=update)
    out_dir = _out_dir(args)
    final, history = optimize(mesh0, cams, targets, opt_cfg, render_cfg,
                              checkpoint_dir=os.path.join(out_dir, "checkpoints"), progress=_progress(args))
    save_obj(final, os.path.join(out_dir, "final.obj"))
    save_history(history, os.path.join(out_dir, "loss.csv"))
    last = history[-1]
    print(f"✅ {opt_cfg.steps} steps: phi {history[0].phi:.6g} -> {last.phi:.6g}, {last.flips} flipped faces")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    truth = load_obj(args.truth)
    recon = load_obj(args.recon)
    samples = args.samples or cfg.metrics.samples
    grid_res = args.grid_res or cfg.metrics.grid_res
    cd = chamfer(truth, recon, samples, cfg.metrics.seed)
    iou = volume_iou(truth, recon, grid_res)
    print(f"chamfer,{cd:.17g}")
    print(f"volume_iou,{iou:.17g}")
    return EXIT_OK


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    report = run_pipeline(cfg, _out_dir(args), record=args.record, progress=_progress(args))
    for row in report.rows:
        print(f"{row.model},{row.camera_strategy},{row.chamfer:.6g},{row.volume_iou:.4f}")
    return EXIT_OK


def cmd_rips(args, cfg: PipelineConfig) -> int:
    points = read_points_csv(args.points)
    build = cech_filtration if args.cech else rips_filtration
    f = build(points, args.max_eps, args.max_dim)
    dgm = diagram(pair(f), f, drop_zero_persistence=not args.keep_zero)
    path = args.out or os.path.join(_out_dir(args), "diagram.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    dgm.to_csv(path)
    print(f"✅ {len(dgm)} diagram points ({len(dgm.finite(1))} finite in H1) -> {path}")
    return EXIT_OK


def cmd_runs(args, cfg: PipelineConfig) -> int:
    rows = list_runs(limit=args.limit)
    if not rows:
        print("⚠️  No runs recorded")
        return EXIT_OK
    for r in rows:
        print(f"{r.id:>4} {r.created_at:%Y-%m-%d %H:%M:%S} {r.run_name} {r.camera_strategy} "
              f"CD={r.chamfer:.6g} IoU={r.volume_iou:.4f}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    configure_logging(quiet=getattr(args, "quiet", False))
    try:
        cfg = load_config(getattr(args, "config", None), _overrides(args))
    except (FileNotFoundError, ConfigurationError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_torch()

    try:
        return args.handler(args, cfg)
    except (ReconstructionError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
