"""Command-line entry point: ``sfmfuse {align,eval-pose,synth}``.

Exit codes: 0 success, 1 usage or invalid input values, 2 I/O or file
format problems, 3 degenerate geometry.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import errors
from .camera_align import CameraPose, align_camera_sets, camera_cloud_scale
from .correspondence import select_reference_view
from .pipeline import (
    DEFAULT_THRESHOLD,
    append_views,
    default_epsilon,
    residual_summary,
    run_pipeline,
    transforms_report,
)
from .ransac import RansacParams
from .scene_io import (
    read_cameras,
    read_labelmap,
    read_pointmap,
    read_sfm_scene,
    write_ply,
    write_report,
)
from .semantic import file_provider, oracle_provider
from .synth import SceneSpec, generate, write_bundle

logger = logging.getLogger("sfmfuse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 0, 1, 2, 3
CAMERA_EPSILON_FACTOR = 0.05

_IO_ERRORS = (OSError, errors.MalformedFile, errors.NonFiniteData, errors.DanglingTrack,
              errors.OutOfBoundsPixel, errors.DimensionMismatch)
_GEOMETRY_ERRORS = (errors.DegenerateConfiguration, errors.TooFewCorrespondences,
                    errors.EmptyScene, errors.EmptyInput)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Stage:
    """Tracks the running stage so failures can name it."""

    name = "startup"

    def __call__(self, name: str) -> None:
        self.name = name
        logger.debug("stage: %s", name)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _add_ransac_flags(p: argparse.ArgumentParser, iterations: int) -> None:
    p.add_argument("--seed", type=int, required=True,
                   help="seed for every randomized stage (integer, required)")
    p.add_argument("--sample-size", type=int, default=4,
                   help="RANSAC minimal sample size, >= 3 (count; default 4)")
    p.add_argument("--iterations", type=_positive_int, default=iterations,
                   help=f"RANSAC iterations (count; default {iterations})")
    p.add_argument("--epsilon", type=_positive_float, default=None,
                   help="RANSAC inlier distance threshold (scene units; default derived "
                        "from the data, see README)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sfmfuse",
                     description="Fuse a dense pointmap with a sparse SfM reconstruction.")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("align", help="global + semantic alignment and fusion")
    p.add_argument("--pointmap", action="append", required=True, type=Path,
                   help="PMAP file; view id from trailing digits of the name (view_3.pmap). "
                        "Repeatable; non-reference views get the global transform")
    p.add_argument("--points", required=True, type=Path, help="SfM points.txt")
    p.add_argument("--cameras", required=True, type=Path, help="SfM cameras.txt")
    p.add_argument("--provider", choices=("oracle", "files"), default="oracle",
                   help="mask source: 'oracle' (label map) or 'files' (precomputed masks)")
    p.add_argument("--labelmap", type=Path, help="16-bit PGM label map (oracle provider)")
    p.add_argument("--mask-dir", type=Path,
                   help="directory with index.txt and 8-bit PGM masks (files provider)")
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD,
                   help=f"minimum exclusive outlier count per mask, >= 3 "
                        f"(count; default {DEFAULT_THRESHOLD})")
    p.add_argument("--global-only", action="store_true", help="skip the semantic stage")
    p.add_argument("--refit", action="store_true",
                   help="re-estimate the global transform on all RANSAC inliers")
    p.add_argument("--out-ply", required=True, type=Path, help="fused point cloud (PLY)")
    p.add_argument("--json-out", type=Path,
                   help="transforms report (JSON; default: PLY path with .json suffix)")
    _add_ransac_flags(p, 1000)

    p = sub.add_parser("eval-pose", help="camera-set alignment errors")
    p.add_argument("--est", required=True, type=Path, help="estimated cameras.txt")
    p.add_argument("--ref", required=True, type=Path, help="reference cameras.txt")
    p.add_argument("--json-out", type=Path, help="write the error table as JSON")
    _add_ransac_flags(p, 1000)

    p = sub.add_parser("synth", help="write a synthetic ground-truth bundle")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, required=True, help="generator seed (integer)")
    p.add_argument("--regions", type=int, default=3, help="number of regions (count)")
    p.add_argument("--points-per-region", type=int, default=40,
                   help="SfM points per region (count)")
    p.add_argument("--noise", type=float, default=0.001,
                   help="dense point noise sigma (scene units)")
    p.add_argument("--outlier-fraction", type=float, default=0.0,
                   help="fraction of correspondences corrupted, in [0, 1)")
    p.add_argument("--cameras", type=int, default=4, help="cameras on the ring (count)")
    p.add_argument("--width", type=int, default=64, help="image width (pixels)")
    p.add_argument("--height", type=int, default=48, help="image height (pixels)")
    return parser


# ── Subcommands ─────────────────────────────────────────────────────────

def cmd_align(args, stage: _Stage) -> int:
    stage("read scene")
    scene = read_sfm_scene(args.points, args.cameras)
    pointmaps = [read_pointmap(p) for p in args.pointmap]

    stage("select reference view")
    view = select_reference_view(scene)
    ref = [pm for pm in pointmaps if pm.view_id == view]
    if not ref:
        raise errors.ViewMismatch(f"no --pointmap given for reference view {view}")
    pointmap = ref[0]
    others = [pm for pm in pointmaps if pm.view_id != view]

    provider = None
    if not args.global_only:
        stage("load mask provider")
        if args.provider == "oracle":
            if args.labelmap is None:
                raise errors.InvalidSpec("--labelmap is required with --provider oracle")
            provider = oracle_provider(
                read_labelmap(args.labelmap, (pointmap.width, pointmap.height)))
        else:
            if args.mask_dir is None:
                raise errors.InvalidSpec("--mask-dir is required with --provider files")
            provider = file_provider(args.mask_dir, pointmap.width, pointmap.height)

    epsilon = args.epsilon if args.epsilon is not None else default_epsilon(scene)
    params = RansacParams(args.sample_size, epsilon, args.iterations, args.seed)

    stage("alignment")
    run = run_pipeline(scene, pointmap, params, provider=provider,
                       threshold=args.threshold, refit=args.refit)
    fused = append_views(run.fused, run.alignment, others)

    stage("write outputs")
    write_ply(fused.xyz, fused.rgb, args.out_ply)
    json_out = args.json_out or args.out_ply.with_suffix(".json")
    write_report(transforms_report(run), json_out)

    print(f"reference view: {run.reference_view}   correspondences: "
          f"{len(run.correspondences)}   epsilon: {epsilon:.6g}")
    print(f"inliers: {len(run.alignment.inliers)}   outliers: {len(run.alignment.outliers)}")
    print(f"{'region':<28}{'support':>8}{'mean res':>12}{'max res':>12}")
    for name, n, mean, mx in residual_summary(run):
        print(f"{name:<28}{n:>8}{mean:>12.4g}{mx:>12.4g}")
    print(f"fused points: {len(fused)} -> {args.out_ply}")
    return EXIT_OK


def _read_poses(path: Path) -> list[CameraPose]:
    cams = read_cameras(path)
    return [CameraPose.from_view(cams[k]) for k in sorted(cams)]


def cmd_eval_pose(args, stage: _Stage) -> int:
    stage("read cameras")
    est, ref = _read_poses(args.est), _read_poses(args.ref)
    if len(est) != len(ref):
        raise errors.CountMismatch(
            f"{len(est)} estimated vs {len(ref)} reference cameras")

    stage("camera alignment")
    epsilon = args.epsilon
    if epsilon is None:
        epsilon = CAMERA_EPSILON_FACTOR * camera_cloud_scale(ref)
    params = RansacParams(args.sample_size, epsilon, args.iterations, args.seed)
    rows = {}
    for name, rot_pts, ransac in (("plain", False, None),
                                  ("+ransac", False, params),
                                  ("+rotation-points", True, None),
                                  ("+both", True, params)):
        _, report = align_camera_sets(est, ref, use_rotation_points=rot_pts, ransac=ransac)
        rows[name] = report

    print("E_R in radians; RPE over consecutive pairs of normalized trajectories "
          "(RMS, RPE_r in degrees)")
    print(f"{'setting':<18}{'E_R':>12}{'E_T':>12}{'RPE_t':>12}{'RPE_r':>12}")
    for name, r in rows.items():
        print(f"{name:<18}{r.e_r_mean:>12.6g}{r.e_t_mean:>12.6g}{r.rpe_t:>12.6g}{r.rpe_r:>12.6g}")
    if args.json_out:
        stage("write outputs")
        args.json_out.write_text(
            json.dumps({"epsilon": epsilon, **{k: v.to_dict() for k, v in rows.items()}},
                       indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_synth(args, stage: _Stage) -> int:
    stage("generate")
    spec = SceneSpec(num_regions=args.regions, points_per_region=args.points_per_region,
                     noise_sigma=args.noise, outlier_fraction=args.outlier_fraction,
                     num_cameras=args.cameras, width=args.width, height=args.height,
                     seed=args.seed)
    bundle = generate(spec)
    stage("write outputs")
    for path in write_bundle(bundle, args.out):
        print(path)
    return EXIT_OK


_COMMANDS = {"align": cmd_align, "eval-pose": cmd_eval_pose, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose else logging.WARNING)
    stage = _Stage()
    try:
        return _COMMANDS[args.command](args, stage)
    except _IO_ERRORS as exc:
        code = EXIT_IO
        msg = exc
    except _GEOMETRY_ERRORS as exc:
        code = EXIT_DEGENERATE
        msg = exc
    except (errors.SfmFuseError, ValueError) as exc:
        code = EXIT_USAGE
        msg = exc
    print(f"sfmfuse {args.command}: {stage.name} failed: {type(msg).__name__}: {msg}",
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
