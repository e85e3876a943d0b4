"""Command-line entry point: build, localize, plan, synth, stats, export.

Exit status is 0 on success, 2 on usage, configuration or parse errors and
3 when a route query has no solution. Logs go to standard error; reports are
printed as JSON on standard output.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from .errors import ConfigurationError, RoadAtlasError
from .models import (
    BuildMapRequest,
    ExportMapRequest,
    LocalizeRequest,
    PlanRouteRequest,
    RunConfig,
    SimulateSceneRequest,
)
from .service import RoadAtlasService
from .version import __version__

logger = logging.getLogger("road-atlas")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NO_SOLUTION = 3

# flag -> RunConfig field
CONFIG_FLAGS = {
    "resolution": float,
    "radius": float,
    "width": int,
    "n_segments": int,
    "z_low": float,
    "z_high": float,
    "ransac_threshold": float,
    "max_plane_angle": float,
    "max_step_height": float,
    "sector_rows": int,
    "sector_cols": int,
    "sector_row_step": int,
    "sector_col_step": int,
    "epsilon": float,
    "sigma_slope": float,
    "sigma_floor": float,
    "p_hit": float,
    "p_miss": float,
    "max_step": float,
    "loc_radius": float,
    "threads": int,
    "seed": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for name, kind in CONFIG_FLAGS.items():
        field = RunConfig.model_fields[name]
        default = "env/1" if field.default_factory is not None else field.default
        parser.add_argument(
            "--" + name.replace("_", "-"),
            type=kind,
            default=None,
            help=f"{field.description} (default: {default})",
        )


def _numbers(text: str, count: int, what: str) -> List[float]:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as err:
        raise ConfigurationError(f"{what}: not a number list: {text!r}") from err
    if len(values) != count:
        raise ConfigurationError(f"{what}: expected {count} numbers, got {len(values)}")
    return values


def run_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, Any] = {
        name: getattr(args, name)
        for name in CONFIG_FLAGS
        if getattr(args, name, None) is not None
    }
    try:
        return RunConfig(**values)
    except ValidationError as err:
        raise ConfigurationError(f"Invalid configuration: {err}") from err


def _print(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2))


def cmd_build(service: RoadAtlasService, args: argparse.Namespace) -> int:
    request = BuildMapRequest(
        frames_dir=args.frames,
        poses_file=args.poses,
        output_path=args.out,
        config=run_config(args),
    )
    _print(service.build_map(request))
    return EXIT_OK


def cmd_localize(service: RoadAtlasService, args: argparse.Namespace) -> int:
    request = LocalizeRequest(
        map_path=args.map,
        frames_dir=args.frames,
        initial_pose=_numbers(args.init, 7, "--init"),
        output_path=args.out,
        truth_file=args.truth,
        config=run_config(args),
    )
    _print(service.localize(request).model_dump())
    return EXIT_OK


def cmd_plan(service: RoadAtlasService, args: argparse.Namespace) -> int:
    config = run_config(args)
    request = PlanRouteRequest(
        map_path=args.map,
        start=_numbers(args.start, 3, "--start"),
        goal=_numbers(args.goal, 3, "--goal"),
        output_path=args.out,
        max_step=config.planner().max_step,
    )
    result = service.plan(request)
    _print(result)
    return EXIT_OK if result["path"] is not None else EXIT_NO_SOLUTION


def cmd_synth(service: RoadAtlasService, args: argparse.Namespace) -> int:
    request = SimulateSceneRequest(
        scene=args.scene, trajectory_file=args.trajectory, output_dir=args.out
    )
    _print(service.synthesize(request))
    return EXIT_OK


def cmd_stats(service: RoadAtlasService, args: argparse.Namespace) -> int:
    _print(service.map_stats(args.map).model_dump())
    return EXIT_OK


def cmd_export(service: RoadAtlasService, args: argparse.Namespace) -> int:
    out = args.out if args.out else f"{args.map}.{args.format}"
    request = ExportMapRequest(map_path=args.map, output_path=out, format=args.format)
    _print(service.export(request))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="road-atlas", description="Build, store and query LiDAR road atlases."
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level on standard error",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build", help="Integrate posed frames into a map file")
    build.add_argument("--frames", required=True, help="Directory of .bin frames")
    build.add_argument("--poses", required=True, help="Pose file, 12 numbers per line")
    build.add_argument("--out", required=True, help="Output .lra map")
    _add_config_flags(build)
    build.set_defaults(handler=cmd_build)

    localize = sub.add_parser("localize", help="Track frames against a map")
    localize.add_argument("--map", required=True, help="Map file")
    localize.add_argument("--frames", required=True, help="Directory of .bin frames")
    localize.add_argument(
        "--init", required=True, help='Initial pose "x y z qx qy qz qw"'
    )
    localize.add_argument("--out", required=True, help="Trajectory output file")
    localize.add_argument(
        "--truth", default=None, help="Ground-truth pose file for RMSE"
    )
    _add_config_flags(localize)
    localize.set_defaults(handler=cmd_localize)

    plan = sub.add_parser(
        "plan", help="Route between two points over traversable layers"
    )
    plan.add_argument("--map", required=True, help="Map file")
    plan.add_argument("--start", required=True, help='Start "x y z"')
    plan.add_argument("--goal", required=True, help='Goal "x y z"')
    plan.add_argument("--out", default=None, help="Waypoint output file")
    _add_config_flags(plan)
    plan.set_defaults(handler=cmd_plan)

    synth = sub.add_parser("synth", help="Simulate a scene along a trajectory")
    synth.add_argument(
        "--scene", required=True, help="Library scene name or scene .json"
    )
    synth.add_argument("--trajectory", required=True, help="Pose file of sensor poses")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.set_defaults(handler=cmd_synth)

    stats = sub.add_parser("stats", help="Storage report of a map")
    stats.add_argument("--map", required=True, help="Map file")
    stats.set_defaults(handler=cmd_stats)

    export = sub.add_parser("export", help="Export a map as an ASCII point file")
    export.add_argument("--map", required=True, help="Map file")
    export.add_argument("--format", required=True, help="pcd or ply")
    export.add_argument("--out", default=None, help="Output file (default: MAP.FORMAT)")
    export.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        force=True,
    )
    if getattr(args, "format", "pcd") not in ("pcd", "ply"):
        logger.error("Unknown export format: %s", args.format)
        return EXIT_USAGE

    service = RoadAtlasService()
    try:
        return args.handler(service, args)
    except (RoadAtlasError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
