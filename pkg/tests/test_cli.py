"""Tests for the road-atlas command line."""

import json
from pathlib import Path

import pytest

from road_atlas.cli import (
    EXIT_NO_SOLUTION,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    main,
    run_config,
)
from road_atlas.errors import ConfigurationError
from road_atlas.service import RoadAtlasService
from road_atlas.version import __version__


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["build", "--frames", "f"]) == EXIT_USAGE
    assert main(["stats", "--map", "m.lra", "--bogus"]) == EXIT_USAGE


def test_build_stats_export(tmp_path, capsys, yard_run):
    out = tmp_path / "map.lra"
    argv = [
        "build",
        "--frames",
        yard_run["frames"],
        "--poses",
        yard_run["poses"],
        "--out",
        str(out),
        "--width",
        "360",
    ]
    assert main(argv) == EXIT_OK
    built = _json(capsys)
    assert built["frames"] == 3
    assert out.stat().st_size == built["bytes"]

    assert main(["stats", "--map", str(out)]) == EXIT_OK
    assert _json(capsys)["serialized_bytes"] == built["bytes"]

    assert main(["export", "--map", str(out), "--format", "ply"]) == EXIT_OK
    exported = _json(capsys)
    assert exported["output_path"] == f"{out}.ply"
    assert Path(exported["output_path"]).read_text().startswith("ply\n")

    assert main(["export", "--map", str(out), "--format", "xyz"]) == EXIT_USAGE


def test_plan_exit_codes(capsys, overpass_map):
    plan = ["plan", "--map", overpass_map]
    base = plan + ["--start", "0.5 0.5 0", "--goal", "0.5,-4.5,5"]
    assert main(base) == EXIT_OK
    assert _json(capsys)["result"] == "ok"
    assert main(base + ["--max-step", "0.2"]) == EXIT_NO_SOLUTION
    assert _json(capsys)["result"] == "no_path"
    assert main(plan + ["--start", "0 0", "--goal", "1 1 0"]) == EXIT_USAGE
    # off the map
    assert main(plan + ["--start", "500 0 0", "--goal", "1 1 0"]) == EXIT_USAGE


def test_missing_map(tmp_path):
    assert main(["stats", "--map", str(tmp_path / "none.lra")]) == EXIT_USAGE


def test_service_failure_is_reported(mocker, empty_map):
    failing = mocker.patch.object(
        RoadAtlasService, "map_stats", side_effect=OSError("disk gone")
    )
    assert main(["stats", "--map", empty_map]) == EXIT_USAGE
    failing.assert_called_once_with(empty_map)


def test_run_config_from_flags():
    args = build_parser().parse_args(
        ["build", "--frames", "f", "--poses", "p", "--out", "o", "--n-segments", "16"]
    )
    assert run_config(args).n_segments == 16
    bad = build_parser().parse_args(
        ["build", "--frames", "f", "--poses", "p", "--out", "o", "--resolution", "-1"]
    )
    with pytest.raises(ConfigurationError, match="Invalid configuration"):
        run_config(bad)


def test_detector_flags():
    args = build_parser().parse_args(
        [
            "build",
            "--frames",
            "f",
            "--poses",
            "p",
            "--out",
            "o",
            "--max-plane-angle",
            "0.3",
            "--max-step-height",
            "0.2",
            "--sector-rows",
            "8",
            "--sector-cols",
            "40",
            "--sector-row-step",
            "4",
            "--sector-col-step",
            "20",
        ]
    )
    detection = run_config(args).detection()
    assert detection.max_plane_angle == 0.3
    assert detection.max_step_height == 0.2
    assert (detection.sector_rows, detection.sector_cols) == (8, 40)
    assert (detection.sector_row_step, detection.sector_col_step) == (4, 20)

    zero = build_parser().parse_args(
        ["build", "--frames", "f", "--poses", "p", "--out", "o", "--sector-cols", "0"]
    )
    with pytest.raises(ConfigurationError):
        run_config(zero)


def test_synth_and_localize(tmp_path, capsys, yard_run, yard_map):
    out = tmp_path / "synth"
    argv = ["synth", "--scene", yard_run["scene"], "--trajectory", yard_run["poses"]]
    assert main(argv + ["--out", str(out)]) == EXIT_OK
    assert _json(capsys)["frames"] == 3
    assert len(list((out / "frames").iterdir())) == 3

    trajectory = tmp_path / "trajectory.txt"
    argv = [
        "localize",
        "--map",
        yard_map,
        "--frames",
        str(out / "frames"),
        "--init",
        "0 0 1.8 0 0 0 1",
        "--out",
        str(trajectory),
        "--truth",
        yard_run["poses"],
        "--width",
        "360",
    ]
    assert main(argv) == EXIT_OK
    report = _json(capsys)
    assert report["frames"] == 3
    assert report["translation_rmse"] is not None
    assert len(trajectory.read_text().splitlines()) == 3

    short_init = argv[:5] + ["--init", "0 0 1.8", "--out", str(trajectory)]
    assert main(short_init) == EXIT_USAGE
