"""Tests for toricray.io module."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from toricray.core.grid import GridFn
from toricray.errors import ConfigError
from toricray.io import (
    INFINITE_LIFESPAN,
    MANIFEST_NAME,
    TIMING_NAME,
    OutputDir,
    RunManifest,
    format_float,
    jsonable,
    lifespan_value,
    read_gridfn,
    write_csv,
    write_gridfn,
)


class TestFormatting:
    """Tests for number formatting and JSON conversion."""

    @pytest.mark.parametrize("value", [0.1, 1.0 / 3.0, 2.0**-40, 123456.789])
    def test_float_round_trips(self, value: float) -> None:
        assert float(format_float(value)) == value

    def test_jsonable(self) -> None:
        obj = {
            "a": np.arange(3),
            "b": np.float64(np.inf),
            "c": float("nan"),
            "d": np.bool_(True),
            "e": (np.int64(4), Path("x/y")),
        }
        expected = {"a": [0, 1, 2], "b": "inf", "c": "nan", "d": True, "e": [4, "x/y"]}
        assert jsonable(obj) == expected

    def test_lifespan_value(self) -> None:
        assert lifespan_value(1.5) == 1.5
        assert lifespan_value(np.inf) == INFINITE_LIFESPAN

    def test_csv_cells(self, tmp_path: Path) -> None:
        rows = [[1, True, 0.5], [2, np.bool_(False), 0.1]]
        path = write_csv(tmp_path / "t.csv", ["k", "ok", "v"], rows)
        lines = path.read_text().splitlines()
        assert lines == ["k,ok,v", "1,true,0.5", "2,false,0.10000000000000001"]


class TestGridFiles:
    """Tests for the GridFn header/body format."""

    def test_round_trip_2d(self, tmp_path: Path) -> None:
        f = GridFn.from_function(lambda a, b: a**2 + 0.3 * b, [[0, 1], [-1, 2]], (6, 7))
        header, body = write_gridfn(tmp_path / "u0", f)
        assert header.name == "u0.json"
        assert body.read_text().splitlines()[0] == "x_1,x_2,value"
        back = read_gridfn(header)
        assert back.shape == (6, 7)
        assert back.box == f.box
        assert_allclose(back.values, f.values, rtol=0, atol=0)

    def test_header_fields(self, tmp_path: Path) -> None:
        f = GridFn.from_function(lambda y: y**2, [0, 1], 11, convex_hint=True)
        header, _ = write_gridfn(tmp_path / "g", f)
        meta = json.loads(header.read_text())
        assert meta["shape"] == [11]
        assert meta["convex_hint"] is True
        assert meta["body"] == "g.csv"
        assert read_gridfn(header).convex_hint

    def test_missing_header(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="cannot read grid header"):
            read_gridfn(tmp_path / "none.json")

    def test_header_without_shape(self, tmp_path: Path) -> None:
        path = tmp_path / "h.json"
        path.write_text(json.dumps({"box": [[0, 1]]}))
        with pytest.raises(ConfigError, match="lacks 'shape'"):
            read_gridfn(path)

    def test_body_mismatch(self, tmp_path: Path) -> None:
        f = GridFn.from_function(lambda y: y, [0, 1], 11)
        header, _ = write_gridfn(tmp_path / "g", f)
        meta = json.loads(header.read_text())
        meta["shape"] = [12]
        header.write_text(json.dumps(meta))
        with pytest.raises(ConfigError, match="expected 12 rows"):
            read_gridfn(header)


class TestManifest:
    """Tests for RunManifest and OutputDir."""

    def test_checks(self) -> None:
        manifest = RunManifest(command="ray", version="0.1.0", config={})
        assert manifest.passed
        manifest.check("a", True)
        assert manifest.exit_code == 0
        manifest.check("b", False)
        assert not manifest.passed
        assert manifest.exit_code == 1
        assert manifest.to_dict()["checks"] == {"a": True, "b": False}

    def test_output_dir_tracks_artifacts(self, tmp_path: Path) -> None:
        out = OutputDir(tmp_path / "run")
        out.json("result.json", {"x": 1})
        out.csv("sub/table.csv", ["a"], [[1]])
        out.json("result.json", {"x": 2})
        manifest = RunManifest(command="ray", version="0.1.0", config={})
        path = out.manifest(manifest)
        assert path.name == MANIFEST_NAME
        written = json.loads(path.read_text())
        assert written["artifacts"] == ["result.json", "sub/table.csv"]
        assert written["passed"] is True

    def test_timing_kept_out_of_manifest(self, tmp_path: Path) -> None:
        texts = []
        for k, seconds in enumerate((0.5, 7.25)):
            out = OutputDir(tmp_path / f"run{k}")
            out.json("result.json", {"x": 1})
            manifest = RunManifest(command="ray", version="0.1.0", config={}, wall_clock=seconds)
            texts.append(out.manifest(manifest).read_text())
            timing = json.loads((tmp_path / f"run{k}" / TIMING_NAME).read_text())
            assert timing == {"command": "ray", "wall_clock": seconds}
            assert TIMING_NAME not in manifest.artifacts
        assert texts[0] == texts[1]
        assert "wall_clock" not in json.loads(texts[0])
