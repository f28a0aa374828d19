import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nharm import io, tasks
from nharm.cli import execute, exit_code, main
from nharm.config import THREADS_ENV, build_config, load_config_file, resolve_threads
from nharm.errors import ConfigError, DegreeAmbiguousError, NumericalError, PreconditionError
from nharm.fields import MapField
from nharm.mobius import MobiusMap


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


class TestFiles:
    def test_mesh_round_trip(self, coarse_ball, tmp_path):
        path = tmp_path / "m.txt"
        io.write_mesh(coarse_ball, path)
        dom, u, meta = io.read_mesh(path)
        assert u is None and meta == {}
        assert np.array_equal(dom.vertices, coarse_ball.vertices)
        assert np.array_equal(dom.simplices, coarse_ball.simplices)
        assert len(dom.boundary_faces) == len(coarse_ball.boundary_faces)

    def test_field_round_trip(self, coarse_ball, tmp_path):
        path = tmp_path / "f.txt"
        m = MobiusMap.centred(np.array([0.1, -0.2, 0.3]))
        u = MapField.from_function(coarse_ball, m.apply, claimed_degree=1, normalize_boundary=True)
        io.write_mesh(coarse_ball, path, u, {"p": 3.1})
        _, v, meta = io.read_mesh(path)
        assert np.array_equal(v.values, u.values)
        assert v.claimed_degree == 1 and v.boundary_unit_norm
        assert meta["p"] == "3.1"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("mesh 3\n")
        with pytest.raises(ConfigError):
            io.read_mesh(path)
        with pytest.raises(ConfigError):
            io.read_mesh(tmp_path / "missing.txt")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
    def test_csv_floats_round_trip(self, xs):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "t.csv"
            io.write_csv(path, [{"i": i, "x": x} for i, x in enumerate(xs)])
            with open(path) as fh:
                back = [float(r["x"]) for r in csv.DictReader(fh)]
        assert back == xs

    def test_json_handles_numpy(self, tmp_path):
        path = tmp_path / "d.json"
        io.write_json(path, {"a": np.arange(3), "b": np.float64(0.5), "c": np.bool_(True), "d": float("inf")})
        doc = json.loads(path.read_text())
        assert doc == {"a": [0, 1, 2], "b": 0.5, "c": True, "d": "inf"}


class TestConfig:
    def test_flag_beats_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2
        monkeypatch.delenv(THREADS_ENV)
        assert resolve_threads(None) == 1

    @pytest.mark.parametrize("raw", [{"n": "5"}, {"h": "0.9"}, {"speed": "1"}, {"n": "three"}, {"a": "0.1,0.2"}])
    def test_rejections(self, raw):
        with pytest.raises(ConfigError):
            build_config("mobius-energy", raw, "out")

    def test_ranges_and_lists(self):
        cfg = build_config("trace-const", {"k": "2..4"}, "out")
        assert cfg.params["k"] == [2, 3, 4]
        cfg = build_config("neck", {"r": "0.2, 0.1"}, "out")
        assert cfg.params["r"] == [0.2, 0.1]

    def test_config_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        path = tmp_path / "run.ini"
        path.write_text("[run]\nsubcommand = trace-const\nthreads = 2\n\n[trace-const]\nk = 1,2\ncells = 200\n")
        cfg = load_config_file(path, tmp_path / "o")
        assert cfg.subcommand == "trace-const" and cfg.threads == 2
        assert cfg.params["k"] == [1, 2] and cfg.params["cells"] == 200
        assert load_config_file(path, tmp_path / "o", threads=4).threads == 4

    @pytest.mark.parametrize("text", [
        "[trace-const]\nk = 1\n",
        "[run]\nsubcommand = trace-const\ncolour = red\n",
        "[run]\nsubcommand = trace-const\n[neck]\nr = 0.1\n",
        "[run]\nsubcommand = trace-const\n[trace-const]\nk = one\n",
    ])
    def test_bad_config_files(self, tmp_path, text):
        path = tmp_path / "run.ini"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config_file(path)


class TestExitCodes:
    def test_mapping(self):
        assert exit_code(ConfigError("x")) == 2
        assert exit_code(PreconditionError("x")) == 3
        assert exit_code(NumericalError("x")) == 4
        assert exit_code(DegreeAmbiguousError("x")) == 4

    def test_success(self, tmp_path):
        assert run(tmp_path, "trace-const", "--k", "1,2", "--cells", "200") == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary) == {"subcommand", "config", "results", "warnings", "timings"}
        assert [r["k"] for r in summary["results"]["rows"]] == [1, 2]

    def test_config_error(self, tmp_path):
        assert run(tmp_path, "trace-const", "--n", "1.5") == 2
        assert run(tmp_path, "trace-const", "--colour", "red") == 2
        assert main(["no-such-command"]) == 2

    def test_precondition(self, tmp_path):
        assert run(tmp_path, "mobius-energy", "--a", "1.2,0,0", "--h", "0.3") == 3
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["partial"] and manifest["exit_status"] == 3
        assert manifest["error"].startswith("PreconditionError")
        assert not (tmp_path / "summary.json").exists()

    def test_numerical(self, tmp_path, monkeypatch):
        def failing(p, ctx):
            ctx.table("partial.csv", [{"x": 1.0}])
            raise NumericalError("did not converge")

        monkeypatch.setitem(tasks.TASKS, "trace-const", failing)
        assert run(tmp_path, "trace-const") == 4
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["partial"] and "partial.csv" in manifest["artifacts"]

    def test_run_config_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[run]\nsubcommand = trace-const\n\n[trace-const]\nk = 3\ncells = 300\n")
        out = tmp_path / "o"
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        assert (out / "trace_constants.csv").exists()
        assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


class TestManifest:
    def test_contents(self, tmp_path, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "2")
        assert run(tmp_path, "mesh", "--h", "0.4") == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["threads"] == 2
        assert set(manifest["artifacts"]) == {"mesh.txt", "summary.json"}
        assert manifest["wall_time"] > 0 and "mesh" in manifest["timings"]
        assert manifest["mesh"]["domain"]["vertices"] > 0
        assert set(manifest["versions"]) >= {"nharm", "numpy", "scipy", "python"}
        import hashlib

        digest = hashlib.sha256((tmp_path / "mesh.txt").read_bytes()).hexdigest()
        assert manifest["artifacts"]["mesh.txt"] == digest

    def test_summary_has_no_wall_clock(self, tmp_path):
        assert run(tmp_path, "mesh", "--h", "0.4") == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["timings"]["recorded_in"] == "manifest.json"
        assert all(isinstance(s, str) for s in summary["timings"]["stages"])

    def test_execute_returns_status(self, tmp_path):
        cfg = build_config("trace-const", {"k": "1", "cells": "100"}, tmp_path, 1)
        assert execute(cfg) == 0


@pytest.mark.parametrize("args", [
    ["degree", "--h", "0.3", "--field", "mobius"],
    ["price", "--family", "perturbation", "--k", "1..4"],
    ["neck", "--domain", "perturbed", "--r", "0.1,0.05"],
    ["sphere-decompose", "--h", "0.3"],
])
def test_subcommands_run(tmp_path, args):
    assert run(tmp_path, *args) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["subcommand"] == args[0]
