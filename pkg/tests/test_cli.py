import json
import os
import subprocess
import sys

import numpy as np
import pytest

from carnotflow.cli import main
from carnotflow.groups import make_heisenberg

HEIS_SMALL = {"group": "heisenberg:1", "grid": {"v_half": 1, "z_half": 1, "nv": 9}, "T_end": 0.01}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return str(p)


def go(tmp_path, cmd, cfg, *extra, out="out"):
    code = main([cmd, "--config", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])
    summary = tmp_path / out / "summary.json"
    return code, (json.loads(summary.read_text()) if summary.exists() else None)


class TestSimulate:
    def test_grim_reaper_defaults(self, tmp_path):
        cfg = {"group": "euclidean:1", "initial": "grim_reaper"}
        code, s = go(tmp_path, "simulate", cfg)
        assert code == 0 and s["final_error"] <= 1e-3 and s["config"] == cfg
        assert s["final_time"] == 0.1

    def test_zero_time(self, tmp_path):
        code, s = go(tmp_path, "simulate", {"group": "euclidean:1", "initial": "grim_reaper", "T_end": 0})
        snaps = [f for f in os.listdir(tmp_path / "out") if f.startswith("snap_")]
        assert code == 0 and len(snaps) == 1 and s["snapshots"] == 1

    def test_polynomial_initial(self, tmp_path):
        cfg = dict(HEIS_SMALL, initial={"polynomial": [[1, [2, 0, 0]], [1, [0, 2, 0]], [0.1, [0, 0, 2]]]}, boundary={"mode": "shifted", "rate": 1.0})
        code, s = go(tmp_path, "simulate", cfg)
        assert code == 0 and s["min_eig"] > 0

    def test_deterministic_bytes(self, tmp_path):
        cfg = dict(HEIS_SMALL, initial={"preset": "paraboloid", "z_coef": 0.1}, snapshot_times=[0.005], seed=3)
        go(tmp_path, "simulate", cfg, out="r1")
        go(tmp_path, "simulate", cfg, out="r2")
        files = sorted(f for f in os.listdir(tmp_path / "r1") if f.endswith(".csv"))
        assert len(files) == 4
        for f in files:
            assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()

    def test_solver_abort(self, tmp_path):
        cfg = dict(HEIS_SMALL, initial="paraboloid", max_steps=1)
        code, s = go(tmp_path, "simulate", cfg)
        assert code == 2 and s["status"] == "solver_abort"

    @pytest.mark.parametrize(
        "cfg,key",
        [
            ('{"group": "euclidean:1", "initial": "grim_reaper", T_end: 0}', "<json>"),
            ({"group": "euclidean:1", "initial": "grim_reaper", "bogus": 1}, "bogus"),
            ({"group": "lie:3", "initial": "paraboloid"}, "group"),
            ({"group": "heisenberg:1", "initial": "paraboloid"}, "grid"),
            (dict(HEIS_SMALL, initial="nope"), "initial.preset"),
            (dict(HEIS_SMALL, initial="paraboloid", T_end=-1), "T_end"),
            (dict(HEIS_SMALL, initial="paraboloid", dt_safety="x"), "dt_safety"),
            (dict(HEIS_SMALL, initial="paraboloid", boundary="exact"), "boundary"),
            (dict(HEIS_SMALL, initial="paraboloid", grid={"v_half": 1, "nv": 2}), "grid"),
            (dict(HEIS_SMALL, initial={"polynomial": [[1, [2, 0]]]}), "initial.polynomial"),
        ],
    )
    def test_config_errors(self, tmp_path, capsys, cfg, key):
        code, _ = go(tmp_path, "simulate", cfg)
        assert code == 64
        assert f"'{key}" in capsys.readouterr().err

    def test_htype_file(self, tmp_path):
        J = {"J": make_heisenberg(1).htype_J.tolist()}
        (tmp_path / "g.json").write_text(json.dumps(J))
        cfg = dict(HEIS_SMALL, group="htype:g.json", initial="htype_barrier", T_end=0.001)
        assert go(tmp_path, "simulate", cfg)[0] == 0


class TestVerify:
    def test_identities_and_cylinder(self, tmp_path):
        code, s = go(tmp_path, "verify", {"group": "heisenberg:1", "checks": ["htype_identities", "cylinder"], "R0": 1, "t": 0.25})
        assert code == 0
        assert s["checks"]["cylinder"]["report"]["residual"]["max_residual"] < 1e-9

    def test_barrier_failure(self, tmp_path):
        code, s = go(tmp_path, "verify", {"group": "heisenberg:1", "checks": ["barrier"], "barrier": {"eps0": 20, "N": 500}})
        rep = s["checks"]["barrier"]["report"]
        assert code == 1 and not rep["feasible"] and rep["witness"]["kind"] == "lower_bound"

    def test_grim_reaper(self, tmp_path):
        assert go(tmp_path, "verify", {"checks": ["grim_reaper"]})[0] == 0

    def test_unknown_check(self, tmp_path):
        assert go(tmp_path, "verify", {"group": "heisenberg:1", "checks": ["nope"]})[0] == 64

    def test_tol_override(self, tmp_path):
        code, _ = go(tmp_path, "verify", {"group": "heisenberg:1", "checks": ["htype_identities"]}, "--tol", "1e-30")
        assert code == 1


class TestCompare:
    SHARED = dict(HEIS_SMALL, snapshot_times=[0.005, 0.01])

    def test_identical(self, tmp_path):
        cfg = {"shared": self.SHARED, "a": {"initial": "paraboloid"}, "b": {"initial": "paraboloid"}}
        code, s = go(tmp_path, "compare", cfg)
        assert code == 0 and s["ordering"]["margin"] == 0

    def test_ordered_pair(self, tmp_path):
        cfg = {"shared": self.SHARED, "a": {"initial": "paraboloid"}, "b": {"initial": {"preset": "paraboloid", "quartic": 0.25}}}
        assert go(tmp_path, "compare", cfg)[0] == 0

    def test_swapped(self, tmp_path):
        cfg = {"shared": self.SHARED, "b": {"initial": "paraboloid"}, "a": {"initial": {"preset": "paraboloid", "quartic": 0.25}}}
        code, s = go(tmp_path, "compare", cfg)
        assert code == 1 and s["ordering"]["first_violation"] is not None

    def test_mismatch(self, tmp_path):
        cfg = {"shared": self.SHARED, "a": {"initial": "paraboloid"}, "b": {"initial": "paraboloid", "grid": {"v_half": 1, "nv": 7}}}
        assert go(tmp_path, "compare", cfg)[0] == 65

    def test_missing_run(self, tmp_path):
        assert go(tmp_path, "compare", {"a": dict(HEIS_SMALL, initial="paraboloid")})[0] == 64


def test_console_script(tmp_path):
    cfg = write(tmp_path, {"group": "euclidean:1", "initial": "grim_reaper", "T_end": 0})
    r = subprocess.run([sys.executable, "-m", "carnotflow.cli", "simulate", "--config", cfg, "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0 and "pass" in r.stdout
