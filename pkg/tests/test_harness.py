import json
import os

import numpy as np
import pytest

from coarsenlab import cli, initial_data
from coarsenlab.harness import run_experiment, tail_quantile_probes


def _read_header(path):
    with open(path) as fh:
        return fh.readline().strip()


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


class TestTailProbes:
    def test_probes_hit_levels(self):
        tail = initial_data.exponential_moment()
        probes = tail_quantile_probes(tail, n=8)
        assert np.all(np.diff(probes) > 0)
        levels = tail.n0 * np.arange(8, 0, -1) / 9.0
        assert np.allclose(tail.w0(probes), levels, atol=1e-8)


class TestConfigErrors:
    def test_unknown_kind(self, tmp_path):
        assert run_experiment({"kind": "nope"}, str(tmp_path)) == 2

    def test_bad_eps(self, tmp_path):
        cfg = {"kind": "diffusive", "eps": -1.0, "t_end": 1.0}
        assert run_experiment(cfg, str(tmp_path)) == 2

    def test_bad_bd_initial(self, tmp_path):
        cfg = {
            "kind": "bd",
            "initial": {"kind": "bins", "entries": [[1, 1.0]]},
        }
        assert run_experiment(cfg, str(tmp_path)) == 2


class TestSolverFailure:
    def test_saturated_bd_run(self, tmp_path):
        # mass parked at the truncation cutoff trips the saturation monitor
        cfg = {
            "kind": "bd",
            "ell_max": 20,
            "closure": {"type": "dirichlet"},
            "initial": {"kind": "bins", "entries": [[15, 1.0]]},
            "t_end": 20.0,
        }
        assert run_experiment(cfg, str(tmp_path)) == 3
        summary = json.load(open(tmp_path / "summary.json"))
        assert "error" in summary


class TestBdExperiment:
    def test_artifacts_and_checks(self, tmp_path):
        cfg = {
            "kind": "bd",
            "ell_max": 300,
            "closure": {"type": "dirichlet"},
            "initial": {"kind": "bins",
                        "entries": [[ell, 1.0] for ell in range(2, 21)]},
            "t_end": 5.0,
            "output_stride": 0.5,
        }
        code = run_experiment(cfg, str(tmp_path))
        assert code == 0
        assert _read_header(tmp_path / "series.csv") == "t,mass,c1,g,Lambda"
        snaps = sorted(os.listdir(tmp_path / "snapshots"))
        assert snaps
        assert _read_header(tmp_path / "snapshots" / snaps[0]) == "t,ell,c"
        summary = json.load(open(tmp_path / "summary.json"))
        assert summary["all_passed"]
        names = {c["name"] for c in summary["checks"]}
        assert {"mass_conservation", "c1_above_saturation",
                "g_strictly_decreasing"} <= names

    def test_equilibrium_initial_full_closure(self, tmp_path):
        cfg = {
            "kind": "bd",
            "ell_max": 100,
            "closure": {"type": "full"},
            "initial": {"kind": "equilibrium", "c1": 0.9},
            "t_end": 2.0,
        }
        assert run_experiment(cfg, str(tmp_path)) == 0


class TestClassicalExperiment:
    def test_artifacts_and_checks(self, tmp_path):
        cfg = {"kind": "classical", "t_end": 0.25}
        assert run_experiment(cfg, str(tmp_path)) == 0
        assert _read_header(tmp_path / "series.csv") == "t,L,Lambda,N,mass_residual"
        snaps = sorted(os.listdir(tmp_path / "snapshots"))
        assert _read_header(tmp_path / "snapshots" / snaps[0]) == "t,x,w"
        summary = json.load(open(tmp_path / "summary.json"))
        assert summary["all_passed"]


class TestDiffusiveExperiment:
    def test_artifacts_and_checks(self, tmp_path):
        cfg = {
            "kind": "diffusive", "eps": 0.25, "t_end": 1.0,
            "n_cells": 128, "snapshot_times": [0.5],
        }
        assert run_experiment(cfg, str(tmp_path)) == 0
        assert _read_header(tmp_path / "series.csv") == \
            "t,L,Lambda,E,M,N,mass_residual"
        snaps = sorted(os.listdir(tmp_path / "snapshots"))
        assert _read_header(tmp_path / "snapshots" / snaps[0]) == "t,x_center,c"
        summary = json.load(open(tmp_path / "summary.json"))
        assert summary["all_passed"]


class TestMcExperiment:
    def test_small_run(self, tmp_path):
        cfg = {
            "kind": "mc-check", "eps": 0.25, "T": 0.25, "n_paths": 20_000,
            "dt": 2e-3, "n_cells": 512, "probes": [0.5, 1.0, 2.0],
            "seed": 5,
        }
        assert run_experiment(cfg, str(tmp_path)) == 0
        records = json.load(open(tmp_path / "mc_estimates.json"))
        assert len(records) == 3
        assert all(0.0 <= r["mean"] <= 1.0 for r in records)


class TestDualityExperiment:
    def test_small_run(self, tmp_path):
        cfg = {
            "kind": "duality", "eps": 0.25, "T": 0.5, "n_cells": 256,
            "tolerance": 1e-4,
        }
        assert run_experiment(cfg, str(tmp_path)) == 0
        summary = json.load(open(tmp_path / "summary.json"))
        assert set(summary["details"]["residuals"]) == {
            "one", "cuberoot", "indicator"
        }


class TestDeterminism:
    def test_bit_identical_rerun(self, tmp_path):
        cfg = {
            "kind": "diffusive", "eps": 0.25, "t_end": 0.5,
            "n_cells": 128, "snapshot_times": [0.25],
        }
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_experiment(dict(cfg), str(a)) == 0
        assert run_experiment(dict(cfg), str(b)) == 0
        ta, tb = _tree_bytes(a), _tree_bytes(b)
        assert ta.keys() == tb.keys()
        assert all(ta[k] == tb[k] for k in ta)


class TestCli:
    def test_end_to_end(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"t_end": 0.2}))
        out = tmp_path / "out"
        code = cli.main(["classical", "--config", str(cfg_path),
                         "--out", str(out)])
        assert code == 0
        assert (out / "summary.json").exists()
        assert (out / "config.json").exists()

    def test_missing_config_file(self, tmp_path):
        code = cli.main(["classical", "--config", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "out")])
        assert code == 2

    def test_rejects_unknown_kind(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["banana", "--config", "x", "--out", "y"])
