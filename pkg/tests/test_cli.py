import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_site
from spatialcox import io as sio
from spatialcox.cli import main
from spatialcox.survival_core import SiteSurvivalData

TINY_STUDY = {
    "name": "tiny",
    "coefficient_pattern": [{"kind": "null"}, {"kind": "static", "value": 1.0},
                            {"kind": "varying", "mean": 1.0, "decay": 1.0}],
    "graph": {"lattice": [3, 3]},
    "per_site_n": 40,
    "replications": 3,
    "chain": {"n_iter": 40, "burn_in": 20, "thin": 5},
}


def separated(rng, site_id):
    """Earliest half of the deaths all have x1 = 1: the likelihood is monotone."""
    x = np.column_stack([np.repeat([1.0, 0.0], 20), rng.normal(size=40)])
    return SiteSurvivalData(site_id, np.arange(1.0, 41.0), np.ones(40, dtype=int), x)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_STUDY))
    return path


class TestUsage:
    def test_select_requires_stage1(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["select", "--graph", "g.txt", "--out-dir", str(tmp_path)])
        assert exc.value.code == 1
        assert "--stage1" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["fit-sites", "--data", "d.csv", "--out-dir", str(tmp_path), "--bogus"])
        assert exc.value.code == 1

    def test_subprocess_exit_code(self):
        proc = subprocess.run([sys.executable, "-m", "spatialcox", "select"],
                              capture_output=True, text=True)
        assert proc.returncode == 1 and "usage" in proc.stderr

    def test_missing_input_file(self, tmp_path, capsys):
        assert main(["fit-sites", "--data", str(tmp_path / "none.csv"),
                     "--out-dir", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_preset_and_config_exclusive(self, tmp_path, tiny_config):
        assert main(["simulate", "--preset", "study1-desk", "--config", str(tiny_config),
                     "--out-dir", str(tmp_path)]) == 1


class TestFitSites:
    def test_pathological_site_is_excluded(self, rng, tmp_path):
        sites = [random_site(rng, 40, 2, site_id="a"), separated(rng, "b"),
                 random_site(rng, 40, 2, site_id="c")]
        sio.write_dataset(sites, tmp_path / "d.csv")
        assert main(["fit-sites", "--data", str(tmp_path / "d.csv"),
                     "--out-dir", str(tmp_path)]) == 0
        doc = sio.load_stage1(tmp_path / "stage1.json")
        assert [r.site_id for r in doc.sites if r.excluded] == ["b"]
        assert (tmp_path / "manifest.json").exists()

    def test_all_sites_excluded(self, rng, tmp_path, capsys):
        sio.write_dataset([separated(rng, "x"), separated(rng, "y")], tmp_path / "d.csv")
        assert main(["fit-sites", "--data", str(tmp_path / "d.csv"),
                     "--out-dir", str(tmp_path)]) == 2
        assert "numerical failure" in capsys.readouterr().err


class TestPipeline:
    def test_simulate_fit_select_evaluate(self, tmp_path, tiny_config):
        """Runs the installed entry point end to end in subprocesses."""
        def run(*args):
            proc = subprocess.run([sys.executable, "-m", "spatialcox", *args],
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            return proc

        sim, fit, sel, ev = (tmp_path / d for d in ("sim", "fit", "sel", "ev"))
        run("simulate", "--config", str(tiny_config), "--seed", "3", "--out-dir", str(sim))
        run("fit-sites", "--data", str(sim / "dataset.csv"), "--graph", str(sim / "graph.txt"),
            "--out-dir", str(fit))
        cfg = tmp_path / "sel.json"
        cfg.write_text(json.dumps({"chain": {"n_iter": 40, "burn_in": 20, "thin": 5}}))
        run("select", "--stage1", str(fit / "stage1.json"), "--graph", str(sim / "graph.txt"),
            "--config", str(cfg), "--seed", "1", "--draws-format", "csv", "--out-dir", str(sel))
        for name in ("draws.csv", "summary.json", "report.json", "site_coefficients.csv",
                     "manifest.json"):
            assert (sel / name).exists(), name
        run("evaluate", "--report", str(sel / "report.json"), "--truth", str(sim / "truth.json"),
            "--summary", str(sel / "summary.json"), "--out-dir", str(ev))
        metrics = sio.load_json(ev / "metrics.json", "spatialcox.metrics")
        assert set(metrics["metrics"]) == {"significance", "spatial"}
        assert len(metrics["average_mse"]) == 3
        draws = sio.load_draws(sel / "draws.csv")
        assert draws.n_draws == 4 and draws.p == 3


class TestReplicate:
    FILES = ("aggregate.csv", "coefficients.csv", "replications.csv", "aggregate.json")

    def test_workers_byte_identical(self, tmp_path, tiny_config):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["replicate", "--config", str(tiny_config), "--seed", "4",
                     "--workers", "1", "--out-dir", str(a)]) == 0
        assert main(["replicate", "--config", str(tiny_config), "--seed", "4",
                     "--workers", "2", "--out-dir", str(b)]) == 0
        for name in self.FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        manifest = sio.load_json(a / "manifest.json", sio.MANIFEST)
        assert manifest["seed"] == 4 and manifest["command"] == "replicate"

    def test_replication_count_override(self, tmp_path, tiny_config):
        assert main(["replicate", "--config", str(tiny_config), "--replications", "2",
                     "--out-dir", str(tmp_path)]) == 0
        lines = (tmp_path / "replications.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2
