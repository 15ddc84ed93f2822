import json

import pytest

import statfem.experiments
import statfem.fem
from statfem.cli import main
from statfem.errors import StatFEMError
from statfem.experiments import ScenarioReport
from statfem.report import emit_report, verify_manifest

BAR_CFG = {"scenario": "bar_homogeneous", "seed": 11, "geometry": {"n_elements": 16},
           "sensors": {"count": 17}, "observations": {"n_reads": [1, 20]}, "estimation": {"n_starts": 2}}
PLATE_CFG = {"scenario": "plate_selection", "seed": 3, "geometry": {"refinement": 1},
             "pc": {"order": 3, "n_samples": None}, "observations": {"n_reads": [5]},
             "estimation": {"n_starts": 2}}


@pytest.fixture
def bar_config(tmp_path):
    p = tmp_path / "bar.json"
    p.write_text(json.dumps(BAR_CFG))
    return p


@pytest.fixture
def plate_config(tmp_path):
    p = tmp_path / "plate.json"
    p.write_text(json.dumps(PLATE_CFG))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestHappyPaths:
    def test_mesh(self, capsys, bar_config, tmp_path):
        code, out, _ = run(capsys, "mesh", "--config", bar_config, "--out", tmp_path / "m")
        assert code == 0
        assert json.loads(out)["n_sensors"] == 17
        assert (tmp_path / "m" / "mesh.txt").exists()

    def test_offline_then_online(self, capsys, bar_config, tmp_path, monkeypatch):
        d = tmp_path / "run"
        assert run(capsys, "prior", "--config", bar_config, "--out", d)[0] == 0
        assert run(capsys, "observe", "--config", bar_config, "--out", d)[0] == 0

        def forbidden(*a, **k):
            raise AssertionError("infer must not run forward solves")
        for mod in (statfem.fem, statfem.experiments):
            monkeypatch.setattr(mod, "solve_linear_elastic", forbidden)
            monkeypatch.setattr(mod, "solve_st_venant", forbidden)

        code, out, err = run(capsys, "infer", "--config", bar_config, "--out", d / "infer",
                             "--prior", d / "prior_LE.json", "--observations", d / "observations.csv",
                             "--mesh", d / "mesh.txt")
        assert code == 0, err
        est = json.loads((d / "infer" / "hyperparameters.json").read_text())
        assert est["rho"] > 0 and est["l_d"] > 0
        assert run(capsys, "verify", d / "infer")[0] == 0

    def test_infer_matches_scenario(self, capsys, bar_config, tmp_path):
        d = tmp_path / "run"
        run(capsys, "prior", "--config", bar_config, "--out", d)
        run(capsys, "observe", "--config", bar_config, "--out", d)
        run(capsys, "infer", "--config", bar_config, "--out", d / "infer", "--prior", d / "prior_LE.json",
            "--observations", d / "observations.csv", "--mesh", d / "mesh.txt")
        assert run(capsys, "bar", "--config", bar_config, "--out", d / "bar")[0] == 0
        a = json.loads((d / "infer" / "hyperparameters.json").read_text())
        b = json.loads((d / "bar" / "hyperparameters_n20.json").read_text())
        for k in ("rho", "sigma_d", "l_d"):
            assert a[k] == pytest.approx(b[k], rel=1e-6)

    def test_select_on_plate(self, capsys, plate_config, tmp_path):
        code, out, _ = run(capsys, "select", "--config", plate_config, "--out", tmp_path / "s")
        assert code == 0
        assert json.loads(out)["selected_model"] in ("LE", "SV")

    def test_run_any_scenario(self, capsys, bar_config, tmp_path):
        assert run(capsys, "run", "--config", bar_config, "--out", tmp_path / "r")[0] == 0
        summary = json.loads((tmp_path / "r" / "summary.json").read_text())
        assert summary["posterior_trace_monotone"]

    def test_gradcheck(self, capsys, bar_config):
        code, out, _ = run(capsys, "gradcheck", "--config", bar_config, "--points", 5)
        assert code == 0
        assert json.loads(out)["max_relative_error"] <= 1e-5

    def test_seed_override_changes_output(self, capsys, bar_config, tmp_path):
        run(capsys, "observe", "--config", bar_config, "--out", tmp_path / "a")
        run(capsys, "observe", "--config", bar_config, "--out", tmp_path / "b", "--seed", 12)
        a = (tmp_path / "a" / "observations.csv").read_text()
        b = (tmp_path / "b" / "observations.csv").read_text()
        assert a != b


class TestErrors:
    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2

    def test_missing_required_flag(self, capsys):
        assert run(capsys, "mesh", "--out", "x")[0] == 2

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "mesh", "--config", tmp_path / "none.json", "--out", tmp_path / "o")
        assert code == 1
        assert "error" in json.loads(err)

    def test_invalid_config(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"scenario": "bar_homogeneous", "seed": 1, "unknown": 3}))
        code, _, err = run(capsys, "mesh", "--config", p, "--out", tmp_path / "o")
        assert code == 1
        assert "invalid config" in json.loads(err)["message"]

    def test_missing_observations(self, capsys, bar_config, tmp_path):
        d = tmp_path / "run"
        run(capsys, "prior", "--config", bar_config, "--out", d)
        code, _, err = run(capsys, "infer", "--config", bar_config, "--out", d / "i",
                           "--prior", d / "prior_LE.json", "--observations", d / "missing.csv",
                           "--mesh", d / "mesh.txt")
        assert code == 1
        assert json.loads(err)["error"] == "StatFEMError"

    def test_wrong_scenario_for_command(self, capsys, bar_config, tmp_path):
        assert run(capsys, "select", "--config", bar_config, "--out", tmp_path / "s")[0] == 1

    def test_threads_environment(self, capsys, bar_config, tmp_path, monkeypatch):
        monkeypatch.setenv("STATFEM_THREADS", "2")
        assert run(capsys, "observe", "--config", bar_config, "--out", tmp_path / "t")[0] == 0
        eff = json.loads((tmp_path / "t" / "effective_config.json").read_text())
        assert eff["threads"] == 2
        monkeypatch.setenv("STATFEM_THREADS", "zero")
        assert run(capsys, "observe", "--config", bar_config, "--out", tmp_path / "u")[0] == 2

    def test_flag_beats_environment(self, capsys, bar_config, tmp_path, monkeypatch):
        monkeypatch.setenv("STATFEM_THREADS", "4")
        run(capsys, "observe", "--config", bar_config, "--out", tmp_path / "t", "--threads", "1")
        assert json.loads((tmp_path / "t" / "effective_config.json").read_text())["threads"] == 1


class TestReport:
    def test_empty_report(self, tmp_path):
        path = emit_report(ScenarioReport("empty"), tmp_path)
        assert json.loads(path.read_text()) == {"scenario": "empty", "artifacts": []}
        assert verify_manifest(tmp_path) == []

    def test_rerun_gives_identical_hashes(self, capsys, bar_config, tmp_path):
        run(capsys, "bar", "--config", bar_config, "--out", tmp_path / "a")
        run(capsys, "bar", "--config", bar_config, "--out", tmp_path / "b")
        ha = {e["key"]: e["sha256"] for e in json.loads((tmp_path / "a" / "manifest.json").read_text())["artifacts"]}
        hb = {e["key"]: e["sha256"] for e in json.loads((tmp_path / "b" / "manifest.json").read_text())["artifacts"]}
        assert ha == hb and len(ha) > 5

    def test_tamper_detected(self, capsys, bar_config, tmp_path):
        d = tmp_path / "a"
        run(capsys, "bar", "--config", bar_config, "--out", d)
        with (d / "summary.json").open("a") as fh:
            fh.write(" ")
        code, out, _ = run(capsys, "verify", d)
        assert code == 1
        assert any("summary" in p for p in json.loads(out)["problems"])

    def test_missing_artifact(self, tmp_path):
        rep = ScenarioReport("x")
        rep.add("ghost", tmp_path / "ghost.txt")
        with pytest.raises(StatFEMError):
            emit_report(rep, tmp_path)

    def test_manifest_missing(self, tmp_path):
        with pytest.raises(StatFEMError):
            verify_manifest(tmp_path)

    def test_artifacts_relative(self, tmp_path):
        (tmp_path / "a.txt").write_text("x")
        rep = ScenarioReport("x")
        rep.add("a", tmp_path / "a.txt")
        m = json.loads(emit_report(rep, tmp_path).read_text())
        assert m["artifacts"][0]["path"] == "a.txt"
        assert m["artifacts"][0]["bytes"] == 1
        assert len(m["artifacts"][0]["sha256"]) == 64
