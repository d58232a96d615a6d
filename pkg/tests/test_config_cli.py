import io
import json
import os

import numpy as np
import pytest

import perfctl as pc
from perfctl.cli import main
from perfctl.config import (
    apply_overrides,
    build_loss,
    build_noise,
    build_run_config,
    build_system,
    emit_toml,
    loads_config,
    loss_to_dict,
    noise_to_dict,
    run_config_to_dict,
    system_to_dict,
)
from perfctl.fixtures import FIXTURE_NAMES, fixture_config, fixture_toml

from helpers import scalar_model


class TestConfigRoundTrip:
    def test_system_round_trip(self):
        model = scalar_model(T=3, x0=1.5, a=0.9, b=1.1, lo=-2, hi=2)
        cfg = {"schema_version": 1, "experiment": "i_irpc",
               "system": system_to_dict(model),
               "loss": loss_to_dict(pc.QuadraticLoss([[1.0]], [[[0.2]]] * 3, [[[2.0]]] * 3)),
               "noise": noise_to_dict(pc.GaussianIsotropic(0.3, 0.1)),
               "run": {"p": 0.1}}
        text = emit_toml(cfg)
        back = loads_config(text)
        model2 = build_system(back)
        assert np.array_equal(model2.x0, model.x0)
        assert np.array_equal(model2.nominal.A, model.nominal.A)
        assert np.array_equal(model2.lower, model.lower)
        loss2 = build_loss(back)
        assert np.array_equal(loss2.R, np.array([[[2.0]]] * 3))
        noise2 = build_noise(back)
        assert noise2 == pc.GaussianIsotropic(0.3, 0.1)

    def test_run_config_round_trip(self):
        rc = pc.RunConfig(p=0.2, schedule=pc.Constant(123), fix_tol=1e-7, iters_max=9,
                          solver=pc.SolverConfig(restarts=8, grad_tol=1e-9),
                          master_seed=5, workers=2)
        cfg = {"schema_version": 1, "experiment": "e_irpc",
               "system": system_to_dict(scalar_model()),
               "loss": loss_to_dict(pc.QuadraticLoss([[1.0]], [[[0.0]]], [[[1.0]]])),
               "noise": noise_to_dict(pc.UniformBall(0.5, 0.2))}
        cfg.update(run_config_to_dict(rc))
        back = loads_config(emit_toml(cfg))
        rc2 = build_run_config(back, master_seed=5)
        assert rc2 == rc

    def test_anisotropic_constant_cov(self):
        C = np.array([[2.0, 0.3], [0.3, 1.0]])
        noise = pc.GaussianAnisotropic(cov=lambda x, u, _C=C: _C, label="constant")
        back = build_noise({"noise": noise_to_dict(noise)})
        assert np.array_equal(back.cov(None, None), C)

    def test_callbacks_refuse_to_serialize(self):
        gen = pc.GenericLoss(lambda x: 0.0, lambda t, x, u: 0.0)
        with pytest.raises(pc.ConfigError):
            loss_to_dict(gen)
        with pytest.raises(pc.ConfigError):
            noise_to_dict(pc.CustomNoise(lambda rng, X, u: X))

    def test_missing_field_path_in_message(self):
        cfg = fixture_config("scalar_gaussian")
        del cfg["run"]["p"]
        with pytest.raises(pc.ConfigError, match="run.p"):
            loads_config(emit_toml(cfg))

    def test_override_parsing(self):
        cfg = fixture_config("scalar_gaussian")
        apply_overrides(cfg, ["run.p=0.2", "run.schedule.N=77", "name=\"zz\""])
        assert cfg["run"]["p"] == 0.2
        assert cfg["run"]["schedule"]["N"] == 77
        assert cfg["name"] == "zz"


class TestFixtures:
    @pytest.mark.parametrize("name", FIXTURE_NAMES)
    def test_emitted_fixture_parses_and_builds(self, name):
        cfg = loads_config(fixture_toml(name))
        model = build_system(cfg)
        loss = build_loss(cfg)
        build_noise(cfg)
        assert pc.validate_model(model, loss).ok

    @pytest.mark.parametrize("name", FIXTURE_NAMES)
    def test_documented_alpha1_matches_diagnostics(self, name):
        cfg = fixture_config(name)
        meta = cfg["meta"]
        model = build_system(cfg)
        loss = build_loss(cfg)
        noise = build_noise(cfg)
        rep = pc.validate_model(model, loss)
        assert rep.lambda_u == pytest.approx(meta["lambda"], rel=1e-9)
        assert rep.beta_w == pytest.approx(meta["beta"], rel=1e-9)
        level = 1 - cfg["run"]["p"] / model.T
        eps = pc.quantile_lipschitz(noise, model.n, level)
        rate = pc.theoretical_rate(rep.lambda_u, rep.beta_w, [eps] * model.T)
        assert rate.alpha1 == pytest.approx(meta["alpha1"], rel=1e-9)
        assert np.allclose(meta["eps_t"], [eps] * model.T, rtol=1e-9)


class TestHistoryIO:
    def _history(self):
        from perfctl.fixtures import fixture_objects

        model, loss, noise, _ = fixture_objects("scalar_gaussian")
        return pc.run_e_irpc(model, noise, loss, pc.RunConfig(p=0.1, iters_max=3))

    def test_jsonl_round_trip(self):
        hist = self._history()
        buf = io.StringIO()
        pc.save_history_jsonl(hist, buf)
        lines = pc.load_history_jsonl(io.StringIO(buf.getvalue()))
        assert len(lines) == len(hist)
        assert lines[0]["radii"] is None and lines[0]["step_norm"] is None
        assert set(lines[1]) == {"i", "u", "radii", "inner_value", "step_norm",
                                 "N_i", "wall_ms"}
        assert lines[1]["wall_ms"] is None
        assert np.array_equal(lines[-1]["u"], hist.final_u.ravel())

    def test_summary_csv(self):
        hist = self._history()
        buf = io.StringIO()
        pc.write_summary_csv(hist, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].startswith("i,step_norm,inner_value,N_i,wall_ms,u0,u1,r0,r1")
        assert len(lines) == 1 + len(hist)

    def test_compare_self_is_zero(self):
        hist = self._history()
        buf = io.StringIO()
        pc.save_history_jsonl(hist, buf)
        lines = pc.load_history_jsonl(io.StringIO(buf.getvalue()))
        rep = pc.compare_histories(lines, lines)
        assert np.all(rep.control_dist == 0.0)
        assert rep.terminal_dist == 0.0

    def test_compare_shape_mismatch(self):
        a = [{"u": [0.0, 0.0], "radii": [1.0, 1.0]}]
        b = [{"u": [0.0], "radii": [1.0]}]
        with pytest.raises(pc.DimensionMismatchError):
            pc.compare_histories(a, b)


@pytest.fixture
def fixture_file(tmp_path):
    path = tmp_path / "scalar_gaussian.toml"
    path.write_text(fixture_toml("scalar_gaussian"))
    return str(path)


class TestCli:
    def test_run_byte_identical_and_worker_invariant(self, tmp_path, fixture_file):
        out = str(tmp_path / "runs")
        assert main(["run", fixture_file, "--seed", "7", "--out-dir", out, "--quiet"]) == 0
        assert main(["run", fixture_file, "--seed", "7", "--out-dir", out, "--quiet",
                     "--override", "run.workers=4"]) == 0
        d1 = tmp_path / "runs" / "scalar_gaussian-e_irpc-seed7"
        d2 = tmp_path / "runs" / "scalar_gaussian-e_irpc-seed7-001"
        h1 = (d1 / "history.jsonl").read_bytes()
        h2 = (d2 / "history.jsonl").read_bytes()
        assert h1 == h2
        manifest = json.loads((d1 / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["master_seed"] == 7
        assert "config_sha256" in manifest
        assert sorted(manifest["files"]) == manifest["files"]
        assert (d1 / "resolved_config.toml").exists()
        assert (d1 / "summary.csv").exists()
        assert (d1 / "report.txt").exists()

    def test_no_overwrite(self, tmp_path, fixture_file):
        out = str(tmp_path / "runs")
        main(["run", fixture_file, "--seed", "1", "--out-dir", out, "--quiet",
              "--override", "run.iters_max=2"])
        main(["run", fixture_file, "--seed", "1", "--out-dir", out, "--quiet",
              "--override", "run.iters_max=2"])
        dirs = sorted(os.listdir(tmp_path / "runs"))
        assert dirs == ["scalar_gaussian-e_irpc-seed1", "scalar_gaussian-e_irpc-seed1-001"]

    def test_missing_field_exits_2(self, tmp_path, fixture_file, capsys):
        text = open(fixture_file).read().replace("p = 0.1", "q = 0.1")
        bad = tmp_path / "bad.toml"
        bad.write_text(text)
        assert main(["run", str(bad)]) == 2
        assert "run.p" in capsys.readouterr().err

    def test_invariant_violation_exits_4(self, tmp_path, fixture_file):
        assert main(["run", fixture_file, "--out-dir", str(tmp_path / "r"),
                     "--override", "system.control_box.lower=[[2.0],[2.0]]"]) == 4

    def test_out_of_range_p_exits_2(self, tmp_path, fixture_file, capsys):
        assert main(["run", fixture_file, "--out-dir", str(tmp_path / "r"),
                     "--override", "run.p=1.5"]) == 2
        assert "run.p" in capsys.readouterr().err

    def test_env_var_out_dir(self, tmp_path, fixture_file, monkeypatch):
        monkeypatch.setenv("PERFCTL_OUT_DIR", str(tmp_path / "envruns"))
        monkeypatch.chdir(tmp_path)
        assert main(["run", fixture_file, "--seed", "2", "--quiet",
                     "--override", "run.iters_max=2"]) == 0
        assert (tmp_path / "envruns" / "scalar_gaussian-e_irpc-seed2").exists()

    def test_coverage_report_contains_target(self, tmp_path, fixture_file, capsys):
        out = str(tmp_path / "runs")
        code = main(["run", fixture_file, "--seed", "3", "--out-dir", out, "--quiet",
                     "--override", "experiment=\"coverage_audit\"",
                     "--override", "coverage.reps=10",
                     "--override", "coverage.fresh=2000",
                     "--override", "coverage.N=199"])
        assert code == 0
        report = (tmp_path / "runs" / "scalar_gaussian-coverage_audit-seed3"
                  / "report.txt").read_text()
        assert "target k/(N+1) = 0.95" in report
        assert "step  mean coverage" in report
        assert (tmp_path / "runs" / "scalar_gaussian-coverage_audit-seed3"
                / "coverage.csv").exists()

    def test_compare_command(self, tmp_path, fixture_file, capsys):
        out = str(tmp_path / "runs")
        main(["run", fixture_file, "--seed", "4", "--out-dir", out, "--quiet",
              "--override", "run.iters_max=3"])
        hist = str(tmp_path / "runs" / "scalar_gaussian-e_irpc-seed4" / "history.jsonl")
        assert main(["compare", hist, hist]) == 0
        text = capsys.readouterr().out
        assert "terminal control distance: 0.000000e+00" in text

    def test_compare_empirical_vs_ideal_terminal_distance(self, tmp_path,
                                                          fixture_file, capsys):
        out = str(tmp_path / "runs")
        main(["run", fixture_file, "--seed", "0", "--out-dir", out, "--quiet"])
        main(["run", fixture_file, "--seed", "0", "--out-dir", out, "--quiet",
              "--override", "experiment=\"i_irpc\""])
        a = str(tmp_path / "runs" / "scalar_gaussian-e_irpc-seed0" / "history.jsonl")
        b = str(tmp_path / "runs" / "scalar_gaussian-i_irpc-seed0" / "history.jsonl")
        assert main(["compare", a, b]) == 0
        text = capsys.readouterr().out
        line = next(l for l in text.splitlines() if "terminal control distance" in l)
        assert float(line.split(":")[1]) <= 0.05

    def test_compare_shape_mismatch_exits_2(self, tmp_path, fixture_file, capsys):
        out = str(tmp_path / "runs")
        main(["run", fixture_file, "--seed", "5", "--out-dir", out, "--quiet",
              "--override", "run.iters_max=2"])
        lq = tmp_path / "lq_2d.toml"
        lq.write_text(fixture_toml("lq_2d"))
        main(["run", str(lq), "--seed", "5", "--out-dir", out, "--quiet",
              "--override", "run.iters_max=2"])
        a = str(tmp_path / "runs" / "scalar_gaussian-e_irpc-seed5" / "history.jsonl")
        b = str(tmp_path / "runs" / "lq_2d-i_irpc-seed5" / "history.jsonl")
        assert main(["compare", a, b]) == 2

    def test_emit_fixture_round_trip(self, tmp_path):
        assert main(["emit-fixture", "uniform_ball", "--out-dir", str(tmp_path),
                     "--quiet"]) == 0
        cfg = loads_config((tmp_path / "uniform_ball.toml").read_text())
        assert cfg["name"] == "uniform_ball"
        assert main(["run", str(tmp_path / "uniform_ball.toml"), "--seed", "0",
                     "--out-dir", str(tmp_path / "runs"), "--quiet",
                     "--override", "run.iters_max=2"]) == 0

    def test_emit_fixture_unknown_name(self, capsys):
        assert main(["emit-fixture", "nope"]) == 2
        err = capsys.readouterr().err
        for name in FIXTURE_NAMES:
            assert name in err

    def test_contraction_experiment(self, tmp_path, fixture_file):
        out = str(tmp_path / "runs")
        code = main(["run", fixture_file, "--seed", "6", "--out-dir", out, "--quiet",
                     "--override", "experiment=\"contraction\""])
        assert code == 0
        d = tmp_path / "runs" / "scalar_gaussian-contraction-seed6"
        assert (d / "ratios.csv").exists()
        assert "fitted contraction rate" in (d / "report.txt").read_text()

    def test_gap_experiment(self, tmp_path, fixture_file):
        out = str(tmp_path / "runs")
        code = main(["run", fixture_file, "--seed", "8", "--out-dir", out, "--quiet",
                     "--override", "experiment=\"ps_po_gap\"",
                     "--override", "gap.points_per_axis=15",
                     "--override", "gap.refinements=1"])
        assert code == 0
        report = (tmp_path / "runs" / "scalar_gaussian-ps_po_gap-seed8"
                  / "report.txt").read_text()
        assert "bound satisfied: True" in report

    def test_solver_failure_preserves_partial_artifacts(self, tmp_path):
        div = tmp_path / "diverging_alpha.toml"
        div.write_text(fixture_toml("diverging_alpha"))
        out = str(tmp_path / "runs")
        # contraction experiment on a non-contracting fixture fails at runtime
        code = main(["run", str(div), "--seed", "0", "--out-dir", out, "--quiet",
                     "--override", "experiment=\"contraction\""])
        assert code == 3
        d = tmp_path / "runs" / "diverging_alpha-contraction-seed0"
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert (d / "resolved_config.toml").exists()
