import json

import pytest

from sgmlab.cli import TEMPLATES, gen_config, main


def _base_run_config(**overrides):
    cfg = {
        "problem": {"quadratic": {"hessian_diag": [1.0, 1.0],
                                  "theta_star": [0.0, 0.0]}},
        "domain": {"ball": {"center": [0.0, 0.0], "radius": 2.0}},
        "noise": {"gaussian": {"sigma2": 1.0}},
        "variant": "sg",
        "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
        "momentum": {"zero": {}},
        "theta0": [1.0, 0.0],
        "horizon": 50,
        "replicates": 4,
        "master_seed": 1,
    }
    cfg.update(overrides)
    return cfg


def _write(tmp_path, cfg, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


class TestRun:
    def test_minimal_run_writes_three_files(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        for name in ("summary.csv", "summary.json", "config.resolved.json"):
            assert (out / name).exists()
        header = (out / "summary.csv").read_text().splitlines()[0]
        assert header == "checkpoint,mse_mean,mse_sem"

    def test_unknown_key_fails_closed(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(learning_rate=0.1))
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_step_exponent_exits_2(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(
            step={"polynomial": {"gamma": 1.0, "alpha": 1.5}}))
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_oversized_constant_step_gated(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(step={"constant": {"a": 2.0}}))
        out = tmp_path / "o"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 2
        assert not (out / "summary.csv").exists()
        assert main(["run", "--config", cfg, "--out", str(out),
                     "--force-schedule"]) == 0

    def test_overwrite_protection(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        out = str(tmp_path / "o")
        assert main(["run", "--config", cfg, "--out", out]) == 0
        assert main(["run", "--config", cfg, "--out", out]) == 2
        assert main(["run", "--config", cfg, "--out", out, "--overwrite"]) == 0

    def test_resolved_config_reruns_byte_identically(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", cfg, "--out", str(out1)]) == 0
        resolved = str(out1 / "config.resolved.json")
        assert main(["run", "--config", resolved, "--out", str(out2)]) == 0
        assert ((out1 / "summary.csv").read_bytes()
                == (out2 / "summary.csv").read_bytes())

    def test_worker_override_does_not_change_csv(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(replicates=6))
        outs = []
        for w in ("1", "3"):
            out = tmp_path / f"w{w}"
            assert main(["run", "--config", cfg, "--out", str(out),
                         "--workers", w]) == 0
            outs.append((out / "summary.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_seed_override_changes_results(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", cfg, "--out", str(a)])
        main(["run", "--config", cfg, "--out", str(b), "--seed", "99"])
        assert ((a / "summary.csv").read_bytes()
                != (b / "summary.csv").read_bytes())

    def test_dotted_override(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        out = tmp_path / "o"
        assert main(["run", "--config", cfg, "--out", str(out),
                     "-O", "step.polynomial.alpha=0.7"]) == 0
        resolved = json.loads((out / "config.resolved.json").read_text())
        assert resolved["step"]["polynomial"]["alpha"] == 0.7

    def test_override_unknown_key_rejected(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"),
                     "-O", "stepsize=0.1"]) == 2

    def test_envelope_adds_verdict_column(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(
            horizon=500, replicates=16,
            envelope={"case": "inv_n"}))
        out = tmp_path / "o"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0] == "checkpoint,mse_mean,mse_sem,bound_value,verdict"
        verdicts = {line.rsplit(",", 1)[1] for line in lines[1:]}
        assert "calibration" in verdicts
        assert verdicts <= {"calibration", "ok", "violation"}


class TestMultistage:
    def test_writes_stage_csv(self, tmp_path):
        cfg = _base_run_config()
        for key in ("variant", "step", "horizon"):
            cfg.pop(key)
        cfg["momentum"] = {"zero": {}}
        cfg["stages"] = [{"a": 0.2, "n": 50}, {"a": 0.1, "n": 100}]
        path = _write(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["multistage", "--config", path, "--out", str(out)]) == 0
        lines = (out / "stages.csv").read_text().splitlines()
        assert lines[0].startswith("stage,step,length,burn_in")
        assert len(lines) == 3

    def test_nondecreasing_stages_exit_2(self, tmp_path):
        cfg = _base_run_config()
        for key in ("variant", "step", "horizon"):
            cfg.pop(key)
        cfg["stages"] = [{"a": 0.1, "n": 50}, {"a": 0.1, "n": 50}]
        path = _write(tmp_path, cfg)
        assert main(["multistage", "--config", path,
                     "--out", str(tmp_path / "o")]) == 2


class TestBoundsAndFit:
    def test_bounds_prints_csv(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"bound": {"sg_recursion": {
            "E0": 1.0, "step": {"polynomial": {"gamma": 1.0, "alpha": 1.0}},
            "m": 1.0, "M": 1.0, "sigma2": 0.0, "N": 2}}})
        assert main(["bounds", "--config", cfg]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "j,bound"
        assert out[3] == "2,0.75"

    def test_fit_reads_summary(self, tmp_path, capsys):
        rows = ["checkpoint,mse_mean,mse_sem"]
        for c in (10, 30, 100, 300, 1000):
            rows.append(f"{c},{5.0 / (c + 1.0)!r},0.0")
        p = tmp_path / "summary.csv"
        p.write_text("\n".join(rows) + "\n")
        assert main(["fit", "--summary", str(p),
                     "--window", "10", "1000"]) == 0
        fit = json.loads(capsys.readouterr().out)
        assert fit["exponent"] == pytest.approx(-1.0, abs=1e-9)


class TestValidate:
    def test_valid_config_exits_0(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config())
        assert main(["validate", "--config", cfg]) == 0

    def test_bad_schedule_exits_2(self, tmp_path):
        cfg = _write(tmp_path, _base_run_config(step={"constant": {"a": 5.0}}))
        assert main(["validate", "--config", cfg]) == 2


class TestGenConfig:
    @pytest.mark.parametrize("template", TEMPLATES)
    def test_templates_are_valid_configs(self, template, tmp_path):
        out = tmp_path / f"{template}.json"
        assert main(["gen-config", template, "--out", str(out)]) == 0
        cfg = json.loads(out.read_text())
        # every generated config passes its own command's validation when
        # shrunk to a fast size
        if "stages" in cfg:
            cfg["replicates"] = 4
            path = _write(tmp_path, cfg, "small.json")
            cfg["stages"] = [{"a": s["a"], "n": 5} for s in cfg["stages"]]
            path = _write(tmp_path, cfg, "small.json")
            assert main(["multistage", "--config", path,
                         "--out", str(tmp_path / "o")]) == 0
        else:
            path = _write(tmp_path, cfg, "small.json")
            code = main(["validate", "--config", path])
            if template in ("theorem1-ii", "theorem1-iii"):
                # these schedules start at eta_0 = 1, which the validator
                # flags; they are meant to run with --force-schedule (the
                # first momentum term multiplies theta_0 - theta_-1 = 0)
                assert code == 2
                cfg["horizon"] = 20
                cfg["replicates"] = 4
                cfg.pop("fit_window", None)
                cfg.pop("envelope", None)
                path = _write(tmp_path, cfg, "forced.json")
                assert main(["run", "--config", path,
                             "--out", str(tmp_path / "o"),
                             "--force-schedule"]) == 0
            else:
                assert code == 0

    def test_unknown_template_exits_2(self, tmp_path):
        assert main(["gen-config", "lemma99",
                     "--out", str(tmp_path / "x.json")]) == 2

    def test_gen_config_shapes(self):
        cfg = gen_config("plateau")
        assert cfg["step"] == {"constant": {"a": 0.1}}
        assert cfg["recursion_bound"] == {"kind": "sg"}
