"""End-to-end CLI runs: exit codes, report files, manifests, determinism."""

import json

import yaml

from driftlab.cli import main


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return str(path)


PDE_SWEEP = {
    "kind": "pde-sweep",
    "generator": {"variant": "quadratic", "c": 1.0},
    "terminal": {"kind": "gaussian_bump", "center": 1.0},
    "grid": {"x_min": -6.0, "x_max": 6.0, "nx": 601},
    "n_list": [1, 2, 4, 8, 16, 32, 64],
    "y_step": 1e-4,
}

MC_CONFIG = {
    "kind": "mc-estimate",
    "estimator": "log-mean-exp",
    "functional": {"kind": "terminal", "f": {"kind": "gaussian_bump", "center": 1.0},
                   "bounds": [0.0, 1.0]},
    "n": 1,
    "paths": 50_000,
    "steps": 8,
    "seed": 11,
}


class TestRun:
    def test_pde_sweep_produces_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.yaml", PDE_SWEEP)
        out = tmp_path / "out"
        code = main(["run", "--config", cfg, "--output-dir", str(out)])
        assert code == 0
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert lines[0].startswith("n,u_n,limit,gap")
        assert len(lines) == 1 + 7
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["kind"] == "pde-sweep"
        assert "config_sha256" in manifest

    def test_missing_seed_exits_2_naming_seed(self, tmp_path, capsys):
        payload = dict(MC_CONFIG)
        payload.pop("seed")
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        code = main(["run", "--config", cfg, "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_kind_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.yaml", {"kind": "nope"})
        assert main(["run", "--config", cfg, "--output-dir", str(tmp_path / "o")]) == 2

    def test_unmollified_infeasible_exits_4(self, tmp_path):
        payload = {
            "kind": "schrodinger-sweep",
            "generator": {"variant": "quadratic", "c": 1.0},
            "mu": {"atoms": [0.0], "weights": [1.0]},
            "nu": {"atoms": [1.0], "weights": [1.0]},
            "eps_list": [0.1, 0.01],
            "mollified": False,
        }
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        out = tmp_path / "out"
        code = main(["run", "--config", cfg, "--output-dir", str(out)])
        assert code == 4
        body = (out / "report.csv").read_text()
        assert body.splitlines()[0] == "eps,value,ot,gap,feasible"
        for line in body.strip().splitlines()[1:]:
            assert line.endswith(",0")

    def test_determinism_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, "cfg.yaml", MC_CONFIG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", cfg, "--output-dir", str(out_a)]) == 0
        assert main(["run", "--config", cfg, "--output-dir", str(out_b)]) == 0
        assert (out_a / "report.csv").read_bytes() == (out_b / "report.csv").read_bytes()

    def test_manifest_hash_tracks_config_changes(self, tmp_path):
        cfg_a = write_config(tmp_path, "a.yaml", MC_CONFIG)
        payload = dict(MC_CONFIG)
        payload["seed"] = 12
        cfg_b = write_config(tmp_path, "b.yaml", payload)
        out_a, out_b, out_c = tmp_path / "ma", tmp_path / "mb", tmp_path / "mc"
        main(["run", "--config", cfg_a, "--output-dir", str(out_a)])
        main(["run", "--config", cfg_b, "--output-dir", str(out_b)])
        main(["run", "--config", cfg_a, "--output-dir", str(out_c)])
        h = lambda p: json.loads((p / "manifest.json").read_text())["config_sha256"]
        assert h(out_a) != h(out_b)
        assert h(out_a) == h(out_c)

    def test_module_alias_subcommand(self, tmp_path):
        cfg = write_config(tmp_path, "cfg.yaml", PDE_SWEEP)
        out = tmp_path / "out"
        assert main(["pde", "sweep", "--config", cfg, "--output-dir", str(out)]) == 0

    def test_alias_kind_mismatch_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.yaml", MC_CONFIG)
        code = main(["pde", "sweep", "--config", cfg, "--output-dir", str(tmp_path / "o")])
        assert code == 2

    def test_ti_check_runs(self, tmp_path):
        payload = {"kind": "ti-check", "generator": {"variant": "indicator", "K": 2.0}}
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        out = tmp_path / "out"
        assert main(["ti", "check", "--config", cfg, "--output-dir", str(out)]) == 0
        body = (out / "report.csv").read_text()
        assert "coercivity" in body

    def test_bridge_check_runs(self, tmp_path):
        payload = {"kind": "bridge-check", "seed": 3, "paths": 20_000, "steps": 256,
                   "r": 1.5, "epsilon": 0.01}
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        out = tmp_path / "out"
        assert main(["bridge", "check", "--config", cfg, "--output-dir", str(out)]) == 0
        assert (out / "report.csv").read_text().strip().splitlines()[1].endswith(",1")

    def test_measures_load_from_two_column_csv(self, tmp_path):
        (tmp_path / "mu.csv").write_text("0.0,1.0\n")
        (tmp_path / "nu.csv").write_text("1.0,0.5\n3.0,0.5\n")
        payload = {
            "kind": "schrodinger-sweep",
            "generator": {"variant": "power", "r": 1.5, "a": 1.0},
            "mu": {"csv": str(tmp_path / "mu.csv")},
            "nu": {"csv": str(tmp_path / "nu.csv")},
            "eps_list": [0.1],
            "mollified": True,
            "n_time": 16,
        }
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        out = tmp_path / "out"
        assert main(["schrodinger", "sweep", "--config", cfg,
                     "--output-dir", str(out)]) == 0
        assert (out / "report.csv").read_text().startswith("eps,value,ot,gap,feasible")

    def test_error_message_carries_config_path(self, tmp_path, capsys):
        payload = dict(MC_CONFIG)
        payload.pop("seed")
        cfg = write_config(tmp_path, "no_seed.yaml", payload)
        assert main(["run", "--config", cfg, "--output-dir", str(tmp_path / "o")]) == 2
        assert "no_seed.yaml" in capsys.readouterr().err

    def test_schilder_writes_path_and_value(self, tmp_path):
        payload = {
            "kind": "schilder",
            "generator": {"variant": "quadratic", "c": 1.0},
            "functional": {"kind": "terminal", "f": {"kind": "gaussian_bump", "center": 1.0},
                           "bounds": [0.0, 1.0]},
            "knots": 9,
            "restarts": 4,
            "seed": 5,
        }
        cfg = write_config(tmp_path, "cfg.yaml", payload)
        out = tmp_path / "out"
        assert main(["variational", "maximize", "--config", cfg,
                     "--output-dir", str(out)]) == 0
        result = json.loads((out / "result.json").read_text())
        assert 0.5 < result["value"] < 0.8
        path_lines = (out / "path.csv").read_text().strip().splitlines()
        assert path_lines[0] == "t,value"
        assert len(path_lines) == 1 + 9


class TestCompare:
    def test_report_vs_itself_zero(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.yaml", PDE_SWEEP)
        out = tmp_path / "out"
        main(["run", "--config", cfg, "--output-dir", str(out)])
        code = main(["compare", str(out / "report.csv"), str(out / "report.csv"),
                     "--tolerance", "0"])
        assert code == 0

    def test_two_seeds_within_tolerance(self, tmp_path):
        cfg_a = write_config(tmp_path, "a.yaml", MC_CONFIG)
        payload = dict(MC_CONFIG)
        payload["seed"] = 12
        cfg_b = write_config(tmp_path, "b.yaml", payload)
        out_a, out_b = tmp_path / "a_out", tmp_path / "b_out"
        main(["run", "--config", cfg_a, "--output-dir", str(out_a)])
        main(["run", "--config", cfg_b, "--output-dir", str(out_b)])
        # 6 standard errors of a 5e4-path estimate of a [0, 1]-bounded value
        assert main(["compare", str(out_a / "report.csv"), str(out_b / "report.csv"),
                     "--tolerance", "0.02"]) == 0

    def test_mismatched_schema_errors(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("n,prelimit,limit,gap\n1,0.5,0.4,0.1\n")
        b.write_text("n,prelimit,limit,gap\n1,0.5,0.4,0.1\n2,0.5,0.4,0.1\n")
        assert main(["compare", str(a), str(b), "--tolerance", "1"]) == 2

    def test_refined_gaps_dominate_coarse(self, tmp_path):
        coarse_cfg = dict(PDE_SWEEP)
        coarse_cfg["grid"] = {"x_min": -6.0, "x_max": 6.0, "nx": 301}
        coarse_cfg["n_list"] = [4, 16]
        fine_cfg = dict(coarse_cfg)
        fine_cfg["grid"] = {"x_min": -6.0, "x_max": 6.0, "nx": 601}
        ca = write_config(tmp_path, "c.yaml", coarse_cfg)
        fa = write_config(tmp_path, "f.yaml", fine_cfg)
        out_c, out_f = tmp_path / "c_out", tmp_path / "f_out"
        main(["run", "--config", ca, "--output-dir", str(out_c)])
        main(["run", "--config", fa, "--output-dir", str(out_f)])
        import csv

        def gaps(p):
            with open(p) as fh:
                return [float(row["gap"]) for row in csv.DictReader(fh)]

        for fine, coarse in zip(gaps(out_f / "report.csv"), gaps(out_c / "report.csv")):
            assert fine <= coarse + 5e-3
