import csv
import math

import numpy as np
import pytest

from ehmac import cli
from ehmac.config import (ExperimentConfig, PRESETS, apply_env_overrides,
                          load_config, parse_config_text)
from ehmac.errors import ConfigError


def run(argv):
    return cli.main(argv)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestConfigParsing:
    def test_flat_key_values(self):
        raw = parse_config_text(
            "schema_version = 1\n"
            "# comment line\n"
            "capacities = 0.5, 1, inf\n"
            "best_k = true\n"
            "init_policies = linear, sqrt\n")
        assert raw["capacities"] == (0.5, 1.0, math.inf)
        assert raw["best_k"] is True
        assert raw["init_policies"] == ("linear", "sqrt")

    def test_unknown_key_reports_field(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("schema_version = 1\nvoltage = 5\n")
        assert err.value.field == "voltage"

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("grid_n = many\n", source="test.cfg")
        assert "test.cfg:1" in str(err.value)

    def test_schema_version_enforced(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"schema_version": 2})

    def test_env_override(self):
        raw = apply_env_overrides({"grid_n": 128}, env={"EHMAC_GRID_N": "256"})
        assert raw["grid_n"] == 256

    def test_validation_catches_bad_fields(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig(grid_n=8).validate()
        assert err.value.field == "grid_n"

    def test_presets_exist(self):
        for name in ("table1", "table2", "fig1", "fig2", "fig3"):
            assert name in PRESETS


class TestBoundCommand:
    def test_reference_table(self, tmp_path, capsys):
        cfg = tmp_path / "b.cfg"
        cfg.write_text("schema_version = 1\ncapacities = 0.5, 1, 2, 3, inf\n",
                       encoding="utf-8")
        assert run(["bound", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0].split(",") == list(cli.SUMMARY_COLUMNS)
        bounds = [round(float(line.split(",")[4]), 4) for line in out[1:]]
        assert bounds[:4] == [0.4187, 0.5895, 0.7243, 0.7681]
        assert round(bounds[4], 3) == 0.792

    def test_empty_sweep(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            run([])
        cfg = tmp_path / "empty.cfg"
        cfg.write_text("schema_version = 1\ncapacities =\n", encoding="utf-8")
        assert run(["bound", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out == [",".join(cli.SUMMARY_COLUMNS)]  # header only

    def test_missing_config_file(self, capsys):
        assert run(["bound", "--config", "/nonexistent/xyz.cfg"]) == 1
        assert "error[E_IO]" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense_key = 1\n", encoding="utf-8")
        assert run(["bound", "--config", str(cfg)]) == 2
        assert "error[E_CONFIG]" in capsys.readouterr().err


class TestSolveCommand:
    def test_writes_summary_and_artifacts(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("schema_version = 1\ncapacities = 1.0\nk_values = 0\n"
                       "p0plus_values = 0.01\ngrid_n = 128\n", encoding="utf-8")
        out = tmp_path / "out"
        assert run(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_csv(out / "summary.csv")
        assert rows[0] == list(cli.SUMMARY_COLUMNS)
        assert len(rows) == 2
        utility = float(rows[1][3])
        assert utility == pytest.approx(0.4217, abs=0.02)
        cell = out / "L1_K0_p00.01"
        assert (cell / "policy_node0.csv").exists()
        assert (cell / "measure_node0.csv").exists()
        assert "termination" in (cell / "report.txt").read_text(encoding="utf-8")

    def test_requires_out_dir(self, capsys):
        assert run(["solve"]) == 2
        assert "error[E_USAGE]" in capsys.readouterr().err

    def test_single_node_grid(self, tmp_path):
        # one transmitter: the update collapses to the standalone level ODE
        cfg = tmp_path / "p2p.cfg"
        cfg.write_text("schema_version = 1\nnode_count = 1\ncapacities = 3.0\n"
                       "k_values = 0\np0plus_values = 0.01\ngrid_n = 128\n",
                       encoding="utf-8")
        out = tmp_path / "p2p"
        assert run(["solve", "--config", str(cfg), "--out", str(out)]) == 0
        import ehmac as eh
        pol = eh.measures.load_policy(out / "L3_K0_p00.01" / "policy_node0.csv")
        direct = eh.el_ode_solve(
            eh.ExactRateMoments(eh.RateFunction(1.0)),
            eh.HarvestParams(1.0, 1.0, 3.0),
            eh.SolverConfig(k_const=0.0, p0plus=0.01, grid_n=128))
        assert np.allclose(pol.values, direct.values)

    def test_fig1_history_files(self, tmp_path):
        out = tmp_path / "fig"
        code = run(["solve", "--preset", "fig1", "--out", str(out)])
        assert code == 0
        cell = out / "L3_K0_p00.1"
        iters = sorted(cell.glob("policy_iter*.csv"))
        assert len(iters) >= 3  # initializer plus the iterates
        # qualitative shapes behind the figure data: rapidly increasing
        # policy, density decaying away from the empty end
        policy = np.loadtxt(cell / "policy_node0.csv")
        assert np.all(np.diff(policy[1:, 1]) > 0.0)
        assert policy[-1, 1] > 100.0 * policy[1, 1]
        measure = np.loadtxt(cell / "measure_node0.csv")
        peak = np.argmax(measure[:, 1])
        assert peak < measure.shape[0] // 4
        assert measure[-1, 1] < 1e-3 * measure[peak, 1]


class TestFig3Preset:
    def test_three_initializer_files(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EHMAC_GRID_N", "128")
        monkeypatch.setenv("EHMAC_THETA_TOL", "0.05")
        out = tmp_path / "fig3"
        assert run(["solve", "--preset", "fig3", "--out", str(out)]) == 0
        cells = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert cells == ["L3_K0_p00.1", "L3_K0_p00.1_constant", "L3_K0_p00.1_sqrt"]


class TestSweepCommand:
    def test_stdout_rows_in_grid_order(self, tmp_path, capsys):
        cfg = tmp_path / "w.cfg"
        cfg.write_text("schema_version = 1\ncapacities = 0.5, 1.0\nk_values = 0\n"
                       "p0plus_values = 0.01\ngrid_n = 128\n", encoding="utf-8")
        assert run(["sweep", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert [line.split(",")[0] for line in out[1:]] == ["0.5", "1.0"]

    def test_workers_match_serial(self, tmp_path):
        cfg = tmp_path / "w.cfg"
        cfg.write_text("schema_version = 1\ncapacities = 0.5, 1.0\nk_values = 0\n"
                       "p0plus_values = 0.01, 0.1\ngrid_n = 128\n", encoding="utf-8")
        out1 = tmp_path / "serial"
        out2 = tmp_path / "parallel"
        assert run(["sweep", "--config", str(cfg), "--out", str(out1)]) == 0
        assert run(["sweep", "--config", str(cfg), "--out", str(out2),
                    "--workers", "2"]) == 0
        assert read_csv(out1 / "summary.csv") == read_csv(out2 / "summary.csv")


class TestSimulateCommand:
    def test_constant_policy_run(self, tmp_path):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("schema_version = 1\ncapacities = inf\nnode_count = 1\n"
                       "policy_level = 2.0\nhorizon = 4000\nreplications = 2\n"
                       "burn_in = 20\nlevel_probes = 1.0\n", encoding="utf-8")
        out = tmp_path / "simout"
        assert run(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        text = (out / "stats.txt").read_text(encoding="utf-8")
        assert "atom" in text
        assert (out / "crossing_balance.csv").exists()
        assert (out / "cdf_node0.csv").exists()

    def test_policy_file_round_trip(self, tmp_path):
        # solve writes a policy; simulate consumes it
        scfg = tmp_path / "s.cfg"
        scfg.write_text("schema_version = 1\ncapacities = 1.0\nk_values = 0\n"
                        "p0plus_values = 0.01\ngrid_n = 128\n", encoding="utf-8")
        out = tmp_path / "solved"
        assert run(["solve", "--config", str(scfg), "--out", str(out)]) == 0
        pol_file = out / "L1_K0_p00.01" / "policy_node0.csv"
        simcfg = tmp_path / "sim.cfg"
        simcfg.write_text("schema_version = 1\ncapacities = 1.0\nnode_count = 2\n"
                          f"policy_file = {pol_file}\nhorizon = 2000\n"
                          "replications = 2\nburn_in = 20\n", encoding="utf-8")
        simout = tmp_path / "simout"
        assert run(["simulate", "--config", str(simcfg), "--out", str(simout)]) == 0

    def test_missing_policy_file(self, tmp_path, capsys):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("schema_version = 1\ncapacities = 1.0\n"
                       "policy_file = /missing/pol.csv\nhorizon = 100\n"
                       "burn_in = 10\n", encoding="utf-8")
        assert run(["simulate", "--config", str(cfg), "--out",
                    str(tmp_path / "o")]) == 1
        assert "error[E_IO]" in capsys.readouterr().err

    def test_seed_override_changes_draws(self, tmp_path):
        base = ("schema_version = 1\ncapacities = inf\nnode_count = 1\n"
                "policy_level = 2.0\nhorizon = 1000\nreplications = 1\n"
                "burn_in = 10\n")
        cfg = tmp_path / "sim.cfg"
        cfg.write_text(base, encoding="utf-8")
        outs = []
        for seed in ("1", "2"):
            out = tmp_path / f"o{seed}"
            assert run(["simulate", "--config", str(cfg), "--out", str(out),
                        "--seed", seed]) == 0
            outs.append((out / "stats.txt").read_text(encoding="utf-8"))
        assert outs[0] != outs[1]
