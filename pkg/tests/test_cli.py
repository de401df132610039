"""Command-line interface: exit codes, CSV artifacts, config handling."""

import shutil
import subprocess

import numpy as np
import pytest

from coagprofiles.cli import main

VERIFY_NAMES = {
    "kernel_identity", "inverse_exact", "inverse_roundtrip", "zero_moment",
    "laplace_closed_form", "laplace_ode", "prim_m1", "prim_m2_1",
    "prim_m2_2", "mass_m1", "wronskian", "m2_branch", "three_form",
}


def read_csv(path):
    meta = {}
    rows = []
    header = None
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            key, val = line[2:].split("=", 1)
            meta[key] = val
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return meta, header, rows


class TestVerify:
    def test_full_suite_passes(self, tmp_path):
        assert main(["verify", "--out", str(tmp_path)]) == 0
        meta, header, rows = read_csv(tmp_path / "verify.csv")
        assert header == ["check_name", "measured", "tolerance", "pass"]
        assert {r[0] for r in rows} == VERIFY_NAMES
        assert all(r[3] == "true" for r in rows)
        assert meta["command"] == "verify"
        assert int(meta["n"]) == 1024

    def test_coarse_grid_fails(self, tmp_path):
        assert main(["verify", "--n", "32", "--out", str(tmp_path)]) == 3
        _, _, rows = read_csv(tmp_path / "verify.csv")
        assert any(r[3] == "false" for r in rows)

    def test_only_filter(self, tmp_path):
        assert main(["verify", "--only", "wronskian,mass_m1",
                     "--out", str(tmp_path)]) == 0
        _, _, rows = read_csv(tmp_path / "verify.csv")
        assert {r[0] for r in rows} == {"wronskian", "mass_m1"}

    def test_only_unknown_name(self, tmp_path, capsys):
        assert main(["verify", "--only", "bogus_check",
                     "--out", str(tmp_path)]) == 1
        assert "bogus_check" in capsys.readouterr().err


class TestSolve:
    def test_unperturbed_profile(self, tmp_path):
        assert main(["solve", "--epsilon", "0", "--n", "256",
                     "--out", str(tmp_path)]) == 0
        meta, header, rows = read_csv(tmp_path / "profile.csv")
        assert header == ["x", "pi"]
        assert len(rows) == 256
        xs = np.array([float(r[0]) for r in rows])
        vs = np.array([float(r[1]) for r in rows])
        assert np.max(np.abs(vs - np.exp(-xs))) <= 1e-6
        assert meta["converged"] == "true"

        dmeta, dheader, drows = read_csv(tmp_path / "diagnostics.csv")
        assert dheader == ["name", "value"]
        vals = {r[0]: float(r[1]) for r in drows}
        assert abs(vals["mass"] - 1.0) <= 1e-8
        assert vals["residual"] <= 1e-6
        assert abs(vals["kappa"]) <= 1e-8
        assert abs(vals["tail_rate"] - 1.0) <= 1e-3
        assert vals["norm_ab"] <= 1e-6
        assert vals["norm_01"] <= 1e-6
        assert set(vals) >= {"laplace_gap", "moment_0.0", "moment_0.5",
                             "moment_1.0", "moment_2.0"}

    def test_alternate_init_expression(self, tmp_path):
        assert main(["solve", "--epsilon", "0", "--n", "128",
                     "--init", "2*exp(-2*x)", "--damping", "0.25",
                     "--out", str(tmp_path)]) == 0

    def test_bad_init_expression(self, tmp_path, capsys):
        assert main(["solve", "--init", "sin(x)",
                     "--out", str(tmp_path)]) == 1
        assert "initial profile" in capsys.readouterr().err

    def test_zero_amplitude_init_rejected(self, tmp_path):
        assert main(["solve", "--init", "0*exp(-x)",
                     "--out", str(tmp_path)]) == 1

    def test_invalid_epsilon(self, tmp_path, capsys):
        assert main(["solve", "--epsilon", "-1",
                     "--out", str(tmp_path)]) == 1
        assert "epsilon" in capsys.readouterr().err

    def test_budget_exhaustion_exit_code(self, tmp_path):
        rc = main(["solve", "--epsilon", "0.1", "--n", "128",
                   "--max-iter", "2", "--out", str(tmp_path)])
        assert rc == 2

    def test_gnuplot_script_written(self, tmp_path):
        assert main(["solve", "--epsilon", "0", "--n", "128",
                     "--gnuplot-script", "plot.gp",
                     "--out", str(tmp_path)]) == 0
        text = (tmp_path / "plot.gp").read_text()
        assert "plot" in text
        assert "profile.csv" in text

    def test_deterministic_output(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["solve", "--epsilon", "0.05", "--n", "128",
                         "--damping", "0.25", "--out", str(out)]) == 0
        for name in ("profile.csv", "diagnostics.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestConfigFile:
    def test_file_values_and_flag_override(self, tmp_path):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("n = 128\nepsilon = 0\n# comment line\n\n"
                           "damping = 0.5\n")
        out = tmp_path / "out"
        assert main(["solve", "--config", str(cfgfile), "--n", "256",
                     "--out", str(out)]) == 0
        meta, _, rows = read_csv(out / "profile.csv")
        # flag wins over file for n; file value still applies to damping
        assert int(meta["n"]) == 256
        dmeta, _, _ = read_csv(out / "diagnostics.csv")
        assert float(dmeta["damping"]) == 0.5

    def test_unknown_key_reports_location(self, tmp_path, capsys):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("n = 128\nspeed = 11\n")
        assert main(["solve", "--config", str(cfgfile),
                     "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "run.cfg:2" in err
        assert "speed" in err

    def test_malformed_line(self, tmp_path, capsys):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("just words\n")
        assert main(["solve", "--config", str(cfgfile),
                     "--out", str(tmp_path)]) == 1
        assert "key=value" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["solve", "--config", str(tmp_path / "none.cfg"),
                     "--out", str(tmp_path)]) == 1
        assert "not found" in capsys.readouterr().err


class TestSweep:
    def test_trivial_sweep(self, tmp_path):
        assert main(["sweep", "--epsilons", "0", "--n", "256",
                     "--out", str(tmp_path)]) == 0
        meta, header, rows = read_csv(tmp_path / "sweep.csv")
        assert header == ["epsilon", "norm_ab", "norm_01", "kappa",
                          "laplace_gap", "pointwise_gap_x1"]
        assert len(rows) == 1
        assert float(rows[0][1]) <= 1e-8

    def test_short_sweep_decreasing_norms(self, tmp_path):
        assert main(["sweep", "--epsilons", "0.1,0.05", "--n", "128",
                     "--alpha", "0.25", "--damping", "0.25", "--tol", "1e-8",
                     "--out", str(tmp_path)]) == 0
        _, _, rows = read_csv(tmp_path / "sweep.csv")
        assert len(rows) == 2
        assert float(rows[1][1]) < float(rows[0][1])

    def test_missing_list(self, tmp_path, capsys):
        assert main(["sweep", "--out", str(tmp_path)]) == 1
        assert "non-empty" in capsys.readouterr().err

    def test_non_decreasing_list_rejected(self, tmp_path, capsys):
        assert main(["sweep", "--epsilons", "0.05,0.1",
                     "--out", str(tmp_path)]) == 1
        assert "decreasing" in capsys.readouterr().err


class TestUniqueness:
    def test_two_inits_agree(self, tmp_path):
        assert main(["uniqueness", "--epsilon", "0.05", "--alpha", "0.25",
                     "--n", "128", "--damping", "0.25",
                     "--inits", "exp(-x),2*exp(-2*x)",
                     "--out", str(tmp_path)]) == 0
        meta, header, rows = read_csv(tmp_path / "uniqueness.csv")
        assert header == ["init_a", "init_b", "distance"]
        assert len(rows) == 1
        assert float(meta["max_distance"]) <= 1e-6

    def test_single_init_rejected(self, tmp_path, capsys):
        assert main(["uniqueness", "--inits", "exp(-x)",
                     "--out", str(tmp_path)]) == 1
        assert "two" in capsys.readouterr().err


class TestLayerCommand:
    def test_unperturbed_layer_residual(self, tmp_path):
        assert main(["bl", "--epsilon", "0", "--n", "256",
                     "--out", str(tmp_path)]) == 0
        meta, header, rows = read_csv(tmp_path / "bl.csv")
        assert header == ["epsilon", "kappa", "phi_at_xmin", "bl_residual"]
        assert float(rows[0][2]) == 0.0
        assert float(rows[0][3]) <= 1e-5
        assert float(meta["threshold"]) == 1e-3

    def test_threshold_exceeded_exit_code(self, tmp_path):
        rc = main(["bl", "--epsilon", "0", "--n", "256",
                   "--threshold", "1e-15", "--out", str(tmp_path)])
        assert rc == 2


@pytest.mark.skipif(shutil.which("coagprofiles") is None,
                    reason="console script not on PATH")
def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        ["coagprofiles", "verify", "--only", "wronskian",
         "--out", str(tmp_path)],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "verify.csv").exists()
