"""Command-line interface: subcommands, exit codes and output contracts."""

import csv
import json

import numpy as np
import pytest

from nanoporeflow import cli
from nanoporeflow.config import serialize_config

from conftest import two_pore_config

LAMBDA_100EV = 1.226373890749549e-10  # 100 eV electron, frozen reference


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(serialize_config(two_pore_config(nx=48, ny=48,
                                                     max_steps=0)))
    return path


class TestValidate:
    def test_valid_config_exit_0(self, config_file, capsys):
        assert cli.main(["validate", "--config", str(config_file)]) == 0
        assert "config valid" in capsys.readouterr().out

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[grid]\nnx = 4\nny = 4\n")
        assert cli.main(["validate", "--config", str(bad)]) == 2
        assert "violation" in capsys.readouterr().err

    def test_unparsable_toml_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("this is [ not toml")
        assert cli.main(["validate", "--config", str(bad)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        assert cli.main(["validate",
                         "--config", str(tmp_path / "nope.toml")]) == 2


class TestStageCommands:
    def test_simulate_exit_0(self, config_file, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["simulate", "--config", str(config_file),
                       "--out", str(out)])
        assert rc == 0
        assert (out / "snapshot_000000.vtk").exists()
        assert (out / "manifest.json").exists()

    def test_sample_without_field_exit_3(self, config_file, tmp_path, capsys):
        rc = cli.main(["sample", "--config", str(config_file),
                       "--out", str(tmp_path / "empty")])
        assert rc == 3
        assert "runtime failure" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        rc = cli.main(["simulate", "--config", str(tmp_path / "nope.toml"),
                       "--out", str(tmp_path)])
        assert rc == 2

    def test_pipeline_end_to_end(self, tmp_path, capsys):
        cfg = tmp_path / "config.toml"
        cfg.write_text(serialize_config(two_pore_config(nx=48, ny=48,
                                                        max_steps=10)))
        out = tmp_path / "run"
        rc = cli.main(["pipeline", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert (out / "report.csv").exists()
        printed = capsys.readouterr().out
        assert "q^2=" in printed and "threshold=" in printed


class TestQuantumCommands:
    def test_debroglie_ev(self, capsys):
        rc = cli.main(["quantum", "debroglie", "--ke", "100",
                       "--e0", "510998.95", "--ev"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["wavelength_m"] == pytest.approx(LAMBDA_100EV,
                                                        rel=1e-12)

    def test_fock(self, capsys):
        rc = cli.main(["quantum", "fock", "--nmax", "3"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["number_eigenvalues"] == [0.0, 1.0, 2.0, 3.0]
        assert payload["commutator_diagonal"] == [1.0, 1.0, 1.0, -3.0]

    def test_modes(self, capsys):
        rc = cli.main(["quantum", "modes", "--L", "1e-6", "--nmax", "2",
                       "--mass", "2.99e-26", "--N", "1e4", "--T", "1.0"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["mode_count"] == 25
        assert payload["spectrum_lowest_J"][0] == 0.0
        assert 0.0 < payload["condensate_fraction"] <= 1.0

    def test_dispersion_constant_vp(self, tmp_path, capsys):
        src = tmp_path / "disp.csv"
        with open(src, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "v_p"])
            for k in np.linspace(1.0, 2.0, 11):
                w.writerow([repr(float(k)), repr(340.0)])
        dst = tmp_path / "vg.csv"
        rc = cli.main(["quantum", "dispersion", "--input", str(src),
                       "--out", str(dst)])
        assert rc == 0
        with open(dst, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "v_g"]
        for _, vg in rows[1:]:
            assert float(vg) == pytest.approx(340.0, rel=1e-12)

    def test_dispersion_bad_header_exit_2(self, tmp_path, capsys):
        src = tmp_path / "disp.csv"
        src.write_text("frequency,v_p\n1.0,340.0\n2.0,340.0\n")
        rc = cli.main(["quantum", "dispersion", "--input", str(src)])
        assert rc == 2
        assert "unrecognized" in capsys.readouterr().err


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0

    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            cli.main(["frobnicate"])
