import json

import numpy as np
import pytest

from hfa.cli import RunConfig, main, parse_config, write_csv
from hfa.errors import ConfigError


def strip_timestamp(text):
    return "\n".join(l for l in text.splitlines() if not l.startswith("# timestamp"))


class TestParseConfig:
    def test_flags_only(self):
        config = parse_config(
            "--experiment converge --xi 1 --w 1 --q 2 --L 500 --seed 7".split()
        )
        assert config.experiment == "converge"
        assert (config.xi, config.w, config.q, config.L, config.seed) == (1.0, 1.0, 2.0, 500, 7)

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("experiment = converge\nq = 2\nL = 60\n")
        config = parse_config(["--config", str(cfg), "--q", "7"])
        assert config.q == 7.0
        assert config.L == 60

    def test_unknown_key_zeta_suggests_w(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("experiment = converge\nzeta = 1\n")
        with pytest.raises(ConfigError, match="'w'"):
            parse_config(["--config", str(cfg)])

    def test_unknown_key_gets_suggestion(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("experiment = converge\nsample = 3\n")
        with pytest.raises(ConfigError, match="samples"):
            parse_config(["--config", str(cfg)])

    def test_missing_experiment_rejected(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_config(["--L", "60"])

    def test_zero_samples_rejected(self):
        with pytest.raises(ConfigError, match="samples"):
            parse_config("--experiment wegner --samples 0".split())

    def test_bad_mu_rejected(self):
        with pytest.raises(ConfigError, match="mu"):
            parse_config("--experiment converge --mu nonsense".split())

    def test_list_values_parsed(self):
        config = parse_config(
            "--experiment wegner --epsilons 0.1,0.2 --xi-values 0,1 --box-radii 3,6".split()
        )
        assert config.epsilons == (0.1, 0.2)
        assert config.xi_values == (0.0, 1.0)
        assert config.box_radii == (3, 6)

    def test_round_trip_through_file(self, tmp_path):
        original = parse_config(
            "--experiment locality --xi 2 --w 0.5 --q 1 --L 80 --seed 3 "
            "--amplitude 0.25 --epsilons 0.01,0.02".split()
        )
        cfg = tmp_path / "echo.cfg"
        cfg.write_text(original.to_file_text())
        assert parse_config(["--config", str(cfg)]) == original

    def test_defaults_documented_values(self):
        config = parse_config(["--experiment", "converge"])
        assert config.tol == 1e-10
        assert config.samples == 100
        assert config.algorithm == "auto"


class TestExitCodes:
    def test_config_error_is_exit_2(self, capsys):
        assert main("--experiment wegner --samples 0".split()) == 2
        assert "samples" in capsys.readouterr().err

    def test_success_is_exit_0(self, tmp_path):
        out = tmp_path / "run.csv"
        code = main(
            f"--experiment converge --L 60 --q 0.5 --seed 1 --output {out}".split()
        )
        assert code == 0
        assert out.exists()

    def test_solver_failure_is_exit_1_with_partial_rows(self, tmp_path, capsys):
        out = tmp_path / "fail.csv"
        code = main(
            f"--experiment converge --L 60 --q 2 --max-iter 2 "
            f"--algorithm fixed_point --output {out}".split()
        )
        assert code == 1
        text = out.read_text()
        assert "# error = MaxIterExceeded" in text
        assert len([l for l in text.splitlines() if not l.startswith("#")]) >= 2


class TestOutputFormat:
    def run_csv(self, tmp_path, name="run.csv", extra=""):
        out = tmp_path / name
        argv = f"--experiment converge --L 60 --q 0.5 --seed 1 --output {out} {extra}".split()
        assert main(argv) == 0
        return out.read_text()

    def test_header_and_metadata_layout(self, tmp_path):
        text = self.run_csv(tmp_path)
        lines = text.splitlines()
        meta = [l for l in lines if l.startswith("# ")]
        data = [l for l in lines if not l.startswith("#")]
        assert data[0] == "iteration,residual,energy"
        assert any(l.startswith("# columns = ") for l in meta)
        assert any(l.startswith("# timestamp = ") for l in meta)
        assert any(l.startswith("# run-id = ") for l in meta)
        assert any(l.startswith("# col.residual = ") for l in meta)

    def test_lf_endings_and_plain_decimals(self, tmp_path):
        out = tmp_path / "run.csv"
        main(f"--experiment converge --L 60 --q 0.5 --seed 1 --output {out}".split())
        raw = out.read_bytes()
        assert b"\r" not in raw
        assert b"," in raw and b"." in raw

    def test_reals_round_trip(self, tmp_path):
        text = self.run_csv(tmp_path)
        rows = [l.split(",") for l in text.splitlines() if not l.startswith("#")][1:]
        for row in rows:
            for cell in row:
                value = float(cell)
                assert format(value, ".17g") == cell

    def test_identical_reruns_differ_only_by_timestamp(self, tmp_path):
        a = self.run_csv(tmp_path, "a.csv")
        b = self.run_csv(tmp_path, "b.csv")
        assert strip_timestamp(a) == strip_timestamp(b)

    def test_json_output(self, tmp_path):
        out = tmp_path / "run.json"
        code = main(
            f"--experiment converge --L 60 --q 0.5 --seed 1 --output {out} --format json".split()
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["columns"] == ["iteration", "residual", "energy"]
        assert payload["metadata"]["experiment"] == "converge"
        assert len(payload["rows"]) >= 1

    def test_stdout_output(self, capsys):
        assert main("--experiment converge --L 60 --q 0.5 --seed 1".split()) == 0
        assert "iteration,residual,energy" in capsys.readouterr().out


class TestDispatch:
    @pytest.mark.parametrize(
        "argv",
        [
            "--experiment locality --L 80 --seed 2 --site 40 --amplitude 0.5",
            "--experiment wegner --L 50 --samples 3 --seed 2 --epsilons 0.01,0.1",
            "--experiment localisation --L 80 --seed 2",
            "--experiment sweep-periodic --L 60 --q 0 --samples 2 --xi-values 0,2",
            "--experiment multiscale-probe --L 100 --seed 2 --box-radii 4,8",
            "--experiment verify --L 80 --seed 2",
        ],
        ids=["locality", "wegner", "localisation", "sweep", "multiscale", "verify"],
    )
    def test_every_experiment_runs(self, tmp_path, argv):
        out = tmp_path / "out.csv"
        assert main(argv.split() + ["--output", str(out)]) == 0
        assert len(out.read_text().splitlines()) > 2
