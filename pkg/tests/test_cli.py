from __future__ import annotations

import json

import numpy as np
import pytest

from feedersim.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, EXIT_TOLERANCE, main
from feedersim.control import ControlConfig
from feedersim.experiment import evaluate
from feedersim.model import Feeder, LineSegment, NodeState, case_spec, generate, read_feeder, write_feeder


def body(path) -> list[str]:
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


class TestGenerate:
    def test_case3(self, tmp_path, capsys):
        rc = main(["generate", "--case", "3", "--topology-seed", "7", "--load-seed", "11", "--output-dir", str(tmp_path)])
        assert rc == EXIT_OK
        f = read_feeder(tmp_path / "feeder.csv")
        assert f.n == 250 and f.pv_count == 125
        assert "pv_nodes=125" in capsys.readouterr().out

    def test_bad_case(self, tmp_path, capsys):
        assert main(["generate", "--case", "9", "--output-dir", str(tmp_path)]) == EXIT_INVALID
        assert "case must be 1..4" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["generate", "--bogus"], [], ["solve"]])
    def test_usage_errors_are_validation_errors(self, argv):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == EXIT_INVALID

    def test_identical_bytes(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            main(["generate", "--case", "1", "--load-seed", "3", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_custom_scenario(self, tmp_path):
        args = ["generate", "--out", str(tmp_path / "f.csv"), "--node-count", "10", "--spacing-min", "1",
                "--spacing-max", "1", "--r-per-km", "0.5", "--x-per-km", "0.5", "--v0", "1000",
                "--p-c-max", "100", "--q-c-ratio-min", "0", "--q-c-ratio-max", "0", "--penetration", "0.3",
                "--p-g", "50", "--s", "60"]
        assert main(args) == EXIT_OK
        f = read_feeder(tmp_path / "f.csv")
        assert f.n == 10 and f.pv_count == 3 and np.all(f.r == 0.5)

    def test_case_and_scenario_exclusive(self, tmp_path, capsys):
        assert main(["generate", "--case", "1", "--v0", "1000", "--output-dir", str(tmp_path)]) == EXIT_INVALID
        assert "either case_id" in capsys.readouterr().err

    def test_config_file_and_flag_override(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"case_id": 2, "load_seed": 4, "output_dir": str(tmp_path)}))
        assert main(["generate", "--config", str(cfg)]) == EXIT_OK
        assert read_feeder(tmp_path / "feeder.csv").load_seed == 4
        assert main(["generate", "--config", str(cfg), "--load-seed", "5"]) == EXIT_OK
        f = read_feeder(tmp_path / "feeder.csv")
        assert f.load_seed == 5 and f.pv_count == 50

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"case_id": 2, "kay": 1}))
        assert main(["generate", "--config", str(cfg)]) == EXIT_INVALID
        assert "kay" in capsys.readouterr().err


class TestSolve:
    @pytest.fixture
    def feeder_file(self, tmp_path):
        path = tmp_path / "feeder.csv"
        write_feeder(generate(case_spec(1)), path)
        return path

    def _metrics(self, out: str) -> tuple[float, float]:
        values = dict(tok.split("=", 1) for line in out.splitlines() for tok in line.split() if "=" in tok)
        return float(values["losses_w"]), float(values["delta_v"])

    def test_baseline_round_trip(self, feeder_file, tmp_path, capsys):
        assert main(["solve", str(feeder_file), "--output-dir", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert self._metrics(out) == evaluate(generate(case_spec(1)), ControlConfig(scheme="none"))
        assert "VIOLATION" in out  # the 20%-PV heavy-load case exceeds 0.05
        assert (tmp_path / "solution.csv").exists()

    def test_hybrid_k1_equals_loss(self, feeder_file, tmp_path, capsys):
        main(["solve", str(feeder_file), "--output-dir", str(tmp_path), "--scheme", "hybrid", "--k", "1"])
        a = self._metrics(capsys.readouterr().out)
        main(["solve", str(feeder_file), "--output-dir", str(tmp_path), "--scheme", "loss"])
        b = self._metrics(capsys.readouterr().out)
        assert a == b

    def test_nonlinear_zero_load(self, tmp_path, capsys):
        f = Feeder.from_parts(7200.0, [LineSegment(0.25, 0.0825, 0.095)] * 5, [NodeState()] * 5)
        write_feeder(f, tmp_path / "z.csv")
        assert main(["solve", str(tmp_path / "z.csv"), "--model", "nonlinear", "--output-dir", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "iterations=1" in out and "delta_v=0.0 " in out

    def test_divergence_exit_code(self, tmp_path, capsys):
        f = Feeder.from_parts(100.0, [LineSegment(1, 1, 1)], [NodeState(p_c=1e6, q_c=1e6)])
        write_feeder(f, tmp_path / "heavy.csv")
        rc = main(["solve", str(tmp_path / "heavy.csv"), "--model", "nonlinear", "--output-dir", str(tmp_path)])
        assert rc == EXIT_DIVERGED
        assert "residual" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["solve", str(tmp_path / "nope.csv")]) == EXIT_INVALID


class TestSweep:
    def test_two_rows(self, tmp_path):
        rc = main(["sweep", "--case", "1", "--steps", "2", "--k-min", "0", "--k-max", "1",
                   "--n-seeds", "1", "--output-dir", str(tmp_path)])
        assert rc == EXIT_OK
        rows = body(tmp_path / "sweep.csv")
        assert rows[0] == "k,losses_w,rel_losses,delta_v,pareto"
        assert [r.split(",")[0] for r in rows[1:]] == ["0.0", "1.0"]

    def test_ensemble_outputs(self, tmp_path, capsys):
        rc = main(["sweep", "--case", "2", "--n-seeds", "3", "--steps", "31", "--output-dir", str(tmp_path)])
        assert rc == EXIT_OK
        for seed in (0, 1, 2):
            assert (tmp_path / f"sweep_seed{seed}.csv").exists()
        assert "# seeds=0,0..2" in (tmp_path / "sweep_aggregate.csv").read_text()
        out = capsys.readouterr().out
        assert "min rel_losses" in out and "min delta_v" in out

    def test_refine(self, tmp_path):
        rc = main(["sweep", "--case", "4", "--n-seeds", "1", "--refine", "--output-dir", str(tmp_path)])
        assert rc == EXIT_OK
        coarse = body(tmp_path / "sweep.csv")[1:]
        fine = body(tmp_path / "sweep_refined.csv")[1:]
        assert len(coarse) == 301 and len(fine) == 21
        best = min(coarse, key=lambda r: float(r.split(",")[2])).split(",")[0]
        ks = [float(r.split(",")[0]) for r in fine]
        assert ks[10] == pytest.approx(float(best))
        assert ks[1] - ks[0] == pytest.approx(0.005)

    def test_dump_and_validate(self, tmp_path, capsys):
        rc = main(["sweep", "--case", "2", "--n-seeds", "1", "--steps", "4", "--dump-solutions",
                   "--validate-nonlinear", "--output-dir", str(tmp_path)])
        assert rc == EXIT_OK
        assert len(list((tmp_path / "solutions").glob("k_*.csv"))) == 4
        assert "nonlinear losses" in capsys.readouterr().out


class TestCase:
    def test_single_seed_flags_std(self, tmp_path, capsys):
        rc = main(["case", "--case", "2", "--n-seeds", "1", "--steps", "31", "--output-dir", str(tmp_path)])
        assert rc in (EXIT_OK, EXIT_TOLERANCE)
        doc = json.loads((tmp_path / "case2_paper_literal_summary.json").read_text())
        assert doc["std_defined"] is False and doc["std_L0"] is None
        assert "undefined" in capsys.readouterr().out

    def test_exit_code_reflects_checks(self, tmp_path):
        rc = main(["case", "--case", "3", "--n-seeds", "2", "--steps", "31", "--output-dir", str(tmp_path)])
        doc = json.loads((tmp_path / "case3_paper_literal_summary.json").read_text())
        all_ok = all(c["ok"] for c in doc["checks"].values())
        assert rc == (EXIT_OK if all_ok else EXIT_TOLERANCE)

    def test_csv_format(self, tmp_path):
        main(["case", "--case", "1", "--n-seeds", "2", "--steps", "11", "--format", "csv",
              "--coeff-mode", "drop_nulling", "--output-dir", str(tmp_path)])
        text = (tmp_path / "case1_drop_nulling_summary.csv").read_text()
        assert text.startswith("key,value\n") and "coeff_mode,'drop_nulling'" in text

    def test_requires_case(self, tmp_path):
        args = ["case", "--output-dir", str(tmp_path), "--node-count", "10", "--spacing-min", "1",
                "--spacing-max", "1", "--r-per-km", "0.5", "--x-per-km", "0.5", "--v0", "1000",
                "--p-c-max", "100", "--q-c-ratio-min", "0", "--q-c-ratio-max", "0", "--penetration", "0.3",
                "--p-g", "50", "--s", "60"]
        assert main(args) == EXIT_INVALID
