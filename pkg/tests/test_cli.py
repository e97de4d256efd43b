import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from fpstar.cli import EXIT_INVALID, EXIT_NONCONVERGED, EXIT_OK, main
from fpstar.problem import builtin_example, save_problem
from fpstar.report import (PROFILE_COLUMNS, TABLE_COLUMNS, emit_profiles, run_example, table_csv,
                           table_sweep)


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestExitCodes:
    def test_example_ok(self, capsys):
        assert main(["example", "--id", "1"]) == EXIT_OK
        (row,) = rows_of(capsys.readouterr().out)
        assert row["converged"] == "1"
        assert float(row["e_rho1"]) <= 1e-7

    @pytest.mark.parametrize("argv", [
        ["example", "--id", "7"],
        ["example", "--id", "1", "--J1", "0"],
        ["example", "--id", "1", "--omega", "2"],
        ["solve", "--problem", "/nonexistent/problem.json"],
        ["profiles", "--id", "1", "--times", "1.5"],
        ["table", "--id", "1", "--J"],
        ["frobnicate"],
    ])
    def test_invalid_input(self, argv, tmp_path, capsys):
        with_outdir = argv + (["--outdir", str(tmp_path)] if argv[0] == "profiles" else [])
        try:
            rc = main(with_outdir)
        except SystemExit as err:
            rc = err.code
        assert rc == EXIT_INVALID

    def test_malformed_problem_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"T": 1.0, "edges": [{"l": 1.0, "rho0": "x +* 2"}]}))
        assert main(["solve", "--problem", str(path)]) == EXIT_INVALID

    def test_nonconvergence(self, capsys):
        rc = main(["example", "--id", "2", "--solver", "sweep", "--omega", "1", "--sweep-max-iter", "5"])
        assert rc == EXIT_NONCONVERGED
        (row,) = rows_of(capsys.readouterr().out)
        assert row["converged"] == "0"


class TestOutputs:
    def test_solve_from_file_matches_example(self, tmp_path, capsys):
        path = tmp_path / "ex1.json"
        save_problem(builtin_example(1), path)
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["solve", "--problem", str(path), "--out", str(out1)]) == EXIT_OK
        assert main(["example", "--id", "1", "--out", str(out2)]) == EXIT_OK
        assert out1.read_text() == out2.read_text()

    def test_deterministic(self, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}.csv"
            assert main(["example", "--id", "1", "--J1", "1", "--out", str(out)]) == EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_profiles(self, tmp_path, capsys):
        assert main(["profiles", "--id", "1", "--outdir", str(tmp_path), "--prefix", "p"]) == EXIT_OK
        files = sorted(tmp_path.glob("p_edge*_t*.csv"))
        assert len(files) == 6
        rows = rows_of(files[0].read_text())
        assert list(rows[0]) == list(PROFILE_COLUMNS) and len(rows) == 201
        gap = max(abs(float(r["rho_approx"]) - float(r["rho_exact"])) for r in rows)
        assert gap <= 1e-7

    def test_empty_times(self, tmp_path):
        sol, _ = run_example(1, 1, 1)
        assert emit_profiles(sol, [], tmp_path) == []
        assert not any(tmp_path.iterdir())

    def test_profile_time_range(self, tmp_path):
        sol, _ = run_example(1, 1, 1)
        with pytest.raises(ValueError):
            emit_profiles(sol, [-0.1], tmp_path)

    def test_table(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert main(["table", "--id", "1", "--J", "1", "2", "--out", str(out)]) == EXIT_OK
        rows = rows_of(out.read_text())
        assert [(r["J1"], r["J2"]) for r in rows] == [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]
        assert list(rows[0]) == list(TABLE_COLUMNS)
        assert "e_rho12" in capsys.readouterr().err

    def test_table_empty_list(self):
        with pytest.raises(ValueError):
            table_sweep(1, [])

    def test_table_example1_shape(self):
        rows = table_sweep(1, [2, 3])
        assert len(rows) == 4 and all(r.converged for r in rows)
        assert len(table_csv(rows).splitlines()) == 5

    def test_verify_suite(self, capsys):
        assert main(["verify", "--suite", "basis"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "checks passed" in out and "FAIL" not in out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "fpstar", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("fpstar ")


class TestRunExample:
    def test_example1_upper_band(self):
        # the exact state lies in the ansatz space, so errors sit at rounding level
        _, rep = run_example(1, 2, 2)
        assert max(rep.e_rho[:2]) <= 1e-7

    def test_example2_band(self):
        _, rep = run_example(2, 3, 3)
        assert 1e-4 <= rep.e_rho[0] <= 1e-2
