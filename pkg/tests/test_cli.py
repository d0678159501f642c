import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from scoredecomp.cli import main, read_score_file, write_score_file
from scoredecomp.errors import InputError

KL_09_05 = 0.3680642071684971


def example_file(path, oracle=True):
    """Twenty rows enumerating the constant-score example: q in {0.1, 0.9}, score 0.5."""
    y = [1] + [0] * 9 + [1] * 9 + [0]
    q = [0.1] * 10 + [0.9] * 10
    write_score_file(path, [0.5] * 20, y, q if oracle else None)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestScoreFile:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "s.csv"
        write_score_file(p, [0.25, 0.1], [1, 0], [0.3, 0.2])
        s, y, q = read_score_file(p)
        assert s.tolist() == [0.25, 0.1] and y.tolist() == [1, 0] and q.tolist() == [0.3, 0.2]

    @pytest.mark.parametrize("body, where", [
        ("score,outcome\n0.2,1\n1.5,0\n", ":3:"),
        ("score,outcome\n0.2,2\n", ":2:"),
        ("score,outcome\n0.2\n", ":2:"),
        ("score,outcome\nabc,1\n", ":2:"),
        ("score,label\n0.2,1\n", ":1:"),
        ("score,outcome,oracle_q\n0.2,1,1.2\n", ":2:"),
    ])
    def test_rejections_name_the_line(self, tmp_path, body, where):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(InputError, match=where):
            read_score_file(p)


class TestDecompose:
    def test_example_exact(self, tmp_path, capsys):
        f = example_file(tmp_path / "ex.csv")
        code, out, _ = run(["decompose", f, "--exact"], capsys)
        assert code == 0
        doc = json.loads(out)
        b = doc["losses"]["brier"]
        assert b["reliability"] == 0.0
        assert b["grouping"] == pytest.approx(0.16, abs=1e-12)
        assert b["irreducible"] == pytest.approx(0.09, abs=1e-12)
        assert b["total"] == 0.25
        assert doc["losses"]["logloss"]["grouping"] == pytest.approx(KL_09_05, abs=1e-12)

    def test_score_equals_outcome(self, tmp_path, capsys):
        p = tmp_path / "p.csv"
        write_score_file(p, [0, 1, 1, 0, 1, 0, 0, 1, 1, 0], [0, 1, 1, 0, 1, 0, 0, 1, 1, 0])
        code, out, _ = run(["decompose", p, "--loss", "brier"], capsys)
        assert code == 0
        assert json.loads(out)["losses"]["brier"]["total"] == 0.0

    def test_without_oracle(self, tmp_path, capsys):
        f = example_file(tmp_path / "ex.csv", oracle=False)
        code, out, _ = run(["decompose", f], capsys)
        b = json.loads(out)["losses"]["brier"]
        assert code == 0
        assert set(b) == {"reliability", "total"}

    def test_out_dir(self, tmp_path, capsys):
        f = example_file(tmp_path / "ex.csv")
        code, out, _ = run(["decompose", f, "--out", tmp_path / "o", "--bins", "2"], capsys)
        assert code == 0 and out == ""
        diagram = (tmp_path / "o" / "diagram.csv").read_text()
        assert diagram.splitlines()[0] == "bin,mean_score,emp_freq,mass"
        assert json.loads((tmp_path / "o" / "report.json").read_text())["metadata"]["seed"] == 0

    def test_single_class_exit_3(self, tmp_path, capsys):
        p = tmp_path / "one.csv"
        write_score_file(p, [0.2, 0.4, 0.6], [1, 1, 1])
        code, _, err = run(["decompose", p], capsys)
        assert code == 3 and "single" in err

    def test_bad_value_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("score,outcome\n0.2,1\n1.5,0\n")
        code, _, err = run(["decompose", p], capsys)
        assert code == 2 and "bad.csv:3" in err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        code, _, _ = run(["decompose", tmp_path / "nope.csv"], capsys)
        assert code == 2

    def test_unknown_flag_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["decompose", "x.csv", "--colour", "red"])
        assert exc.value.code == 2


class TestConfig:
    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"depth": 2, "atoms": 6, "seed": 4}))
        _, a, _ = run(["boost", "--config", cfg, "--depth", "4"], capsys)
        _, b, _ = run(["boost", "--depth", "4", "--atoms", "6", "--seed", "4"], capsys)
        assert a == b
        assert len(read_csv(a)) == 5

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"depht": 2}))
        code, _, err = run(["boost", "--config", cfg], capsys)
        assert code == 2 and "depht" in err

    def test_invalid_values_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"rhos": [1.5]}))
        assert run(["synth", "--config", cfg], capsys)[0] == 2
        assert run(["boost", "--depth", "0"], capsys)[0] == 2
        assert run(["robustness", "--methods", "average,magic"], capsys)[0] == 2
        cfg.write_text("{not json")
        assert run(["identities", "--config", cfg], capsys)[0] == 2


class TestSynth:
    def test_single_rho(self, tmp_path, capsys):
        argv = ["synth", "--rhos", "0.0", "--n", "1500", "--seed", "3"]
        code, out, _ = run(argv, capsys)
        rows = read_csv(out)
        assert code == 0
        assert [r["variant"] for r in rows] == ["s1", "s2", "avg", "s12", "s12q"]
        assert all(r["rho"] == "0.0" for r in rows)
        assert run(argv, capsys)[1] == out


class TestCounterexample:
    def test_output(self, capsys):
        code, out, _ = run(["counterexample"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert "S1 brier_reliability = 0.0" in lines
        assert "S2 brier_reliability = 0.0" in lines
        assert "average brier_reliability = 0.03125" in lines
        assert "E[Y|Sbar=0.25] = 0.0" in lines


class TestBoost:
    def test_trivial_gains_zero(self, capsys):
        code, out, _ = run(["boost", "--trivial", "--depth", "2"], capsys)
        rows = read_csv(out)
        assert code == 0
        assert all(float(r["gain"]) == 0.0 and float(r["logloss_gain"]) == 0.0 for r in rows)

    def test_risk_nonincreasing(self, capsys):
        for seed in range(5):
            _, out, _ = run(["boost", "--seed", seed, "--depth", "3"], capsys)
            risks = [float(r["brier_risk"]) for r in read_csv(out)]
            assert all(b <= a for a, b in zip(risks, risks[1:]))


class TestRobustness:
    def test_five_replicates(self, tmp_path, capsys):
        out_dir = tmp_path / "r"
        code, _, _ = run(["robustness", "--replicates", "5", "--n", "600", "--out", out_dir], capsys)
        assert code == 0
        reps = read_csv((out_dir / "replicates.csv").read_text())
        assert len(reps) == 10
        avg = [r for r in reps if r["method"] == "average"]
        stk = [r for r in reps if r["method"] == "stacking"]
        assert len(avg) == len(stk) == 5
        deltas = [float(s["lcs"]) - float(a["lcs"]) for a, s in zip(avg, stk)]
        comp = {(r["metric"], r["method"]): r for r in read_csv((out_dir / "comparison.csv").read_text())}
        row = comp[("lcs", "stacking")]
        assert float(row["delta_mean"]) == pytest.approx(np.mean(deltas), abs=1e-15)
        assert float(row["win_rate"]) == pytest.approx(np.mean(np.array(deltas) < 0))

    def test_reingest_reproduces_summary(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["robustness", "--replicates", "4", "--n", "600", "--out", a], capsys)
        code, _, _ = run(["robustness", "--table", a / "replicates.csv", "--out", b], capsys)
        assert code == 0
        assert (a / "summary.json").read_text() == (b / "summary.json").read_text()
        assert (a / "comparison.csv").read_text() == (b / "comparison.csv").read_text()

    def test_unpaired_table_exit_2(self, tmp_path, capsys):
        t = tmp_path / "t.csv"
        t.write_text("seed,method,lcs\n0,average,0.1\n1,stacking,0.2\n")
        assert run(["robustness", "--table", t], capsys)[0] == 2


class TestIdentities:
    def test_small_suite(self, capsys):
        code, out, _ = run(["identities", "--n-spaces", "10"], capsys)
        doc = json.loads(out)
        assert code == 0
        assert max(doc["max_abs_residual"].values()) < 1e-12


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "scoredecomp", "counterexample"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert "average brier_reliability = 0.03125" in res.stdout
