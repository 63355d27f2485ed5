import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvarnet import io as tio
from tvarnet.cli import EXIT_INVALID, EXIT_IO, EXIT_SOLVER, main
from tvarnet.model import BreakpointSet, MultivariateSeries, TvarCoefficients, local_breakpoints_of

SMALL = {"num_nodes": 3, "order": 2, "num_samples": 120, "num_breakpoints": 4, "seed": 5}


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def sim(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == 0
    return out


class TestFormats:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        s = tio.format_float(x)
        assert float(s) == x
        assert json.loads(s) == x

    def test_float_is_json_float(self):
        assert tio.format_float(3.0) == "3.0"
        assert tio.format_float(1e300) == "1.0000000000000001e+300" or float(tio.format_float(1e300)) == 1e300
        with pytest.raises(ValueError):
            tio.format_float(float("nan"))

    def test_series_round_trip(self, tmp_path, rng):
        s = MultivariateSeries(rng.standard_normal((3, 50)) * 10.0 ** rng.integers(-30, 30, (3, 50)),
                               ("a", "b", "c"))
        p = tmp_path / "s.csv"
        tio.write_series_csv(s, p)
        back = tio.read_series_csv(p)
        assert back.values.tobytes() == s.values.tobytes()
        assert back.node_labels == ("a", "b", "c")
        assert read_bytes(p).startswith(b"t,a,b,c\n0,")

    @pytest.mark.parametrize("body,where", [
        ("t,a\n0,1.0\n1,x\n", "line 3, column 2"),
        ("t,a\n0,1.0\n2,1.0\n", "line 3, column 1"),
        ("t,a,b\n0,1.0\n", "line 2"),
        ("x,a\n0,1\n", "line 1"),
        ("t,a\n0,nan\n", "line 2, column 2"),
    ])
    def test_series_errors_name_location(self, tmp_path, body, where):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(tio.ParseError, match=where):
            tio.read_series_csv(p)

    def test_coefficients_round_trip_bytes(self, tmp_path, rng):
        c = TvarCoefficients(rng.standard_normal((3, 2, 2, 2)), (3, 7, 20), 30)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        tio.write_coefficients(c, a)
        tio.write_coefficients(tio.read_coefficients(a), b)
        assert read_bytes(a) == read_bytes(b)
        d = json.loads(read_bytes(a))
        assert list(d) == ["L", "P", "T", "coeffs", "segment_starts"]
        assert d["segment_starts"] == [2, 6, 19]
        assert np.array(d["coeffs"]).tobytes() == c.coeffs.tobytes()

    def test_coefficients_shape_errors(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"L": 2, "P": 2, "T": 10, "coeffs": [[[[0.0]]]], "segment_starts": [2]}))
        with pytest.raises(tio.ParseError, match="shape"):
            tio.read_coefficients(p)
        p.write_text('{"L": 2,\n "P": }')
        with pytest.raises(tio.ParseError, match="line 2"):
            tio.read_coefficients(p)

    def test_breakpoints_round_trip(self, tmp_path):
        b = BreakpointSet([(10, 1, 2), (5, 2, 1)])
        p = tmp_path / "b.csv"
        tio.write_breakpoints_csv(b, p)
        assert read_bytes(p) == b"t,i,j\n5,2,1\n10,1,2\n"
        assert tio.read_breakpoints_csv(p) == b

    def test_grid_file(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("lambda,gamma\n0.1,0.2\n1,2\n")
        assert tio.read_grid_csv(p) == [(0.1, 0.2), (1.0, 2.0)]
        p.write_text("lambda,gamma\n")
        with pytest.raises(tio.ParseError):
            tio.read_grid_csv(p)

    def test_canonical_json(self):
        assert tio.dumps({"b": 1, "a": [1.5, True, None, "x"]}) == '{"a": [1.5, true, null, "x"], "b": 1}\n'


class TestSimulate:
    def test_outputs(self, sim):
        assert sorted(os.listdir(sim)) == ["breakpoints.csv", "config.json", "series.csv", "truth.json"]
        s = tio.read_series_csv(sim / "series.csv")
        assert (s.P, s.T) == (3, 120)
        resolved = json.loads((sim / "config.json").read_text())
        assert resolved["edge_prob"] == 0.5 and resolved["seed"] == 5
        truth = tio.read_coefficients(sim / "truth.json")
        assert tio.read_breakpoints_csv(sim / "breakpoints.csv") == local_breakpoints_of(truth, 0.0)

    def test_default_config(self, tmp_path):
        assert main(["simulate", "--seed", "0", "--out-dir", str(tmp_path)]) == 0
        s = tio.read_series_csv(tmp_path / "series.csv")
        assert (s.P, s.T) == (4, 1000)
        assert len(tio.read_breakpoints_csv(tmp_path / "breakpoints.csv")) == 100

    def test_no_breakpoints(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({**SMALL, "num_breakpoints": 0}))
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "breakpoints.csv").read_text() == "t,i,j\n"

    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert main(["simulate", "--seed", "3", "--out-dir", str(tmp_path / d)]) == 0
        for f in ("series.csv", "truth.json", "breakpoints.csv", "config.json"):
            assert read_bytes(tmp_path / "a" / f) == read_bytes(tmp_path / "b" / f)

    def test_seed_override(self, tmp_path, sim):
        assert main(["simulate", "--seed", "6", "--out-dir", str(tmp_path / "x")]) == 0
        assert json.loads((tmp_path / "x" / "config.json").read_text())["seed"] == 6

    def test_unknown_field(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"nodes": 3}')
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_INVALID

    def test_invalid_value(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"edge_prob": 2}')
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_INVALID

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"),
                     "--out-dir", str(tmp_path)]) == EXIT_IO


def fit(sim, tmp_path, *extra, name="fit"):
    out, rep = tmp_path / f"{name}.json", tmp_path / f"{name}-report.json"
    code = main(["fit", str(sim / "series.csv"), "--order", "2", "--out", str(out),
                 "--report", str(rep), *extra])
    return code, out, rep


class TestFit:
    def test_outputs(self, sim, tmp_path):
        code, out, rep = fit(sim, tmp_path, "--lambda", "0.1", "--gamma", "0.1", "--window-len", "10")
        assert code == 0
        c = tio.read_coefficients(out)
        assert (c.P, c.L, c.T, c.num_segments) == (3, 2, 120, 11)
        r = json.loads(rep.read_text())
        assert r["converged"] and r["method"] == "proposed" and "wall_time" not in r

    def test_noiseless_in_sample(self, tmp_path, rng):
        from tvarnet.simulator import GeneratorConfig, generate, simulate_series
        from tvarnet.analysis import forecast_nmse

        truth, _ = generate(GeneratorConfig(num_nodes=2, order=1, num_samples=60, num_breakpoints=0, seed=1))
        s = simulate_series(truth, 0.0, rng, initial=[[1.0], [-1.0]])
        tio.write_series_csv(s, tmp_path / "s.csv")
        out = tmp_path / "c.json"
        assert main(["fit", str(tmp_path / "s.csv"), "--order", "1", "--window-len", "100",
                     "--lambda", "1e-9", "--gamma", "1e-9", "--tol-abs", "1e-12", "--tol-rel", "1e-12",
                     "--max-iters", "100000", "--out", str(out)]) == 0
        assert forecast_nmse(tio.read_coefficients(out), s) < 1e-6

    def test_huge_lambda_zero_model(self, sim, tmp_path):
        code, out, _ = fit(sim, tmp_path, "--lambda", "1e12")
        assert code == 0
        assert np.all(tio.read_coefficients(out).coeffs == 0)

    def test_window_extremes(self, sim, tmp_path):
        _, a, _ = fit(sim, tmp_path, "--lambda", "1", "--gamma", "1", "--window-len", "1", name="a")
        _, b, _ = fit(sim, tmp_path, "--lambda", "1", "--gamma", "1", "--window-len", "118", name="b")
        da, db = json.loads(a.read_text()), json.loads(b.read_text())
        assert len(da["segment_starts"]) == 118 and db["segment_starts"] == [2]
        assert {k: da[k] for k in "LPT"} == {k: db[k] for k in "LPT"}
        assert np.array(da["coeffs"]).shape[1:] == np.array(db["coeffs"]).shape[1:]

    def test_baseline(self, sim, tmp_path):
        code, out, rep = fit(sim, tmp_path, "--lambda", "0.5", "--method", "baseline")
        assert code == 0 and json.loads(rep.read_text())["method"] == "baseline"

    def test_reproducible(self, sim, tmp_path):
        args = ("--lambda", "0.2", "--gamma", "0.3", "--window-len", "7")
        _, a, ra = fit(sim, tmp_path, *args, name="a")
        _, b, rb = fit(sim, tmp_path, *args, name="b")
        assert read_bytes(a) == read_bytes(b) and read_bytes(ra) == read_bytes(rb)

    def test_non_convergence(self, sim, tmp_path):
        code, out, rep = fit(sim, tmp_path, "--lambda", "0.1", "--gamma", "0.1", "--max-iters", "2")
        assert code == EXIT_SOLVER
        assert out.exists() and not json.loads(rep.read_text())["converged"]

    def test_parse_error(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("t,a\n0,1\n1,oops\n")
        assert main(["fit", str(p), "--lambda", "1", "--out", str(tmp_path / "o.json")]) == EXIT_INVALID

    def test_order_too_large(self, sim, tmp_path):
        code = main(["fit", str(sim / "series.csv"), "--order", "500", "--lambda", "1",
                     "--out", str(tmp_path / "o.json")])
        assert code == EXIT_INVALID

    @pytest.mark.parametrize("args", [["--lambda", "-1"], ["--lambda", "1", "--rho", "0"],
                                      ["--lambda", "1", "--window-len", "0"], []])
    def test_bad_flags(self, sim, tmp_path, args):
        assert main(["fit", str(sim / "series.csv"), "--out", str(tmp_path / "o.json"), *args]) == EXIT_INVALID

    def test_missing_series(self, tmp_path):
        assert main(["fit", str(tmp_path / "none.csv"), "--lambda", "1",
                     "--out", str(tmp_path / "o.json")]) == EXIT_IO


def cv(sim, tmp_path, *extra):
    table, best = tmp_path / "scores.csv", tmp_path / "best.json"
    code = main(["cv", str(sim / "series.csv"), "--order", "2", "--window-len", "10", "--folds", "3",
                 "--out-table", str(table), "--out-best", str(best), "--workers", "1", *extra])
    return code, table, best


class TestCv:
    def test_auto_grid(self, sim, tmp_path):
        code, table, best = cv(sim, tmp_path, "--grid-size", "3")
        assert code == 0
        rows = list(csv.DictReader(open(table)))
        assert len(rows) == 9 and list(rows[0]) == ["lambda", "gamma", "score", "fold_0", "fold_1", "fold_2"]
        b = json.loads(best.read_text())
        assert b["lambda"] > 0 and b["gamma"] > 0 and np.isfinite(b["score"])

    def test_singleton_grid(self, sim, tmp_path):
        g = tmp_path / "g.csv"
        g.write_text("lambda,gamma\n0.1,0.2\n")
        code, table, best = cv(sim, tmp_path, "--grid", str(g))
        assert code == 0
        assert len(list(csv.DictReader(open(table)))) == 1
        assert json.loads(best.read_text())["lambda"] == 0.1

    def test_grid_order_irrelevant(self, sim, tmp_path):
        rows = ["0.01,0.5", "0.5,0.01", "0.1,0.1", "0.5,0.5"]
        picks = []
        for k, order in enumerate((rows, rows[::-1])):
            g = tmp_path / f"g{k}.csv"
            g.write_text("lambda,gamma\n" + "\n".join(order) + "\n")
            d = tmp_path / f"run{k}"
            d.mkdir()
            code, table, best = cv(sim, d, "--grid", str(g))
            assert code == 0
            picks.append((read_bytes(table), read_bytes(best)))
        assert picks[0] == picks[1]

    def test_chained_fit(self, sim, tmp_path):
        out = tmp_path / "fit.json"
        code, _, best = cv(sim, tmp_path, "--grid-size", "2", "--fit-out", str(out),
                           "--fit-report", str(tmp_path / "rep.json"))
        assert code == 0
        r = json.loads((tmp_path / "rep.json").read_text())
        assert r["lambda"] == json.loads(best.read_text())["lambda"]
        assert tio.read_coefficients(out).num_segments == 11

    def test_bad_grid(self, sim, tmp_path):
        g = tmp_path / "g.csv"
        g.write_text("lambda,gamma\n-1,1\n")
        assert cv(sim, tmp_path, "--grid", str(g))[0] == EXIT_INVALID

    def test_too_many_folds(self, sim, tmp_path):
        assert cv(sim, tmp_path, "--folds", "1")[0] == EXIT_INVALID


class TestEvaluate:
    def test_self_is_perfect(self, sim, tmp_path):
        out = tmp_path / "m.json"
        t = str(sim / "truth.json")
        assert main(["evaluate", t, t, "--series", str(sim / "series.csv"), "--out", str(out)]) == 0
        m = json.loads(out.read_text())
        for k in ("breakpoint_precision", "breakpoint_recall", "breakpoint_f1",
                  "edge_precision", "edge_recall", "edge_f1"):
            assert m[k] == 1.0
        assert list(m) == sorted(m)

    def test_zero_estimate(self, sim, tmp_path):
        zero = TvarCoefficients.constant(np.zeros((2, 3, 3)), 120)
        tio.write_coefficients(zero, tmp_path / "z.json")
        out = tmp_path / "m.json"
        assert main(["evaluate", str(tmp_path / "z.json"), str(sim / "truth.json"), "--out", str(out)]) == 0
        m = json.loads(out.read_text())
        assert m["breakpoint_recall"] == 0.0 and m["edge_recall"] == 0.0

    def test_two_methods_diffable(self, sim, tmp_path):
        files = []
        for method in ("proposed", "baseline"):
            _, est, _ = fit(sim, tmp_path, "--lambda", "0.3", "--gamma", "0.3", "--window-len", "10",
                            "--method", method, name=method)
            out = tmp_path / f"{method}-metrics.json"
            assert main(["evaluate", str(est), str(sim / "truth.json"), "--out", str(out)]) == 0
            files.append(json.loads(out.read_text()))
        assert list(files[0]) == list(files[1])

    def test_shape_mismatch_names_dimension(self, sim, tmp_path, caplog):
        other = TvarCoefficients.constant(np.zeros((2, 2, 2)), 120)
        tio.write_coefficients(other, tmp_path / "o.json")
        code = main(["evaluate", str(tmp_path / "o.json"), str(sim / "truth.json")])
        assert code == EXIT_INVALID
        assert "disagree on P" in caplog.text

    def test_stdout(self, sim, capsys):
        t = str(sim / "truth.json")
        assert main(["evaluate", t, t]) == 0
        assert json.loads(capsys.readouterr().out)["edge_f1"] == 1.0

    def test_explicit_breakpoints(self, sim, tmp_path):
        t = str(sim / "truth.json")
        out = tmp_path / "m.json"
        assert main(["evaluate", t, t, "--breakpoints", str(sim / "breakpoints.csv"),
                     "--time-tol", "0", "--detect-tol", "0", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["breakpoint_f1"] == 1.0


class TestReport:
    def test_time_invariant(self, tmp_path, rng):
        c = TvarCoefficients.constant(rng.standard_normal((2, 3, 3)), 50)
        tio.write_coefficients(c, tmp_path / "c.json")
        out = tmp_path / "r.csv"
        assert main(["report", str(tmp_path / "c.json"), "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 9
        assert list(rows[0]) == ["i", "j", "window_start", "window_end", "norm", "tap_1", "tap_2"]
        r = rows[5]
        i, j = int(r["i"]), int(r["j"])
        assert float(r["norm"]) == np.linalg.norm(c.coeffs[0, :, i - 1, j - 1])
        assert (r["window_start"], r["window_end"]) == ("2", "49")

    def test_window_count(self, sim, tmp_path):
        _, est, _ = fit(sim, tmp_path, "--lambda", "0.3", "--gamma", "0.3", "--window-len", "10")
        out = tmp_path / "r.csv"
        assert main(["report", str(est), "--out", str(out)]) == 0
        assert len(list(csv.DictReader(open(out)))) == 9 * 11

    def test_zero_norm_exact(self, tmp_path):
        tio.write_coefficients(TvarCoefficients.constant(np.zeros((1, 2, 2)), 10), tmp_path / "z.json")
        out = tmp_path / "r.csv"
        assert main(["report", str(tmp_path / "z.json"), "--out", str(out)]) == 0
        assert all(r["norm"] == "0.0" for r in csv.DictReader(open(out)))

    def test_missing(self, tmp_path):
        assert main(["report", str(tmp_path / "none.json"), "--out", str(tmp_path / "r.csv")]) == EXIT_IO


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "tvarnet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
