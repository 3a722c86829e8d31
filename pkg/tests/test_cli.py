import numpy as np
import pytest

from ccmvbalance import cli
from ccmvbalance.data import dataset_to_csv_bytes
from ccmvbalance.simbench import gen_replication, make_setting

from oracles import irls_logistic


def write_setting1_csv(path, seed=0, n=400):
    rep = gen_replication(make_setting(1, n), seed)
    path.write_bytes(dataset_to_csv_bytes(rep.dataset))
    return rep


def write_complete_csv(path, seed=1, n=120):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)).clip(-3, 3)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ [1.0, -1.0] + 0.2)))).astype(float)
    lines = ["y,x1,x2"] + [f"{yi:.0f},{float(a)!r},{float(b)!r}"
                           for yi, (a, b) in zip(y, X)]
    path.write_text("\n".join(lines) + "\n")
    return X, y


FAST_GRID = ["--lambda-grid", "1,0.01,0.0001", "--gamma-grid", "0.5,1", "--folds", "4"]


class TestFit:
    def test_zero_missingness_matches_logistic(self, tmp_path):
        csv_path = tmp_path / "full.csv"
        X, y = write_complete_csv(csv_path)
        out = tmp_path / "out"
        code = cli.main(["fit", "--input", str(csv_path), "--outcome", "y",
                         "--out", str(out), *FAST_GRID])
        assert code == 0
        rows = (out / "coefficients.csv").read_text().strip().split("\n")[1:]
        coefs = np.array([float(r.split(",")[1]) for r in rows])
        beta = irls_logistic(np.column_stack([X, np.ones(len(y))]), y)
        assert np.allclose(coefs, beta, atol=1e-6)
        assert (out / "manifest.txt").exists()

    def test_setting1_fixture_outputs(self, tmp_path):
        csv_path = tmp_path / "s1.csv"
        write_setting1_csv(csv_path)
        out = tmp_path / "out"
        code = cli.main(["fit", "--input", str(csv_path), "--outcome", "y",
                         "--seed", "5", "--out", str(out), *FAST_GRID])
        assert code == 0
        rows = (out / "coefficients.csv").read_text().strip().split("\n")[1:]
        ses = np.array([float(r.split(",")[2]) for r in rows])
        assert (ses > 0).all()
        tuning = (out / "tuning.txt").read_text()
        assert tuning.startswith("patterns=3")
        assert (out / "weights.csv").exists()
        assert len(list(out.glob("cv_*.csv"))) == 3

    def test_missing_outcome_column_exits_one(self, tmp_path, capsys):
        csv_path = tmp_path / "d.csv"
        write_complete_csv(csv_path)
        code = cli.main(["fit", "--input", str(csv_path), "--outcome", "zz",
                         "--out", str(tmp_path / "o")])
        assert code == 1
        assert "zz" in capsys.readouterr().err

    def test_partial_convergence_exits_two(self, tmp_path, monkeypatch):
        import ccmvbalance.cli as climod

        csv_path = tmp_path / "full.csv"
        write_complete_csv(csv_path)

        real = climod.fit_weighted

        def wobbly(*args, **kwargs):
            result = real(*args, **kwargs)
            result.converged = False
            return result

        monkeypatch.setattr(climod, "fit_weighted", wobbly)
        code = cli.main(["fit", "--input", str(csv_path), "--outcome", "y",
                         "--out", str(tmp_path / "o"), *FAST_GRID])
        assert code == 2

    def test_config_file_layering(self, tmp_path):
        csv_path = tmp_path / "full.csv"
        write_complete_csv(csv_path)
        config = tmp_path / "run.cfg"
        config.write_text(
            f"input={csv_path}\noutcome=y\nfolds=3\n"
            "lambda-grid=1,0.01\ngamma-grid=1\n")
        out = tmp_path / "o"
        code = cli.main(["fit", "--config", str(config), "--folds", "4",
                         "--out", str(out)])
        assert code == 0
        manifest = (out / "manifest.txt").read_text()
        assert "folds=4" in manifest          # flag wins
        assert "lambda_grid=1.0,0.01" in manifest  # config used


class TestSimulate:
    def test_determinism_and_restriction(self, tmp_path):
        args = ["simulate", "--setting", "1", "--reps", "3", "--n", "250",
                "--seed", "7", "--methods", "full,complete",
                "--parallelism", "1"]
        assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
        assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
        t1 = (tmp_path / "a" / "table1.csv").read_bytes()
        t2 = (tmp_path / "b" / "table1.csv").read_bytes()
        assert t1 == t2
        lines = t1.decode().strip().split("\n")
        methods = [ln.split(",")[1] for ln in lines[1:]]
        assert methods == ["full", "complete"]

    def test_invalid_setting_exits_one(self, tmp_path, capsys):
        code = cli.main(["simulate", "--setting", "4", "--reps", "2",
                         "--out", str(tmp_path)])
        assert code == 1

    def test_unknown_method_exits_one(self, tmp_path):
        code = cli.main(["simulate", "--setting", "1", "--reps", "2",
                         "--methods", "full,warp", "--out", str(tmp_path)])
        assert code == 1


class TestSummarize:
    def _report(self, tmp_path, name, include_full=True, extra_method=None):
        header = ("setting,method,n,reps_used,dropped,"
                  "bias_theta1,bias_theta2,bias_theta3,bias_theta4,"
                  "mse_theta1,mse_theta2,mse_theta3,mse_theta4")
        rows = []
        if include_full:
            rows.append("1,full,100,5,0," + ",".join(["0.01"] * 4)
                        + "," + ",".join(["0.02"] * 4))
        rows.append("1,complete,100,5,0," + ",".join(["0.21"] * 4)
                    + "," + ",".join(["0.12"] * 4))
        if extra_method:
            rows.append(f"1,{extra_method},100,5,0,"
                        + ",".join(["0.05"] * 4) + "," + ",".join(["0.06"] * 4))
        p = tmp_path / name
        p.write_text(header + "\n" + "\n".join(rows) + "\n")
        return p

    def test_single_input_passthrough_with_deltas(self, tmp_path, capsys):
        p = self._report(tmp_path, "r1.csv")
        code = cli.main(["summarize", str(p)])
        assert code == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0].endswith("delta_mse_theta4")
        complete_row = [ln for ln in out if ",complete," in ln][0]
        assert complete_row.split(",")[-8] == "0.2"  # 0.21 - 0.01

    def test_union_of_disjoint_methods(self, tmp_path):
        p1 = self._report(tmp_path, "r1.csv")
        p2 = self._report(tmp_path, "r2.csv", include_full=False,
                          extra_method="proposed")
        out = tmp_path / "merged.csv"
        code = cli.main(["summarize", str(p1), str(p2), "--out", str(out)])
        assert code == 0
        text = out.read_text()
        assert ",proposed," in text and ",full," in text

    def test_malformed_csv_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("just,some\nnoise\n")
        assert cli.main(["summarize", str(bad)]) == 1


def test_usage_error_exits_one():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
