import csv
import os

import numpy as np
import pytest

from cdgp import bench
from cdgp.cli import main
from cdgp.experiment import (MONOTONE, ExperimentConfig, load_model, parameter_rmse, read_csv, run_fold,
                             save_fold)
from cdgp.ode import get_scenario

QUICK = """
[experiment]
scenario = lotka-volterra/1
folds = {folds}
n_samples = 20
[model]
n_rf = 20
[train]
iterations = 40
rounds = 2
n_mc = 2
"""


def _ini(tmp_path, folds=1, extra=""):
    path = tmp_path / "quick.ini"
    path.write_text(QUICK.format(folds=folds) + extra)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config -----------------------------------------------------------------------------

def test_ini_round_trip():
    cfg = ExperimentConfig().replace(scenario="fhn/2", folds=3, kernel="matern", nu=1.5, iterations=7,
                                     constraint_noise="gaussian", psi_d=2.5)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_ini_rejects_unknown_key():
    with pytest.raises(ValueError, match=r"\[model\] widthz"):
        ExperimentConfig.from_ini("[model]\nwidthz = 3\n")


def test_scenario_alone_is_runnable():
    cfg = ExperimentConfig(scenario="fhn/1")
    assert cfg.folds == 1 and cfg.train.iterations > 0


def test_fold_count_validated():
    with pytest.raises(ValueError):
        ExperimentConfig(folds=0)


# -- generate ---------------------------------------------------------------------------

@pytest.mark.parametrize("scenario, shape", [("lotka-volterra/1", (34, 2)), ("fhn/2", (20, 2)),
                                             ("lorenz96/125", (32, 125))])
def test_generate_shapes(tmp_path, capsys, scenario, shape):
    out = tmp_path / "d.csv"
    assert main(["generate", scenario, "--seed", "1", "--out", str(out)]) == 0
    assert f"{shape[0]} rows x {shape[1]} columns" in capsys.readouterr().out
    rows = _rows(out)
    assert len(rows) == shape[0] and len(rows[0]) == shape[1] + 1


def test_generate_unknown_scenario_is_usage_error(tmp_path):
    assert main(["generate", "nope/1", "--out", str(tmp_path / "x.csv")]) == 2
    assert not (tmp_path / "x.csv").exists()


def test_generate_unwritable_path_is_runtime_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["generate", "fhn/1", "--out", str(blocker / "d.csv")]) == 1


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["fit", "--no-such-flag"])
    assert e.value.code == 2


def test_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["benchmark", "everything"])
    assert e.value.code == 2


# -- fit / predict ----------------------------------------------------------------------

def test_fit_writes_artifacts_and_is_byte_reproducible(tmp_path):
    ini = _ini(tmp_path)
    for run in ("a", "b"):
        assert main(["fit", "--config", ini, "--out", str(tmp_path / run)]) == 0
    post = _rows(tmp_path / "a" / "posterior.csv")
    assert [r["parameter"] for r in post] == ["alpha", "beta", "gamma", "delta"]
    assert list(post[0]) == ["parameter", "mean", "std", "q2.5", "q97.5"]
    for name in ("posterior.csv", "trace.csv", "summary.csv", "trajectories.csv", "model.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_fit_folds_use_distinct_seeds(tmp_path):
    out = tmp_path / "o"
    assert main(["fit", "--config", _ini(tmp_path, folds=5), "--out", str(out), "--seed", "10"]) == 0
    summary = _rows(out / "summary.csv")
    assert [int(r["seed"]) for r in summary] == [10, 11, 12, 13, 14]
    posts = [out / f"posterior_fold{k}.csv" for k in range(5)]
    assert all(p.exists() for p in posts)
    assert len({p.read_bytes() for p in posts}) == 5
    theta = get_scenario("lotka-volterra/1").theta
    for k, r in enumerate(summary):
        assert float(r["param_rmse"]) == parameter_rmse(_rows(posts[k]), theta)


def test_fit_parallel_matches_serial(tmp_path):
    ini = _ini(tmp_path, folds=2)
    assert main(["fit", "--config", ini, "--out", str(tmp_path / "s")]) == 0
    assert main(["fit", "--config", ini, "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    for name in ("summary.csv", "posterior_fold1.csv"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_fit_monotone_reports_positivity(tmp_path, capsys):
    extra = "[constraint]\nkind = inequality\n"
    ini = tmp_path / "m.ini"
    ini.write_text(QUICK.format(folds=1).replace("lotka-volterra/1", MONOTONE) + extra)
    assert main(["fit", "--config", str(ini), "--out", str(tmp_path / "m")]) == 0
    assert "positive derivative share" in capsys.readouterr().out
    frac = float(_rows(tmp_path / "m" / "summary.csv")[0]["positive_fraction"])
    assert 0.0 <= frac <= 1.0
    assert (tmp_path / "m" / "model.txt").exists()


def test_fit_training_abort_exits_nonzero(tmp_path, capsys):
    ini = _ini(tmp_path, extra="step_size = 1e6\n")
    assert main(["fit", "--config", ini, "--out", str(tmp_path / "x")]) == 1
    assert "training aborted" in capsys.readouterr().err


def test_fit_unknown_scenario_is_usage_error(tmp_path):
    assert main(["fit", "mystery/3", "--config", _ini(tmp_path), "--out", str(tmp_path / "x")]) == 2


def test_predict_from_saved_model(tmp_path):
    out = tmp_path / "o"
    assert main(["fit", "--config", _ini(tmp_path), "--out", str(out)]) == 0
    pred = tmp_path / "p.csv"
    assert main(["predict", str(out / "model.txt"), "--times", "0:10:6", "--out", str(pred)]) == 0
    rows = _rows(pred)
    assert len(rows) == 6
    for r in rows:
        assert float(r["f1_q2.5"]) <= float(r["f1_mean"]) <= float(r["f1_q97.5"])
    model, theta = load_model(str(out / "model.txt"))
    assert theta is not None and theta.names == ("alpha", "beta", "gamma", "delta")


def test_predict_bad_times_is_usage_error(tmp_path):
    out = tmp_path / "o"
    assert main(["fit", "--config", _ini(tmp_path), "--out", str(out)]) == 0
    assert main(["predict", str(out / "model.txt"), "--times", "zero:ten"]) == 2


def test_saved_model_round_trip(tmp_path):
    cfg = ExperimentConfig.from_ini(_ini(tmp_path))
    res = run_fold(cfg)
    paths = save_fold(res, str(tmp_path))
    model, theta = load_model(paths["model"])
    np.testing.assert_array_equal(theta.mean, res.fit.theta_posterior.mean)
    np.testing.assert_array_equal(theta.chol, res.fit.theta_posterior.chol)
    for k, v in res.fit.model.params.items():
        np.testing.assert_array_equal(model.params[k], v)


# -- plot -------------------------------------------------------------------------------

def test_plot_empty_csv_writes_nothing(tmp_path, capsys):
    src = tmp_path / "e.csv"
    src.write_text("group,param_rmse\n")
    assert main(["plot", "boxplot", str(src), "--out", str(tmp_path / "e.svg")]) == 1
    assert "no data rows" in capsys.readouterr().err
    assert not (tmp_path / "e.svg").exists()


def test_plot_names_missing_column(tmp_path, capsys):
    src = tmp_path / "m.csv"
    src.write_text("n,secs\n20,1.0\n")
    assert main(["plot", "scaling", str(src), "--out", str(tmp_path / "m.svg")]) == 1
    assert "seconds" in capsys.readouterr().err
    assert not (tmp_path / "m.svg").exists()


def test_plot_boxplot_one_box_per_group(tmp_path):
    src = tmp_path / "b.csv"
    src.write_text("group,param_rmse\n" + "".join(f"{g},{v}\n" for g in "abc" for v in (0.1, 0.2, 0.3)))
    out = tmp_path / "b.svg"
    assert main(["plot", "boxplot", str(src), "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.startswith("<?xml") and "<script" not in svg
    assert svg.count('id="line2d_') >= 3


def test_plot_trajectories_from_fit(tmp_path):
    out = tmp_path / "o"
    assert main(["fit", "--config", _ini(tmp_path), "--out", str(out)]) == 0
    rows = read_csv(str(out / "trajectories.csv"), ("t", "obs1", "truth1", "path1_1"))
    assert sum(r["obs1"] != "nan" for r in rows) == 34
    assert main(["plot", "trajectories", str(out / "trajectories.csv"), "--out", str(tmp_path / "t.svg")]) == 0
    assert (tmp_path / "t.svg").stat().st_size > 0


# -- benchmark --------------------------------------------------------------------------

def test_expand_grids():
    base = ExperimentConfig()
    assert len(bench.expand("ode-rmse", base)) == 6 * 2 * 5
    dvs = bench.expand("deep-vs-shallow", base, folds=1)
    assert {(j.label["n"], j.label["architecture"]) for j in dvs} == {
        (n, a[0]) for n in (80, 1000) for a in bench.ARCHITECTURES}
    assert len(dvs) == 14
    assert [j.label["n"] for j in bench.expand("scaling-n", base, folds=1)] == list(bench.SCALING_N)
    lz = bench.expand("lorenz96", base, folds=5, lorenz_dim=12)
    assert [j.config.scenario for j in lz[::5]] == ["lorenz96/12", "lorenz96/12/partial"]
    with pytest.raises(ValueError):
        bench.expand("other", base)


def test_benchmark_report_matches_posterior_files(tmp_path, capsys):
    out = tmp_path / "bench"
    args = ["benchmark", "ode-rmse", "--config", _ini(tmp_path), "--out", str(out), "--folds", "2",
            "--scenarios", "lotka-volterra/1"]
    assert main(args) == 0
    assert "dgp-t" in capsys.readouterr().out
    report = _rows(out / "report.csv")
    assert len(report) == 4
    assert "seconds" not in report[0]
    assert len(_rows(out / "timings.csv")) == 4
    theta = get_scenario("lotka-volterra/1").theta
    for r in report:
        tag = f"lotka-volterra-1_{r['method']}_fold{r['fold']}"
        post = _rows(out / "folds" / f"posterior_{tag}.csv")
        assert float(r["param_rmse"]) == parameter_rmse(post, theta)
    assert (out / "boxplot.svg").exists()
    first = (out / "report.csv").read_bytes()
    assert main(args[:-2] + ["--scenarios", "lotka-volterra/1", "--jobs", "2"]) == 0
    assert (out / "report.csv").read_bytes() == first


def test_benchmark_scaling_writes_runtime_table(tmp_path):
    out = tmp_path / "scale"
    assert main(["benchmark", "scaling-n", "--config", _ini(tmp_path), "--out", str(out), "--folds", "1",
                 "--n-values", "20,40"]) == 0
    rows = _rows(out / "report.csv")
    assert [int(r["n"]) for r in rows] == [20, 40]
    assert all(float(r["seconds"]) > 0 for r in rows)
    assert os.path.exists(out / "scaling.svg")
