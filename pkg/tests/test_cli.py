import csv
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from postsum.cli import main, parse_args


def _csv_data(path, n=40, seed=0):
    r = np.random.default_rng(seed)
    X = r.uniform(-2, 2, (n, 3))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * r.standard_normal(n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c", "y"])
        w.writerows(np.column_stack([X, y]).tolist())
    return path


GP_ARGS = ["--response", "y", "--draws", "40", "--burn-in", "10", "--budget", "15",
           "--starts", "1", "--no-linear"]


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _same_tree(a: Path, b: Path):
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert fa == fb
    for rel in fa:
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


@pytest.fixture(scope="module")
def gp_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = _csv_data(root / "d.csv")
    out = root / "run"
    assert main(["fit-gp", "--data", str(data), *GP_ARGS, "--seed", "7", "--out", str(out)]) == 0
    return data, out


@pytest.fixture(scope="module")
def crime_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("crime") / "run"
    assert main(["fit-horseshoe", "--data", "builtin:crime", "--seed", "11", "--out", str(out)]) == 0
    return out


class TestFitCommands:
    def test_gp_layout(self, gp_run):
        _, out = gp_run
        for rel in ("meta.json", "data/dataset.json", "draws/f_draws.csv", "draws/sigma2_draws.csv",
                    "model/gp.json"):
            assert (out / rel).is_file(), rel
        meta = json.loads((out / "meta.json").read_text())
        assert meta["seed"] == 7 and meta["M"] == 40 and meta["kernel"] == "squared-exponential"

    def test_gp_rerun_byte_identical(self, gp_run, tmp_path):
        data, out = gp_run
        assert main(["fit-gp", "--data", str(data), *GP_ARGS, "--seed", "7",
                     "--out", str(tmp_path / "again")]) == 0
        _same_tree(out, tmp_path / "again")

    def test_horseshoe_layout(self, crime_run):
        meta = json.loads((crime_run / "meta.json").read_text())
        assert meta["model"] == "horseshoe" and meta["M"] == 5000
        assert meta["chain"]["burn_in"] == 1000
        assert (crime_run / "model" / "beta_draws.csv").is_file()


class TestSummaries:
    def test_crime_path_has_six_support(self, crime_run, capsys):
        code, out, _ = _run(["summarize", "sparse-linear", "--draws", crime_run, "--path",
                             "--name", "path", "--observed-y"], capsys)
        assert code == 0
        path = json.loads((crime_run / "summaries" / "path" / "path.json").read_text())
        assert any(len(e["support"]) == 6 for e in path)
        rows = (crime_run / "plots" / "path_sparsity.csv").read_text().splitlines()
        assert rows[0].startswith("size,lambda,r2_q2.5") and "phi_q50" in rows[0]

    def test_sparse_support_summary_and_diagnose(self, crime_run, capsys):
        code, out, _ = _run(["summarize", "sparse-linear", "--draws", crime_run,
                             "--support-size", "6", "--name", "k6", "--observed-y"], capsys)
        assert code == 0 and "r2_quantiles" in out
        body = json.loads((crime_run / "summaries" / "k6" / "summary.json").read_text())
        assert len(body["point"]) == 6 and body["columns"][0] == "(intercept)"
        code, out, _ = _run(["diagnose", "--draws", crime_run, "--summary", "k6"], capsys)
        assert code == 0
        assert (crime_run / "diagnostics" / "k6.json").is_file()

    def test_compare_refit_is_labelled(self, crime_run, capsys):
        code, _, _ = _run(["compare-refit", "--draws", crime_run, "--support-size", "6",
                           "--name", "cmp"], capsys)
        assert code == 0
        doc = json.loads((crime_run / "summaries" / "cmp" / "comparison.json").read_text())
        assert doc["label"] == "comparison-only: double dipping"
        assert (crime_run / "plots" / "cmp.csv").read_text().startswith("column,projected_point")

    @pytest.mark.parametrize("argv", [
        ["linear", "--columns", "a,c"],
        ["additive"],
        ["partial-additive", "--pairs", "b:c"],
    ])
    def test_gp_summaries(self, gp_run, argv, capsys):
        _, out = gp_run
        code, text, err = _run(["summarize", *argv, "--draws", out, "--name", argv[0]], capsys)
        assert code == 0, err
        assert (out / "summaries" / argv[0] / "spec.json").is_file()
        assert (out / "plots" / f"{argv[0]}.csv").is_file()
        assert (out / "plots" / f"{argv[0]}_metrics.csv").is_file()

    def test_search_history(self, gp_run, capsys):
        _, out = gp_run
        code, text, _ = _run(["search", "--draws", out, "--threshold", "0.999"], capsys)
        assert code == 0 and "stop_reason" in text
        doc = json.loads((out / "search" / "history.json").read_text())
        assert doc["policy"]["r2_threshold"] == 0.999
        assert [e["spec"]["class"] for e in doc["history"]][:2] == ["linear", "additive"]

    @pytest.mark.parametrize("argv,dropped", [
        (["--kind", "box", "--bounds", "a:-1:1,b:-1:1"], []),
        (["--kind", "point", "--anchor", "a:0,b:0.5"], ["a", "b"]),
    ])
    def test_local(self, gp_run, argv, dropped, capsys):
        _, out = gp_run
        code, _, err = _run(["local", "--draws", out, "--name", argv[1], "--geo", "a,b",
                             "--n-tilde", "60", *argv], capsys)
        assert code == 0, err
        rep = json.loads((out / "local" / "report.json").read_text())
        assert rep[argv[1]]["dropped"] == dropped


class TestConfigAndSeeds:
    def test_config_and_flag_precedence(self, tmp_path):
        data = _csv_data(tmp_path / "d.csv")
        cfg = tmp_path / "c.yaml"
        cfg.write_text("draws: 30\nseed: 5\nburn-in: 3\n")
        args = parse_args(["fit-gp", "--config", str(cfg), "--data", str(data), "--response", "y",
                           "--draws", "12", "--out", "x"])
        assert (args.draws, args.seed, args.burn_in) == (12, 5, 3)

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("draws: 30\nwarp: 9\n")
        code, _, err = _run(["fit-gp", "--config", cfg, "--data", "builtin:crime", "--out", "x"],
                            capsys)
        assert code == 2
        assert json.loads(err)["error"] == "usage" and "warp" in json.loads(err)["message"]

    def test_env_seed(self, monkeypatch):
        monkeypatch.setenv("POSTSUM_SEED", "9")
        base = ["fit-horseshoe", "--data", "builtin:crime", "--out", "x"]
        assert parse_args(base).seed == 9
        assert parse_args(base + ["--seed", "3"]).seed == 3
        monkeypatch.delenv("POSTSUM_SEED")
        assert parse_args(base).seed == 0

    def test_bad_env_seed(self, monkeypatch, capsys):
        monkeypatch.setenv("POSTSUM_SEED", "abc")
        code, _, err = _run(["fit-horseshoe", "--data", "builtin:crime", "--out", "x"], capsys)
        assert code == 2 and "POSTSUM_SEED" in err


class TestErrors:
    @pytest.mark.parametrize("argv", [
        [],
        ["teleport"],
        ["fit-gp", "--data", "builtin:crime"],
        ["fit-gp", "--data", "builtin:crime", "--out", "x", "--draws", "1"],
        ["summarize", "linear"],
    ])
    def test_usage_errors(self, argv, capsys):
        code, out, err = _run(argv, capsys)
        assert code == 2 and out == ""
        assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"

    def test_missing_data_file(self, tmp_path, capsys):
        code, _, err = _run(["fit-gp", "--data", tmp_path / "nope.csv", "--response", "y",
                             "--out", tmp_path / "r"], capsys)
        assert code == 1
        doc = json.loads(err)
        assert doc["error"] == "DataError" and doc["command"] == "fit-gp"

    def test_not_a_run_directory(self, tmp_path, capsys):
        code, _, err = _run(["search", "--draws", tmp_path], capsys)
        assert code == 1 and "run directory" in json.loads(err)["message"]

    def test_unknown_summary(self, gp_run, capsys):
        code, _, err = _run(["diagnose", "--draws", gp_run[1], "--summary", "ghost"], capsys)
        assert code == 1 and "ghost" in err


class TestReplicate:
    def test_small_replication(self, tmp_path, capsys):
        argv = ["replicate", "--study", "interaction-collinear", "--reps", "2", "--n", "120",
                "--draws", "40", "--burn-in", "10", "--budget", "15", "--starts", "1", "--seed", "2"]
        code, text, err = _run(argv + ["--out", tmp_path / "a"], capsys)
        assert code == 0, err
        assert "top_pair_x1x2" in text
        rows = (tmp_path / "a" / "replication.csv").read_text().splitlines()
        assert rows[0].startswith("replicate,seed,r2_additive,r2_best_pair,best_pair")
        assert len(rows) == 3
        assert main([str(a) for a in argv + ["--out", tmp_path / "b"]]) == 0
        _same_tree(tmp_path / "a", tmp_path / "b")
