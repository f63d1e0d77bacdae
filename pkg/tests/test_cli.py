import json

import numpy as np
import pytest

from nncgp import io
from nncgp.cli import main


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    _write(root / "sim.cfg", "synth.preset = table1\nsynth.n = 100\nsynth.seed = 5\n")
    assert main(["simulate", "--config", str(root / "sim.cfg"), "--out", str(root / "data")]) == 0
    _write(root / "fit.cfg", "data.train = data/train_level1.csv, data/train_level2.csv\n"
                             "model.m = 5\nsampler.n_iter = 60\nsampler.burn_in = 10\n")
    assert main(["fit", "--config", str(root / "fit.cfg"), "--out", str(root / "fit")]) == 0
    return root


def test_simulate_minimal(tmp_path):
    cfg = _write(tmp_path / "s.cfg", "synth.n = 10\nlevel1.beta = 1\nlevel1.sigma2 = 1\n"
                                     "level1.phi = 0.2, 0.2\nlevel1.tau2 = 0.1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "train_level1.csv").read_text().splitlines()
    assert lines[0] == "x,y,value" and len(lines) == 11


def test_simulate_table1_metadata(workspace):
    meta = json.loads((workspace / "data" / "truth.json").read_text())
    assert meta["params"][0]["beta"] == [10.0] and meta["params"][1]["gamma"] == [1.0]
    assert meta["seed"] == 5


def test_malformed_key(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.cfg", "synth.n = 10\nsynth.colour = red\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "synth.colour" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["fit", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1


def test_fit_outputs(workspace):
    fit = workspace / "fit"
    rows = (fit / "trace_level2.csv").read_text().splitlines()
    assert rows[0] == "iter,beta1,gamma1,sigma2,phi1,phi2,tau2"
    assert len(rows) == 1 + 50
    man = json.loads((fit / "manifest.json").read_text())
    assert man["seed"] == 0 and len(man["config_sha256"]) == 64
    acc = json.loads((fit / "acceptance.json").read_text())
    assert set(acc) == {"level1", "level2"}


def test_fit_deterministic(workspace):
    out = workspace / "fit_again"
    assert main(["fit", "--config", str(workspace / "fit.cfg"), "--out", str(out)]) == 0
    for name in ("trace_level1.csv", "trace_level2.csv", "acceptance.json"):
        assert (out / name).read_bytes() == (workspace / "fit" / name).read_bytes()


@pytest.mark.parametrize("kind", ["single", "combined"])
def test_fit_baselines(workspace, kind):
    out = workspace / f"fit_{kind}"
    assert main(["fit", "--model", kind, "--config", str(workspace / "fit.cfg"), "--out", str(out)]) == 0
    assert (out / "trace_level1.csv").exists() and not (out / "trace_level2.csv").exists()


def test_predict_grid_and_targets(workspace):
    _write(workspace / "grid1.cfg", "predict.fit = fit\npredict.bbox = 0, 0, 1, 1\npredict.cell = 1\n")
    assert main(["predict", "--config", str(workspace / "grid1.cfg"), "--out", str(workspace / "g1.csv")]) == 0
    assert len((workspace / "g1.csv").read_text().splitlines()) == 2
    _write(workspace / "grid.cfg", "predict.fit = fit\npredict.bbox = 0, 0, 1, 1\npredict.cell = 0.1\n")
    assert main(["predict", "--config", str(workspace / "grid.cfg"), "--out", str(workspace / "g.csv")]) == 0
    lines = (workspace / "g.csv").read_text().splitlines()
    assert lines[0] == "x,y,mean,sd,q025,q975" and len(lines) == 101
    _write(workspace / "pred.cfg", "predict.fit = fit\npredict.targets = data/test.csv\n")
    assert main(["predict", "--config", str(workspace / "pred.cfg"), "--out", str(workspace / "pred")]) == 0


def test_predict_matches_library(workspace):
    from nncgp.cli import load_fit
    from nncgp.predict import predict

    trace = load_fit(workspace / "fit")
    test = io.read_dataset(workspace / "data" / "test.csv", 2)
    lib = predict(trace, test.coords, seed=0)
    cli = io.read_predictions(workspace / "pred" / "predictions.csv")
    assert np.allclose(cli["mean"], lib.mean, rtol=1e-14)


def test_predict_missing_trace(tmp_path):
    cfg = _write(tmp_path / "p.cfg", "predict.fit = nowhere\npredict.bbox = 0,0,1,1\npredict.cell = 1\n")
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1


def test_evaluate(workspace, capsys):
    _write(workspace / "ev.cfg", "evaluate.predictions = pred/predictions.csv\n"
                                 "evaluate.test = data/test.csv\nevaluate.fit = fit\n")
    assert main(["evaluate", "--config", str(workspace / "ev.cfg")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert {"rmspe", "nsme", "cvg95", "alci95", "pd", "dic", "n_test"} <= set(rep)


def test_evaluate_perfect_prediction(tmp_path, capsys):
    _write(tmp_path / "test.csv", "x,y,value\n0.1,0.2,1.0\n0.3,0.4,2.0\n0.5,0.6,4.0\n")
    _write(tmp_path / "pred.csv", "x,y,mean,sd,q025,q975\n0.1,0.2,1.0,0,1.0,1.0\n"
                                  "0.3,0.4,2.0,0,2.0,2.0\n0.5,0.6,4.0,0,4.0,4.0\n")
    cfg = _write(tmp_path / "e.cfg", "evaluate.predictions = pred.csv\nevaluate.test = test.csv\n")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rmspe"] == 0.0 and rep["nsme"] == 1.0 and "dic" not in rep


def test_evaluate_missing_column(tmp_path):
    _write(tmp_path / "test.csv", "x,y,value\n0.1,0.2,1.0\n")
    _write(tmp_path / "pred.csv", "x,y,mean,sd\n0.1,0.2,1.0,0\n")
    cfg = _write(tmp_path / "e.cfg", "evaluate.predictions = pred.csv\nevaluate.test = test.csv\n")
    assert main(["evaluate", "--config", str(cfg)]) == 1


def test_oracle_check(capsys):
    assert main(["oracle-check"]) == 0
    assert main(["oracle-check", "--n", "1"]) == 0
    assert main(["oracle-check", "--corrupt"]) == 2
    assert "FAIL nngp_log_density" in capsys.readouterr().out


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("NNCGP_THREADS", "1")
    assert main(["oracle-check", "--n", "5"]) == 0
    monkeypatch.setenv("NNCGP_THREADS", "many")
    assert main(["oracle-check", "--n", "5"]) == 1
