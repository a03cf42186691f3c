import csv
import json

import numpy as np
import pytest

from conftest import planted
from pnbm.cli import main
from pnbm.config import ExperimentConfig
from pnbm.errors import ConfigError


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ds = planted(n_users=60, n_items=14, seed=11)
    p = d / "synth.tsv"
    with open(p, "w") as fh:
        for u, i, r in ds.triplets:
            fh.write(f"{u + 100}\t{i + 7}\t{r}\n")
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_ingest_fixture(fixture_file, capsys):
    assert main(["ingest", "--data", str(fixture_file)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "users=2 items=3 ratings=4 density=66.67%"
    assert out[1] == "scale=1..5"


def test_ingest_missing_file(tmp_path, capsys):
    missing = tmp_path / "absent.tsv"
    assert main(["ingest", "--data", str(missing)]) == 2
    assert "absent.tsv" in capsys.readouterr().err


def test_train_smoke_and_outputs(synth, tmp_path):
    before = synth.read_bytes()
    out = tmp_path / "run"
    assert main(["train", "--data", str(synth), "--profile", "mpnbm", "--epochs", "1",
                 "--out", str(out)]) == 0
    rows = _rows(out / "history.csv")
    assert len(rows) == 1 and list(rows[0]) == ["epoch", "objective", "valid_rmse", "test_rmse"]
    for name in ("best.ckpt", "config.txt", "timing.csv", "history.png"):
        assert (out / name).exists()
    assert synth.read_bytes() == before


def test_echoed_config_reproduces_run(synth, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--data", str(synth), "--profile", "pnbm", "--epochs", "2",
                 "--seed", "3", "--out", str(a)]) == 0
    assert main(["train", "--config", str(a / "config.txt"), "--out", str(b)]) == 0
    for name in ("history.csv", "best.ckpt", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_preset_expansion():
    prof = ExperimentConfig(profile="mpnbm").resolved_profile()
    assert prof.omegas == ("ones", "pearson", "jaccard")
    assert (prof.phi, prof.lambdas, prof.beta) == ((3.0, 1.0, 1.0), (0.05, 0.05, 0.05), 0.2)
    over = ExperimentConfig(profile="mpnbm", phi=(1.0, 1.0, 1.0), beta=0.1).resolved_profile()
    assert over.phi == (1.0, 1.0, 1.0) and over.beta == 0.1
    with pytest.raises(ConfigError):
        ExperimentConfig(profile="mpnbm", phi=(1.0,)).resolved_profile()


def test_config_text_round_trip():
    cfg = ExperimentConfig(data="/x.tsv", profile="tanh-mpnbm", lambdas=(0.05, 0.05, 0.05),
                           beta=0.4, epochs=7, fractions=(0.8, 0.1, 0.1))
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("version = 2\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("version = 1\ncolour = red\n")


@pytest.fixture(scope="module")
def trained(synth, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert main(["train", "--data", str(synth), "--profile", "mpnbm", "--epochs", "4",
                 "--out", str(out)]) == 0
    return out


def test_evaluate_checkpoint_matches_history(trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", str(trained / "best.ckpt"), "--config",
                 str(trained / "config.txt"), "--part", "valid", "--baseline", "none",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    best = min(float(r["valid_rmse"]) for r in _rows(trained / "history.csv"))
    assert abs(report[0]["rmse"] - best) <= 1e-12
    assert (out / "report.txt").exists() and (out / "report.png").exists()


def test_evaluate_k_plumbing(trained, tmp_path):
    vals = []
    for k in ("1", "200"):
        out = tmp_path / k
        assert main(["evaluate", "--checkpoint", str(trained / "best.ckpt"), "--config",
                     str(trained / "config.txt"), "--k", k, "--baseline", "none",
                     "--out", str(out)]) == 0
        vals.append(json.loads((out / "report.json").read_text())[0]["rmse"])
    assert vals[0] != vals[1]


def test_evaluate_profiles_inc_against_baseline(synth, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", str(synth), "--profile", "regsim,pcc", "--epochs", "2",
                 "--repeats", "2", "--out", str(out)]) == 0
    report = {r["model_kind"]: r for r in json.loads((out / "report.json").read_text())}
    assert report["regsim"]["inc_percent"] == 0.0
    assert report["pcc"]["baseline"] == "regsim"
    assert "0.00" in capsys.readouterr().out


def test_evaluate_mismatched_corpus(trained, tmp_path, fixture_file):
    assert main(["evaluate", "--checkpoint", str(trained / "best.ckpt"), "--data",
                 str(fixture_file), "--fractions", "0.5,0.25,0.25", "--profile", "mpnbm",
                 "--baseline", "none", "--out", str(tmp_path / "x")]) == 4


def test_train_divergence_keeps_partial_history(synth, tmp_path):
    out = tmp_path / "div"
    code = main(["train", "--data", str(synth), "--profile", "mpnbm", "--beta", "1e6",
                 "--reg-form", "alg1", "--epochs", "30", "--out", str(out)])
    assert code == 3
    assert (out / "history.csv").exists()
    assert not (out / "best.ckpt").exists()


def test_sweep_outputs(synth, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--data", str(synth), "--profile", "pcc", "--slices", "1",
                 "--out", str(out)]) == 0
    rows = _rows(out / "sweep.csv")
    assert len(rows) == 1
    assert {"users", "items", "ratings", "density"} <= set(rows[0])
    assert (out / "slice_00" / "report.json").exists() and (out / "sweep.png").exists()

    out2 = tmp_path / "sw2"
    assert main(["sweep", "--data", str(synth), "--profile", "pcc,cos", "--slices", "2",
                 "--min-users", "20", "--out", str(out2)]) == 0
    assert len(_rows(out2 / "sweep.csv")) == 4  # two slices x two models


def test_sweep_all_skipped(synth, tmp_path):
    assert main(["sweep", "--data", str(synth), "--profile", "pcc", "--slices", "4",
                 "--out", str(tmp_path / "none")]) == 5


def test_stability_command(tmp_path, capsys):
    p = tmp_path / "h.csv"
    h = [1.0, 0.95, 0.9, 0.9, 0.9, 0.95]
    p.write_text("epoch,test_rmse\n" + "".join(f"{e},{v}\n" for e, v in enumerate(h, 1)))
    assert main(["stability", str(p)]) == 0
    got = json.loads(capsys.readouterr().out)
    assert (got["epsilon"], got["zeta"], got["censored"]) == (3, 3, False)


def test_split_command(synth, tmp_path, capsys):
    out = tmp_path / "split"
    assert main(["split", "--data", str(synth), "--seed", "2", "--out", str(out)]) == 0
    sizes = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    n = sum(1 for _ in open(synth))
    assert sum(int(v) for v in sizes.values()) == n
    run = tmp_path / "r"
    assert main(["train", "--split", str(out), "--profile", "pnbm", "--epochs", "1",
                 "--out", str(run)]) == 0
    assert np.isfinite(float(_rows(run / "history.csv")[0]["test_rmse"]))
