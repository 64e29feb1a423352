import hashlib
import json

import numpy as np
import pytest

from geoharm import cli, data, net


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def quick_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "quick.cfg"
    p.write_text("# two short epochs\nlearning_rate = 0.01\nmax_epochs = 2\npatience = 2\nbatch_size = 512\n")
    return p


@pytest.fixture(scope="module")
def checkerboard_run(tmp_path_factory, quick_cfg):
    out = tmp_path_factory.mktemp("fit")
    assert run("fit", "--dataset", "checkerboard", "--pe", "sh:L=4", "--nn", "linear", "--config", quick_cfg,
               "--repeats", 2, "--seed", 3, "--out", out) == 0
    return out


def test_fit_artifacts(checkerboard_run):
    m = json.loads((checkerboard_run / "metrics.json").read_text())
    assert 0 <= m["test_accuracy"] <= 1
    assert m["mean"] == m["test_accuracy"]
    assert len(m["values"]) == 2 and m["std"] == pytest.approx(np.std(m["values"], ddof=1))
    assert [r["seed"] for r in m["runs"]] == [3, 4]
    for seed in (3, 4):
        assert (checkerboard_run / f"model_seed{seed}.geoh").exists()
        meta = json.loads((checkerboard_run / f"model_seed{seed}.geoh.meta.json").read_text())
        assert meta["pe"] == "sh:L=4" and meta["task"] == {"kind": "multiclass", "size": 16}
        hist = (checkerboard_run / f"history_seed{seed}.csv").read_text().splitlines()
        assert hist[0] == "epoch,train_loss,val_loss" and len(hist) == 3


def test_manifest_hashes(checkerboard_run):
    man = json.loads((checkerboard_run / "manifest.json").read_text())
    assert man["command"] == "fit" and len(man["config_hash"]) == 64
    paths = {a["path"] for a in man["artifacts"]}
    assert {"metrics.json", "model_seed3.geoh", "history_seed4.csv"} <= paths
    for a in man["artifacts"]:
        assert hashlib.sha256((checkerboard_run / a["path"]).read_bytes()).hexdigest() == a["sha256"]


def test_fit_is_deterministic(checkerboard_run, quick_cfg, tmp_path):
    assert run("fit", "--dataset", "checkerboard", "--pe", "sh:L=4", "--nn", "linear", "--config", quick_cfg,
               "--seed", 3, "--out", tmp_path) == 0
    a = (checkerboard_run / "model_seed3.geoh").read_bytes()
    assert (tmp_path / "model_seed3.geoh").read_bytes() == a


def test_latitudinal(checkerboard_run, tmp_path):
    out = tmp_path / "bands.csv"
    assert run("latitudinal", "--checkpoint", checkerboard_run / "model_seed3.geoh", "--out", out) == 0
    rows = cli.read_csv(out)
    assert len(rows) == 9
    assert list(rows[0]) == ["band_south_deg", "band_north_deg", "accuracy", "n_points"]
    assert sum(r["n_points"] for r in rows) == 10_000


def test_predict_grid_multiclass(checkerboard_run, tmp_path):
    assert run("predict-grid", "--checkpoint", checkerboard_run / "model_seed3.geoh", "--resolution", 1,
               "--out", tmp_path) == 0
    field = data.load_grid_field(tmp_path / "prediction.grdf")
    assert field.values.shape == (1, 180, 360)
    assert set(np.unique(field.values)) <= set(range(16))
    assert cli.read_pnm(tmp_path / "prediction.pgm").shape == (180, 360)
    ppm = cli.read_pnm(tmp_path / "prediction.ppm")
    assert ppm.shape == (180, 360, 3)
    # row 0 of the image is the northernmost grid row
    np.testing.assert_array_equal(ppm[0], cli.class_palette(16)[field.values[0, -1].astype(int)])


def test_predict_grid_threads_match(checkerboard_run, tmp_path, monkeypatch):
    ck = checkerboard_run / "model_seed3.geoh"
    assert run("predict-grid", "--checkpoint", ck, "--resolution", 2, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("GEOHARM_THREADS", "3")
    assert run("predict-grid", "--checkpoint", ck, "--resolution", 2, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "prediction.grdf").read_bytes() == (tmp_path / "b" / "prediction.grdf").read_bytes()
    monkeypatch.setenv("GEOHARM_THREADS", "zero")
    assert run("predict-grid", "--checkpoint", ck, "--resolution", 2, "--out", tmp_path / "c") != 0


def test_predict_grid_binary_probability(quick_cfg, tmp_path):
    assert run("fit", "--dataset", "landocean", "--pe", "sh:L=6", "--nn", "linear", "--config", quick_cfg,
               "--out", tmp_path / "fit") == 0
    ck = tmp_path / "fit" / "model_seed0.geoh"
    assert run("predict-grid", "--checkpoint", ck, "--resolution", 10, "--out", tmp_path / "grid") == 0
    prob = data.load_grid_field(tmp_path / "grid" / "prediction.grdf").values[0]
    assert prob.shape == (18, 36) and np.all((prob > 0) & (prob < 1))
    pgm = cli.read_pnm(tmp_path / "grid" / "prediction.pgm")
    np.testing.assert_array_equal(pgm, np.round(prob[::-1] * 255).astype(np.uint8))


def test_regression_checkpoint_rejected_by_latitudinal(quick_cfg, tmp_path):
    assert run("fit", "--dataset", "synthfield", "--channels", 2, "--pe", "sh:L=3", "--nn", "linear",
               "--config", quick_cfg, "--out", tmp_path) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert "test_mse" in m
    assert run("latitudinal", "--checkpoint", tmp_path / "model_seed0.geoh", "--out", tmp_path / "b.csv") == 2
    assert not (tmp_path / "b.csv").exists()
    assert run("predict-grid", "--checkpoint", tmp_path / "model_seed0.geoh", "--resolution", 30,
               "--out", tmp_path / "g") == 0
    assert data.load_grid_field(tmp_path / "g" / "prediction.grdf").channel_names == ("c0", "c1")


def test_grid_dataset_end_to_end(quick_cfg, tmp_path):
    coeffs = data.synth_coefficients(2, 3, seed=0)
    field = data.GridField.regular(5.0, lambda p: data.synth_field_values(coeffs, p), ("t2m", "sp"))
    data.save_grid_field(field, tmp_path / "era5.grdf")
    assert run("fit", "--dataset", "grid", "--grid", tmp_path / "era5.grdf", "--pe", "sh:L=3", "--nn", "linear",
               "--config", quick_cfg, "--out", tmp_path / "fit") == 0
    m = json.loads((tmp_path / "fit" / "metrics.json").read_text())
    assert np.isfinite(m["test_mse"])


def test_sweep_resolution(tmp_path):
    cfg = tmp_path / "lin.cfg"
    cfg.write_text("pe = sh:L=4\nnn = linear\nlearning_rate = 0.01\nmax_epochs = 2\npatience = 2\n")
    out = tmp_path / "sweep.csv"
    assert run("sweep-resolution", "--run", cfg, "--centers", "20,50", "--n-train", 300, "--n-val", 300,
               "--out", out) == 0
    rows = cli.read_csv(out)
    assert [r["num_centers"] for r in rows] == [20, 50]
    assert "mean_dist_deg" in rows[0]
    assert rows[0]["mean_dist_deg"] == pytest.approx(data.mean_center_spacing(20), abs=1e-6)


def test_bench_pe(tmp_path):
    out = tmp_path / "bench.csv"
    assert run("bench-pe", "--kinds", "sh,sh-closed,spherecplus", "--params", "2,4", "--n-points", 100,
               "--repeats", 1, "--out", out) == 0
    rows = cli.read_csv(out)
    assert list(rows[0]) == ["kind", "param", "median_seconds"]
    assert [(r["kind"], r["param"]) for r in rows] == [("sh", 2), ("sh", 4), ("sh-closed", 2), ("sh-closed", 4),
                                                       ("spherecplus", 2), ("spherecplus", 4)]


def test_dataset_command(tmp_path):
    assert run("dataset", "--dataset", "checkerboard", "--num-centers", 30, "--out", tmp_path) == 0
    split = data.read_split_csv(tmp_path / "test.csv", data.Task("multiclass", 16))
    assert len(split) == 10_000


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--dataset", "checkerboard", "--pe", "sh:L=4,S=3", "--nn", "linear", "--out", "{tmp}"],
        ["fit", "--dataset", "checkerboard", "--pe", "sh:L=4", "--nn", "siren:depth=3", "--out", "{tmp}"],
        ["fit", "--dataset", "grid", "--pe", "sh:L=4", "--nn", "linear", "--out", "{tmp}"],
        ["predict-grid", "--checkpoint", "{tmp}/missing.geoh", "--out", "{tmp}"],
        ["bench-pe", "--kinds", "nope", "--out", "{tmp}/b.csv"],
        ["predict-grid", "--checkpoint", "{tmp}/missing.geoh", "--resolution", "7", "--out", "{tmp}"],
    ],
)
def test_errors_give_nonzero_exit(tmp_path, argv, capsys):
    assert run(*[a.replace("{tmp}", str(tmp_path)) for a in argv]) != 0
    assert "error:" in capsys.readouterr().err


def test_checkpoint_meta_matches_binary(checkerboard_run):
    model = net.load_checkpoint(checkerboard_run / "model_seed4.geoh")
    assert model.spec.in_dim == 16 and model.spec.out_dim == 16
