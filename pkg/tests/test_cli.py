import os

import numpy as np
import pytest

from armcomp import calibration as cal
from armcomp import cli
from armcomp import dataset as ds
from armcomp import model as mdl

# Desk-scale configuration so the pipeline tests stay fast.
SMALL_INI = """
[data]
n = 40
seed = 7

[model]
d_model = 4
n_layer = 1
n_head = 2
d_hidden = 8

[train]
batch_size = 16
max_epochs = 3

[solver]
max_iterations = 20
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_INI)
    return str(path)


def test_dispatch_empty_shows_usage():
    with pytest.raises(SystemExit) as exc:
        cli.dispatch([])
    assert exc.value.code == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.dispatch(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.dispatch(["gen-data", "--out", "x.csv", "--bogus", "1"])
    assert exc.value.code == 2


def test_missing_input_file_exits_1(tmp_path, capsys):
    rc = cli.dispatch(["train", "--data", str(tmp_path / "nope.csv"),
                       "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_gen_data_writes_dataset_and_world(tmp_path, small_config, capsys):
    out = tmp_path / "data.csv"
    rc = cli.dispatch(["gen-data", "--config", small_config, "--out", str(out)])
    assert rc == 0
    assert "40 samples" in capsys.readouterr().out
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# armcomp 0.1.0 config=")
    assert os.path.exists(str(out) + ".world")
    samples = ds.read_dataset(out)
    assert len(samples) == 40
    counts = {s: len(samples.indices(s)) for s in ds.SPLITS}
    assert counts == {"train": 32, "val": 4, "test": 4}


def test_gen_data_split_shape_at_724(tmp_path):
    out = tmp_path / "data.csv"
    rc = cli.dispatch(["gen-data", "--seed", "7", "--n", "724", "--out", str(out)])
    assert rc == 0
    samples = ds.read_dataset(out)
    counts = {s: len(samples.indices(s)) for s in ds.SPLITS}
    assert counts == {"train": 580, "val": 72, "test": 72}


def test_gen_data_deterministic(tmp_path, small_config):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(a)]) == 0
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.world").read_bytes() == (tmp_path / "b.csv.world").read_bytes()


def test_train_eval_pipeline(tmp_path, small_config, capsys):
    data = tmp_path / "data.csv"
    run = tmp_path / "run"
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(data)]) == 0
    assert cli.dispatch(["train", "--data", str(data), "--config", small_config,
                         "--out", str(run)]) == 0
    for name in ("best.ckpt", "history.csv", "metrics.txt", "history.png"):
        assert (run / name).exists(), name
    hist_lines = (run / "history.csv").read_text().splitlines()
    assert hist_lines[0].startswith("# armcomp")
    assert hist_lines[1] == "epoch,l_data,l_physics,lambda_data,lambda_physics,val_mae_3d"
    assert len(hist_lines) == 2 + 3  # header comment + csv header + 3 epochs

    capsys.readouterr()
    assert cli.dispatch(["eval", "--checkpoint", str(run / "best.ckpt"),
                         "--data", str(data), "--split", "test",
                         "--out", str(tmp_path / "eval")]) == 0
    out = capsys.readouterr().out
    assert "MAE(mm)" in out and "3D" in out
    assert (tmp_path / "eval" / "metrics_test.txt").exists()
    assert (tmp_path / "eval" / "error_scatter_test.png").exists()
    assert (tmp_path / "eval" / "error_hist_test.png").exists()


def test_compensate_command(tmp_path, small_config, capsys):
    data = tmp_path / "data.csv"
    run = tmp_path / "run"
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(data)]) == 0
    assert cli.dispatch(["train", "--data", str(data), "--config", small_config,
                         "--out", str(run)]) == 0
    samples = ds.read_dataset(data).subset("test")
    targets = tmp_path / "targets.csv"
    rows = ["x_mm,y_mm,z_mm,j1_deg,j2_deg,j3_deg,j4_deg,j5_deg,j6_deg"]
    for i in range(len(samples)):
        rows.append(",".join(
            [repr(float(v)) for v in samples.theoretical[i]]
            + [repr(float(v)) for v in samples.theta_deg[i]]))
    targets.write_text("\n".join(rows) + "\n")

    out = tmp_path / "comp.csv"
    rc = cli.dispatch(["compensate", "--checkpoint", str(run / "best.ckpt"),
                       "--targets", str(targets), "--config", small_config,
                       "--out", str(out), "--world", str(data) + ".world"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# armcomp")
    assert lines[1].split(",")[:2] == ["dtheta1_deg", "dtheta2_deg"]
    assert len(lines) == 2 + len(samples)
    assert os.path.exists(str(out) + ".residuals.txt")
    assert os.path.exists(str(out) + ".residuals.png")
    assert "converged" in capsys.readouterr().out


def test_calibrate_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    q = rng.uniform(-100, 100, (12, 3))
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    p = q @ rz.T + np.array([4.0, -2.0, 7.0])
    pairs = tmp_path / "pairs.csv"
    rows = ["qx,qy,qz,px,py,pz"]
    rows += [",".join(repr(float(v)) for v in np.concatenate([q[i], p[i]]))
             for i in range(12)]
    pairs.write_text("\n".join(rows) + "\n")

    out = tmp_path / "transform.txt"
    assert cli.dispatch(["calibrate", "--pairs", str(pairs), "--out", str(out)]) == 0
    text = out.read_text().splitlines()
    assert text[0].startswith("# armcomp")
    rot = np.array([float(v) for v in text[1].split()[1:]]).reshape(3, 3)
    trans = np.array([float(v) for v in text[2].split()[1:]])
    assert np.max(np.abs(rot - rz)) < 1e-9
    assert np.max(np.abs(trans - [4.0, -2.0, 7.0])) < 1e-9


def test_calibrate_rejects_bad_rows(tmp_path):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("qx,qy,qz,px,py,pz\n1,2,3,4,5\n")
    rc = cli.dispatch(["calibrate", "--pairs", str(pairs), "--out",
                       str(tmp_path / "t.txt")])
    assert rc == 1


def test_export_dm_command(tmp_path, small_config):
    data = tmp_path / "data.csv"
    run = tmp_path / "run"
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(data)]) == 0
    assert cli.dispatch(["train", "--data", str(data), "--config", small_config,
                         "--out", str(run)]) == 0
    out = tmp_path / "dm"
    rc = cli.dispatch(["export-dm", "--checkpoint", str(run / "best.ckpt"),
                       "--data", str(data), "--split", "test", "--out", str(out)])
    assert rc == 0
    for name in ("d_theory_norm.csv", "d_pred_norm.csv", "d_absdiff.csv",
                 "distance_matrices.png"):
        assert (out / name).exists(), name
    body = (out / "d_pred_norm.csv").read_text().splitlines()
    n = len(body) - 1  # minus header comment
    mat = np.array([[float(v) for v in line.split(",")] for line in body[1:]])
    assert mat.shape == (n, n)
    assert abs(mat.max() - 1.0) < 1e-12
    # difference file consistency
    dt = np.array([[float(v) for v in line.split(",")]
                   for line in (out / "d_theory_norm.csv").read_text().splitlines()[1:]])
    dd = np.array([[float(v) for v in line.split(",")]
                   for line in (out / "d_absdiff.csv").read_text().splitlines()[1:]])
    assert np.max(np.abs(dd - np.abs(mat - dt))) < 1e-15


def test_train_outputs_deterministic(tmp_path, small_config):
    data = tmp_path / "data.csv"
    assert cli.dispatch(["gen-data", "--config", small_config, "--out", str(data)]) == 0
    outs = []
    for name in ("r1", "r2"):
        run = tmp_path / name
        assert cli.dispatch(["train", "--data", str(data), "--config", small_config,
                             "--out", str(run)]) == 0
        outs.append(run)
    for fname in ("best.ckpt", "history.csv", "metrics.txt", "history.png"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes(), fname
