import csv
import json
import struct

import numpy as np
import pytest

from conftest import make_blobs
from npcert.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from npcert.core import Norm, PrototypeModel, SphereEmbedding, load_model, save_model
from npcert.data import Dataset, read_csv, write_csv
from npcert.sphere import embedded_model


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def blobs_csv(tmp_path):
    path = tmp_path / "blobs.csv"
    write_csv(make_blobs(n_per_class=20), path)
    return path


@pytest.fixture
def toy(tmp_path):
    model = PrototypeModel([[0.2, 0.2], [0.8, 0.8]], [0, 1], Norm.L2)
    save_model(model, tmp_path / "m.json")
    write_csv(Dataset([[0.1, 0.1], [0.3, 0.2], [0.9, 0.7], [0.45, 0.45]], [0, 0, 1, 0]), tmp_path / "test.csv")
    return tmp_path / "m.json", tmp_path / "test.csv"


# --- train -----------------------------------------------------------------------

def _train(blobs_csv, out, *extra):
    return main(["train", "--data", str(blobs_csv), "--metric", "l2", "--ppc", "1", "--cap", "3", "--epochs", "5",
                 "--seed", "7", "--out", str(out), *extra])


def test_train_writes_files_deterministically(tmp_path, blobs_csv, capsys):
    assert _train(blobs_csv, tmp_path / "a.json") == EXIT_OK
    assert _train(blobs_csv, tmp_path / "b.json") == EXIT_OK
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
    trace = _rows(tmp_path / "a.trace.csv")
    assert list(trace[0]) == ["epoch", "objective", "clean_accuracy"] and len(trace) == 6
    assert "clean_accuracy=" in capsys.readouterr().out


def test_train_missing_class(tmp_path, capsys):
    write_csv(Dataset([[0.1], [0.9]], [0, 2]), tmp_path / "d.csv")
    code = main(["train", "--data", str(tmp_path / "d.csv"), "--epochs", "1", "--out", str(tmp_path / "m.json")])
    assert code == EXIT_DATA
    assert "class 1 has no samples" in capsys.readouterr().err


def test_train_rejects_l1(tmp_path, blobs_csv, capsys):
    assert _train(blobs_csv, tmp_path / "m.json", "--metric", "l1") == EXIT_USAGE
    assert "training supports l2/linf only" in capsys.readouterr().err


def test_train_missing_data_flag(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "m.json")]) == EXIT_USAGE


def test_config_precedence(tmp_path, blobs_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(blobs_csv), "epochs": 3, "seed": 7, "cap": 3.0}))
    assert main(["train", "--config", str(cfg), "--epochs", "2", "--out", str(tmp_path / "m.json")]) == EXIT_OK
    assert len(_rows(tmp_path / "m.trace.csv")) == 3


def test_config_unknown_key(tmp_path, blobs_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["train", "--config", str(cfg), "--data", str(blobs_csv)]) == EXIT_USAGE


def test_unknown_subcommand():
    assert main(["frobnicate"]) == EXIT_USAGE


# --- certify ---------------------------------------------------------------------

def test_certify_format(toy, tmp_path, capsys):
    model, data = toy
    out = tmp_path / "c.csv"
    code = main(["certify", "--model", str(model), "--data", str(data), "--threat", "l2", "--mode", "exact",
                 "--radius", "1.5", "--radius", "0.1", "--out", str(out)])
    assert code == EXIT_OK
    rows = _rows(out)
    assert list(rows[0]) == ["index", "label", "predicted", "lower_bound", "exact", "upper_bound", "shortcut",
                             "subproblems", "time_s"]
    assert len(rows) == 4
    text = capsys.readouterr().out
    assert "CRA@1.5=0.0000" in text and "CRA@0.1=" in text
    assert "mean_bounds" in text and "clean_accuracy=" in text


def test_certify_attack_column(toy, tmp_path):
    model, data = toy
    out = tmp_path / "c.csv"
    assert main(["certify", "--model", str(model), "--data", str(data), "--mode", "exact", "--attack",
                 "--out", str(out)]) == EXIT_OK
    for row in _rows(out):
        if row["label"] == row["predicted"]:
            assert float(row["exact"]) <= float(row["upper_bound"]) + 1e-9


def test_certify_linf_refusal(tmp_path, capsys):
    save_model(PrototypeModel([[0.2, 0.2], [0.8, 0.8]], [0, 1], Norm.LINF), tmp_path / "m.json")
    write_csv(Dataset([[0.1, 0.1]], [0]), tmp_path / "d.csv")
    code = main(["certify", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--threat", "linf", "--mode", "exact"])
    err = capsys.readouterr().err
    assert code == EXIT_USAGE
    assert "Table 2: NP-hard" in err and "--mode lower" in err


def test_certify_box_never_lower(tmp_path):
    rng = np.random.default_rng(0)
    model = PrototypeModel(rng.uniform(0, 1, (6, 3)), [0, 1, 2, 0, 1, 2], Norm.L2)
    save_model(model, tmp_path / "m.json")
    write_csv(Dataset(rng.uniform(0, 1, (15, 3)), rng.integers(0, 3, 15)), tmp_path / "d.csv")
    base = ["certify", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"), "--mode", "exact"]
    assert main(base + ["--out", str(tmp_path / "u.csv")]) == EXIT_OK
    assert main(base + ["--domain", "unit-box", "--out", str(tmp_path / "b.csv")]) == EXIT_OK
    for u, b in zip(_rows(tmp_path / "u.csv"), _rows(tmp_path / "b.csv")):
        assert float(b["lower_bound"]) >= float(u["lower_bound"]) - 1e-12


def test_certify_missing_model(tmp_path, toy):
    _, data = toy
    assert main(["certify", "--model", str(tmp_path / "none.json"), "--data", str(data)]) == EXIT_DATA


# --- curve -----------------------------------------------------------------------

def test_curve_monotone(toy, tmp_path):
    model, data = toy
    out = tmp_path / "curve.csv"
    assert main(["curve", "--model", str(model), "--data", str(data), "--radius-min", "0", "--radius-max", "3",
                 "--num", "4", "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert list(rows[0]) == ["radius", "cra", "cra_box"]
    assert [float(r["radius"]) for r in rows] == [0.0, 1.0, 2.0, 3.0]
    for col in ("cra", "cra_box"):
        vals = [float(r[col]) for r in rows]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_curve_dual_dominates_plain(tmp_path):
    emb = SphereEmbedding.normalized([(2, 2)])
    rng = np.random.default_rng(3)

    def sample(n):
        x = np.abs(rng.normal(size=(n, 2, 2)))
        return (emb.blocks[0].radius * x / np.linalg.norm(x, axis=2, keepdims=True)).reshape(n, 4)

    save_model(embedded_model(sample(4), [0, 1, 0, 1], emb), tmp_path / "m.json")
    X = sample(20)
    model = load_model(tmp_path / "m.json")
    y = np.array([int(model.labels[np.argmin(np.linalg.norm(model.prototypes - x, axis=1))]) for x in X])
    write_csv(Dataset(X, y), tmp_path / "d.csv")
    out = tmp_path / "curve.csv"
    assert main(["curve", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--bound", "plain,dual", "--radius-max", "0.5", "--num", "11", "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert list(rows[0]) == ["radius", "cra", "cra_sphere"]
    assert all(float(r["cra_sphere"]) >= float(r["cra"]) for r in rows)


def test_curve_empty_dataset(toy, tmp_path):
    model, _ = toy
    (tmp_path / "empty.csv").write_text("label,f1,f2\n")
    out = tmp_path / "curve.csv"
    assert main(["curve", "--model", str(model), "--data", str(tmp_path / "empty.csv"), "--out", str(out)]) == EXIT_OK
    assert out.read_text().strip() == "radius,cra,cra_box"


# --- ingest ----------------------------------------------------------------------

def test_ingest_idx(tmp_path, capsys):
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(struct.pack(">IIII", 0x803, 3, 2, 2) + bytes(range(0, 240, 20)))
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 1, 1]))
    out = tmp_path / "d.csv"
    assert main(["ingest", "--images", str(img), "--labels", str(lab), "--out", str(out)]) == EXIT_OK
    data = read_csv(out)
    assert data.features.shape == (3, 4)
    assert np.all((data.features >= 0) & (data.features <= 1))
    text = capsys.readouterr().out
    assert "points=3 dim=4" in text and "class 1: 2" in text


def test_ingest_count_mismatch(tmp_path):
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(struct.pack(">IIII", 0x803, 3, 2, 2) + bytes(12))
    lab.write_bytes(struct.pack(">II", 0x801, 2) + bytes([0, 1]))
    assert main(["ingest", "--images", str(img), "--labels", str(lab), "--out", str(tmp_path / "d.csv")]) == EXIT_DATA


def test_ingest_bad_cell(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("label,f1\n0,zz\n")
    assert main(["ingest", "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path / "o.csv")]) == EXIT_DATA
    assert "row 2, column 2" in capsys.readouterr().err


def test_ingest_round_trip(tmp_path, blobs_csv):
    for name in ("o.csv", "o.npz"):
        assert main(["ingest", "--data", str(blobs_csv), "--out", str(tmp_path / name)]) == EXIT_OK
    again = tmp_path / "again.csv"
    assert main(["ingest", "--data", str(tmp_path / "o.npz"), "--out", str(again)]) == EXIT_OK
    assert again.read_text() == (tmp_path / "o.csv").read_text()
    assert np.array_equal(read_csv(again).features, read_csv(blobs_csv).features)
