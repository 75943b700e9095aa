import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from npcert.core import SphereEmbedding
from npcert.data import (Dataset, load_dataset, read_csv, read_emb1, read_embedded_csv, read_idx, read_npz,
                         write_csv, write_emb1, write_idx, write_npz)
from npcert.errors import DataFormatError


def _idx_pair(tmp_path, pixels, labels, rows=2, cols=2, image_magic=0x803, label_magic=0x801):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">IIII", image_magic, len(pixels), rows, cols) + bytes(np.ravel(pixels).tolist()))
    lab.write_bytes(struct.pack(">II", label_magic, len(labels)) + bytes(labels))
    return img, lab


# --- CSV ---------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(7, 3)) / 3.0, [0, 1, 2, 0, 1, 2, 0])
    write_csv(data, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    assert np.array_equal(back.features, data.features) and np.array_equal(back.labels, data.labels)


def test_csv_non_numeric_cell(tmp_path):
    (tmp_path / "d.csv").write_text("label,f1,f2\n0,0.1,0.2\n1,0.3,abc\n")
    with pytest.raises(DataFormatError, match="row 3, column 3"):
        read_csv(tmp_path / "d.csv")


def test_csv_bad_label(tmp_path):
    (tmp_path / "d.csv").write_text("label,f1\nx,0.1\n")
    with pytest.raises(DataFormatError, match="row 2, column 1"):
        read_csv(tmp_path / "d.csv")


def test_csv_ragged_row(tmp_path):
    (tmp_path / "d.csv").write_text("label,f1,f2\n0,0.1\n")
    with pytest.raises(DataFormatError, match="row 2"):
        read_csv(tmp_path / "d.csv")


def test_csv_label_out_of_range(tmp_path):
    (tmp_path / "d.csv").write_text("label,f1\n3,0.1\n")
    with pytest.raises(DataFormatError, match="out of range"):
        read_csv(tmp_path / "d.csv", num_classes=2)


def test_csv_header_required(tmp_path):
    (tmp_path / "d.csv").write_text("0,0.1\n")
    with pytest.raises(DataFormatError, match="header"):
        read_csv(tmp_path / "d.csv")


def test_csv_header_only(tmp_path):
    (tmp_path / "d.csv").write_text("label,f1,f2\n")
    data = read_csv(tmp_path / "d.csv")
    assert len(data) == 0 and data.dim == 2


def test_missing_class_reported():
    with pytest.raises(DataFormatError, match="class 1 has no samples"):
        Dataset(np.zeros((2, 1)), [0, 2]).require_all_classes()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_exact(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    data = Dataset(X, np.arange(len(X)) % 3)
    write_csv(data, path)
    assert np.array_equal(read_csv(path).features, X)


# --- IDX ---------------------------------------------------------------------------

def test_idx_three_images(tmp_path):
    pixels = np.array([[0, 255, 128, 64], [1, 2, 3, 4], [255, 255, 0, 0]], dtype=np.uint8)
    img, lab = _idx_pair(tmp_path, pixels, [0, 1, 0])
    data = read_idx(img, lab)
    assert data.features.shape == (3, 4)
    assert np.all((data.features >= 0) & (data.features <= 1))
    assert np.allclose(data.features, pixels / 255.0)
    assert list(data.labels) == [0, 1, 0]


def test_idx_gzip(tmp_path):
    img, lab = _idx_pair(tmp_path, np.zeros((2, 4), dtype=np.uint8), [0, 1])
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    assert len(read_idx(gz, lab)) == 2


def test_idx_count_mismatch(tmp_path):
    img, lab = _idx_pair(tmp_path, np.zeros((3, 4), dtype=np.uint8), [0, 1])
    with pytest.raises(DataFormatError, match="mismatch"):
        read_idx(img, lab)


def test_idx_bad_magic(tmp_path):
    img, lab = _idx_pair(tmp_path, np.zeros((1, 4), dtype=np.uint8), [0], image_magic=0x801)
    with pytest.raises(DataFormatError, match="magic"):
        read_idx(img, lab)


def test_idx_truncated(tmp_path):
    img, lab = _idx_pair(tmp_path, np.zeros((2, 4), dtype=np.uint8), [0, 1])
    img.write_bytes(img.read_bytes()[:-3])
    with pytest.raises(DataFormatError, match="truncated"):
        read_idx(img, lab)


def test_idx_round_trip(tmp_path):
    data = Dataset(np.array([[0.0, 1.0, 0.2, 0.4]]), [3])
    write_idx(data, tmp_path / "i", tmp_path / "l", (2, 2))
    back = read_idx(tmp_path / "i", tmp_path / "l")
    assert np.allclose(back.features, np.rint(data.features * 255) / 255)
    assert list(back.labels) == [3]


# --- binary --------------------------------------------------------------------------

def test_npz_round_trip(tmp_path):
    data = Dataset(np.random.default_rng(1).normal(size=(4, 2)), [0, 1, 1, 0])
    write_npz(data, tmp_path / "d.npz")
    back = read_npz(tmp_path / "d.npz")
    assert np.array_equal(back.features, data.features) and np.array_equal(back.labels, data.labels)
    assert np.array_equal(load_dataset(tmp_path / "d.npz").features, data.features)


def test_npz_wrong_contents(tmp_path):
    np.savez(tmp_path / "x.npz", other=np.zeros(3))
    with pytest.raises(DataFormatError):
        read_npz(tmp_path / "x.npz")


def test_load_missing_file(tmp_path):
    with pytest.raises(DataFormatError, match="no such file"):
        load_dataset(tmp_path / "none.csv")


def test_emb1_round_trip(tmp_path):
    emb = SphereEmbedding.normalized([(2, 2), (3, 1)])
    data = Dataset(np.abs(np.random.default_rng(2).normal(size=(3, emb.dim))), [0, 1, 0])
    write_emb1(data, emb, tmp_path / "e.emb")
    back, emb_back = read_emb1(tmp_path / "e.emb")
    assert emb_back == emb
    assert np.array_equal(back.features, data.features) and np.array_equal(back.labels, data.labels)


def test_emb1_layout_is_little_endian(tmp_path):
    emb = SphereEmbedding(((1.0, 2, 1),))
    write_emb1(Dataset(np.array([[0.6, 0.8]]), [5]), emb, tmp_path / "e.emb")
    raw = (tmp_path / "e.emb").read_bytes()
    assert raw[:4] == b"EMB1"
    assert struct.unpack_from("<IdIIQI", raw, 4) == (1, 1.0, 2, 1, 1, 5)
    assert struct.unpack_from("<2d", raw, 4 + 4 + 16 + 8 + 4) == (0.6, 0.8)


def test_emb1_bad_magic(tmp_path):
    (tmp_path / "e.emb").write_bytes(b"EMB2" + bytes(20))
    with pytest.raises(DataFormatError, match="magic"):
        read_emb1(tmp_path / "e.emb")


def test_emb1_truncated(tmp_path):
    emb = SphereEmbedding(((1.0, 2, 1),))
    write_emb1(Dataset(np.array([[0.6, 0.8], [1.0, 0.0]]), [0, 1]), emb, tmp_path / "e.emb")
    path = tmp_path / "e.emb"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataFormatError, match="truncated"):
        read_emb1(path)


def test_embedded_csv_with_sidecar(tmp_path):
    emb = SphereEmbedding(((1.0, 2, 1),))
    write_csv(Dataset(np.array([[0.6, 0.8]]), [1]), tmp_path / "e.csv")
    (tmp_path / "e.json").write_text(json.dumps(emb.to_json()))
    data, back = read_embedded_csv(tmp_path / "e.csv")
    assert back == emb and np.allclose(data.features, [[0.6, 0.8]])


def test_embedded_csv_without_sidecar(tmp_path):
    write_csv(Dataset(np.array([[0.6, 0.8]]), [1]), tmp_path / "e.csv")
    with pytest.raises(DataFormatError, match="descriptor"):
        read_embedded_csv(tmp_path / "e.csv")
