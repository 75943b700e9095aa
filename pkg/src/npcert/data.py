"""Dataset containers and file formats: labelled CSV, IDX image/label pairs, NPZ and EMB1 embeddings."""
from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import SphereEmbedding
from .errors import DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
EMB_MAGIC = b"EMB1"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataFormatError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise DataFormatError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and self.labels.min() < 0:
            raise DataFormatError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def class_counts(self, num_classes: Optional[int] = None) -> np.ndarray:
        k = self.num_classes if num_classes is None else num_classes
        return np.bincount(self.labels, minlength=k)

    def require_all_classes(self, num_classes: Optional[int] = None) -> None:
        counts = self.class_counts(num_classes)
        missing = np.nonzero(counts == 0)[0]
        if missing.size:
            raise DataFormatError(f"class {int(missing[0])} has no samples")


# ---------------------------------------------------------------------------
# CSV

def read_csv(path, num_classes: Optional[int] = None) -> Dataset:
    """Read ``label,f1,...,fd`` with a header row. Errors name the 1-based row and column."""
    labels, rows, width = [], [], None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Dataset(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
        width = len(header)
        if width < 2 or header[0].strip().lower() != "label":
            raise DataFormatError(f"{path}: header must start with 'label' and name at least one feature")
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataFormatError(f"{path}: row {r} has {len(row)} columns, expected {width}")
            try:
                y = int(row[0])
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column 1: label {row[0]!r} is not an integer") from None
            if y < 0 or (num_classes is not None and y >= num_classes):
                raise DataFormatError(f"{path}: row {r}, column 1: label {y} out of range")
            vals = []
            for c, cell in enumerate(row[1:], start=2):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"{path}: row {r}, column {c}: {cell!r} is not a number") from None
                if not np.isfinite(v):
                    raise DataFormatError(f"{path}: row {r}, column {c}: non-finite value")
                vals.append(v)
            labels.append(y)
            rows.append(vals)
    feats = np.array(rows, dtype=np.float64) if rows else np.zeros((0, width - 1))
    return Dataset(feats, np.array(labels, dtype=np.int64))


def write_csv(dataset: Dataset, path) -> None:
    # repr keeps every float exact on the way back in
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{k + 1}" for k in range(dataset.dim)])
        for y, x in zip(dataset.labels, dataset.features):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


# ---------------------------------------------------------------------------
# IDX

def _open_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx_images(path) -> np.ndarray:
    buf = _open_bytes(path)
    if len(buf) < 16:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    size = n * rows * cols
    if len(buf) - 16 < size:
        raise DataFormatError(f"{path}: truncated, expected {size} pixel bytes, found {len(buf) - 16}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=size, offset=16)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    buf = _open_bytes(path)
    if len(buf) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(buf) - 8 < n:
        raise DataFormatError(f"{path}: truncated, expected {n} labels, found {len(buf) - 8}")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def read_idx(images_path, labels_path, num_classes: Optional[int] = None) -> Dataset:
    x = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if len(x) != len(y):
        raise DataFormatError(f"image/label count mismatch: {len(x)} images, {len(y)} labels")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise DataFormatError(f"label {int(y.max())} out of range for {num_classes} classes")
    return Dataset(x, y)


def write_idx(dataset: Dataset, images_path, labels_path, shape: tuple) -> None:
    """Write pixels in [0,1] as IDX bytes (rounded to the nearest 1/255)."""
    rows, cols = shape
    px = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols))
        fh.write(px.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# binary canonical form

def write_npz(dataset: Dataset, path) -> None:
    np.savez(path, features=dataset.features, labels=dataset.labels)


def read_npz(path) -> Dataset:
    try:
        with np.load(path) as f:
            return Dataset(f["features"], f["labels"])
    except (KeyError, ValueError, OSError) as exc:
        raise DataFormatError(f"{path}: not a dataset archive ({exc})") from exc


# ---------------------------------------------------------------------------
# embeddings

def write_emb1(dataset: Dataset, embedding: SphereEmbedding, path) -> None:
    if dataset.dim != embedding.dim:
        raise DataFormatError(f"dataset dim {dataset.dim} != embedding dim {embedding.dim}")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", len(embedding.blocks)))
        for b in embedding.blocks:
            fh.write(struct.pack("<dII", b.radius, b.channels, b.positions))
        fh.write(struct.pack("<Q", len(dataset)))
        for y, x in zip(dataset.labels, dataset.features):
            fh.write(struct.pack("<I", int(y)))
            fh.write(x.astype("<f8").tobytes())


def read_emb1(path) -> tuple:
    buf = _open_bytes(path)
    if buf[:4] != EMB_MAGIC:
        raise DataFormatError(f"{path}: bad magic {buf[:4]!r}, expected {EMB_MAGIC!r}")
    try:
        (nb,) = struct.unpack_from("<I", buf, 4)
        off, blocks = 8, []
        for _ in range(nb):
            blocks.append(struct.unpack_from("<dII", buf, off))
            off += 16
        (n,) = struct.unpack_from("<Q", buf, off)
        off += 8
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated header") from exc
    emb = SphereEmbedding(tuple(blocks))
    stride = 4 + 8 * emb.dim
    if len(buf) - off < n * stride:
        raise DataFormatError(f"{path}: truncated, expected {n} points of {stride} bytes")
    rec = np.frombuffer(buf, dtype=np.dtype([("label", "<u4"), ("x", "<f8", (emb.dim,))]), count=n, offset=off)
    return Dataset(rec["x"].astype(np.float64), rec["label"].astype(np.int64)), emb


def read_embedded_csv(path, descriptor: Optional[str] = None) -> tuple:
    """CSV embeddings with a JSON block descriptor next to them (``<name>.json`` by default)."""
    descriptor = Path(descriptor) if descriptor else Path(path).with_suffix(".json")
    if not descriptor.exists():
        raise DataFormatError(f"{path}: missing embedding descriptor {descriptor}")
    emb = SphereEmbedding.from_json(json.loads(descriptor.read_text()))
    ds = read_csv(path)
    if len(ds) and ds.dim != emb.dim:
        raise DataFormatError(f"{path}: {ds.dim} features but the descriptor declares {emb.dim}")
    return ds, emb


def load_dataset(path, labels_path=None, num_classes: Optional[int] = None) -> Dataset:
    """Load by extension; an IDX image file needs its ``labels_path``."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such file")
    if labels_path is not None:
        return read_idx(path, labels_path, num_classes)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        return read_npz(path)
    if suffix in (".emb", ".emb1"):
        return read_emb1(path)[0]
    return read_csv(path, num_classes)
