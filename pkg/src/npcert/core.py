"""Domain types, classification, support-matrix dispatch and model persistence."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvariantViolation,
    SchemaVersionMismatch,
    UnsupportedCombination,
)

SCHEMA_VERSION = 1


class Norm(str, Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"
    EMBEDDED_L2 = "embedded_l2"

    @property
    def ord(self) -> float:
        return {"l1": 1, "l2": 2, "linf": np.inf, "embedded_l2": 2}[self.value]

    @property
    def base(self) -> "Norm":
        """The plain lp norm behind this tag (embedded l2 is Euclidean)."""
        return Norm.L2 if self is Norm.EMBEDDED_L2 else self

    @property
    def dual(self) -> "Norm":
        return {Norm.L1: Norm.LINF, Norm.LINF: Norm.L1}.get(self.base, Norm.L2)


class Domain(str, Enum):
    UNBOUNDED = "unbounded"
    UNIT_BOX = "unit_box"
    SPHERE_PRODUCT = "sphere_product"


class Exactness(str, Enum):
    PAIRWISE = "pairwise"
    EXACT = "exact"


class Solver(str, Enum):
    CLOSED_FORM = "closed_form"
    SORT_SCAN = "sort_scan"
    CONVEX_PROGRAM = "convex_program"
    DUAL_BOUND = "dual_bound"
    NONCONVEX = "nonconvex"
    NP_HARD = "np_hard"


def lp_norm(x: np.ndarray, q: Norm, axis=-1) -> np.ndarray:
    return np.linalg.norm(x, ord=q.ord, axis=axis)


@dataclass(frozen=True)
class SphereBlock:
    radius: float
    channels: int
    positions: int

    @property
    def size(self) -> int:
        return self.channels * self.positions


@dataclass(frozen=True)
class SphereEmbedding:
    """Block layout of a sphere-product embedding.

    Block ``l`` occupies ``positions * channels`` consecutive entries, stored
    position-major: every run of ``channels`` entries is one sphere of radius
    ``radius``.
    """

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, SphereBlock) else SphereBlock(*b) for b in self.blocks)
        if not blocks:
            raise InvariantViolation("embedding needs at least one block")
        for b in blocks:
            if not (b.radius > 0 and b.channels > 0 and b.positions > 0):
                raise InvariantViolation(f"invalid block {b}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def normalized(cls, layers: Sequence[tuple]) -> "SphereEmbedding":
        """Layers given as (channels, positions) with radius 1/sqrt(positions)."""
        return cls(tuple(SphereBlock(1.0 / math.sqrt(n), c, n) for c, n in layers))

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def squared_radius_sum(self) -> float:
        return float(sum(b.positions * b.radius**2 for b in self.blocks))

    def split(self, z: np.ndarray) -> list:
        """Views of ``z`` reshaped to (positions, channels), one per block."""
        out, start = [], 0
        for b in self.blocks:
            out.append(z[start:start + b.size].reshape(b.positions, b.channels))
            start += b.size
        return out

    def sphere_radii(self) -> np.ndarray:
        """Radius of every individual sphere, in storage order."""
        return np.concatenate([np.full(b.positions, b.radius) for b in self.blocks])

    def to_json(self) -> dict:
        return {"blocks": [{"r": b.radius, "channels": b.channels, "positions": b.positions}
                           for b in self.blocks]}

    @classmethod
    def from_json(cls, obj: dict) -> "SphereEmbedding":
        try:
            return cls(tuple(SphereBlock(float(b["r"]), int(b["channels"]), int(b["positions"]))
                             for b in obj["blocks"]))
        except (KeyError, TypeError) as exc:
            raise SchemaVersionMismatch(f"malformed embedding descriptor: {exc}") from exc


@dataclass(frozen=True, eq=False)
class PrototypeModel:
    """A nearest prototype classifier. Arrays are frozen read-only on construction."""

    prototypes: np.ndarray
    labels: np.ndarray
    metric: Norm
    domain: Domain = Domain.UNBOUNDED
    num_classes: Optional[int] = None
    embedding: Optional[SphereEmbedding] = None

    def __post_init__(self):
        protos = np.array(self.prototypes, dtype=np.float64)
        labels = np.array(self.labels).astype(np.int64)
        if protos.ndim != 2 or protos.shape[0] == 0 or protos.shape[1] == 0:
            raise InvariantViolation("prototypes must be a non-empty 2-D array")
        if labels.shape != (protos.shape[0],):
            raise InvariantViolation("one label per prototype required")
        if not np.all(np.isfinite(protos)):
            raise InvariantViolation("prototypes must be finite")
        k = int(labels.max()) + 1 if self.num_classes is None else int(self.num_classes)
        if labels.min() < 0 or labels.max() >= k:
            raise InvariantViolation(f"labels must lie in [0, {k})")
        missing = sorted(set(range(k)) - set(labels.tolist()))
        if missing:
            raise InvariantViolation(f"class {missing[0]} has no prototype")
        metric, domain = Norm(self.metric), Domain(self.domain)
        if metric is Norm.EMBEDDED_L2:
            if self.embedding is None:
                raise InvariantViolation("embedded_l2 metric requires an embedding")
            if self.embedding.dim != protos.shape[1]:
                raise InvariantViolation(
                    f"embedding dimension {self.embedding.dim} != prototype dimension {protos.shape[1]}")
        if domain is Domain.SPHERE_PRODUCT and metric is not Norm.EMBEDDED_L2:
            raise InvariantViolation("sphere_product domain requires the embedded_l2 metric")
        protos.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "num_classes", k)

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.shape[0]

    def with_domain(self, domain: Domain) -> "PrototypeModel":
        return PrototypeModel(self.prototypes, self.labels, self.metric, Domain(domain),
                              self.num_classes, self.embedding)

    def with_prototypes(self, prototypes: np.ndarray) -> "PrototypeModel":
        return PrototypeModel(prototypes, self.labels, self.metric, self.domain,
                              self.num_classes, self.embedding)


@dataclass(frozen=True)
class ThreatSpec:
    q: Norm
    radius_cap: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "q", Norm(self.q))
        if self.radius_cap is not None and not self.radius_cap > 0:
            raise InvariantViolation("radius_cap must be positive")


@dataclass
class Diagnostics:
    shortcut_hit: bool = False
    subproblems_solved: int = 0
    pruned: int = 0
    wall_time: float = 0.0
    trivial_bound: Optional[float] = None
    unbounded_bound: Optional[float] = None
    iteration_limited: bool = False


@dataclass
class Certificate:
    label_predicted: int
    correct: bool
    lower_bound: float
    exact: Optional[float] = None
    upper_bound: Optional[float] = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def certified_radius(self) -> float:
        """Best proven radius: exact when available, else the lower bound."""
        return self.exact if self.exact is not None else self.lower_bound


# ---------------------------------------------------------------------------
# support matrix

@dataclass(frozen=True)
class SupportEntry:
    solver: Solver
    complexity: str
    cell: str

    @property
    def supported(self) -> bool:
        return self.solver not in (Solver.NP_HARD, Solver.NONCONVEX)

    def require(self) -> "SupportEntry":
        if not self.supported:
            raise UnsupportedCombination(self.cell)
        return self


_PAIRWISE = {
    (Norm.L1, Norm.L1): (Solver.NP_HARD, "NP-hard"),
    (Norm.L1, Norm.L2): (Solver.NP_HARD, "NP-hard"),
    (Norm.L1, Norm.LINF): (Solver.SORT_SCAN, "O(d log(d))"),
    (Norm.L2, Norm.L1): (Solver.CLOSED_FORM, "Θ(d)"),
    (Norm.L2, Norm.L2): (Solver.CLOSED_FORM, "Θ(d)"),
    (Norm.L2, Norm.LINF): (Solver.CLOSED_FORM, "Θ(d)"),
    (Norm.LINF, Norm.L1): (Solver.CLOSED_FORM, "Θ(d)"),
    (Norm.LINF, Norm.L2): (Solver.SORT_SCAN, "O(d log(d))"),
    (Norm.LINF, Norm.LINF): (Solver.CLOSED_FORM, "Θ(d)"),
}

_EXACT = {
    (Norm.L1, Norm.L1): (Solver.NP_HARD, "NP-hard"),
    (Norm.L1, Norm.L2): (Solver.NP_HARD, "NP-hard"),
    (Norm.L1, Norm.LINF): (Solver.SORT_SCAN, "Poly"),
    (Norm.L2, Norm.L1): (Solver.CONVEX_PROGRAM, "Poly"),
    (Norm.L2, Norm.L2): (Solver.CONVEX_PROGRAM, "Poly"),
    (Norm.L2, Norm.LINF): (Solver.CONVEX_PROGRAM, "Poly"),
    (Norm.LINF, Norm.L1): (Solver.NP_HARD, "NP-hard"),
    (Norm.LINF, Norm.L2): (Solver.NP_HARD, "NP-hard"),
    (Norm.LINF, Norm.LINF): (Solver.NP_HARD, "NP-hard"),
}


def dispatch_support(p: Norm, q: Norm, exactness: Exactness, domain: Domain) -> SupportEntry:
    """Look up which solver family handles a (metric, threat, mode, domain) cell.

    Pairwise cells follow the complexity table for the pairwise relaxation,
    exact cells the table for the exact minimal perturbation. Box constraints
    turn the Θ(d) pairwise closed forms into O(d log d) sort scans.
    """
    p, q = Norm(p), Norm(q)
    exactness, domain = Exactness(exactness), Domain(domain)
    if p is Norm.EMBEDDED_L2 and q.base is not Norm.L2:
        return SupportEntry(Solver.NP_HARD, "undefined", "embedded_l2 models support only the l2 threat")
    if q is Norm.EMBEDDED_L2 and p is not Norm.EMBEDDED_L2:
        return SupportEntry(Solver.NP_HARD, "undefined", "the embedded_l2 threat requires an embedded_l2 model")
    if domain is Domain.SPHERE_PRODUCT:
        if p is not Norm.EMBEDDED_L2:
            return SupportEntry(Solver.NONCONVEX, "undefined", "sphere_product requires embedded_l2")
        if exactness is Exactness.PAIRWISE:
            return SupportEntry(Solver.DUAL_BOUND, "O(D) per bisection step",
                                "sphere product: dual lower bound by bisection")
        return SupportEntry(Solver.NONCONVEX, "non-convex",
                            "sphere product: exact radius is non-convex, lower bounds only")
    pb, qb = p.base, q.base
    if exactness is Exactness.PAIRWISE:
        solver, cx = _PAIRWISE[(pb, qb)]
        cell = f"Table 1: {cx} (p={pb.value}, q={qb.value})"
        if domain is Domain.UNIT_BOX and solver is Solver.CLOSED_FORM and pb is not Norm.LINF:
            solver, cx = Solver.SORT_SCAN, "O(d log(d))"
            cell = f"Table 1: {cx} (p={pb.value}, q={qb.value}, unit box)"
        return SupportEntry(solver, cx, cell)
    solver, cx = _EXACT[(pb, qb)]
    return SupportEntry(solver, cx, f"Table 2: {cx} (p={pb.value}, q={qb.value})")


# ---------------------------------------------------------------------------
# classification

def check_point(model: PrototypeModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.dim,):
        raise DimensionMismatch(f"expected a vector of length {model.dim}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DimensionMismatch("query point must be finite")
    return z


def prototype_distances(model: PrototypeModel, z: np.ndarray) -> np.ndarray:
    return lp_norm(model.prototypes - z, model.metric)


def class_distances(model: PrototypeModel, z: np.ndarray) -> np.ndarray:
    """Distance from ``z`` to the nearest prototype of every class."""
    d = prototype_distances(model, check_point(model, z))
    out = np.full(model.num_classes, np.inf)
    np.minimum.at(out, model.labels, d)
    return out


def classify(model: PrototypeModel, z) -> tuple:
    """Return (class, distance to nearest own prototype, distance to nearest other).

    Ties go to the smallest class index.
    """
    per_class = class_distances(model, z)
    y = int(np.argmin(per_class))
    others = np.delete(per_class, y)
    return y, float(per_class[y]), float(others.min()) if others.size else math.inf


def predict(model: PrototypeModel, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim} features, got {points.shape[1]}")
    out = np.empty(len(points), dtype=np.int64)
    for start in range(0, len(points), 1024):
        chunk = points[start:start + 1024]
        d = lp_norm(chunk[:, None, :] - model.prototypes[None, :, :], model.metric)
        per_class = np.full((len(chunk), model.num_classes), np.inf)
        for c in range(model.num_classes):
            per_class[:, c] = d[:, model.labels == c].min(axis=1)
        out[start:start + 1024] = np.argmin(per_class, axis=1)
    return out


def nearest_in(model: PrototypeModel, z: np.ndarray, mask: np.ndarray) -> int:
    """Index of the nearest prototype among ``mask``; ties to the smallest index."""
    d = prototype_distances(model, z)
    d = np.where(mask, d, np.inf)
    return int(np.argmin(d))


# ---------------------------------------------------------------------------
# persistence

_METRIC_CODES = [Norm.L1, Norm.L2, Norm.LINF, Norm.EMBEDDED_L2]
_DOMAIN_CODES = [Domain.UNBOUNDED, Domain.UNIT_BOX, Domain.SPHERE_PRODUCT]
BINARY_MAGIC = b"NPC1"


def model_to_json(model: PrototypeModel) -> dict:
    obj = {
        "version": SCHEMA_VERSION,
        "metric": model.metric.value,
        "domain": model.domain.value,
        "dim": model.dim,
        "num_classes": model.num_classes,
        "labels": model.labels.tolist(),
        # repr of a Python float round-trips exactly
        "prototypes": model.prototypes.tolist(),
    }
    if model.embedding is not None:
        obj["embedding"] = model.embedding.to_json()
    return obj


def model_from_json(obj: dict) -> PrototypeModel:
    if obj.get("version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"unsupported model version {obj.get('version')!r}")
    try:
        dim = int(obj["dim"])
        rows = obj["prototypes"]
        if any(len(r) != dim for r in rows):
            raise SchemaVersionMismatch(f"prototype rows do not match declared dim {dim}")
        embedding = SphereEmbedding.from_json(obj["embedding"]) if obj.get("embedding") else None
        return PrototypeModel(
            prototypes=np.array(rows, dtype=np.float64).reshape(len(rows), dim),
            labels=np.array(obj["labels"], dtype=np.int64),
            metric=Norm(obj["metric"]),
            domain=Domain(obj.get("domain", "unbounded")),
            num_classes=int(obj["num_classes"]),
            embedding=embedding,
        )
    except (KeyError, TypeError) as exc:
        raise SchemaVersionMismatch(f"malformed model file: {exc}") from exc


def _model_to_bytes(model: PrototypeModel) -> bytes:
    blocks = model.embedding.blocks if model.embedding else ()
    parts = [BINARY_MAGIC, struct.pack(
        "<7I", SCHEMA_VERSION, _METRIC_CODES.index(model.metric), _DOMAIN_CODES.index(model.domain),
        model.dim, model.num_classes, model.num_prototypes, len(blocks))]
    for b in blocks:
        parts.append(struct.pack("<dII", b.radius, b.channels, b.positions))
    parts.append(model.labels.astype("<u4").tobytes())
    parts.append(model.prototypes.astype("<f8").tobytes())
    return b"".join(parts)


def _model_from_bytes(buf: bytes) -> PrototypeModel:
    if buf[:4] != BINARY_MAGIC:
        raise SchemaVersionMismatch("bad magic for binary model")
    try:
        version, metric, domain, dim, k, n, nblocks = struct.unpack_from("<7I", buf, 4)
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(f"unsupported model version {version}")
        off = 4 + 28
        blocks = []
        for _ in range(nblocks):
            blocks.append(SphereBlock(*struct.unpack_from("<dII", buf, off)))
            off += 16
        labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        if len(buf) - off != 8 * n * dim:
            raise SchemaVersionMismatch("payload size does not match header")
        protos = np.frombuffer(buf, dtype="<f8", count=n * dim, offset=off).reshape(n, dim)
    except struct.error as exc:
        raise SchemaVersionMismatch(f"truncated binary model: {exc}") from exc
    return PrototypeModel(protos.copy(), labels, _METRIC_CODES[metric], _DOMAIN_CODES[domain], k,
                          SphereEmbedding(tuple(blocks)) if blocks else None)


def save_model(model: PrototypeModel, path) -> None:
    """Write ``model`` as JSON, or as the NPC1 binary layout when ``path`` ends in .npc."""
    path = Path(path)
    if path.suffix == ".npc":
        path.write_bytes(_model_to_bytes(model))
    else:
        path.write_text(json.dumps(model_to_json(model)))


def load_model(path) -> PrototypeModel:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == BINARY_MAGIC:
        return _model_from_bytes(buf)
    try:
        obj = json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaVersionMismatch(f"{path}: not a model file ({exc})") from exc
    return model_from_json(obj)
