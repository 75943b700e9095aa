"""Certified training of prototypes.

The objective is the mean over samples of the capped signed margin: for a
correctly classified point, the smallest pairwise distance (nearest own
prototype against every other-class prototype) capped at ``cap``; for a
misclassified point, minus the distance back across the boundary between the
nearest wrong prototype and the nearest own prototype.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans

from .core import Domain, Norm, PrototypeModel, classify, lp_norm, predict
from .data import Dataset
from .errors import ClassTooSmall, DataFormatError, InvariantViolation, UnsupportedCombination
from .geometry import _linf_offsets


class Init(str, Enum):
    KMEANS = "kmeans"
    RANDOM_SAMPLES = "random"


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class TrainConfig:
    prototypes_per_class: int = 1
    cap: float = 1.0
    metric: Norm = Norm.L2
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 128
    lr_decay: float = 0.95
    init: Init = Init.KMEANS
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.metric = Norm(self.metric)
        self.init = Init(self.init)
        self.optimizer = Optimizer(self.optimizer)
        if self.prototypes_per_class < 1:
            raise InvariantViolation("prototypes_per_class must be positive")
        if not self.cap > 0:
            raise InvariantViolation("cap must be positive")
        if not self.learning_rate > 0:
            raise InvariantViolation("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvariantViolation("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_decay <= 1:
            raise InvariantViolation("lr_decay must lie in (0, 1]")
        if self.metric not in (Norm.L2, Norm.LINF):
            raise UnsupportedCombination(f"training supports l2/linf only, got {self.metric.value}")


@dataclass
class MarginValue:
    signed_margin: float
    argpair: tuple  # (own-side prototype, other-side prototype) realizing the margin
    correct: bool = True


@dataclass
class TraceRow:
    epoch: int
    objective: float
    clean_accuracy: float


def _check_cell(p: Norm, q: Norm) -> None:
    if p not in (Norm.L2, Norm.LINF):
        raise UnsupportedCombination(f"training supports l2/linf only, got {p.value}")
    if p is Norm.LINF and q is not Norm.LINF:
        raise UnsupportedCombination(f"training with an linf model supports only the linf threat, got {q.value}")


# ---------------------------------------------------------------------------
# pairwise margins and their derivatives

def _dual_norm_grad(v, dual: Norm):
    if dual is Norm.L2:
        return v / np.linalg.norm(v)
    if dual is Norm.L1:
        return np.sign(v)
    g = np.zeros_like(v)
    k = int(np.argmax(np.abs(v)))
    g[k] = np.sign(v[k])
    return g


def _l2_pair(z, w_a, w_b, q: Norm, grad: bool):
    """Signed distance to the bisector, positive on w_a's side, and its derivatives in (w_a, w_b)."""
    v = w_b - w_a
    denom = 2.0 * float(lp_norm(v, q.dual))
    m = (float(np.sum((z - w_b) ** 2)) - float(np.sum((z - w_a) ** 2))) / denom
    if not grad:
        return m, None, None
    g = _dual_norm_grad(v, q.dual)
    d_b = (2.0 * (w_b - z) - 2.0 * m * g) / denom
    d_a = (2.0 * (z - w_a) + 2.0 * m * g) / denom
    return m, d_a, d_b


def _linf_pair(z, w_a, w_b, grad: bool):
    """p = q = inf distance from z (on w_a's side) to w_b's side, with a subgradient in (w_a, w_b)."""
    if float(np.max(np.abs(z - w_a)) - np.max(np.abs(z - w_b))) >= 0:
        return 0.0, np.zeros_like(z), np.zeros_like(z)
    alpha, beta, _ = _linf_offsets(z, w_a, w_b)
    value = 0.5 * float(beta.max() - alpha.max())
    d_a, d_b = np.zeros_like(z), np.zeros_like(z)
    if value <= 0 or not grad:
        return max(0.0, value), d_a, d_b
    s = np.sign(w_b - w_a)
    kb, ka = int(np.argmax(beta)), int(np.argmax(alpha))
    if s[kb] != 0:
        d_b[kb] += 0.5 * s[kb]
    else:
        d_a[kb] += 0.5 * np.sign(z[kb] - w_a[kb])
    if s[ka] != 0:
        d_a[ka] += 0.5 * s[ka]
    else:
        d_a[ka] += 0.5 * np.sign(z[ka] - w_a[ka])
    return value, d_a, d_b


def _pair_margin(z, w_own, w_other, p: Norm, q: Norm, correct: bool, grad: bool):
    """Signed margin for the pair and derivatives (d_own, d_other)."""
    if np.array_equal(w_own, w_other):
        return 0.0, np.zeros_like(z), np.zeros_like(z)
    if p is Norm.L2:
        return _l2_pair(z, w_own, w_other, q, grad)
    if correct:
        return _linf_pair(z, w_own, w_other, grad)
    value, d_other, d_own = _linf_pair(z, w_other, w_own, grad)
    return -value, -d_own, -d_other


def _select_pair(model: PrototypeModel, z, y: int, q: Norm):
    """(own index, other index, correct, uncapped margin) following the smallest-index tie rule."""
    p = model.metric.base
    y_hat, _, _ = classify(model, z)
    d = lp_norm(model.prototypes - z, p, axis=1)
    own = model.labels == y
    i_star = int(np.argmin(np.where(own, d, np.inf)))
    if y_hat != y:
        j_star = int(np.argmin(np.where(own, np.inf, d)))
        m, _, _ = _pair_margin(z, model.prototypes[i_star], model.prototypes[j_star], p, q, False, False)
        return i_star, j_star, False, m
    best, best_j = math.inf, -1
    for j in np.nonzero(~own)[0]:
        m, _, _ = _pair_margin(z, model.prototypes[i_star], model.prototypes[j], p, q, True, False)
        if m < best:
            best, best_j = m, int(j)
    return i_star, best_j, True, best


def margin(model: PrototypeModel, z, y: int, q: Norm, cap: float) -> MarginValue:
    q = Norm(q).base
    _check_cell(model.metric.base, q)
    z = np.asarray(z, dtype=np.float64)
    i, j, correct, m = _select_pair(model, z, int(y), q)
    return MarginValue(min(m, cap) if correct else m, (i, j), correct)


def margin_gradient(model: PrototypeModel, z, y: int, q: Norm, cap: float) -> np.ndarray:
    """Gradient of the capped signed margin w.r.t. every prototype row (only two rows are nonzero)."""
    q = Norm(q).base
    p = model.metric.base
    _check_cell(p, q)
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(model.prototypes)
    i, j, correct, m = _select_pair(model, z, int(y), q)
    if correct and m >= cap:
        return out
    _, d_own, d_other = _pair_margin(z, model.prototypes[i], model.prototypes[j], p, q, correct, True)
    out[i] += d_own
    out[j] += d_other
    return out


# ---------------------------------------------------------------------------
# batched l2 margins (the training hot path)

def _l2_batch(protos, labels, X, Y, q: Norm, cap: float, grad: bool):
    """Capped signed margins for a batch and, optionally, the summed gradient."""
    D2 = np.empty((len(X), len(protos)))
    for b, w in enumerate(protos):
        D2[:, b] = np.sum((X - w) ** 2, axis=1)
    own = labels[None, :] == Y[:, None]
    n = len(X)
    d_own = np.where(own, D2, np.inf)
    d_oth = np.where(own, np.inf, D2)
    i_star = np.argmin(d_own, axis=1)
    # class-level prediction with smallest-class tie rule
    k = int(labels.max()) + 1
    per_class = np.full((n, k), np.inf)
    for c in range(k):
        per_class[:, c] = D2[:, labels == c].min(axis=1)
    correct = np.argmin(per_class, axis=1) == Y
    pair_norm = np.empty_like(D2)
    for a in np.unique(i_star):
        pair_norm[i_star == a] = lp_norm(protos - protos[a], q.dual, axis=1)
    rows = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (D2 - D2[rows, i_star][:, None]) / (2.0 * pair_norm)
    rho = np.where(own, np.inf, rho)
    rho = np.where(np.isnan(rho), 0.0, rho)
    j_min = np.argmin(rho, axis=1)
    j_wrong = np.argmin(d_oth, axis=1)
    j_star = np.where(correct, j_min, j_wrong)
    m = rho[rows, j_star]
    capped = np.where(correct, np.minimum(m, cap), m)
    if not grad:
        return capped, correct, None
    G = np.zeros_like(protos)
    for r in np.nonzero(~correct | (m < cap))[0]:
        a, b = int(i_star[r]), int(j_star[r])
        if np.array_equal(protos[a], protos[b]):
            continue
        _, d_a, d_b = _l2_pair(X[r], protos[a], protos[b], q, True)
        G[a] += d_a
        G[b] += d_b
    return capped, correct, G


def _generic_batch(model, X, Y, q, cap, grad):
    G = np.zeros_like(model.prototypes) if grad else None
    vals, correct = np.empty(len(X)), np.empty(len(X), dtype=bool)
    for r, (z, y) in enumerate(zip(X, Y)):
        mv = margin(model, z, int(y), q, cap)
        vals[r], correct[r] = mv.signed_margin, mv.correct
        if grad:
            G += margin_gradient(model, z, int(y), q, cap)
    return vals, correct, G


def batch_margins(model: PrototypeModel, X, Y, q: Norm, cap: float, grad: bool = False):
    """(capped margins, correctness mask, summed gradient or None) for a batch."""
    q = Norm(q).base
    _check_cell(model.metric.base, q)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    if model.metric.base is Norm.L2:
        return _l2_batch(model.prototypes, model.labels, X, Y, q, cap, grad)
    return _generic_batch(model, X, Y, q, cap, grad)


def objective(model: PrototypeModel, dataset: Dataset, q: Norm, cap: float) -> float:
    if len(dataset) == 0:
        return 0.0
    vals, _, _ = batch_margins(model, dataset.features, dataset.labels, q, cap)
    return float(vals.mean())


# ---------------------------------------------------------------------------
# initialization and optimization

def init_prototypes(dataset: Dataset, config: TrainConfig, num_classes: Optional[int] = None) -> PrototypeModel:
    k = dataset.num_classes if num_classes is None else num_classes
    counts = dataset.class_counts(k)
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise DataFormatError(f"class {int(missing[0])} has no samples")
    ppc = config.prototypes_per_class
    rng = np.random.default_rng(config.seed)
    protos, labels = [], []
    for c in range(k):
        Xc = dataset.features[dataset.labels == c]
        if config.init is Init.RANDOM_SAMPLES:
            if len(Xc) < ppc:
                raise ClassTooSmall(f"class {c} has {len(Xc)} samples, fewer than {ppc} prototypes")
            centers = Xc[rng.choice(len(Xc), size=ppc, replace=False)]
        elif ppc == 1:
            centers = Xc.mean(axis=0, keepdims=True)
        else:
            if len(Xc) < ppc:
                raise ClassTooSmall(f"class {c} has {len(Xc)} samples, fewer than {ppc} prototypes")
            km = KMeans(n_clusters=ppc, init="k-means++", n_init=1, max_iter=50, tol=1e-4,
                        random_state=int(config.seed) + c)
            centers = km.fit(Xc).cluster_centers_
        protos.append(np.asarray(centers, dtype=np.float64))
        labels.extend([c] * ppc)
    return PrototypeModel(np.vstack(protos), np.array(labels), config.metric, Domain.UNBOUNDED, k)


@dataclass
class _Adam:
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class _SGD:
    lr: float

    def step(self, params, grad):
        return params - self.lr * grad


def _evaluate(model, dataset, q, cap, epoch) -> TraceRow:
    if len(dataset) == 0:
        return TraceRow(epoch, 0.0, 0.0)
    vals, correct, _ = batch_margins(model, dataset.features, dataset.labels, q, cap)
    return TraceRow(epoch, float(vals.mean()), float(correct.mean()))


def train(dataset: Dataset, config: TrainConfig, q: Norm = Norm.L2,
          num_classes: Optional[int] = None, init_model: Optional[PrototypeModel] = None):
    """Maximize the mean capped signed margin by mini-batch ascent; returns (model, trace)."""
    q = Norm(q).base
    _check_cell(config.metric, q)
    if config.batch_size > len(dataset):
        raise InvariantViolation(f"batch_size {config.batch_size} exceeds dataset size {len(dataset)}")
    model = init_model if init_model is not None else init_prototypes(dataset, config, num_classes)
    trace = [_evaluate(model, dataset, q, config.cap, 0)]
    if config.epochs == 0:
        return model, trace
    rng = np.random.default_rng(config.seed)
    params = np.array(model.prototypes)
    if config.optimizer is Optimizer.ADAM:
        opt = _Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    else:
        opt = _SGD(config.learning_rate)
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            current = model.with_prototypes(params)
            _, _, G = batch_margins(current, dataset.features[idx], dataset.labels[idx], q, config.cap, grad=True)
            # ascent on the objective = descent on its negative
            params = opt.step(params, -G / len(idx))
        opt.lr *= config.lr_decay
        model = model.with_prototypes(params)
        trace.append(_evaluate(model, dataset, q, config.cap, epoch))
    return model, trace


def clean_accuracy(model: PrototypeModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict(model, dataset.features) == dataset.labels))
