"""Certification for embeddings that live on a product of spheres in the nonnegative orthant.

Every position of every block is a channel vector with fixed Euclidean norm
and nonnegative entries. Minimizing the distance to a decision boundary over
that set is nonconvex, but the Lagrangian dual of the pairwise problem is a
concave function of one scalar, so its maximum gives a sound lower bound.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (Certificate, Diagnostics, Domain, Norm, PrototypeModel, SphereEmbedding,
                   check_point, classify)
from .errors import InvariantViolation, NegativeEntry, NotOnSphere, PreconditionViolated
from .geometry import rho_l2

SPHERE_TOL = 1e-6
RENORMALIZE_TOL = 1e-4
CLAMP_TOL = 1e-9
LAMBDA_TOL = 1e-10
LAMBDA_MAX = 1e6


@dataclass(frozen=True)
class EmbeddedQuery:
    z: np.ndarray
    embedding: SphereEmbedding


def validate_embedding(z, embedding: SphereEmbedding, renormalize: bool = True,
                       renormalize_tol: float = RENORMALIZE_TOL, clamp_tol: float = CLAMP_TOL,
                       sphere_tol: float = SPHERE_TOL) -> EmbeddedQuery:
    """Check (and lightly repair) that ``z`` lies on the sphere product.

    Entries down to ``-clamp_tol`` are clamped to zero. Sphere norms off by at
    most ``sphere_tol`` are accepted; up to ``renormalize_tol`` they are rescaled
    when ``renormalize`` is set.
    """
    z = np.array(z, dtype=np.float64)
    if z.shape != (embedding.dim,):
        raise InvariantViolation(f"expected an embedding of length {embedding.dim}, got shape {z.shape}")
    bad = np.nonzero(z < -clamp_tol)[0]
    if bad.size:
        raise NegativeEntry(int(bad[0]), float(z[bad[0]]))
    np.maximum(z, 0.0, out=z)
    for k, (block, view) in enumerate(zip(embedding.blocks, embedding.split(z))):
        norms = np.linalg.norm(view, axis=1)
        dev = np.abs(norms - block.radius)
        worst = float(dev.max())
        if worst <= sphere_tol:
            continue
        if renormalize and worst <= renormalize_tol and np.all(norms > 0):
            view *= (block.radius / norms)[:, None]
            continue
        raise NotOnSphere(k, worst)
    z.setflags(write=False)
    return EmbeddedQuery(z, embedding)


def dual_objective(lam: float, z, v, b: float, embedding: SphereEmbedding) -> float:
    """q(lam) = -sum over spheres r * ||(z + lam v)^+|| - lam * b."""
    total = 0.0
    for block, view in zip(embedding.blocks, embedding.split(z + lam * v)):
        total += block.radius * float(np.linalg.norm(np.maximum(view, 0.0), axis=1).sum())
    return -total - lam * b


def dual_slope(lam: float, z, v, b: float, embedding: SphereEmbedding) -> float:
    """A supergradient of q at lam (exact derivative where q is smooth)."""
    u = z + lam * v
    slope = 0.0
    for block, uv, vv in zip(embedding.blocks, embedding.split(u), embedding.split(v)):
        up = np.maximum(uv, 0.0)
        n = np.linalg.norm(up, axis=1)
        live = n > 0
        if np.any(live):
            slope += block.radius * float(((up[live] * vv[live]).sum(axis=1) / n[live]).sum())
    return -slope - b


def _maximize_dual(z, v, b, embedding) -> float:
    if dual_slope(0.0, z, v, b, embedding) <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while dual_slope(hi, z, v, b, embedding) > 0 and hi < LAMBDA_MAX:
        lo, hi = hi, min(2 * hi, LAMBDA_MAX)
    while hi - lo > LAMBDA_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if dual_slope(mid, z, v, b, embedding) > 0:
            lo = mid
        else:
            hi = mid
    # concave: the better endpoint of the final bracket
    return lo if dual_objective(lo, z, v, b, embedding) >= dual_objective(hi, z, v, b, embedding) else hi


def sphere_dual_bound(query: EmbeddedQuery, w_i, w_j) -> tuple:
    """Lower bound on the sphere-constrained distance from z to prototype j's side; returns (bound, lambda*)."""
    z, emb = query.z, query.embedding
    w_i = np.asarray(w_i, dtype=np.float64)
    w_j = np.asarray(w_j, dtype=np.float64)
    if np.sum((z - w_i) ** 2) >= np.sum((z - w_j) ** 2):
        raise PreconditionViolated("z is not strictly closer to w_i than to w_j")
    v = w_j - w_i
    b = 0.5 * (float(w_i @ w_i) - float(w_j @ w_j))
    lam = _maximize_dual(z, v, b, emb)
    q_star = dual_objective(lam, z, v, b, emb)
    return math.sqrt(max(0.0, 2.0 * emb.squared_radius_sum + 2.0 * q_star)), lam


def certify_embedded(model: PrototypeModel, z, label: Optional[int] = None,
                     query: Optional[EmbeddedQuery] = None) -> Certificate:
    """Lower bound in embedding space: per target the larger of the plain and the sphere dual bound."""
    start = time.perf_counter()
    if model.metric is not Norm.EMBEDDED_L2 or model.embedding is None:
        raise InvariantViolation("certify_embedded needs an embedded_l2 model")
    if query is None:
        query = validate_embedding(check_point(model, z), model.embedding)
    z = query.z
    y_hat, d_own, d_other = classify(model, z)
    label = y_hat if label is None else int(label)
    diag = Diagnostics(trivial_bound=max(0.0, 0.5 * (d_other - d_own)))
    if y_hat != label:
        diag.wall_time = time.perf_counter() - start
        return Certificate(y_hat, False, 0.0, None, None, diag)
    own = np.nonzero(model.labels == label)[0]
    d = np.linalg.norm(model.prototypes[own] - z, axis=1)
    i_star = int(own[int(np.argmin(d))])
    w_i = model.prototypes[i_star]
    plain_best, best = math.inf, math.inf
    for j in np.nonzero(model.labels != label)[0]:
        w_j = model.prototypes[j]
        if np.sum((z - w_i) ** 2) >= np.sum((z - w_j) ** 2):
            plain_best = best = 0.0
            break
        plain = rho_l2(z, w_i, w_j, Norm.L2).value
        dual, _ = sphere_dual_bound(query, w_i, w_j)
        plain_best = min(plain_best, plain)
        best = min(best, max(plain, dual))
    diag.unbounded_bound = plain_best
    diag.wall_time = time.perf_counter() - start
    return Certificate(y_hat, True, best, None, None, diag)


def embedded_model(prototypes, labels, embedding: SphereEmbedding, on_sphere: bool = True) -> PrototypeModel:
    domain = Domain.SPHERE_PRODUCT if on_sphere else Domain.UNBOUNDED
    return PrototypeModel(prototypes, labels, Norm.EMBEDDED_L2, domain, embedding=embedding)
