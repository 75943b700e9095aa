"""Lower bounds, exact radii and the certification pipeline for prototype classifiers.

The pipeline runs in up to three stages. First the cheap unbounded pairwise
distances against the nearest own prototype; when the best minimizer also
respects every other own-class constraint the bound is already exact. Under
the unit box, the pairwise distances are then recomputed with box constraints,
but only for targets that could still lower the bound. Finally, in exact mode,
one convex subproblem per remaining target, each allowed to stop as soon as it
can no longer beat the incumbent.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .convex import ConvexSubproblem, SolveOutcome, SolveStatus, solve
from .core import (Certificate, Diagnostics, Domain, Exactness, Norm, PrototypeModel, ThreatSpec,
                   check_point, classify, dispatch_support, lp_norm)
from .errors import DomainViolation, IterationLimit, NPCError, UnsupportedCombination
from .geometry import BOX_TOL, PairwiseResult, rho, rho_l1_linf, trivial_semimetric_bound

__all__ = [
    "BoundMode", "MinMaxBound", "BoundReport", "PointFailure",
    "minmax_lower_bound", "exact_r_l1_linf", "solve_target", "certify",
    "certify_semimetric", "certify_dataset",
]


class BoundMode(str, Enum):
    LOWER_BOUND = "lower"
    EXACT = "exact"


@dataclass
class MinMaxBound:
    value: float
    target: Optional[int]
    minimizer: Optional[np.ndarray]
    tight: bool
    per_target: dict = field(default_factory=dict)


_TIGHT_TOL = 1e-9


def _own_and_others(model: PrototypeModel, label: int):
    return np.nonzero(model.labels == label)[0], np.nonzero(model.labels != label)[0]


def _nearest_own(model: PrototypeModel, z, own) -> int:
    d = lp_norm(model.prototypes[own] - z, model.metric.base, axis=1)
    return int(own[int(np.argmin(d))])


def _respects_all(model: PrototypeModel, x, own, j, box: bool) -> bool:
    """x is at least as close to prototype j as to every own-class prototype."""
    if x is None:
        return False
    if box and (np.any(x < -1e-12) or np.any(x > 1 + 1e-12)):
        return False
    p = model.metric.base
    d_j = float(lp_norm(x - model.prototypes[j], p))
    d_own = lp_norm(model.prototypes[own] - x, p, axis=1)
    return bool(np.all(d_own >= d_j - _TIGHT_TOL * (1.0 + d_j)))


def _pairwise(model, z, i, j, q, domain) -> PairwiseResult:
    w_i, w_j = model.prototypes[i], model.prototypes[j]
    if np.array_equal(w_i, w_j):
        # coinciding prototypes: z sits on their (empty) boundary already
        return PairwiseResult(0.0, np.array(z, dtype=np.float64), "coincident")
    return rho(z, w_i, w_j, model.metric.base, q, domain)


def minmax_lower_bound(model: PrototypeModel, z, q: Norm, domain: Optional[Domain] = None,
                       label: Optional[int] = None) -> MinMaxBound:
    """min over other-class targets of the pairwise distance from the nearest own prototype.

    ``tight`` reports that the minimizer also respects every own-class
    constraint, in which case the value is the exact minimal radius.
    """
    z = check_point(model, z)
    q = Norm(q)
    domain = model.domain if domain is None else Domain(domain)
    if domain is Domain.SPHERE_PRODUCT:
        domain = Domain.UNBOUNDED
    dispatch_support(model.metric, q, Exactness.PAIRWISE, domain).require()
    y_hat, _, _ = classify(model, z)
    label = y_hat if label is None else int(label)
    if y_hat != label:
        return MinMaxBound(0.0, None, z.copy(), True)
    own, others = _own_and_others(model, label)
    i_star = _nearest_own(model, z, own)
    per = {int(j): _pairwise(model, z, i_star, j, q, domain) for j in others}
    j_star = min(per, key=lambda j: (per[j].value, j))
    best = per[j_star]
    box = domain is Domain.UNIT_BOX
    tight = math.isfinite(best.value) and _respects_all(model, best.minimizer, own, j_star, box)
    return MinMaxBound(best.value, j_star, best.minimizer, tight, per)


def exact_r_l1_linf(model: PrototypeModel, z, j: int, label: Optional[int] = None,
                    domain: Optional[Domain] = None) -> float:
    """Exact linf radius to reach target j of an l1 model: the largest pairwise distance over own prototypes."""
    if model.metric.base is not Norm.L1:
        raise UnsupportedCombination("exact_r_l1_linf requires an l1 model")
    z = check_point(model, z)
    domain = model.domain if domain is None else Domain(domain)
    y_hat, _, _ = classify(model, z)
    label = y_hat if label is None else int(label)
    if y_hat != label:
        return 0.0
    own = np.nonzero(model.labels == label)[0]
    w_j = model.prototypes[j]
    vals = [0.0 if np.array_equal(model.prototypes[i], w_j) else rho_l1_linf(z, model.prototypes[i], w_j, domain).value
            for i in own]
    return float(max(vals))


def solve_target(model: PrototypeModel, z, j: int, label: int, q: Norm, domain: Domain,
                 incumbent: Optional[float] = None) -> SolveOutcome:
    """Exact radius for reaching target prototype j (l2 models: QP/LP; l1 models with linf threat: sort scan)."""
    box = Domain(domain) is Domain.UNIT_BOX
    if model.metric.base is Norm.L1:
        value = exact_r_l1_linf(model, z, j, label, domain)
        status = SolveStatus.OPTIMAL if math.isfinite(value) else SolveStatus.INFEASIBLE
        return SolveOutcome(status, value, value)
    own = model.prototypes[model.labels == label]
    sub = ConvexSubproblem.for_target(own, model.prototypes[j], z, q, box)
    return solve(sub, incumbent)


def certify(model: PrototypeModel, z, threat: ThreatSpec, mode: BoundMode = BoundMode.LOWER_BOUND,
            label: Optional[int] = None, prune: bool = True, early_stop: bool = True) -> Certificate:
    """Certify one point; ``label`` defaults to the predicted class."""
    start = time.perf_counter()
    mode = BoundMode(mode)
    z = check_point(model, z)
    q = Norm(threat.q)
    domain = model.domain
    exactness = Exactness.EXACT if mode is BoundMode.EXACT else Exactness.PAIRWISE
    dispatch_support(model.metric, q, exactness, domain).require()
    if domain is Domain.SPHERE_PRODUCT:
        from .sphere import certify_embedded
        return certify_embedded(model, z, label)
    if domain is Domain.UNIT_BOX and (np.any(z < -BOX_TOL) or np.any(z > 1 + BOX_TOL)):
        raise DomainViolation("z lies outside the unit box")
    diag = Diagnostics()
    y_hat, d_own, d_other = classify(model, z)
    label = y_hat if label is None else int(label)
    if y_hat != label:
        diag.wall_time = time.perf_counter() - start
        return Certificate(y_hat, False, 0.0, 0.0 if mode is BoundMode.EXACT else None, None, diag)
    diag.trivial_bound = trivial_semimetric_bound(d_own, d_other)

    # stage 1: unbounded pairwise bound with the nearest own prototype fixed
    stage1 = minmax_lower_bound(model, z, q, Domain.UNBOUNDED, label)
    diag.unbounded_bound = stage1.value
    lower = stage1.value
    bounds = {j: r.value for j, r in stage1.per_target.items()}
    box = domain is Domain.UNIT_BOX
    in_box = stage1.minimizer is not None and np.all(stage1.minimizer >= -1e-12) and np.all(stage1.minimizer <= 1 + 1e-12)
    if stage1.tight and (not box or in_box):
        diag.shortcut_hit = True
        diag.wall_time = time.perf_counter() - start
        return Certificate(y_hat, True, lower, lower if mode is BoundMode.EXACT else None, None, diag)

    own, _ = _own_and_others(model, label)
    # stage 2: box-constrained pairwise distances, only where they can still lower the bound
    if box:
        i_star = _nearest_own(model, z, own)
        best, best_j, best_x = math.inf, None, None
        for j in sorted(bounds, key=lambda j: (bounds[j], j)):
            if prune and bounds[j] >= best:
                diag.pruned += 1
                continue
            res = _pairwise(model, z, i_star, j, q, domain)
            bounds[j] = max(bounds[j], res.value)
            if res.value < best:
                best, best_j, best_x = res.value, j, res.minimizer
        lower = best
        if best_j is not None and math.isfinite(best) and _respects_all(model, best_x, own, best_j, True):
            diag.shortcut_hit = True
            diag.wall_time = time.perf_counter() - start
            return Certificate(y_hat, True, lower, lower if mode is BoundMode.EXACT else None, None, diag)

    if mode is BoundMode.LOWER_BOUND or (threat.radius_cap is not None and lower >= threat.radius_cap):
        diag.wall_time = time.perf_counter() - start
        return Certificate(y_hat, True, lower, None, None, diag)

    # stage 3: exact subproblems in order of their lower bounds
    mu = math.inf
    limited_floor = math.inf
    for j in sorted(bounds, key=lambda j: (bounds[j], j)):
        if prune and bounds[j] >= mu:
            diag.pruned += 1
            continue
        try:
            out = solve_target(model, z, j, label, q, domain, mu if early_stop and math.isfinite(mu) else None)
        except IterationLimit as exc:
            diag.iteration_limited = True
            limited_floor = min(limited_floor, max(bounds[j], exc.dual_lower))
            diag.subproblems_solved += 1
            continue
        diag.subproblems_solved += 1
        if out.status is SolveStatus.OPTIMAL and out.primal_value < mu:
            mu = out.primal_value
    diag.wall_time = time.perf_counter() - start
    if diag.iteration_limited:
        return Certificate(y_hat, True, max(lower, min(mu, limited_floor)), None, None, diag)
    # every target infeasible leaves mu at +inf: no perturbation inside the domain changes the class
    return Certificate(y_hat, True, min(lower, mu), mu, None, diag)


def certify_semimetric(distance: Callable[[np.ndarray, np.ndarray], float], prototypes, labels, z,
                       label: Optional[int] = None) -> Certificate:
    """Half the gap between nearest other-class and nearest own-class distance, for any semi-metric."""
    start = time.perf_counter()
    prototypes = np.asarray(prototypes, dtype=np.float64)
    labels = np.asarray(labels)
    z = np.asarray(z, dtype=np.float64)
    dists = np.array([distance(z, w) for w in prototypes])
    classes = np.unique(labels)
    per_class = np.array([dists[labels == c].min() for c in classes])
    k = int(np.argmin(per_class))
    y_hat = int(classes[k])
    label = y_hat if label is None else int(label)
    diag = Diagnostics()
    if y_hat != label:
        diag.wall_time = time.perf_counter() - start
        return Certificate(y_hat, False, 0.0, None, None, diag)
    d_own = float(dists[labels == label].min())
    d_other = float(dists[labels != label].min()) if np.any(labels != label) else math.inf
    bound = trivial_semimetric_bound(d_own, d_other)
    diag.trivial_bound = bound
    diag.wall_time = time.perf_counter() - start
    return Certificate(y_hat, True, bound, None, None, diag)


# ---------------------------------------------------------------------------
# datasets

@dataclass
class PointFailure:
    index: int
    error: str
    message: str


@dataclass
class BoundReport:
    certificates: list
    failures: list
    clean_accuracy: float
    radii: list
    cra: list

    def cra_at(self, radius: float) -> float:
        return robust_fraction(self.certificates, radius, len(self.certificates))


def robust_fraction(certs: Sequence[Optional[Certificate]], radius: float, n: int) -> float:
    """Fraction of points that are correct with certified radius >= radius (closed ball)."""
    if n == 0:
        return 0.0
    hits = sum(1 for c in certs if c is not None and c.correct and c.certified_radius >= radius)
    return hits / n


def _certify_one(args):
    model, z, label, threat, mode, prune, early_stop = args
    try:
        return certify(model, z, threat, mode, label, prune, early_stop), None
    except NPCError as exc:
        return None, (type(exc).__name__, str(exc))


def certify_dataset(model: PrototypeModel, points, labels, threat: ThreatSpec,
                    mode: BoundMode = BoundMode.LOWER_BOUND, radii: Sequence[float] = (),
                    jobs: int = 1, prune: bool = True, early_stop: bool = True) -> BoundReport:
    """Certify every point; per-point errors become failure records instead of aborting."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64)) if len(points) else np.zeros((0, model.dim))
    labels = np.asarray(labels, dtype=int)
    tasks = [(model, z, int(y), threat, BoundMode(mode), prune, early_stop) for z, y in zip(points, labels)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_certify_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_certify_one(t) for t in tasks]
    certs, failures = [], []
    for k, (cert, err) in enumerate(results):
        certs.append(cert)
        if err is not None:
            failures.append(PointFailure(k, err[0], err[1]))
    n = len(tasks)
    clean = sum(1 for c in certs if c is not None and c.correct) / n if n else 0.0
    radii = [float(r) for r in radii]
    return BoundReport(certs, failures, clean, radii, [robust_fraction(certs, r, n) for r in radii])
