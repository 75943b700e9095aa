"""Pairwise decision-boundary distances between one own and one other prototype.

Every solver answers the same question: how far (in the threat norm ``q``)
must ``z`` move until it is at least as close to ``w_j`` as to ``w_i`` in the
classification metric ``p``. All of them return a :class:`PairwiseResult`
with the value and, where one is constructed, a point attaining it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Domain, Exactness, Norm, dispatch_support, lp_norm
from .errors import DegenerateBoundary, DimensionMismatch, DomainViolation, Infeasible

INFEASIBLE = math.inf
BOX_TOL = 1e-12
LINF_BOX_TOL = 1e-9


@dataclass
class PairwiseResult:
    value: float
    minimizer: Optional[np.ndarray]
    method: str


def _prepare(z, w_i, w_j):
    z, w_i, w_j = (np.asarray(a, dtype=np.float64).ravel() for a in (z, w_i, w_j))
    if not (z.shape == w_i.shape == w_j.shape):
        raise DimensionMismatch("z, w_i and w_j must share one dimension")
    if np.array_equal(w_i, w_j):
        raise DegenerateBoundary("w_i == w_j: no decision boundary between them")
    return z, w_i, w_j


def _check_box(z):
    if np.any(z < -BOX_TOL) or np.any(z > 1 + BOX_TOL):
        raise DomainViolation("z lies outside the unit box")


def halfspace(w_i, w_j):
    """(v, c) such that x is pairwise misclassified (l2) iff <x, v> + c >= 0."""
    v = w_j - w_i
    return v, 0.5 * (w_i @ w_i - w_j @ w_j)


def pairwise_gap(x, w_i, w_j, p: Norm) -> float:
    """||x - w_i||_p - ||x - w_j||_p; nonnegative means x is on w_j's side."""
    return float(lp_norm(x - w_i, p.base) - lp_norm(x - w_j, p.base))


def trivial_semimetric_bound(d_own: float, d_other: float) -> float:
    return max(0.0, 0.5 * (d_other - d_own))


# ---------------------------------------------------------------------------
# l2 classification metric

def rho_l2(z, w_i, w_j, q: Norm = Norm.L2) -> PairwiseResult:
    """Closed-form q-distance from z to the bisecting hyperplane of w_i and w_j."""
    z, w_i, w_j = _prepare(z, w_i, w_j)
    q = Norm(q).base
    num = float(np.sum((z - w_j) ** 2) - np.sum((z - w_i) ** 2))
    if num <= 0:
        return PairwiseResult(0.0, z.copy(), "l2-closed-form")
    v = w_j - w_i
    value = num / (2.0 * float(lp_norm(v, q.dual)))
    if q is Norm.L2:
        step = v / np.linalg.norm(v)
    elif q is Norm.LINF:
        step = np.sign(v)
    else:
        step = np.zeros_like(v)
        k = int(np.argmax(np.abs(v)))
        step[k] = np.sign(v[k])
    return PairwiseResult(value, z + value * step, "l2-closed-form")


def project_hyperplane_box(z, w, b):
    """Euclidean projection of z onto {x in [0,1]^d : <x, w> + b >= 0}.

    Returns ``(x, distance, lam)`` with ``x = clip(z + lam * w, 0, 1)`` and
    ``lam >= 0`` the multiplier of the halfspace constraint. The constraint
    value along ``lam`` is piecewise linear and nondecreasing; its kinks are
    where a coordinate hits a face of the box, so one sort finds the root.
    """
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_box(z)
    z = np.clip(z, 0.0, 1.0)
    h0 = float(z @ w + b)
    if h0 >= 0:
        return z.copy(), 0.0, 0.0
    moving = w != 0
    # every moving coordinate saturates exactly once, at its breakpoint
    bp = np.where(w > 0, (1.0 - z) / np.where(moving, w, 1.0), z / np.where(moving, -w, 1.0))
    bp = bp[moving]
    sq = (w * w)[moving]
    order = np.argsort(bp, kind="stable")
    bp, sq = bp[order], sq[order]
    slope_before = sq.sum() - np.concatenate(([0.0], np.cumsum(sq)[:-1]))
    seg = np.diff(np.concatenate(([0.0], bp)))
    h_at = h0 + np.cumsum(slope_before * seg)
    hit = np.nonzero(h_at >= 0)[0]
    if hit.size == 0:
        raise Infeasible("halfspace does not meet the unit box")
    k = int(hit[0])
    start = bp[k - 1] if k > 0 else 0.0
    h_start = h_at[k - 1] if k > 0 else h0
    lam = start + (-h_start) / slope_before[k]
    x = np.clip(z + lam * w, 0.0, 1.0)
    return x, float(np.linalg.norm(x - z)), float(lam)


def _l1_box_knapsack(z, v, gain):
    """Cheapest l1 move inside the box raising <x, v> by ``gain`` (fractional knapsack)."""
    cap = np.where(v > 0, (1.0 - z) * v, np.where(v < 0, -z * v, 0.0))
    order = np.argsort(-np.abs(v), kind="stable")
    cum = np.cumsum(cap[order])
    full = np.nonzero(cum >= gain)[0]
    if full.size == 0:
        return None
    k = int(full[0])
    x = z.copy()
    used = order[:k]
    x[used] = np.where(v[used] > 0, 1.0, 0.0)
    rest = gain - (cum[k - 1] if k > 0 else 0.0)
    s = order[k]
    x[s] = z[s] + rest / v[s]
    return x


def rho_l2_box(z, w_i, w_j, q: Norm = Norm.L2) -> PairwiseResult:
    """Pairwise l2 boundary distance restricted to x in [0,1]^d (+inf when unreachable)."""
    z, w_i, w_j = _prepare(z, w_i, w_j)
    _check_box(z)
    z = np.clip(z, 0.0, 1.0)
    q = Norm(q).base
    v, c = halfspace(w_i, w_j)
    g = float(z @ v + c)
    if g >= 0:
        return PairwiseResult(0.0, z.copy(), "l2-box")
    if q is Norm.L2:
        try:
            x, dist, _ = project_hyperplane_box(z, v, c)
        except Infeasible:
            return PairwiseResult(INFEASIBLE, None, "l2-box-projection")
        return PairwiseResult(dist, x, "l2-box-projection")
    if q is Norm.LINF:
        return _separable_linf(z, w_i, w_j, Norm.L2, box=True)
    x = _l1_box_knapsack(z, v, -g)
    if x is None:
        return PairwiseResult(INFEASIBLE, None, "l2-box-knapsack")
    return PairwiseResult(float(np.abs(x - z).sum()), x, "l2-box-knapsack")


# ---------------------------------------------------------------------------
# linf threat model: the worst point in the eps-ball is known coordinatewise

def _interval(z, eps, box):
    lo, hi = z - eps, z + eps
    if box:
        lo, hi = np.maximum(lo, 0.0), np.minimum(hi, 1.0)
    return lo, hi


def linf_worst_point(z, w_i, w_j, p: Norm, eps: float, box: bool = False) -> np.ndarray:
    """Point of the eps-ball (intersected with the box) that is most on w_j's side.

    For p=1 each coordinate snaps as close to w_j as the interval allows, which
    maximizes |x - w_i| - |x - w_j| for every w_i at once. For p=2 and p=inf the
    coordinate moves by eps in the direction sign(w_j - w_i); coordinates where
    the two prototypes agree move away from the shared value under p=inf, which
    raises both distances equally and can only help reach the boundary.
    """
    p = Norm(p).base
    lo, hi = _interval(z, eps, box)
    if p is Norm.L1:
        return np.clip(w_j, lo, hi)
    s = np.sign(w_j - w_i)
    x = np.where(s > 0, hi, np.where(s < 0, lo, z))
    if p is Norm.LINF:
        tied = s == 0
        away = np.where(np.abs(hi - w_i) >= np.abs(lo - w_i), hi, lo)
        x = np.where(tied, away, x)
    return x


def rho_linf_threat(z, w_i, w_j, p: Norm, eps: float, domain: Domain = Domain.UNBOUNDED) -> bool:
    """True iff no point within linf-distance eps reaches w_j's side (eps is certified)."""
    z, w_i, w_j = _prepare(z, w_i, w_j)
    box = Domain(domain) is Domain.UNIT_BOX
    x = linf_worst_point(z, w_i, w_j, p, eps, box)
    return pairwise_gap(x, w_i, w_j, p) < 0


def _separable_gap(x, w_i, w_j, p):
    # separable surrogate with the same sign as the p-norm gap, linear between kinks
    if p is Norm.L1:
        return float(np.sum(np.abs(x - w_i) - np.abs(x - w_j)))
    return float(np.sum((x - w_i) ** 2 - (x - w_j) ** 2))


def _separable_linf(z, w_i, w_j, p: Norm, box: bool) -> PairwiseResult:
    """Exact linf distance for separable metrics (p in {1, 2}) by breakpoint search.

    Along the worst point path the gap is piecewise linear in eps, with kinks
    where a coordinate crosses w_i, w_j or a box face. Binary search locates the
    segment holding the root and the root is then solved for directly.
    """
    s = np.sign(w_j - w_i)
    tag = f"{p.value}-linf-breakpoints"

    def path(eps):
        lo, hi = _interval(z, eps, box)
        return np.where(s > 0, hi, np.where(s < 0, lo, z))

    def gap(eps):
        return _separable_gap(path(eps), w_i, w_j, p)

    def result(eps):
        x = linf_worst_point(z, w_i, w_j, p, eps, box)
        return PairwiseResult(float(eps), x, tag)

    if gap(0.0) >= 0:
        return PairwiseResult(0.0, z.copy(), tag)
    cands = []
    moving = s != 0
    if p is Norm.L1:
        cands += [(s * (w_i - z))[moving], (s * (w_j - z))[moving]]
    if box:
        cands.append(np.where(s > 0, 1.0 - z, z)[moving])
    bps = np.unique(np.concatenate(cands)) if cands else np.empty(0)
    bps = bps[bps > 0]
    if bps.size == 0 or gap(bps[-1]) < 0:
        if box:
            return PairwiseResult(INFEASIBLE, None, tag)
        raise AssertionError("unbounded separable gap must turn nonnegative")
    lo_i, hi_i = -1, bps.size - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if gap(bps[mid]) >= 0:
            hi_i = mid
        else:
            lo_i = mid
    e_hi = bps[hi_i]
    e_lo = bps[lo_i] if lo_i >= 0 else 0.0
    g_lo, g_hi = gap(e_lo), gap(e_hi)
    eps = e_lo + (-g_lo) * (e_hi - e_lo) / (g_hi - g_lo)
    return result(min(max(eps, e_lo), e_hi))


def rho_l1_linf(z, w_i, w_j, domain: Domain = Domain.UNBOUNDED) -> PairwiseResult:
    z, w_i, w_j = _prepare(z, w_i, w_j)
    box = Domain(domain) is Domain.UNIT_BOX
    if box:
        _check_box(z)
    return _separable_linf(z, w_i, w_j, Norm.L1, box)


def _linf_offsets(z, w_i, w_j):
    """Per-coordinate offsets so that |x_l - w_i| = |eps + alpha_l| and |x_l - w_j| = |eps - beta_l|
    along the worst point path x = z + eps * direction."""
    s = np.sign(w_j - w_i)
    tied = s == 0
    alpha = np.where(tied, np.abs(z - w_i), s * (z - w_i))
    beta = np.where(tied, -np.abs(z - w_i), s * (w_j - z))
    direction = np.where(tied, np.where(z >= w_i, 1.0, -1.0), s)
    return alpha, beta, direction


def rho_linf_linf(z, w_i, w_j) -> PairwiseResult:
    """Closed form for p = q = inf on R^d: half the gap between the largest offsets."""
    z, w_i, w_j = _prepare(z, w_i, w_j)
    if pairwise_gap(z, w_i, w_j, Norm.LINF) >= 0:
        return PairwiseResult(0.0, z.copy(), "linf-linf-closed-form")
    alpha, beta, direction = _linf_offsets(z, w_i, w_j)
    value = max(0.0, 0.5 * float(beta.max() - alpha.max()))
    return PairwiseResult(value, z + value * direction, "linf-linf-closed-form")


def rho_linf_linf_box(z, w_i, w_j, tol: float = LINF_BOX_TOL) -> PairwiseResult:
    """p = q = inf inside [0,1]^d: bisection on eps with the clamped worst point.

    The value returned is the certified end of the final bracket, so it never
    exceeds the true distance; the minimizer is the worst point at the other end.
    """
    z, w_i, w_j = _prepare(z, w_i, w_j)
    _check_box(z)
    z = np.clip(z, 0.0, 1.0)

    def reached(eps):
        return pairwise_gap(linf_worst_point(z, w_i, w_j, Norm.LINF, eps, True), w_i, w_j, Norm.LINF) >= 0

    if reached(0.0):
        return PairwiseResult(0.0, z.copy(), "linf-linf-box-bisection")
    if not reached(1.0):
        return PairwiseResult(INFEASIBLE, None, "linf-linf-box-bisection")
    lo, hi = 0.0, min(1.0, rho_linf_linf(z, w_i, w_j).value)
    if not reached(hi):
        hi = 1.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if reached(mid):
            hi = mid
        else:
            lo = mid
    return PairwiseResult(lo, linf_worst_point(z, w_i, w_j, Norm.LINF, hi, True), "linf-linf-box-bisection")


# ---------------------------------------------------------------------------
# linf classification metric, l1 and l2 threats (unbounded domain only)

def _top2(a):
    """Largest entry and, per coordinate, the largest entry of the others."""
    if a.size == 1:
        return np.zeros(1)
    order = np.argsort(a)
    first, second = a[order[-1]], a[order[-2]]
    out = np.full(a.shape, first)
    out[order[-1]] = second
    return out


def rho_linf_l1(z, w_i, w_j) -> PairwiseResult:
    """p = inf, q = 1: an optimal move changes a single coordinate.

    For each coordinate the feasible values form a union of intervals whose
    endpoints are among a dozen explicit candidates; the nearest feasible
    candidate over all coordinates is the answer.
    """
    z, w_i, w_j = _prepare(z, w_i, w_j)
    if pairwise_gap(z, w_i, w_j, Norm.LINF) >= 0:
        return PairwiseResult(0.0, z.copy(), "linf-l1-coordinate")
    rest_i = _top2(np.abs(z - w_i))
    rest_j = _top2(np.abs(z - w_j))
    a, b = w_i, w_j
    cands = np.stack([
        b + rest_i, b - rest_i, a + rest_j, a - rest_j, 0.5 * (a + b),
        a + rest_i, a - rest_i, b + rest_j, b - rest_j, a, b,
    ], axis=1)
    lhs = np.maximum(rest_i[:, None], np.abs(cands - a[:, None]))
    rhs = np.maximum(rest_j[:, None], np.abs(cands - b[:, None]))
    scale = 1.0 + np.abs(cands).max() + np.abs(z).max()
    feasible = lhs - rhs >= -1e-12 * scale
    cost = np.where(feasible, np.abs(cands - z[:, None]), np.inf)
    k, m = np.unravel_index(int(np.argmin(cost)), cost.shape)
    x = z.copy()
    x[k] = cands[k, m]
    return PairwiseResult(float(cost[k, m]), x, "linf-l1-coordinate")


def rho_linf_l2(z, w_i, w_j) -> PairwiseResult:
    """p = inf, q = 2 on R^d.

    A point is on w_j's side iff some coordinate k and sign s satisfy
    s * (x_k - w_i[k]) = t >= ||x - w_j||_inf. For fixed (k, s) the nearest such
    point has x_k = w_i[k] + s*t and every other coordinate clipped into
    [w_j - t, w_j + t]; its squared distance is a convex piecewise quadratic in
    t with kinks at |z - w_j|. After one sort, a vectorized binary search over
    those kinks finds the optimal t for every (k, s) simultaneously.
    """
    z, w_i, w_j = _prepare(z, w_i, w_j)
    if pairwise_gap(z, w_i, w_j, Norm.LINF) >= 0:
        return PairwiseResult(0.0, z.copy(), "linf-l2-scan")
    d = z.size
    u = np.abs(z - w_j)
    grid = np.concatenate(([0.0], np.sort(u)))
    us = grid[1:]
    above = np.concatenate((np.cumsum(us[::-1])[::-1], [0.0]))
    above_sq = np.concatenate((np.cumsum((us * us)[::-1])[::-1], [0.0]))

    def hinge_sums(t):
        # sums over all l of (u_l - t)^+ and its square
        idx = np.searchsorted(us, t, side="right")
        cnt = d - idx
        return above[idx] - cnt * t, above_sq[idx] - 2 * t * above[idx] + cnt * t * t

    diff = w_j - w_i
    t0 = 0.5 * np.abs(diff)
    best_cost, best = np.inf, None
    for sign in (1.0, -1.0):
        # the sign is forced where the prototypes differ; both are tried where they agree
        s = np.where(diff != 0, np.sign(diff), sign)
        valid = np.ones(d, dtype=bool) if sign > 0 else diff == 0
        if not valid.any():
            continue
        c = s * (z - w_i)

        def half_slope(t):
            s1, _ = hinge_sums(t)
            return t - c - s1 + np.maximum(0.0, u - t)

        lo = np.full(d, -1)
        hi = np.full(d, grid.size)
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            open_ = hi - lo > 1
            up = half_slope(grid[np.clip(mid, 0, grid.size - 1)]) >= 0
            hi = np.where(open_ & up, mid, hi)
            lo = np.where(open_ & ~up, mid, lo)
        t_r = grid[np.minimum(hi, grid.size - 1)]
        t_l = grid[np.maximum(hi - 1, 0)]
        d_r, d_l = half_slope(t_r), half_slope(t_l)
        denom = np.where(d_r > d_l, d_r - d_l, 1.0)
        t_hat = np.where(hi > 0, t_l + (-d_l) * (t_r - t_l) / denom, 0.0)
        # past the last kink the hinge terms vanish and the root is c itself
        t_hat = np.where(hi >= grid.size, c, t_hat)
        t = np.maximum(t0, t_hat)
        _, s2 = hinge_sums(t)
        cost = (w_i + s * t - z) ** 2 + s2 - np.maximum(0.0, u - t) ** 2
        cost = np.where(valid, cost, np.inf)
        k = int(np.argmin(cost))
        if cost[k] < best_cost:
            best_cost = float(cost[k])
            best = np.clip(z, w_j - t[k], w_j + t[k])
            best[k] = w_i[k] + s[k] * t[k]
    return PairwiseResult(float(np.linalg.norm(best - z)), best, "linf-l2-scan")


# ---------------------------------------------------------------------------
# dispatcher

def rho(z, w_i, w_j, p: Norm, q: Norm, domain: Domain = Domain.UNBOUNDED) -> PairwiseResult:
    """Pairwise relaxation for any supported (p, q, domain) cell.

    Embedded l2 is plain l2 here; the sphere constraints live in ``npcert.sphere``.
    Under the unit box, p = inf with q in {1, 2} falls back to the unbounded
    value, which is still a valid (smaller) lower bound.
    """
    p, q, domain = Norm(p).base, Norm(q).base, Domain(domain)
    box = domain is Domain.UNIT_BOX
    dispatch_support(p, q, Exactness.PAIRWISE, Domain.UNIT_BOX if box else Domain.UNBOUNDED).require()
    if p is Norm.L2:
        return rho_l2_box(z, w_i, w_j, q) if box else rho_l2(z, w_i, w_j, q)
    if p is Norm.L1:
        return rho_l1_linf(z, w_i, w_j, domain if box else Domain.UNBOUNDED)
    if q is Norm.LINF:
        return rho_linf_linf_box(z, w_i, w_j) if box else rho_linf_linf(z, w_i, w_j)
    res = rho_linf_l1(z, w_i, w_j) if q is Norm.L1 else rho_linf_l2(z, w_i, w_j)
    if box:
        res.method += "-unbounded-relaxation"
    return res
