"""Slow, independent verification routines.

Nothing in here is used by the certification path. The grid minimizer only
needs a vectorized feasibility predicate, so it checks every closed form and
solver without sharing any of their algebra. The attack looks for real
adversarial points and therefore gives upper bounds on the minimal radius.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
import itertools
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Domain, Norm, PrototypeModel, SphereEmbedding, ThreatSpec, classify, lp_norm, predict
from .errors import DimensionTooLarge, UnsupportedBlockShape
from .geometry import _interval, linf_worst_point, rho

MAX_GRID_DIM = 4

Predicate = Callable[[np.ndarray], np.ndarray]
HitTime = Callable[[np.ndarray, float], np.ndarray]


def row_norms(X: np.ndarray, p: Norm) -> np.ndarray:
    """Per-row lp norms of a 2-D array; leaner than np.linalg.norm for hot loops."""
    A = np.abs(X)
    out = A[:, 0].copy()
    # column loop: reducing over a short trailing axis is slow in numpy
    if p is Norm.LINF:
        for k in range(1, A.shape[1]):
            np.maximum(out, A[:, k], out=out)
        return out
    if p is Norm.L1:
        for k in range(1, A.shape[1]):
            out += A[:, k]
        return out
    return np.sqrt(np.einsum("ij,ij->i", X, X))


@dataclass
class PairwiseProblem:
    z: np.ndarray
    w_i: np.ndarray
    w_j: np.ndarray
    p: Norm = Norm.L2
    q: Norm = Norm.L2
    domain: Domain = Domain.UNBOUNDED

    def feasible(self, X: np.ndarray) -> np.ndarray:
        p = Norm(self.p).base
        return row_norms(X - self.w_i, p) >= row_norms(X - self.w_j, p)

    def halfspace_hit(self, U: np.ndarray, t_max: float) -> np.ndarray:
        """Exact first feasible t along rays z + t*u for an l2 metric (the set is a halfspace)."""
        a = 2.0 * (self.w_j - self.w_i)
        gap = float(self.w_j @ self.w_j - self.w_i @ self.w_i) - float(a @ self.z)
        rate = U @ a
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(rate > 0, gap / rate, np.inf)
        return np.where(t <= t_max, np.maximum(t, 0.0), np.inf)


def _face_points(d, k, sign, S):
    # lift (d-1)-dim face coordinates S onto the cube face x_k = sign
    C = np.insert(S, k, sign, axis=1) if d > 1 else np.full((S.shape[0], 1), float(sign))
    return C


def _face_grid(d, resolution):
    axis = np.linspace(-1.0, 1.0, resolution + 1)
    if d == 1:
        return np.empty((1, 0))
    mesh = np.meshgrid(*([axis] * (d - 1)), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def first_hit(feasible: Predicate, z, U, t_max, scan: int = 32, sections: int = 8,
              rounds: int = 5, t_min=0.0, window=None) -> np.ndarray:
    """Smallest t in (t_min, t_max] with z + t*u feasible, per row u of U (+inf if none found).

    A uniform scan brackets the first feasible sample, then repeated
    multisection shrinks the bracket by a factor ``sections + 1`` per round.
    ``window = (lo, hi, count)`` adds ``count`` extra samples per ray on
    [lo, hi] to the scan. Each returned t belongs to a feasible point, so it
    over-estimates the true first hit by at most the final bracket width unless
    the ray slips through a feasible sliver thinner than the sample spacing.
    """
    n, d = U.shape

    def column(v):
        return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,))[:, None]

    lo0, hi0 = column(t_min), column(t_max)
    ts = lo0 + (hi0 - lo0) * (np.arange(1, scan + 1) / scan)[None, :]
    if window is not None:
        w_lo, w_hi, count = window
        w_lo, w_hi = column(w_lo), column(w_hi)
        ts = np.sort(np.concatenate((ts, w_lo + (w_hi - w_lo) * (np.arange(count) / count)[None, :]), axis=1), axis=1)
    rows = np.arange(n)

    def probe(ts):
        m = ts.shape[1]
        ok = feasible((z[None, None, :] + U[:, None, :] * ts[:, :, None]).reshape(-1, d)).reshape(n, m)
        return ok.any(axis=1), np.argmax(ok, axis=1)

    hit, f = probe(ts)
    hi = ts[rows, f]
    lo = np.where(f > 0, ts[rows, np.maximum(f - 1, 0)], lo0[:, 0])
    frac = np.arange(1, sections + 1) / (sections + 1)
    for _ in range(rounds):
        ts = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
        inner, f = probe(ts)
        hi = np.where(inner, ts[rows, f], hi)
        lo = np.where(inner & (f > 0), ts[rows, np.maximum(f - 1, 0)], np.where(inner, lo, ts[:, -1]))
    return np.where(hit, hi, np.inf)


def _axis_moves(d):
    """Single and paired coordinate steps: +-e_k and +-e_k +- e_l."""
    eye = np.eye(d)
    moves = [eye, -eye]
    for k in range(d):
        for l in range(k + 1, d):
            for a in (1.0, -1.0):
                for b in (1.0, -1.0):
                    moves.append((a * eye[k] + b * eye[l])[None, :])
    return np.concatenate(moves)


def _unit_directions(C, q):
    return C / lp_norm(C, q, axis=1)[:, None]


def ray_minimize(feasible: Predicate, z, q: Norm, t_max: float, resolution: int = 24, refine: bool = True,
                 box: bool = False, keep: int = 3, rounds: int = 60, direction_tol: float = 1e-4,
                 stencil: int = 2, random_probes: int = 8, shrink: float = 0.25,
                 seed: int = 0, window: float = 8.0, window_scan: int = 32,
                 seed_gap: float = 0.05, hit: Optional[HitTime] = None) -> tuple[float, Optional[np.ndarray]]:
    """Smallest ||x - z||_q over feasible x, as the minimum first-hit time over directions.

    Directions are unit q-norm rescalings of a grid on the surface of the cube
    [-1, 1]^d with ``resolution`` cells per face axis; axis directions and sign
    vectors are always on the grid. Grids for resolution r and 2r are nested,
    so without refinement the estimate never increases when the resolution
    doubles. Refinement zooms on a few well separated good directions with
    local grids of halving spacing, plus seeded random probes so that the
    search does not stall in narrow creases of nonsmooth or nonconvex sets.

    With ``box`` the coarse rays are clipped to [0,1]^d, which catches
    feasible slivers hugging a face, and a hit is scored by the distance of the
    clipped point. The zoom then follows straight rays towards those points
    with in-box feasibility: the segment from z to any in-box point stays in
    the box, so nothing is lost, and convex feasible sets stay convex.

    ``hit(U, t_max)`` may supply exact straight-ray hit times (unbounded only).
    """
    z = np.asarray(z, dtype=np.float64)
    q = Norm(q).base
    d = z.size
    if d > MAX_GRID_DIM:
        raise DimensionTooLarge(f"grid oracle is limited to d <= {MAX_GRID_DIM}, got {d}")
    if box:
        def on_path(X, base=feasible):
            return base(np.clip(X, 0.0, 1.0))

        def straight(X, base=feasible):
            return base(X) & np.all((X >= 0.0) & (X <= 1.0), axis=1)
    else:
        on_path = straight = feasible
    if box:
        hit = None
    if on_path(z[None, :])[0]:
        return 0.0, z.copy()

    def score(U, T, clip=False):
        X = z + U * np.where(np.isfinite(T), T, 0.0)[:, None]
        if clip:
            X = np.clip(X, 0.0, 1.0)
        return np.where(np.isfinite(T), lp_norm(X - z, q, axis=1), np.inf), X

    S = _face_grid(d, resolution)
    faces, params, dirs = [], [], []
    for k in range(d):
        for sign in (1.0, -1.0):
            faces.append(np.full(len(S), k * 2 + (sign < 0)))
            params.append(S)
            dirs.append(_unit_directions(_face_points(d, k, sign, S), q))
    faces, params, U = np.concatenate(faces), np.concatenate(params), np.concatenate(dirs)
    T = hit(U, t_max) if hit else first_hit(on_path, z, U, t_max)
    vals, X = score(U, T, clip=box)
    order = np.argsort(vals, kind="stable")
    if not np.isfinite(vals[order[0]]):
        return math.inf, None
    best_v, best_x = float(vals[order[0]]), X[order[0]]
    if not refine or d == 1:
        return best_v, best_x

    if box:
        # straight directions towards the clipped hit points
        found = np.isfinite(vals) & (vals > 0)
        U = U.copy()
        U[found] = (X[found] - z) / vals[found][:, None]
    # seeds: good directions that are not grid neighbours of an earlier seed
    h0 = 2.0 / resolution
    seeds = []
    for idx in order:
        if not np.isfinite(vals[idx]) or len(seeds) == keep:
            break
        if all(np.abs(U[idx] - U[j]).max() > 2.5 * h0 for j in seeds):
            seeds.append(idx)
    u_cur = U[seeds].copy()
    v_cur = vals[seeds].copy()
    h = np.full(len(seeds), h0)
    rng = np.random.default_rng(seed)
    grid = _face_grid(d, stencil)
    axes = _axis_moves(d)
    stretch = np.array([1.0, 3.0, 7.0])
    momentum = np.zeros_like(u_cur)
    for it in range(rounds):
        live = h >= direction_tol
        if it >= 2:
            # a seed well behind the leader after a few rounds is in a worse basin
            live &= v_cur <= best_v * (1.0 + seed_gap)
        active = np.nonzero(live)[0]
        if not active.size:
            break
        offsets = np.concatenate((grid, rng.uniform(-1.0, 1.0, (random_probes, d - 1))))
        m = len(offsets) + len(axes) + len(stretch)
        # perturb each direction within its tangent plane and along the axes, then renormalize;
        # axis moves keep the saturated coordinates of l1 / linf directions fixed, and pattern
        # moves extrapolate the last accepted step to travel along narrow valleys
        V = []
        for c in active:
            basis = np.linalg.svd(u_cur[c][None, :])[2][1:]
            V.append(u_cur[c] + h[c] * offsets @ basis)
            V.append(u_cur[c] + h[c] * axes)
            V.append(u_cur[c] + stretch[:, None] * momentum[c][None, :])
        V = _unit_directions(np.concatenate(V), q)
        # hits beyond the current value cannot improve a straight ray
        reach = float(v_cur[active].max()) * (1.0 + 1e-9)
        # thin slivers near the current value: extra dense samples just below it
        top = np.repeat(v_cur[active], m) * (1.0 + 1e-9)
        span = (top * np.maximum(0.0, 1.0 - window * np.repeat(h[active], m)), top, window_scan)
        T = hit(V, reach) if hit else first_hit(straight, z, V, reach, scan=16, rounds=4, window=span)
        vl, Xl = score(V, T)
        if box:
            # clipped rays slide along faces that thin feasible slivers hug
            vc, Xc = score(V, first_hit(on_path, z, V, t_max, scan=16, rounds=4), clip=True)
            better = vc < vl
            vl, Xl = np.where(better, vc, vl), np.where(better[:, None], Xc, Xl)
            moved = np.isfinite(vl) & (vl > 0)
            V[moved] = (Xl[moved] - z) / vl[moved][:, None]
        k = len(active)
        vl, Xl, V = vl.reshape(k, m), Xl.reshape(k, m, d), V.reshape(k, m, d)
        for r, c in enumerate(active):
            j = int(np.argmin(vl[r]))
            on_edge = False
            if vl[r, j] < v_cur[c]:
                momentum[c] = V[r, j] - u_cur[c]
                u_cur[c], v_cur[c] = V[r, j], vl[r, j]
                on_edge = j >= len(offsets) or np.abs(offsets[j]).max() >= 1.0
                if v_cur[c] < best_v:
                    best_v, best_x = float(v_cur[c]), Xl[r, j]
            if not on_edge:
                h[c] *= shrink
    return best_v, best_x


def _q_diameter(d, q):
    return float(lp_norm(np.ones(d), q))


def _reach(z, targets, q, box):
    # a feasible point is known at distance at most this
    d = z.size
    dists = [float(lp_norm(np.asarray(t) - z, q)) for t in targets
             if not box or np.all((np.asarray(t) >= 0) & (np.asarray(t) <= 1))]
    cap = _q_diameter(d, q) if box else math.inf
    return 1.05 * min(dists + [cap]) + 1e-9


def _default_resolution(d: int) -> int:
    return {1: 24, 2: 24, 3: 12}.get(d, 6)


def grid_min_rho(problem: PairwiseProblem, resolution: Optional[int] = None, refine: bool = True) -> float:
    """Brute-force pairwise distance; +inf when no feasible point is found.

    For an l2 metric the feasible set is a halfspace, so one seed from a
    coarse grid is enough; other metrics give nonconvex sets and get a finer
    grid with several seeds.
    """
    z = np.asarray(problem.z, dtype=np.float64)
    q = Norm(problem.q).base
    box = Domain(problem.domain) is Domain.UNIT_BOX
    convex = Norm(problem.p).base is Norm.L2
    if resolution is None:
        resolution = {1: 8, 2: 8, 3: 6}.get(z.size, 4) if convex else _default_resolution(z.size)
    hit = problem.halfspace_hit if convex and not box else None
    value, _ = ray_minimize(problem.feasible, z, q, _reach(z, [problem.w_j], q, box), resolution, refine, box,
                            keep=1 if convex else 3, hit=hit)
    return value


def escape_predicate(model: PrototypeModel, label: int, target: Optional[int] = None) -> Predicate:
    """Points at least as close (in the model metric) to another-class prototype as to every own one.

    With ``target`` only that prototype counts as the escape route.
    """
    own = model.prototypes[model.labels == label]
    other = model.prototypes[model.labels != label] if target is None else model.prototypes[[target]]
    p = model.metric.base

    def feasible(X):
        d_own = np.min([row_norms(X - w, p) for w in own], axis=0)
        d_other = np.min([row_norms(X - w, p) for w in other], axis=0)
        return d_other <= d_own

    return feasible


def grid_min_epsilon(model: PrototypeModel, z, label: int, q: Norm, domain: Domain = Domain.UNBOUNDED,
                     resolution: Optional[int] = None, refine: bool = True) -> float:
    """Brute-force minimal adversarial radius of a whole model.

    The escape set is searched one target prototype at a time. For an l2 model
    each per-target set is convex, so the first-hit time over directions has
    connected sublevel sets and a single zoom cannot get trapped.
    """
    z = np.asarray(z, dtype=np.float64)
    q = Norm(q).base
    if classify(model, z)[0] != label:
        return 0.0
    box = Domain(domain) is Domain.UNIT_BOX
    if resolution is None:
        resolution = {1: 16, 2: 16, 3: 12}.get(z.size, 8)
    best = math.inf
    for j in np.nonzero(model.labels != label)[0]:
        # more seeds and probes than the pairwise oracle: l1 / linf optima of a cell often sit on a
        # flat ridge of the hit-time surface where a plain pattern search crawls
        value, _ = ray_minimize(escape_predicate(model, label, int(j)), z, q,
                                _reach(z, [model.prototypes[j]], q, box), resolution, refine, box,
                                keep=4, random_probes=64, shrink=0.5)
        best = min(best, value)
    return best


def enumerate_projection(rows, rhs, z, box: bool = False, tol: float = 1e-9) -> tuple[float, Optional[np.ndarray]]:
    """Exact Euclidean distance from z to {x : rows @ x >= rhs} (and the unit box), by brute force.

    The projection is the projection of z onto the affine set spanned by its
    active constraints, so trying every subset of at most d rows and keeping
    the nearest feasible candidate is exact. Exponential; tiny instances only.
    """
    z = np.asarray(z, dtype=np.float64)
    d = z.size
    A = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    b = np.asarray(rhs, dtype=np.float64)
    if box:
        A = np.vstack((A, np.eye(d), -np.eye(d)))
        b = np.concatenate((b, np.zeros(d), -np.ones(d)))
    scale = 1.0 + np.abs(A).max() * (1.0 + np.abs(z).max())

    def ok(x):
        return bool(np.all(A @ x - b >= -tol * scale))

    if ok(z):
        return 0.0, z.copy()
    best, best_x = math.inf, None
    for k in range(1, min(d, len(b)) + 1):
        for S in combinations(range(len(b)), k):
            M = A[list(S)]
            # x = z + M^T mu with M x = b_S
            mu, *_ = np.linalg.lstsq(M @ M.T, b[list(S)] - M @ z, rcond=None)
            x = z + M.T @ mu
            if np.allclose(M @ x, b[list(S)], atol=tol * scale) and ok(x):
                dist = float(np.linalg.norm(x - z))
                if dist < best:
                    best, best_x = dist, x
    return best, best_x



def _batched_vertices(M, rhs, subsets):
    """Solve M[S] v = rhs[S] for every index set S; returns solutions and a nonsingular mask."""
    A = M[subsets]
    b = rhs[subsets]
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-12
    V = np.full((len(subsets), M.shape[1]), np.nan)
    if ok.any():
        V[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    return V, ok


def enumerate_polyhedral_distance(rows, rhs, z, q: Norm, box: bool = False, tol: float = 1e-9,
                                  chunk: int = 20000) -> float:
    """Exact l1 / linf distance from z to {x : rows @ x >= rhs} (and the unit box), by vertex enumeration.

    For l1 an optimal x is pinned by d hyperplanes taken from the constraints,
    the box faces and the planes x_k = z_k; for linf an optimal (x, t) is pinned
    by d + 1 hyperplanes from the constraints, the box faces and x_k - z_k = +-t.
    Every candidate is tried. Exponential; tiny instances only.
    """
    z = np.asarray(z, dtype=np.float64)
    q = Norm(q).base
    if q not in (Norm.L1, Norm.LINF):
        raise ValueError("enumerate_polyhedral_distance handles l1 and linf")
    d = z.size
    A = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    b = np.asarray(rhs, dtype=np.float64)
    eye = np.eye(d)
    if box:
        A = np.vstack((A, eye, -eye))
        b = np.concatenate((b, np.zeros(d), -np.ones(d)))
    scale = 1.0 + np.abs(A).max() * (1.0 + np.abs(z).max())
    if np.all(A @ z - b >= -tol * scale):
        return 0.0
    if q is Norm.L1:
        M = np.vstack((A, eye))
        m_rhs = np.concatenate((b, z))
        width = d
    else:
        # unknowns (x, t): x_k - t = z_k and x_k + t = z_k
        M = np.vstack((np.c_[A, np.zeros(len(A))], np.c_[eye, -np.ones(d)], np.c_[eye, np.ones(d)]))
        m_rhs = np.concatenate((b, z, z))
        width = d + 1
    best = math.inf
    combos = combinations(range(len(M)), width)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if not block.size:
            break
        V, ok = _batched_vertices(M, m_rhs, block)
        X = V[ok, :d]
        if not len(X):
            continue
        feasible = np.all(X @ A.T - b >= -tol * scale, axis=1)
        if q is Norm.L1:
            dist = np.abs(X[feasible] - z).sum(axis=1)
        else:
            dist = np.abs(X[feasible] - z).max(axis=1)
        if dist.size:
            best = min(best, float(dist.min()))
    return best

# ---------------------------------------------------------------------------
# attacks

@dataclass
class AttackResult:
    radius: float
    point: np.ndarray
    evaluations: int


class _Budget:
    def __init__(self, limit):
        self.left = limit
        self.used = 0

    def take(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        self.used += 1
        return True


def _bisect_path(path, wrong, budget, t_hi, steps=60):
    # smallest t on [0, t_hi] found with wrong(path(t)), given wrong(path(t_hi))
    lo, hi = 0.0, t_hi
    for _ in range(steps):
        if not budget.take():
            break
        mid = 0.5 * (lo + hi)
        if wrong(path(mid)):
            hi = mid
        else:
            lo = mid
    return hi


def find_adversarial(model: PrototypeModel, z, label: int, threat: ThreatSpec, budget: int = 5000,
                     domain: Optional[Domain] = None) -> Optional[AttackResult]:
    """Search for a misclassified point near z along each pairwise escape route."""
    z = np.asarray(z, dtype=np.float64)
    domain = model.domain if domain is None else Domain(domain)
    box = domain is Domain.UNIT_BOX
    q = Norm(threat.q).base
    p = model.metric.base
    budget_ = _Budget(budget)
    if not budget_.take():
        return None
    y_hat, _, _ = classify(model, z)
    if y_hat != label:
        return AttackResult(0.0, z.copy(), budget_.used)

    def wrong(x):
        return classify(model, x)[0] != label

    own = np.nonzero(model.labels == label)[0]
    i_star = own[int(np.argmin(lp_norm(model.prototypes[own] - z, p, axis=1)))]
    w_i = model.prototypes[i_star]
    best: Optional[AttackResult] = None
    for j in np.nonzero(model.labels != label)[0]:
        w_j = model.prototypes[j]
        if np.array_equal(w_i, w_j):
            continue
        if q is Norm.LINF:
            def path(t, w_j=w_j):
                return linf_worst_point(z, w_i, w_j, p, t, box)

            def still(t, w_j=w_j):
                # tied coordinates stay put: moving them only ever produces ties
                lo, hi = _interval(z, t, box)
                s = np.sign(w_j - w_i)
                return np.where(s > 0, hi, np.where(s < 0, lo, z))
            scale = max(1.0, float(np.abs(w_j - z).max()))
            routes = [(path, [scale * f for f in (0.25, 0.5, 1.0, 2.0, 4.0)])]
            if p is Norm.LINF:
                routes.append((still, routes[0][1]))
        else:
            target = rho(z, w_i, w_j, Norm.L2 if p is Norm.EMBEDDED_L2 else p, q, domain if p is not Norm.L1 else Domain.UNBOUNDED)
            if target.minimizer is None or not np.isfinite(target.value):
                continue
            step = target.minimizer - z
            if not np.any(step):
                continue

            def path(t, step=step):
                x = z + t * step
                return np.clip(x, 0.0, 1.0) if box else x
            routes = [(path, [1.0, 1.0 + 1e-9, 1.001, 1.01, 1.1, 1.5, 2.0, 4.0])]
        for route, ladder in routes:
            t_hit = None
            for t in ladder:
                if not budget_.take():
                    break
                if wrong(route(t)):
                    t_hit = t
                    break
            if t_hit is None:
                continue
            t = _bisect_path(route, wrong, budget_, t_hit)
            x = route(t)
            r = float(lp_norm(x - z, q))
            if best is None or r < best.radius:
                best = AttackResult(r, x, budget_.used)
        if budget_.left <= 0:
            break
    if best is not None:
        best.evaluations = budget_.used
    return best


def attack_upper_bound(model: PrototypeModel, z, label: int, threat: ThreatSpec, budget: int = 5000,
                       domain: Optional[Domain] = None) -> Optional[float]:
    found = find_adversarial(model, z, label, threat, budget, domain)
    return None if found is None else found.radius


def robust_fraction_upper(model: PrototypeModel, X, y, threat: ThreatSpec, radius: float, budget: int = 5000) -> float:
    """Fraction of points not shown non-robust at ``radius`` by the attack."""
    y_hat = predict(model, X)
    alive = 0
    for x, label, pred in zip(X, y, y_hat):
        if pred != label:
            continue
        r = attack_upper_bound(model, x, int(label), threat, budget)
        alive += r is None or r > radius
    return alive / max(1, len(y))


# ---------------------------------------------------------------------------
# sphere

def sphere_brute(z, w_i, w_j, embedding: SphereEmbedding, resolution: int = 20000) -> float:
    """Closest point on the nonnegative quarter circle that is at least as close to w_j as to w_i."""
    if len(embedding.blocks) != 1 or embedding.blocks[0].channels != 2 or embedding.blocks[0].positions != 1:
        raise UnsupportedBlockShape("sphere_brute handles one block with two channels at one position")
    z, w_i, w_j = (np.asarray(a, dtype=np.float64) for a in (z, w_i, w_j))
    r = embedding.blocks[0].radius

    def point(theta):
        # cos via sin keeps both quarter-circle ends exact
        return r * np.stack((np.sin(0.5 * np.pi - theta), np.sin(theta)), axis=-1)

    def feasible(theta):
        X = point(theta)
        return np.sum((X - w_i) ** 2, axis=-1) >= np.sum((X - w_j) ** 2, axis=-1)

    if np.sum((z - w_i) ** 2) >= np.sum((z - w_j) ** 2):
        return 0.0
    theta = np.linspace(0.0, 0.5 * np.pi, resolution + 1)
    ok = feasible(theta)
    if not ok.any():
        return math.inf
    cands = list(theta[ok][[0, -1]])
    flips = np.nonzero(ok[1:] != ok[:-1])[0]
    for k in flips:
        a, b = theta[k], theta[k + 1]
        good, bad = (a, b) if ok[k] else (b, a)
        for _ in range(60):
            mid = 0.5 * (good + bad)
            if feasible(np.array(mid)):
                good = mid
            else:
                bad = mid
        cands.append(good)
    cands = np.array(cands)
    feas = theta[ok]
    pts = point(np.concatenate((cands, feas)))
    return float(np.min(np.linalg.norm(pts - z, axis=1)))
