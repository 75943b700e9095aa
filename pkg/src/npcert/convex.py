"""Convex subproblems behind exact l2-NPC radii.

For a target prototype w_j the exact radius is the q-distance from z to the
polytope of points at least as close to w_j as to every own-class prototype,
optionally intersected with [0,1]^d. For q = 2 it is a QP, for q in {1, inf}
an LP. Both solvers here are dual methods: their running objective is a valid
lower bound at every iteration, which lets the caller stop as soon as a
subproblem can no longer beat the incumbent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import Norm
from .errors import DomainViolation, Infeasible, IterationLimit

MAX_ITERATIONS = 100_000


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    EARLY_TERMINATED = "early_terminated"
    INFEASIBLE = "infeasible"


@dataclass
class ConvexSubproblem:
    """min ||x - z||_q  s.t.  rows @ x >= rhs  (and 0 <= x <= 1 if ``box``)."""

    q: Norm
    z: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray
    box: bool = False

    def __post_init__(self):
        self.q = Norm(self.q).base
        self.z = np.asarray(self.z, dtype=np.float64).ravel()
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        self.rhs = np.asarray(self.rhs, dtype=np.float64).ravel()
        if self.box and (np.any(self.z < -1e-12) or np.any(self.z > 1 + 1e-12)):
            raise DomainViolation("z lies outside the unit box")

    @classmethod
    def for_target(cls, own: np.ndarray, w_j: np.ndarray, z, q: Norm, box: bool = False) -> "ConvexSubproblem":
        """Rows <x, w_j - w_i> >= (||w_j||^2 - ||w_i||^2) / 2 for every own prototype w_i."""
        own = np.atleast_2d(own)
        rows = w_j[None, :] - own
        rhs = 0.5 * (w_j @ w_j - np.einsum("ij,ij->i", own, own))
        return cls(q, z, rows, rhs, box)

    def violation(self, x) -> float:
        worst = float(np.max(self.rhs - self.rows @ x, initial=0.0))
        if self.box:
            worst = max(worst, float(np.max(-x, initial=0.0)), float(np.max(x - 1.0, initial=0.0)))
        return worst


@dataclass
class SolveOutcome:
    status: SolveStatus
    primal_value: float
    dual_lower: float
    x: Optional[np.ndarray] = None
    iterations: int = 0
    multipliers: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# QP: Goldfarb-Idnani dual active set with identity Hessian

class _Constraints:
    """General rows followed by the box rows x >= 0 and -x >= -1."""

    def __init__(self, sub: ConvexSubproblem):
        self.rows, self.rhs, self.box = sub.rows, sub.rhs, sub.box
        self.m = len(self.rhs)
        self.d = sub.z.size

    def count(self):
        return self.m + (2 * self.d if self.box else 0)

    def slack(self, x):
        s = self.rows @ x - self.rhs
        if self.box:
            s = np.concatenate((s, x, 1.0 - x))
        return s

    def normal(self, k):
        if k < self.m:
            return self.rows[k]
        n = np.zeros(self.d)
        k -= self.m
        n[k % self.d] = 1.0 if k < self.d else -1.0
        return n

    def offset(self, k):
        if k < self.m:
            return self.rhs[k]
        return 0.0 if k - self.m < self.d else -1.0


def solve_r_l2(sub: ConvexSubproblem, incumbent: Optional[float] = None,
               max_iterations: int = MAX_ITERATIONS) -> SolveOutcome:
    """Euclidean projection of z onto the polytope, by the dual active-set method.

    Iterates are optimal for a growing subset of the constraints, so the
    distance ||x - z|| never decreases and is a lower bound on the answer at
    every step; once it exceeds ``incumbent`` the solve stops early.
    """
    cons = _Constraints(sub)
    z = sub.z
    d = z.size
    x = z.copy()
    J = np.eye(d)
    R = np.zeros((0, 0))
    active: list[int] = []
    u = np.zeros(0)
    scale = 1.0 + float(np.abs(sub.rows).max(initial=0.0)) * (1.0 + float(np.abs(z).max(initial=0.0)))
    tol = 1e-12 * scale
    it = 0

    def drop(pos):
        nonlocal J, R
        R = np.delete(R, pos, axis=1)
        q_ = R.shape[1]
        for i in range(pos, q_):
            a, b = R[i, i], R[i + 1, i]
            rr = math.hypot(a, b)
            if rr == 0.0:
                continue
            c, s = a / rr, b / rr
            Ri, Rk = R[i, i:].copy(), R[i + 1, i:].copy()
            R[i, i:], R[i + 1, i:] = c * Ri + s * Rk, -s * Ri + c * Rk
            Ji, Jk = J[:, i].copy(), J[:, i + 1].copy()
            J[:, i], J[:, i + 1] = c * Ji + s * Jk, -s * Ji + c * Jk
        R = R[:q_, :q_]

    while True:
        s_all = cons.slack(x)
        p = int(np.argmin(s_all))
        if s_all[p] >= -tol:
            dist = float(np.linalg.norm(x - z))
            return SolveOutcome(SolveStatus.OPTIMAL, dist, dist, x, it, _qp_multipliers(cons, active, u))
        n_p = cons.normal(p)
        b_p = cons.offset(p)
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iterations:
                raise IterationLimit("QP iteration limit reached", float(np.linalg.norm(x - z)), it)
            q_ = len(active)
            dvec = J.T @ n_p
            step = J[:, q_:] @ dvec[q_:]
            r = solve_triangular(R, dvec[:q_]) if q_ else np.zeros(0)
            t1, drop_pos = math.inf, -1
            for k in range(q_):
                if r[k] > tol and u_plus[k] / r[k] < t1:
                    t1, drop_pos = u_plus[k] / r[k], k
            slack_p = float(n_p @ x - b_p)
            curv = float(step @ n_p)
            t2 = -slack_p / curv if np.linalg.norm(step) > tol and curv > tol else math.inf
            t = min(t1, t2)
            if math.isinf(t):
                return SolveOutcome(SolveStatus.INFEASIBLE, math.inf, math.inf, None, it)
            if not math.isinf(t2):
                x = x + t * step
            u_plus[:q_] -= t * r
            u_plus[q_] += t
            if t2 <= t1:
                # full step: p joins the active set (Householder keeps J orthogonal)
                w = J[:, q_:].T @ n_p
                alpha = -math.copysign(np.linalg.norm(w), w[0] if w[0] != 0 else 1.0)
                v = w.copy()
                v[0] -= alpha
                vv = v @ v
                if vv > 0:
                    J[:, q_:] -= np.outer(J[:, q_:] @ v, 2.0 * v / vv)
                col = np.append(dvec[:q_], alpha)
                R = np.pad(R, ((0, 1), (0, 1)))
                R[:, q_] = col
                active.append(p)
                u = u_plus
                break
            active.pop(drop_pos)
            u_plus = np.delete(u_plus, drop_pos)
            drop(drop_pos)
        if incumbent is not None:
            lower = float(np.linalg.norm(x - z))
            if lower > incumbent:
                return SolveOutcome(SolveStatus.EARLY_TERMINATED, math.inf, lower, None, it)


def _qp_multipliers(cons, active, u):
    mult = np.zeros(cons.count())
    for k, val in zip(active, u):
        mult[k] = val
    return mult


# ---------------------------------------------------------------------------
# LP: dense dual simplex with Bland's rule

def _lp_tableau(sub: ConvexSubproblem):
    """Build  min c^T v  s.t.  A v >= b, v >= 0  over v = (y+, y-, [t]) with x = z + y+ - y-."""
    z, G = sub.z, sub.rows
    d, m = z.size, len(sub.rhs)
    inf_norm = sub.q is Norm.LINF
    nv = 2 * d + (1 if inf_norm else 0)
    blocks, rhs = [np.hstack((G, -G, np.zeros((m, nv - 2 * d))))], [sub.rhs - G @ z]
    if inf_norm:
        # t - y+_k - y-_k >= 0
        blocks.append(np.hstack((-np.eye(d), -np.eye(d), np.ones((d, 1)))))
        rhs.append(np.zeros(d))
    if sub.box:
        eye, zero = np.eye(d), np.zeros((d, nv - d))
        blocks.append(np.hstack((-eye, zero)))
        rhs.append(-(1.0 - z))
        blocks.append(np.hstack((np.zeros((d, d)), -eye, np.zeros((d, nv - 2 * d)))))
        rhs.append(-z)
    A, b = np.vstack(blocks), np.concatenate(rhs)
    c = np.zeros(nv)
    if inf_norm:
        c[-1] = 1.0
    else:
        c[:2 * d] = 1.0
    return c, A, b, nv


def solve_r_l2_lp(sub: ConvexSubproblem, incumbent: Optional[float] = None,
                  max_iterations: int = MAX_ITERATIONS) -> SolveOutcome:
    """l1 / linf distance to the polytope as an LP, solved by the dual simplex method.

    The all-slack basis is dual feasible because the costs are nonnegative, so
    the objective rises monotonically and is a valid lower bound throughout.
    Bland's rule (smallest index on both choices) prevents cycling.
    """
    if sub.q is Norm.L2:
        raise ValueError("use solve_r_l2 for the Euclidean threat")
    c, A, b, nv = _lp_tableau(sub)
    m = A.shape[0]
    # rows:  s_i - A_i v = -b_i  with the slacks s basic
    T = np.hstack((-A, np.eye(m)))
    beta = -b.copy()
    cbar = np.concatenate((c, np.zeros(m)))
    basis = np.arange(nv, nv + m)
    cost = np.concatenate((c, np.zeros(m)))
    scale = 1.0 + float(np.abs(A).max(initial=0.0))
    tol = 1e-11 * scale
    it = 0
    while True:
        obj = float(cost[basis] @ beta)
        if incumbent is not None and obj > incumbent:
            return SolveOutcome(SolveStatus.EARLY_TERMINATED, math.inf, obj, None, it)
        bad = np.nonzero(beta < -tol)[0]
        if bad.size == 0:
            break
        it += 1
        if it > max_iterations:
            raise IterationLimit("LP iteration limit reached", obj, it)
        r = int(bad[np.argmin(basis[bad])])
        row = T[r]
        cand = np.nonzero(row < -tol)[0]
        if cand.size == 0:
            return SolveOutcome(SolveStatus.INFEASIBLE, math.inf, math.inf, None, it)
        ratios = cbar[cand] / -row[cand]
        best = ratios.min()
        j = int(cand[np.nonzero(ratios <= best + 1e-14 * (1.0 + abs(best)))[0][0]])
        piv = row[j]
        T[r] = row / piv
        beta[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        beta -= col * beta[r]
        cbar = cbar - cbar[j] * T[r]
        basis[r] = j
    v = np.zeros(nv + m)
    v[basis] = beta
    d = sub.z.size
    x = sub.z + v[:d] - v[d:2 * d]
    if sub.box:
        x = np.clip(x, 0.0, 1.0)
    value = float(np.abs(x - sub.z).max() if sub.q is Norm.LINF else np.abs(x - sub.z).sum())
    obj = float(cost[basis] @ beta)
    # simplex multipliers of the >= rows; b @ multipliers equals the optimum
    multipliers = -cbar[nv:]
    return SolveOutcome(SolveStatus.OPTIMAL, value, min(obj, value), x, it, -multipliers)


def solve(sub: ConvexSubproblem, incumbent: Optional[float] = None,
          max_iterations: int = MAX_ITERATIONS) -> SolveOutcome:
    if sub.q is Norm.L2:
        return solve_r_l2(sub, incumbent, max_iterations)
    return solve_r_l2_lp(sub, incumbent, max_iterations)


def require_feasible(outcome: SolveOutcome) -> SolveOutcome:
    if outcome.status is SolveStatus.INFEASIBLE:
        raise Infeasible("constraint set is empty")
    return outcome
