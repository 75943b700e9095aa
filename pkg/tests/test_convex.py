import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from npcert.convex import ConvexSubproblem, SolveStatus, require_feasible, solve, solve_r_l2, solve_r_l2_lp
from npcert.core import Norm
from npcert.errors import DomainViolation, Infeasible, IterationLimit
from npcert.oracle import enumerate_projection

Z0 = np.zeros(2)
OWN = np.array([[0.0, 1.0], [0.0, -1.0]])
TARGET = np.array([2.0, 0.0])


def two_blocker(q, box=False, z=Z0):
    return ConvexSubproblem.for_target(OWN, TARGET, z, q, box)


def test_redundant_row():
    out = solve_r_l2(ConvexSubproblem(Norm.L2, Z0, [[1.0, 0.0], [1.0, 0.0]], [2.0, 1.0]))
    assert out.status is SolveStatus.OPTIMAL
    assert out.primal_value == pytest.approx(2.0)
    assert np.allclose(out.x, [2.0, 0.0])


@pytest.mark.parametrize("q", [Norm.L2, Norm.LINF, Norm.L1])
def test_two_blocker(q):
    out = solve(two_blocker(q))
    assert out.status is SolveStatus.OPTIMAL
    assert out.primal_value == pytest.approx(0.75, abs=1e-9)
    assert np.allclose(out.x, [0.75, 0.0], atol=1e-9)


def test_two_blocker_matches_enumeration():
    sub = two_blocker(Norm.L2)
    value, x = enumerate_projection(sub.rows, sub.rhs, sub.z)
    assert value == pytest.approx(0.75) and np.allclose(x, [0.75, 0.0])


def test_early_termination():
    out = solve_r_l2(two_blocker(Norm.L2), incumbent=0.5)
    assert out.status is SolveStatus.EARLY_TERMINATED
    assert out.dual_lower > 0.5


def test_single_row_l1():
    out = solve_r_l2_lp(ConvexSubproblem(Norm.L1, Z0, [[1.0, 0.0]], [2.0]))
    assert out.primal_value == pytest.approx(2.0)


@pytest.mark.parametrize("q", [Norm.L1, Norm.L2, Norm.LINF])
def test_infeasible_box(q):
    sub = ConvexSubproblem(q, [0.5, 0.5], [[1.0, 0.0]], [2.0], box=True)
    out = solve(sub)
    assert out.status is SolveStatus.INFEASIBLE and out.primal_value == math.inf
    with pytest.raises(Infeasible):
        require_feasible(out)


def test_box_requires_interior_anchor():
    with pytest.raises(DomainViolation):
        ConvexSubproblem(Norm.L2, [1.5, 0.5], [[1.0, 0.0]], [0.2], box=True)


@pytest.mark.parametrize("q", [Norm.L1, Norm.LINF])
def test_lp_iteration_limit_reported(q):
    rng = np.random.default_rng(0)
    own = rng.normal(size=(5, 3))
    sub = ConvexSubproblem.for_target(own, rng.normal(size=3) + 2, rng.normal(size=3) * 0.1, q)
    with pytest.raises(IterationLimit) as info:
        solve(sub, max_iterations=1)
    assert info.value.dual_lower <= solve(sub).primal_value + 1e-9


def _scipy_lp(sub):
    d = sub.z.size
    A, b = [], []
    for row, r in zip(sub.rows, sub.rhs):
        A.append(np.r_[-row, np.zeros(d if sub.q is Norm.L1 else 1)])
        b.append(-r)
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        if sub.q is Norm.L1:
            t = np.zeros(d)
            t[k] = 1.0
            A += [np.r_[e, -t], np.r_[-e, -t]]
        else:
            A += [np.r_[e, -1.0], np.r_[-e, -1.0]]
        b += [sub.z[k], -sub.z[k]]
    nt = d if sub.q is Norm.L1 else 1
    bounds = [(0, 1) if sub.box else (None, None)] * d + [(0, None)] * nt
    res = linprog(np.r_[np.zeros(d), np.ones(nt)], A_ub=np.array(A), b_ub=np.array(b), bounds=bounds,
                  method="highs")
    return res.fun if res.status == 0 else math.inf


def _random_sub(seed, q, box):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    m = int(rng.integers(1, 6))
    lo, hi = (0.0, 1.0) if box else (-1.0, 1.0)
    z = rng.uniform(lo, hi, d)
    own = rng.uniform(lo - 0.3, hi + 0.3, (m, d))
    # the own prototype nearest to z anchors z inside its cell
    own[0] = z + rng.normal(0, 0.1, d)
    return ConvexSubproblem.for_target(own, rng.uniform(lo - 0.3, hi + 0.3, d), z, q, box)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_qp_matches_active_set_enumeration(seed, box):
    sub = _random_sub(seed, Norm.L2, box)
    out = solve(sub)
    ref, _ = enumerate_projection(sub.rows, sub.rhs, sub.z, box)
    if math.isinf(ref):
        assert out.status is SolveStatus.INFEASIBLE
    else:
        assert out.primal_value == pytest.approx(ref, rel=1e-7, abs=1e-9)
        assert sub.violation(out.x) <= 1e-9


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([Norm.L1, Norm.LINF]), st.booleans())
def test_lp_matches_scipy(seed, q, box):
    sub = _random_sub(seed, q, box)
    out = solve(sub)
    ref = _scipy_lp(sub)
    if math.isinf(ref):
        assert out.status is SolveStatus.INFEASIBLE
    else:
        assert out.primal_value == pytest.approx(ref, rel=1e-7, abs=1e-9)
        assert sub.violation(out.x) <= 1e-9


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([Norm.L1, Norm.L2, Norm.LINF]), st.booleans())
def test_weak_duality_and_gap(seed, q, box):
    out = solve(_random_sub(seed, q, box))
    if out.status is SolveStatus.OPTIMAL:
        assert out.dual_lower <= out.primal_value + 1e-12
        assert out.primal_value - out.dual_lower <= 1e-8 * (1 + out.primal_value)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([Norm.L1, Norm.L2, Norm.LINF]), st.floats(0.05, 2.0))
def test_early_stop_dual_exceeds_incumbent(seed, q, frac):
    sub = _random_sub(seed, q, False)
    full = solve(sub)
    if full.status is not SolveStatus.OPTIMAL or full.primal_value == 0:
        return
    out = solve(sub, incumbent=frac * full.primal_value)
    if out.status is SolveStatus.EARLY_TERMINATED:
        assert frac * full.primal_value < out.dual_lower <= full.primal_value + 1e-9
    else:
        assert out.primal_value == pytest.approx(full.primal_value, rel=1e-9, abs=1e-12)
