import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shipmpc.errors import QpDimensionError, QpNotConvexError, QpUnboundedError
from shipmpc.qp import (QpOptions, QpProblem, QpStatus, check_feasible, dump_qp, kkt_residual,
                        load_qp, objective_value, read_qp_text, solve_qp, write_qp_text)
from shipmpc.validate import grid_minimum, random_planted_qp

I2 = np.eye(2)


def prob(h=I2, f=(0.0, 0.0), **kw):
    return QpProblem(np.asarray(h, float), np.asarray(f, float), **kw)


# -- worked examples ---------------------------------------------------------

def test_unconstrained_minimum():
    sol = solve_qp(prob(f=(-2.0, 0.0)))
    assert sol.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(sol.x_star, [1.0, 0.0], atol=1e-12)
    assert sol.objective == pytest.approx(-1.0)


def test_equality_symmetric_split():
    sol = solve_qp(prob(a_eq=[[1.0, 1.0]], b_eq=[1.0]))
    np.testing.assert_allclose(sol.x_star, [0.5, 0.5], atol=1e-12)
    # 2x + nu = 0
    np.testing.assert_allclose(sol.eq_multipliers, [-1.0], atol=1e-10)


def test_upper_bound_active():
    p = prob(f=(-2.0, 0.0), upper=[0.5, np.inf])
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x_star, [0.5, 0.0], atol=1e-12)
    # upper multiplier on x1: 2*0.5 - 2 + mu = 0
    assert sol.ineq_multipliers[p.m_ineq + p.n + 0] == pytest.approx(1.0)
    g, x = grid_minimum(QpProblem(I2, [-2.0, 0.0], lower=[-2, -2], upper=[0.5, 2]))
    np.testing.assert_allclose(x, [0.5, 0.0], atol=1e-3)
    assert g == pytest.approx(sol.objective, abs=1e-9)


def test_lp_with_zero_hessian():
    p = QpProblem(np.zeros((2, 2)), [1.0, 1.0], a_ineq=[[-1.0, -1.0]], b_ineq=[-1.0],
                  lower=[0, 0], upper=[2, 2])
    sol = solve_qp(p)
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0)
    assert check_feasible(p, sol.x_star, 1e-9)


def test_infeasible_reports_violation():
    p = prob(a_eq=[[1.0, 1.0]], b_eq=[5.0], lower=[0, 0], upper=[1, 1])
    sol = solve_qp(p)
    assert sol.status is QpStatus.INFEASIBLE
    assert sol.phase1_violation > 1e-6
    assert str(sol.status) == "Infeasible"


def test_max_iterations_returns_feasible_iterate():
    rng = np.random.default_rng(3)
    n = 12
    b = rng.normal(size=(n, n))
    p = QpProblem(b @ b.T, rng.normal(size=n) * 10, lower=-np.ones(n) * 0.1,
                  upper=np.ones(n) * 0.1)
    sol = solve_qp(p, QpOptions(max_iter=1))
    assert sol.status is QpStatus.MAX_ITERATIONS
    assert check_feasible(p, sol.x_star, 1e-9)


# -- residuals and feasibility -----------------------------------------------

def test_kkt_residual_examples():
    p = prob(f=(-2.0, 0.0))
    assert kkt_residual(p, np.array([1.0, 0.0])).stationarity == 0.0
    assert kkt_residual(p, np.array([0.0, 0.0])).stationarity == 2.0
    pe = prob(a_eq=[[1.0, 1.0]], b_eq=[1.0])
    assert kkt_residual(pe, solve_qp(pe)).primal_infeasibility == 0.0


def test_check_feasible_examples():
    p = prob(a_eq=[[1.0, 1.0]], b_eq=[1.0], lower=[0, 0], upper=[1, 1])
    assert check_feasible(p, [0.5, 0.5], 1e-9)
    rep = check_feasible(p, [0.6, 0.5], 1e-9)
    assert not rep and rep.kind == "eq"
    assert rep.worst_violation == pytest.approx(0.1)
    box = prob(lower=[0, 0], upper=[1, 1])
    assert check_feasible(box, [1.0, 0.0], 0.0)


# -- structured errors ---------------------------------------------------------

def test_dimension_errors():
    with pytest.raises(QpDimensionError):
        QpProblem(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(QpDimensionError):
        QpProblem(np.eye(2), [0, 0], a_eq=[[1, 1, 1]], b_eq=[1])
    with pytest.raises(QpDimensionError):
        QpProblem(np.eye(2), [0, 0], lower=[1, 0], upper=[0, 1])


def test_indefinite_and_asymmetric_rejected():
    with pytest.raises(QpNotConvexError):
        solve_qp(prob(h=[[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(QpNotConvexError):
        solve_qp(prob(h=[[1.0, 1e-6], [0.0, 1.0]]))


def test_tiny_negative_eigenvalue_accepted():
    h = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-13 * np.eye(2)
    sol = solve_qp(prob(h=h, f=(-1.0, -1.0), lower=[-5, -5], upper=[5, 5]))
    assert sol.optimal
    assert sol.x_star.sum() == pytest.approx(0.5, abs=1e-8)


def test_unbounded_raises():
    with pytest.raises(QpUnboundedError):
        solve_qp(QpProblem(np.zeros((1, 1)), [-1.0]))
    with pytest.raises(QpUnboundedError):
        solve_qp(prob(h=[[1.0, 0.0], [0.0, 0.0]], f=(0.0, -1.0), lower=[-1, 0]))


# -- oracle and properties ---------------------------------------------------------

def test_planted_problems_match_grid():
    rng = np.random.default_rng(11)
    for _ in range(30):
        p, x_star, f_star = random_planted_qp(rng)
        sol = solve_qp(p)
        assert sol.optimal
        g, _ = grid_minimum(p)
        assert abs(sol.objective - g) <= 1e-4
        assert sol.objective <= f_star + 1e-9
        assert kkt_residual(p, sol).max() <= 1e-6


def test_generic_problems_never_worse_than_grid():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n = int(rng.integers(1, 4))
        mi = int(rng.integers(0, 4))
        b = rng.normal(size=(n, int(rng.integers(0, n + 1))))
        p = QpProblem(b @ b.T, rng.normal(size=n) * 2, a_ineq=rng.normal(size=(mi, n)),
                      b_ineq=rng.uniform(0, 0.5, size=mi), lower=-0.5 * np.ones(n),
                      upper=0.5 * np.ones(n))
        sol = solve_qp(p)
        g, _ = grid_minimum(p)
        assert sol.optimal
        assert sol.objective <= g + 1e-9


def _random_problem(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    b = rng.normal(size=(n, n))
    mi = int(rng.integers(0, 5))
    return QpProblem(b @ b.T, rng.normal(size=n), a_eq=rng.normal(size=(1, n)),
                     b_eq=[0.1], a_ineq=rng.normal(size=(mi, n)),
                     b_ineq=rng.uniform(0.1, 1, size=mi), lower=-np.ones(n), upper=np.ones(n))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_dominates_random_feasible_points(seed):
    p = _random_problem(seed)
    sol = solve_qp(p)
    if not sol.optimal:
        return
    rng = np.random.default_rng(seed + 1)
    # feasible samples: convex combinations of x* with points pulled toward it
    hits = 0
    for _ in range(400):
        y = rng.uniform(-1, 1, size=p.n)
        # project onto the equality row
        a = p.a_eq[0]
        y = y - a * (a @ y - p.b_eq[0]) / (a @ a)
        if check_feasible(p, y, 0.0):
            hits += 1
            assert sol.objective <= objective_value(p, y) + 1e-9
        if hits >= 100:
            break


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_positive_scaling_keeps_argmin(seed, c):
    p = _random_problem(seed)
    sol = solve_qp(p)
    if not sol.optimal:
        return
    s2 = solve_qp(p.scaled(c))
    np.testing.assert_allclose(s2.x_star, sol.x_star, atol=1e-8)
    assert s2.objective == pytest.approx(c * sol.objective, rel=1e-8, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_optimal_solutions_satisfy_kkt(seed):
    p = _random_problem(seed)
    sol = solve_qp(p)
    if sol.optimal:
        r = kkt_residual(p, sol)
        assert r.max() <= 1e-6
        mi, n = p.m_ineq, p.n
        assert np.all(sol.ineq_multipliers >= -1e-9)
        assert sol.ineq_multipliers.shape == (mi + 2 * n,)


def test_deterministic():
    p = _random_problem(42)
    a, b = solve_qp(p), solve_qp(p)
    assert a.x_star.tobytes() == b.x_star.tobytes()
    assert a.iterations == b.iterations


def test_warm_start_reaches_same_objective():
    p = _random_problem(7)
    cold = solve_qp(p)
    warm = solve_qp(p, x0=cold.x_star + 0.3)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


# -- text dump ----------------------------------------------------------------

def test_dump_round_trip():
    p = QpProblem(np.array([[2.0, 0.5], [0.5, 1.0]]), [0.1, -1 / 3], a_eq=[[1, 1]], b_eq=[1],
                  a_ineq=[[1, -1]], b_ineq=[np.inf], lower=[-np.inf, 0], upper=[1, np.inf],
                  offset=7.25)
    text = dump_qp(p)
    assert text.startswith("shipmpc-qp 1\n")
    q = load_qp(text)
    for name in ("h_matrix", "f_vector", "a_eq", "b_eq", "a_ineq", "b_ineq", "lower", "upper"):
        np.testing.assert_array_equal(getattr(q, name), getattr(p, name))
    assert q.offset == p.offset
    buf = io.StringIO()
    write_qp_text(p, buf)
    buf.seek(0)
    assert dump_qp(read_qp_text(buf)) == text


def test_dump_rejects_garbage():
    with pytest.raises(QpDimensionError):
        load_qp("not a dump\n")
