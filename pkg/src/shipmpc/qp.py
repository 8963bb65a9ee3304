"""Dense convex QP solver (primal active-set).

Problems have the form::

    minimize    x' H x + f' x + offset
    subject to  A_eq x  = b_eq
                A_ineq x <= b_ineq
                lower <= x <= upper

Note there is no 1/2 in front of the quadratic term, so the gradient is
``2 H x + f``. Multipliers follow the same convention: at an optimum

    2 H x + f + A_eq' nu + A_ineq' mu - mu_lower + mu_upper = 0

with ``mu, mu_lower, mu_upper >= 0``. Rows with ``b_ineq = +inf`` and
infinite bounds are treated as absent.

The solver works on an internally scaled copy (variables by their bound
magnitude, rows by their infinity norm, objective by its largest
coefficient). A feasible starting point comes from an elastic LP (HiGHS);
its optimal value doubles as the infeasibility certificate.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import QpDimensionError, QpError, QpNotConvexError, QpUnboundedError

__all__ = [
    "QpProblem",
    "QpStatus",
    "QpOptions",
    "QpSolution",
    "KktResidual",
    "FeasibilityReport",
    "solve_qp",
    "kkt_residual",
    "check_feasible",
    "objective_value",
    "write_qp_text",
    "read_qp_text",
    "dump_qp",
    "load_qp",
]

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-9


def _as_matrix(a, rows, cols, name):
    if a is None:
        return np.zeros((rows if rows is not None else 0, cols))
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        a = a.reshape(0, cols)
    if a.ndim != 2 or a.shape[1] != cols:
        raise QpDimensionError(f"{name} must have {cols} columns, got shape {a.shape}")
    return a


def _as_vector(v, length, name, fill=None):
    if v is None:
        return np.full(length, fill if fill is not None else 0.0)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != length:
        raise QpDimensionError(f"{name} must have length {length}, got {v.shape[0]}")
    return v


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Dense QP in the ``x'Hx + f'x`` convention.

    Missing blocks may be passed as ``None``. Arrays are converted to
    float and validated for shape and finiteness on construction;
    convexity of ``h_matrix`` is checked by :func:`solve_qp`.
    """

    h_matrix: np.ndarray
    f_vector: np.ndarray
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None
    a_ineq: np.ndarray = None
    b_ineq: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    offset: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise QpDimensionError(f"h_matrix must be square, got shape {h.shape}")
        n = h.shape[0]
        f = _as_vector(self.f_vector, n, "f_vector")
        a_eq = _as_matrix(self.a_eq, 0, n, "a_eq")
        b_eq = _as_vector(self.b_eq, a_eq.shape[0], "b_eq")
        a_in = _as_matrix(self.a_ineq, 0, n, "a_ineq")
        b_in = _as_vector(self.b_ineq, a_in.shape[0], "b_ineq")
        lo = _as_vector(self.lower, n, "lower", fill=-np.inf)
        up = _as_vector(self.upper, n, "upper", fill=np.inf)

        for name, arr in (("h_matrix", h), ("f_vector", f), ("a_eq", a_eq),
                          ("b_eq", b_eq), ("a_ineq", a_in)):
            if not np.all(np.isfinite(arr)):
                raise QpDimensionError(f"{name} contains non-finite entries")
        if np.any(np.isnan(b_in)) or np.any(b_in == -np.inf):
            raise QpDimensionError("b_ineq entries must be finite or +inf")
        if np.any(np.isnan(lo)) or np.any(lo == np.inf):
            raise QpDimensionError("lower entries must be finite or -inf")
        if np.any(np.isnan(up)) or np.any(up == -np.inf):
            raise QpDimensionError("upper entries must be finite or +inf")
        if np.any(lo > up):
            j = int(np.argmax(lo > up))
            raise QpDimensionError(f"lower[{j}]={lo[j]} exceeds upper[{j}]={up[j]}")
        if not np.isfinite(self.offset):
            raise QpDimensionError("offset must be finite")

        for name, arr in (("h_matrix", h), ("f_vector", f), ("a_eq", a_eq), ("b_eq", b_eq),
                          ("a_ineq", a_in), ("b_ineq", b_in), ("lower", lo), ("upper", up)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self):
        return self.h_matrix.shape[0]

    @property
    def m_eq(self):
        return self.a_eq.shape[0]

    @property
    def m_ineq(self):
        return self.a_ineq.shape[0]

    def scaled(self, c):
        """Return the problem with H, f and offset multiplied by ``c``."""
        return QpProblem(c * self.h_matrix, c * self.f_vector, self.a_eq, self.b_eq,
                         self.a_ineq, self.b_ineq, self.lower, self.upper, c * self.offset)


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class QpOptions:
    """Solver tolerances (absolute, on the internally scaled problem)."""

    feas_tol: float = 1e-8
    stat_tol: float = 1e-6
    comp_tol: float = 1e-6
    infeas_tol: float = 1e-6
    max_iter: int | None = None

    def __post_init__(self):
        for name in ("feas_tol", "stat_tol", "comp_tol", "infeas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Solver output.

    ``ineq_multipliers`` is laid out as ``[A_ineq rows, lower bounds,
    upper bounds]`` (length ``m_ineq + 2n``). ``kkt_residual`` is the
    largest of the three KKT residual blocks on the scaled problem;
    ``phase1_violation`` is the minimum total constraint violation found
    by the feasibility phase (scaled units). ``active`` lists indices into
    the multiplier layout that were in the final working set.
    """

    x_star: np.ndarray
    objective: float
    status: QpStatus
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    iterations: int
    kkt_residual: float
    phase1_violation: float = 0.0
    active: tuple = field(default=())

    @property
    def optimal(self):
        return self.status is QpStatus.OPTIMAL


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    primal_infeasibility: float
    complementarity: float

    def max(self):
        return max(self.stationarity, self.primal_infeasibility, self.complementarity)


@dataclass(frozen=True)
class FeasibilityReport:
    """Result of :func:`check_feasible`; truthy when feasible.

    ``kind`` is one of ``"eq"``, ``"ineq"``, ``"lower"``, ``"upper"`` or
    ``None`` when nothing is violated at all.
    """

    feasible: bool
    worst_violation: float
    kind: str | None
    index: int | None

    def __bool__(self):
        return self.feasible


def objective_value(problem, x):
    x = np.asarray(x, dtype=float)
    return float(x @ problem.h_matrix @ x + problem.f_vector @ x + problem.offset)


def _violations(problem, x):
    """Yield (kind, per-row violation array) in a fixed order."""
    yield "eq", np.abs(problem.a_eq @ x - problem.b_eq)
    with np.errstate(invalid="ignore"):
        r = problem.a_ineq @ x - problem.b_ineq
    yield "ineq", np.where(np.isfinite(r), np.maximum(r, 0.0), 0.0)
    yield "lower", np.where(np.isfinite(problem.lower), np.maximum(problem.lower - x, 0.0), 0.0)
    yield "upper", np.where(np.isfinite(problem.upper), np.maximum(x - problem.upper, 0.0), 0.0)


def check_feasible(problem, x, tol=1e-9):
    """Check ``x`` against every constraint with absolute tolerance ``tol``.

    Boundaries are inclusive: a point exactly on a bound passes at ``tol=0``.
    """
    x = _as_vector(x, problem.n, "x")
    worst, kind, index = 0.0, None, None
    for k, v in _violations(problem, x):
        if v.size and v.max() > worst:
            index = int(np.argmax(v))
            worst, kind = float(v[index]), k
    return FeasibilityReport(bool(worst <= tol), worst, kind, index)


def kkt_residual(problem, solution):
    """Infinity-norm KKT residuals in the problem's own units.

    ``solution`` may be a :class:`QpSolution` or a bare point, in which
    case all multipliers are taken as zero.
    """
    n, me, mi = problem.n, problem.m_eq, problem.m_ineq
    if isinstance(solution, QpSolution):
        x = _as_vector(solution.x_star, n, "x_star")
        nu = _as_vector(solution.eq_multipliers, me, "eq_multipliers")
        mu = _as_vector(solution.ineq_multipliers, mi + 2 * n, "ineq_multipliers")
    else:
        x = _as_vector(solution, n, "x")
        nu = np.zeros(me)
        mu = np.zeros(mi + 2 * n)
    mu_in, mu_lo, mu_up = mu[:mi], mu[mi:mi + n], mu[mi + n:]

    grad = 2.0 * problem.h_matrix @ x + problem.f_vector
    grad = grad + problem.a_eq.T @ nu + problem.a_ineq.T @ mu_in - mu_lo + mu_up
    stat = float(np.max(np.abs(grad))) if n else 0.0

    primal = 0.0
    for _, v in _violations(problem, x):
        if v.size:
            primal = max(primal, float(v.max()))

    def comp(mult, slack):
        with np.errstate(invalid="ignore"):
            prod = np.where(mult == 0.0, 0.0, np.abs(mult * slack))
        neg = np.maximum(-mult, 0.0)
        out = np.maximum(prod, neg)
        return float(out.max()) if out.size else 0.0

    with np.errstate(invalid="ignore"):
        s_in = problem.b_ineq - problem.a_ineq @ x
    c = max(comp(mu_in, s_in), comp(mu_lo, x - problem.lower), comp(mu_up, problem.upper - x))
    return KktResidual(stat, primal, c)


# ---------------------------------------------------------------------------
# scaling

@dataclass
class _Scaled:
    h: np.ndarray
    f: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray
    lo: np.ndarray
    up: np.ndarray
    d: np.ndarray         # x = d * y
    r_eq: np.ndarray      # scaled row = r * row
    r_in: np.ndarray
    rows_in: np.ndarray   # original indices of kept (finite) inequality rows
    c: float              # objective multiplier


def _scale(problem, h):
    n = problem.n
    mag = np.zeros(n)
    for b in (problem.lower, problem.upper):
        fin = np.isfinite(b)
        mag[fin] = np.maximum(mag[fin], np.abs(b[fin]))
    d = np.where(mag > 0, mag, 1.0)

    def rows(a, b):
        a = a * d
        r = np.max(np.abs(a), axis=1) if a.shape[0] else np.zeros(0)
        r = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 1.0)
        return a * r[:, None], b * r, r

    a_eq, b_eq, r_eq = rows(problem.a_eq, problem.b_eq)
    keep = np.flatnonzero(np.isfinite(problem.b_ineq))
    a_in, b_in, r_in = rows(problem.a_ineq[keep], problem.b_ineq[keep])

    hs = h * d[:, None] * d[None, :]
    fs = problem.f_vector * d
    big = max(np.max(np.abs(hs), initial=0.0), np.max(np.abs(fs), initial=0.0))
    c = 1.0 / big if big > 0 else 1.0
    return _Scaled(hs * c, fs * c, a_eq, b_eq, a_in, b_in,
                   problem.lower / d, problem.upper / d, d, r_eq, r_in, keep, c)


def _convexify(problem):
    h = problem.h_matrix
    if h.size == 0:
        return h
    hmax = float(np.max(np.abs(h)))
    asym = float(np.max(np.abs(h - h.T)))
    if asym > SYMMETRY_RTOL * hmax:
        raise QpNotConvexError(f"h_matrix is not symmetric (max |H - H'| = {asym:.3e})")
    h = 0.5 * (h + h.T)
    if hmax == 0.0:
        return h
    eig = np.linalg.eigvalsh(h)
    norm2 = float(np.max(np.abs(eig)))
    if eig[0] < -PSD_RTOL * norm2:
        raise QpNotConvexError(
            f"h_matrix is not positive semidefinite (min eigenvalue {eig[0]:.3e}, "
            f"tolerance {-PSD_RTOL * norm2:.3e})")
    if eig[0] < 0.0:
        # lift the spectrum to zero; the shift never exceeds PSD_RTOL * ||H||
        h = h - eig[0] * np.eye(h.shape[0])
    return h


# ---------------------------------------------------------------------------
# phase 1

def _phase1(s, feas_tol):
    """Elastic LP: minimize total violation of the general rows."""
    n, me, mi = s.h.shape[0], s.a_eq.shape[0], s.a_in.shape[0]
    nv = n + 2 * me + mi
    cost = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    a_eq = np.hstack([s.a_eq, np.eye(me), -np.eye(me), np.zeros((me, mi))]) if me else None
    a_ub = np.hstack([s.a_in, np.zeros((mi, 2 * me)), -np.eye(mi)]) if mi else None
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(up) else up)
              for lo, up in zip(s.lo, s.up)]
    bounds += [(0.0, None)] * (nv - n)
    res = linprog(cost, A_ub=a_ub, b_ub=s.b_in if mi else None,
                  A_eq=a_eq, b_eq=s.b_eq if me else None, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": min(1e-9, feas_tol),
                           "dual_feasibility_tolerance": 1e-9})
    if res.status != 0 or res.x is None:
        raise QpError(f"feasibility phase failed: {res.message}")
    y = np.clip(res.x[:n], s.lo, s.up)
    return y, float(max(res.fun, 0.0))


def _nearest_feasible(s, y0, feas_tol):
    """L1-nearest feasible point to ``y0`` (None if the LP fails)."""
    n, me, mi = s.h.shape[0], s.a_eq.shape[0], s.a_in.shape[0]
    eye = np.eye(n)
    cost = np.concatenate([np.zeros(n), np.ones(n)])
    a_ub = np.vstack([np.hstack([eye, -eye]), np.hstack([-eye, -eye])])
    b_ub = np.concatenate([y0, -y0])
    if mi:
        a_ub = np.vstack([a_ub, np.hstack([s.a_in, np.zeros((mi, n))])])
        b_ub = np.concatenate([b_ub, s.b_in])
    a_eq = np.hstack([s.a_eq, np.zeros((me, n))]) if me else None
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(up) else up)
              for lo, up in zip(s.lo, s.up)] + [(0.0, None)] * n
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=s.b_eq if me else None,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": min(1e-9, feas_tol),
                           "dual_feasibility_tolerance": 1e-9})
    if res.status != 0 or res.x is None:
        return None
    return np.clip(res.x[:n], s.lo, s.up)


def _check_bounded(s):
    """Raise if some feasible recession direction has zero curvature and descends.

    Only called once a feasible point exists. The direction is sought in
    the null space of H, normalized to the unit box.
    """
    n = s.h.shape[0]
    if n == 0:
        return
    w, v = np.linalg.eigh(s.h)
    basis = v[:, w <= _CURV_TOL * max(1.0, float(np.max(np.abs(w))))]
    k = basis.shape[1]
    if k == 0:
        return
    rows, rhs = [basis, -basis], [np.ones(n), np.ones(n)]
    if s.a_in.shape[0]:
        rows.append(s.a_in @ basis)
        rhs.append(np.zeros(s.a_in.shape[0]))
    lo_fin, up_fin = np.isfinite(s.lo), np.isfinite(s.up)
    if lo_fin.any():
        rows.append(-basis[lo_fin])
        rhs.append(np.zeros(int(lo_fin.sum())))
    if up_fin.any():
        rows.append(basis[up_fin])
        rhs.append(np.zeros(int(up_fin.sum())))
    a_eq = s.a_eq @ basis if s.a_eq.shape[0] else None
    res = linprog(s.f @ basis, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=a_eq,
                  b_eq=np.zeros(s.a_eq.shape[0]) if a_eq is not None else None,
                  bounds=[(None, None)] * k, method="highs")
    if res.status == 0 and res.fun < -1e-9:
        raise QpUnboundedError("objective is unbounded below on the feasible set "
                               f"(descent rate {res.fun:.3e} along a recession direction)")


# ---------------------------------------------------------------------------
# active set

_ACT_TOL = 1e-9      # scaled distance at which a constraint counts as active
_RANK_TOL = 1e-10    # relative singular-value cutoff for the working set
_CURV_TOL = 1e-11    # reduced-Hessian eigenvalues below this are zero curvature
_RAY_TOL = 1e-10     # gradient norm along zero-curvature directions
_STEP_TOL = 1e-12
_PIVOT_TOL = 1e-12
_DECREASE_TOL = 1e-14


def _svd_rows(a):
    m, k = a.shape
    if m == 0 or k == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, k)), np.eye(k)
    u, sv, vt = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(sv > _RANK_TOL * max(1.0, sv[0])))
    return u[:, :rank], sv[:rank], vt[:rank], vt[rank:].T


def _active_set(s, y, opts, max_iter):
    n = y.shape[0]
    me, mi = s.a_eq.shape[0], s.a_in.shape[0]
    fixed = np.zeros(n, dtype=np.int8)          # -1 at lower, +1 at upper
    work = []                                    # working inequality rows

    for j in range(n):
        if np.isfinite(s.lo[j]) and y[j] - s.lo[j] <= _ACT_TOL:
            fixed[j], y[j] = -1, s.lo[j]
        elif np.isfinite(s.up[j]) and s.up[j] - y[j] <= _ACT_TOL:
            fixed[j], y[j] = 1, s.up[j]
    free = fixed == 0
    resid = s.a_in @ y - s.b_in
    for i in np.flatnonzero(resid >= -_ACT_TOL):
        a_w = np.vstack([s.a_eq, s.a_in[work]])[:, free]
        _, _, _, z = _svd_rows(a_w)
        if np.max(np.abs(s.a_in[i, free] @ z), initial=0.0) > 1e-8:
            work.append(int(i))

    # land exactly on the initial working set
    a_w = np.vstack([s.a_eq, s.a_in[work]])
    b_w = np.concatenate([s.b_eq, s.b_in[work]])
    if a_w.shape[0] and free.any():
        delta = np.linalg.lstsq(a_w[:, free], b_w - a_w @ y, rcond=None)[0]
        y[free] += delta

    zero_steps = 0
    it = 0
    while it < max_iter:
        it += 1
        free = fixed == 0
        g = 2.0 * s.h @ y + s.f
        a_w = np.vstack([s.a_eq, s.a_in[work]])
        u_r, sv, vt_r, z = _svd_rows(a_w[:, free])
        g_f = g[free]

        p_f = np.zeros(int(free.sum()))
        ray = False
        if z.shape[1]:
            h_ff = s.h[np.ix_(free, free)]
            hz = z.T @ h_ff @ z
            w, v = np.linalg.eigh(0.5 * (hz + hz.T))
            gz = z.T @ g_f
            flat = w <= _CURV_TOL
            g_null = v[:, flat] @ (v[:, flat].T @ gz)
            if np.max(np.abs(g_null), initial=0.0) > _RAY_TOL:
                p_f = -(z @ g_null)
                ray = True
            else:
                pos = ~flat
                pz = -0.5 * (v[:, pos] @ ((v[:, pos].T @ gz) / w[pos]))
                p_f = z @ pz

        # a Newton step whose predicted decrease is at rounding level is noise
        fval = float(y @ s.h @ y + s.f @ y)
        moving = (np.max(np.abs(p_f), initial=0.0) > _STEP_TOL * (1.0 + np.max(np.abs(y)))
                  and -0.5 * float(g_f @ p_f) > _DECREASE_TOL * (1.0 + abs(fval)))
        if ray or moving:
            p = np.zeros(n)
            p[free] = p_f
            alpha = np.inf if ray else 1.0
            block = None
            in_work = np.zeros(mi, dtype=bool)
            in_work[work] = True
            ap = s.a_in @ p
            cand = np.flatnonzero((~in_work) & (ap > _PIVOT_TOL))
            if cand.size:
                steps = np.maximum(s.b_in[cand] - s.a_in[cand] @ y, 0.0) / ap[cand]
                k = int(np.argmin(steps))
                if steps[k] < alpha:
                    alpha, block = float(steps[k]), ("row", int(cand[k]))
            for j in np.flatnonzero(free):
                if p[j] < -_PIVOT_TOL and np.isfinite(s.lo[j]):
                    t = max(y[j] - s.lo[j], 0.0) / -p[j]
                    if t < alpha:
                        alpha, block = t, ("lo", j)
                elif p[j] > _PIVOT_TOL and np.isfinite(s.up[j]):
                    t = max(s.up[j] - y[j], 0.0) / p[j]
                    if t < alpha:
                        alpha, block = t, ("up", j)
            if not np.isfinite(alpha):
                raise QpUnboundedError("objective is unbounded below on the feasible set")
            y = y + alpha * p
            zero_steps = zero_steps + 1 if alpha == 0.0 else 0
            if block is not None:
                kind, j = block
                if kind == "row":
                    work.append(j)
                elif kind == "lo":
                    fixed[j], y[j] = -1, s.lo[j]
                else:
                    fixed[j], y[j] = 1, s.up[j]
            continue

        # stationary on the working set: inspect multipliers
        if sv.size:
            lam = -(u_r @ ((vt_r @ g_f) / sv))
        else:
            lam = np.zeros(a_w.shape[0])
        r = g + a_w.T @ lam
        mu_w = lam[me:]
        cands = [(mu_w[q], 0, work[q], ("row", q)) for q in range(len(work))]
        for j in np.flatnonzero(fixed):
            mu = r[j] if fixed[j] < 0 else -r[j]
            cands.append((mu, 1 + (fixed[j] > 0), int(j), ("fix", int(j))))
        neg = [c for c in cands if c[0] < -1e-3 * opts.stat_tol]
        if not neg:
            return y, fixed, work, lam, r, it, True
        if zero_steps >= 5:
            drop = min(neg, key=lambda c: (c[1], c[2]))      # Bland
        else:
            drop = min(neg, key=lambda c: (c[0], c[1], c[2]))
        kind, q = drop[3]
        if kind == "row":
            del work[q]
        else:
            fixed[q] = 0

    free = fixed == 0
    g = 2.0 * s.h @ y + s.f
    a_w = np.vstack([s.a_eq, s.a_in[work]])
    lam = np.linalg.lstsq(a_w[:, free].T, -g[free], rcond=None)[0] if a_w.shape[0] and free.any() \
        else np.zeros(a_w.shape[0])
    return y, fixed, work, lam, g + a_w.T @ lam, it, False


def _scaled_kkt(s, y, nu, mu_in, mu_lo, mu_up):
    g = 2.0 * s.h @ y + s.f + s.a_eq.T @ nu + s.a_in.T @ mu_in - mu_lo + mu_up
    stat = float(np.max(np.abs(g), initial=0.0))
    prim = float(np.max(np.abs(s.a_eq @ y - s.b_eq), initial=0.0))
    prim = max(prim, float(np.max(s.a_in @ y - s.b_in, initial=0.0)))
    with np.errstate(invalid="ignore"):
        prim = max(prim, float(np.max(np.where(np.isfinite(s.lo), s.lo - y, 0.0), initial=0.0)))
        prim = max(prim, float(np.max(np.where(np.isfinite(s.up), y - s.up, 0.0), initial=0.0)))
        comp = float(np.max(np.abs(mu_in * (s.b_in - s.a_in @ y)), initial=0.0))
        comp = max(comp, float(np.max(np.where(mu_lo > 0, mu_lo * (y - s.lo), 0.0), initial=0.0)))
        comp = max(comp, float(np.max(np.where(mu_up > 0, mu_up * (s.up - y), 0.0), initial=0.0)))
    return max(stat, prim, comp)


def solve_qp(problem, options=None, x0=None):
    """Solve a convex QP with a primal active-set method.

    Parameters
    ----------
    problem : QpProblem
    options : QpOptions, optional
    x0 : array_like, optional
        Starting guess. A feasible ``x0`` is used as is; otherwise the
        search starts from the feasible point nearest to it in the L1
        norm. When the minimizer is not unique this steers the result
        toward the optimal face closest to the guess.

    Returns
    -------
    QpSolution
        ``status`` is Optimal, Infeasible (the feasibility LP could not
        push total violation below ``options.infeas_tol``) or
        MaxIterations (the current, and best, feasible iterate is
        returned).

    Raises
    ------
    QpNotConvexError
        ``h_matrix`` asymmetric or indefinite beyond tolerance.
    QpUnboundedError
        The objective decreases without bound along a feasible ray.
    """
    opts = options or QpOptions()
    h = _convexify(problem)
    n, me, mi = problem.n, problem.m_eq, problem.m_ineq
    s = _scale(problem, h)
    mi_k = s.a_in.shape[0]
    max_iter = opts.max_iter or max(200, 20 * (n + me + mi_k))

    y = None
    viol = 0.0
    if x0 is not None:
        x0 = _as_vector(x0, n, "x0")
        if check_feasible(problem, x0, 0.0) or _scaled_viol(s, x0 / s.d) <= opts.feas_tol:
            y = np.clip(x0 / s.d, s.lo, s.up)
    if y is None:
        if me + mi_k:
            y, viol = _phase1(s, opts.feas_tol)
            if viol > opts.infeas_tol:
                x = y * s.d
                return QpSolution(x, objective_value(problem, x), QpStatus.INFEASIBLE,
                                  np.zeros(me), np.zeros(mi + 2 * n), 0, np.inf, viol)
            if x0 is not None:
                near = _nearest_feasible(s, np.clip(x0 / s.d, s.lo, s.up), opts.feas_tol)
                if near is not None:
                    y = near
        else:
            start = np.zeros(n) if x0 is None else x0 / s.d
            y = np.clip(start, s.lo, s.up)
            y = np.where(np.isfinite(y), y, 0.0)

    _check_bounded(s)
    y, fixed, work, lam, r, iters, converged = _active_set(s, y.copy(), opts, max_iter)

    nu_s = lam[:me]
    mu_in_s = np.zeros(mi_k)
    if work:
        mu_in_s[work] = np.maximum(lam[me:], 0.0)
    mu_lo_s = np.where(fixed < 0, np.maximum(r, 0.0), 0.0)
    mu_up_s = np.where(fixed > 0, np.maximum(-r, 0.0), 0.0)
    resid = _scaled_kkt(s, y, nu_s, mu_in_s, mu_lo_s, mu_up_s)

    # back to problem units: x = d y, mult = r * mult' / c, bound mult' / (c d)
    x = y * s.d
    nu = s.r_eq * nu_s / s.c
    mu = np.zeros(mi + 2 * n)
    mu[s.rows_in] = s.r_in * mu_in_s / s.c
    mu[mi:mi + n] = mu_lo_s / (s.c * s.d)
    mu[mi + n:] = mu_up_s / (s.c * s.d)
    active = tuple(sorted([int(s.rows_in[i]) for i in work]
                          + [mi + int(j) for j in np.flatnonzero(fixed < 0)]
                          + [mi + n + int(j) for j in np.flatnonzero(fixed > 0)]))
    status = QpStatus.OPTIMAL if converged else QpStatus.MAX_ITERATIONS
    return QpSolution(x, objective_value(problem, x), status, nu, mu, iters, resid, viol, active)


def _scaled_viol(s, y):
    v = float(np.max(np.abs(s.a_eq @ y - s.b_eq), initial=0.0))
    v = max(v, float(np.max(s.a_in @ y - s.b_in, initial=0.0)))
    with np.errstate(invalid="ignore"):
        v = max(v, float(np.max(np.where(np.isfinite(s.lo), s.lo - y, 0.0), initial=0.0)))
        v = max(v, float(np.max(np.where(np.isfinite(s.up), y - s.up, 0.0), initial=0.0)))
    return v


# ---------------------------------------------------------------------------
# plain-text dump
#
#   shipmpc-qp 1
#   n <n> m_eq <me> m_ineq <mi>
#   offset <value>
#   H <n> <n>          followed by n rows of n values
#   f <n>              followed by one row
#   A_eq <me> <n>      me rows
#   b_eq <me>          one row (empty line when me = 0)
#   A_ineq <mi> <n>
#   b_ineq <mi>
#   lower <n>
#   upper <n>
#
# Values are whitespace separated, written with %.17g (round-trip exact);
# infinities appear as inf / -inf.

_MAGIC = "shipmpc-qp 1"


def _fmt_row(values):
    return " ".join("%.17g" % v for v in values)


def write_qp_text(problem, stream):
    n, me, mi = problem.n, problem.m_eq, problem.m_ineq
    out = [_MAGIC, f"n {n} m_eq {me} m_ineq {mi}", "offset %.17g" % problem.offset]
    out.append(f"H {n} {n}")
    out += [_fmt_row(row) for row in problem.h_matrix]
    out += [f"f {n}", _fmt_row(problem.f_vector)]
    out.append(f"A_eq {me} {n}")
    out += [_fmt_row(row) for row in problem.a_eq]
    out += [f"b_eq {me}", _fmt_row(problem.b_eq)]
    out.append(f"A_ineq {mi} {n}")
    out += [_fmt_row(row) for row in problem.a_ineq]
    out += [f"b_ineq {mi}", _fmt_row(problem.b_ineq)]
    out += [f"lower {n}", _fmt_row(problem.lower)]
    out += [f"upper {n}", _fmt_row(problem.upper)]
    stream.write("\n".join(out) + "\n")


def read_qp_text(stream):
    lines = stream.read().split("\n")
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise QpDimensionError("unexpected end of QP dump")
        pos += 1
        return lines[pos - 1]

    def header(name, nums):
        parts = take().split()
        if not parts or parts[0] != name or len(parts) != nums + 1:
            raise QpDimensionError(f"expected '{name}' header at line {pos}")
        return [int(p) for p in parts[1:]]

    def row(length):
        vals = [float(t) for t in take().split()]
        if len(vals) != length:
            raise QpDimensionError(f"expected {length} values at line {pos}")
        return vals

    if take().strip() != _MAGIC:
        raise QpDimensionError("not a QP dump (bad magic line)")
    parts = take().split()
    n, me, mi = int(parts[1]), int(parts[3]), int(parts[5])
    offset = float(take().split()[1])
    header("H", 2)
    h = np.array([row(n) for _ in range(n)]).reshape(n, n)
    header("f", 1)
    f = np.array(row(n))
    header("A_eq", 2)
    a_eq = np.array([row(n) for _ in range(me)]).reshape(me, n)
    header("b_eq", 1)
    b_eq = np.array(row(me))
    header("A_ineq", 2)
    a_in = np.array([row(n) for _ in range(mi)]).reshape(mi, n)
    header("b_ineq", 1)
    b_in = np.array(row(mi))
    header("lower", 1)
    lo = np.array(row(n))
    header("upper", 1)
    up = np.array(row(n))
    return QpProblem(h, f, a_eq, b_eq, a_in, b_in, lo, up, offset)


def dump_qp(problem):
    buf = io.StringIO()
    write_qp_text(problem, buf)
    return buf.getvalue()


def load_qp(text):
    return read_qp_text(io.StringIO(text))
