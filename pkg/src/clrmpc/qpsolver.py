"""Dense convex QP / LP solver.

Primal-dual interior point with a Mehrotra-style predictor-corrector:
the affine direction supplies the second-order correction, the centering
parameter is the fixed barrier reduction factor 0.1, and steps take 0.99
of the distance to the positivity boundary.  Inequality blocks are
eliminated, so every iteration factors one dense symmetric system of size
n + m_eq:

    [ h + g' d^-1 g + delta I   a_eq' ] [dx]   [rhs_x]
    [ a_eq                    -delta I ] [dy] = [rhs_y]

with d = s / z the scaling from the current slack/dual pair.  The system is
positive definite when there are no equality rows (Cholesky), otherwise
symmetric indefinite (LDL' with Bunch-Kaufman pivoting).  One step of
iterative refinement keeps the direction usable when d is badly scaled.

Problems are declared infeasible only by evidence: a stalled iteration
triggers a phase-1 slack minimization, and the problem is infeasible when
the smallest achievable slack exceeds 1e-7 (scaled).  Everything is
deterministic; identical input yields bit-identical output.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, SolverFailure

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAXITER = "maxiter"

MAX_ITER = 200
STEP_FRACTION = 0.99
SIGMA = 0.1
TARGET_TOL = 1e-9
ACCEPT_TOL = 1e-7
REG = 1e-10


def _empty(n):
    return np.zeros((0, n))


@dataclass
class QpProblem:
    """min 0.5 x' h x + f' x  s.t.  a_eq x = b_eq,  a_in x <= b_in.

    h must be symmetric positive semidefinite; an LP is encoded with h = 0.
    Empty constraint blocks are represented by 0-row matrices.
    """

    h: np.ndarray
    f: np.ndarray
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None
    a_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).ravel()
        n = self.f.shape[0]
        self.h = np.asarray(self.h, dtype=float)
        if self.h.shape != (n, n):
            raise DimensionMismatch(f"h must be {n}x{n}, got {self.h.shape}")
        scale = 1.0 + float(np.abs(self.h).max(initial=0.0))
        if np.abs(self.h - self.h.T).max(initial=0.0) > 1e-9 * scale:
            raise DimensionMismatch("h must be symmetric")
        if self.a_eq is None:
            self.a_eq = _empty(n)
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.asarray(self.a_eq, dtype=float)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.a_in is None:
            self.a_in = _empty(n)
            self.b_in = np.zeros(0)
        else:
            self.a_in = np.asarray(self.a_in, dtype=float)
            self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        if self.a_eq.shape != (self.b_eq.shape[0], n):
            raise DimensionMismatch("a_eq/b_eq shapes inconsistent")
        if self.a_in.shape != (self.b_in.shape[0], n):
            raise DimensionMismatch("a_in/b_in shapes inconsistent")
        for name, arr in (("h", self.h), ("f", self.f), ("a_eq", self.a_eq),
                          ("b_eq", self.b_eq), ("a_in", self.a_in), ("b_in", self.b_in)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n(self):
        return self.f.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    eq_duals: np.ndarray
    in_duals: np.ndarray
    status: str
    iterations: int
    kkt_residual: float


class _SymFactor:
    """Factor a dense symmetric matrix once, solve many right-hand sides.

    Positive definite systems go through Cholesky; indefinite ones through
    LDL' where d is block diagonal with 1x1 / 2x2 pivots.
    """

    def __init__(self, kmat, spd):
        self._spd = False
        if spd:
            try:
                self._chol = sla.cho_factor(kmat, lower=True, check_finite=False)
                self._spd = True
                return
            except sla.LinAlgError:
                pass
        lu, d, perm = sla.ldl(kmat, check_finite=False)
        self._l = lu[perm]
        self._perm = perm
        self._d = d

    def solve(self, rhs):
        if self._spd:
            return sla.cho_solve(self._chol, rhs, check_finite=False)
        w = sla.solve_triangular(self._l, rhs[self._perm], lower=True,
                                 unit_diagonal=True, check_finite=False)
        v = self._block_solve(w)
        u = sla.solve_triangular(self._l.T, v, lower=False,
                                 unit_diagonal=True, check_finite=False)
        out = np.empty_like(u)
        out[self._perm] = u
        return out

    def _block_solve(self, w):
        d = self._d
        n = d.shape[0]
        v = np.empty_like(w)
        i = 0
        while i < n:
            if i + 1 < n and d[i + 1, i] != 0.0:
                a, b, c = d[i, i], d[i + 1, i], d[i + 1, i + 1]
                det = a * c - b * b
                w0, w1 = w[i], w[i + 1]
                v[i] = (c * w0 - b * w1) / det
                v[i + 1] = (-b * w0 + a * w1) / det
                i += 2
            else:
                v[i] = w[i] / d[i, i]
                i += 1
        return v


def _finite_solve(kmat, fac, rhs):
    """Factor solve plus one refinement; least squares if pivots blew up."""
    with np.errstate(divide="ignore", invalid="ignore"):
        sol = fac.solve(rhs)
    if np.all(np.isfinite(sol)):
        return sol + fac.solve(rhs - kmat @ sol)
    sol, *_ = np.linalg.lstsq(kmat, rhs, rcond=None)
    return sol


def _solve_kkt(hbar, a_eq, rhs_x, rhs_y, reg):
    """Solve the reduced symmetric KKT system with one refinement pass."""
    n = hbar.shape[0]
    me = a_eq.shape[0]
    if me == 0:
        kmat = hbar + reg * np.eye(n)
        fac = _SymFactor(kmat, spd=True)
        dx = _finite_solve(kmat, fac, rhs_x)
        return dx, np.zeros(0)
    kmat = np.zeros((n + me, n + me))
    kmat[:n, :n] = hbar + reg * np.eye(n)
    kmat[:n, n:] = a_eq.T
    kmat[n:, :n] = a_eq
    kmat[n:, n:] = -reg * np.eye(me)
    fac = _SymFactor(kmat, spd=False)
    rhs = np.concatenate([rhs_x, rhs_y])
    sol = _finite_solve(kmat, fac, rhs)
    return sol[:n], sol[n:]


def _max_step(v, dv):
    """Step of 0.99 times the distance to the boundary v + alpha dv = 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, STEP_FRACTION * np.min(-v[neg] / dv[neg])))


def _ipm(h, f, a_eq, b_eq, a_in, b_in, max_iter=MAX_ITER):
    """Core iteration. Returns (x, y, z, status, iters, residual_triplet)."""
    n = f.shape[0]
    me = a_eq.shape[0]
    mi = a_in.shape[0]

    scale_p = 1.0 + max(
        float(np.abs(b_eq).max(initial=0.0)), float(np.abs(b_in).max(initial=0.0))
    )
    scale_d = 1.0 + max(
        float(np.abs(f).max(initial=0.0)), float(np.abs(h).max(initial=0.0))
    )
    reg = REG * scale_d

    # equality-only problems collapse to a single saddle-point solve
    if mi == 0:
        x = np.zeros(n)
        y = np.zeros(me)
        for _ in range(3):
            rd = h @ x + f + (a_eq.T @ y if me else 0.0)
            re = a_eq @ x - b_eq
            dx, dy = _solve_kkt(h, a_eq, -rd, -re, reg)
            x = x + dx
            y = y + dy
        rd = float(np.abs(h @ x + f + (a_eq.T @ y if me else 0.0)).max(initial=0.0))
        re = float(np.abs(a_eq @ x - b_eq).max(initial=0.0))
        ok = rd <= ACCEPT_TOL * scale_d and re <= ACCEPT_TOL * scale_p
        return x, y, np.zeros(0), OPTIMAL if ok else MAXITER, 1, (rd, re, 0.0)

    if me:
        x0, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
        x = x0
    else:
        x = np.zeros(n)
    y = np.zeros(me)
    s = np.maximum(1.0, b_in - a_in @ x)
    z = np.ones(mi)

    status = MAXITER
    it = 0
    mu_hist = []
    res = (np.inf, np.inf, np.inf)
    for it in range(1, max_iter + 1):
        rd = h @ x + f + a_in.T @ z + (a_eq.T @ y if me else 0.0)
        re = a_eq @ x - b_eq if me else np.zeros(0)
        ri = a_in @ x + s - b_in
        mu = float(s @ z) / mi
        obj = 0.5 * float(x @ (h @ x)) + float(f @ x)

        nrd = float(np.abs(rd).max(initial=0.0))
        nre = float(np.abs(re).max(initial=0.0))
        nri = float(np.abs(ri).max(initial=0.0))
        res = (nrd, max(nre, nri), mu)
        gap_scale = 1.0 + abs(obj)
        if (
            nrd <= TARGET_TOL * scale_d
            and nre <= TARGET_TOL * scale_p
            and nri <= TARGET_TOL * scale_p
            and mu <= TARGET_TOL * gap_scale
        ):
            status = OPTIMAL
            break

        # divergence guard
        if not np.isfinite(mu) or mu > 1e16 or float(np.abs(x).max(initial=0.0)) > 1e14 * scale_p:
            status = MAXITER
            break

        mu_hist.append((mu, nrd, nre + nri))
        if len(mu_hist) > 8:
            prev = mu_hist[-8]
            cur = mu_hist[-1]
            if cur[0] > 0.9 * prev[0] and cur[1] > 0.9 * prev[1] + TARGET_TOL and cur[2] >= 0.9 * prev[2]:
                status = MAXITER
                break

        d = np.clip(s / z, 1e-16, 1e16)
        gd = a_in / d[:, None]
        hbar = h + gd.T @ a_in

        # predictor: pure Newton on the KKT equations
        rc = s * z
        r3 = -ri + rc / z
        rhs_x = -rd + gd.T @ r3
        dx_a, _ = _solve_kkt(hbar, a_eq, rhs_x, -re, reg)
        dz_a = (a_in @ dx_a - r3) / d
        ds_a = -ri - a_in @ dx_a

        # corrector with fixed centering
        rc = s * z + ds_a * dz_a - SIGMA * mu
        r3 = -ri + rc / z
        rhs_x = -rd + gd.T @ r3
        dx, dy = _solve_kkt(hbar, a_eq, rhs_x, -re, reg)
        dz = (a_in @ dx - r3) / d
        ds = -ri - a_in @ dx
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds))
                and np.all(np.isfinite(dz))):
            status = MAXITER
            break
        ap = _max_step(s, ds)
        ad = _max_step(z, dz)
        if ap <= 1e-12 and ad <= 1e-12:
            status = MAXITER
            break

        x = x + ap * dx
        s = np.maximum(s + ap * ds, 1e-300)
        z = np.maximum(z + ad * dz, 1e-300)
        if me:
            y = y + ad * dy

    else:
        it = max_iter

    if status != OPTIMAL:
        # accept a stalled point that still meets the contract tolerance
        if (
            res[0] <= ACCEPT_TOL * scale_d
            and res[1] <= ACCEPT_TOL * scale_p
            and res[2] <= ACCEPT_TOL * (1.0 + abs(0.5 * float(x @ (h @ x)) + float(f @ x)))
        ):
            status = OPTIMAL
    return x, y, z, status, it, res


def _crossover(prob, x, y, z):
    """Jump from an interior point to the exact KKT point of its active set.

    The complementarity split of the interior solution guesses the active
    inequalities; the equality-constrained KKT system on that guess is
    solved directly and the result is accepted only if it satisfies every
    optimality condition, otherwise None is returned.
    """
    n = prob.n
    me = prob.a_eq.shape[0]
    mi = prob.a_in.shape[0]
    if mi == 0:
        return None
    slack = prob.b_in - prob.a_in @ x
    active = np.flatnonzero(z >= slack)
    if active.size > 3 * n + me:
        return None
    a_act = prob.a_in[active]
    dim = n + me + active.size
    kmat = np.zeros((dim, dim))
    kmat[:n, :n] = prob.h
    kmat[:n, n:n + me] = prob.a_eq.T
    kmat[:n, n + me:] = a_act.T
    kmat[n:n + me, :n] = prob.a_eq
    kmat[n + me:, :n] = a_act
    rhs = np.concatenate([-prob.f, prob.b_eq, prob.b_in[active]])
    # solve in deviation form so a singular KKT system (optimal face, not
    # vertex) yields the solution nearest the almost-feasible interior point
    cur = np.concatenate([x, y, z[active]])
    delta, *_ = np.linalg.lstsq(kmat, rhs - kmat @ cur, rcond=None)
    sol = cur + delta
    xp = sol[:n]
    yp = sol[n:n + me]
    lam = sol[n + me:]

    scale_p = 1.0 + max(
        float(np.abs(prob.b_eq).max(initial=0.0)),
        float(np.abs(prob.b_in).max(initial=0.0)),
    )
    scale_d = 1.0 + max(
        float(np.abs(prob.f).max(initial=0.0)), float(np.abs(prob.h).max(initial=0.0))
    )
    zp = np.zeros(mi)
    zp[active] = lam
    rd = float(np.abs(prob.h @ xp + prob.f + prob.a_in.T @ zp
                      + (prob.a_eq.T @ yp if me else 0.0)).max(initial=0.0))
    re = float(np.abs(prob.a_eq @ xp - prob.b_eq).max(initial=0.0)) if me else 0.0
    ri = float((prob.a_in @ xp - prob.b_in).max(initial=0.0))
    if rd > TARGET_TOL * scale_d or re > TARGET_TOL * scale_p or ri > TARGET_TOL * scale_p:
        return None
    if lam.size and lam.min() < -TARGET_TOL * scale_d:
        return None
    obj_new = 0.5 * float(xp @ (prob.h @ xp)) + float(prob.f @ xp)
    comp = float(np.abs(zp * (prob.b_in - prob.a_in @ xp)).max(initial=0.0))
    if comp > TARGET_TOL * scale_d * (1.0 + abs(obj_new)):
        return None
    return xp, yp, np.maximum(zp, 0.0), (rd, max(re, max(ri, 0.0)), 0.0)


def solve_qp(prob, max_iter=MAX_ITER, diagnose=True, polish=True):
    """Solve a QpProblem; statuses: optimal, infeasible, unbounded, maxiter.

    On optimal the KKT conditions hold to 1e-7 scaled by (1 + data norms).
    Infeasibility and unboundedness are certified by auxiliary LPs rather
    than guessed from divergence.  With polish the interior solution is
    snapped to the exact solution of its active-set KKT system whenever
    that system checks out, removing the interior-point gap floor.
    """
    x, y, z, status, it, res = _ipm(
        prob.h, prob.f, prob.a_eq, prob.b_eq, prob.a_in, prob.b_in, max_iter
    )

    if status in (OPTIMAL, MAXITER) and polish:
        # a complete KKT certificate also rescues stalled-but-close points
        polished = _crossover(prob, x, y, z)
        if polished is not None:
            x, y, z, res = polished
            status = OPTIMAL

    if status != OPTIMAL and diagnose:
        feasible, slack, _ = _phase1(prob.a_in, prob.b_in, prob.a_eq, prob.b_eq)
        if not feasible:
            status = INFEASIBLE
        elif float(np.abs(prob.h).max(initial=0.0)) == 0.0 and _has_ray(prob):
            status = UNBOUNDED

    obj = 0.5 * float(x @ (prob.h @ x)) + float(prob.f @ x)
    return QpSolution(
        x=x,
        objective=obj,
        eq_duals=y,
        in_duals=np.maximum(z, 0.0) if z.size else z,
        status=status,
        iterations=it,
        kkt_residual=float(max(res)),
    )


def linear_program(f, a_in=None, b_in=None, a_eq=None, b_eq=None, max_iter=MAX_ITER, diagnose=True):
    """LP front end: min f' x subject to the supplied constraint blocks."""
    f = np.asarray(f, dtype=float).ravel()
    n = f.shape[0]
    prob = QpProblem(h=np.zeros((n, n)), f=f, a_eq=a_eq, b_eq=b_eq, a_in=a_in, b_in=b_in)
    return solve_qp(prob, max_iter=max_iter, diagnose=diagnose)


def _phase1(a_in, b_in, a_eq, b_eq):
    """min gamma >= 0 with a_in x <= b_in + gamma.  Always feasible."""
    n = a_in.shape[1] if a_in.size else (a_eq.shape[1] if a_eq.size else 0)
    mi = a_in.shape[0]
    me = a_eq.shape[0]
    if me:
        xls, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
        if np.abs(a_eq @ xls - b_eq).max(initial=0.0) > ACCEPT_TOL * (
            1.0 + np.abs(b_eq).max(initial=0.0)
        ) * (1.0 + np.abs(xls).max(initial=0.0)):
            return False, float("inf"), None
    f = np.zeros(n + 1)
    f[-1] = 1.0
    g = np.zeros((mi + 1, n + 1))
    g[:mi, :n] = a_in
    g[:mi, -1] = -1.0
    g[mi, -1] = -1.0
    hvec = np.concatenate([b_in, [0.0]])
    aeq = np.hstack([a_eq, np.zeros((me, 1))]) if me else None
    x, yy, zz, status, it, res = _ipm(
        np.zeros((n + 1, n + 1)), f, aeq if aeq is not None else _empty(n + 1),
        b_eq if me else np.zeros(0), g, hvec, MAX_ITER
    )
    if status != OPTIMAL:
        raise SolverFailure("phase-1 slack minimization stalled")
    slack = float(x[-1])
    feasible = slack <= ACCEPT_TOL * (1.0 + float(np.abs(b_in).max(initial=0.0)))
    return feasible, slack, x[:n]


def _has_ray(prob):
    """Certify LP unboundedness: a bounded ray with negative cost."""
    n = prob.n
    mi = prob.a_in.shape[0]
    me = prob.a_eq.shape[0]
    g = np.vstack([prob.a_in, np.eye(n), -np.eye(n)])
    hvec = np.concatenate([np.zeros(mi), np.ones(2 * n)])
    aeq = prob.a_eq if me else None
    sol = linear_program(prob.f, a_in=g, b_in=hvec, a_eq=aeq,
                         b_eq=prob.b_eq * 0.0 if me else None, diagnose=False)
    scale = 1.0 + float(np.abs(prob.f).max(initial=0.0))
    return sol.status == OPTIMAL and sol.objective < -1e-8 * scale


def check_feasible(a_in, b_in, a_eq=None, b_eq=None):
    """Phase-1 feasibility test for a_in x <= b_in, a_eq x = b_eq.

    Returns (feasible, slack, x) where slack is the minimized uniform
    relaxation of the inequalities; feasible iff slack <= 1e-7 scaled.
    Raises SolverFailure when the underlying LP stalls.
    """
    a_in = np.asarray(a_in, dtype=float)
    b_in = np.asarray(b_in, dtype=float).ravel()
    if a_eq is not None:
        a_eq = np.asarray(a_eq, dtype=float)
        b_eq = np.asarray(b_eq, dtype=float).ravel()
    else:
        a_eq = _empty(a_in.shape[1])
        b_eq = np.zeros(0)
    return _phase1(a_in, b_in, a_eq, b_eq)
