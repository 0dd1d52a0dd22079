"""Offline synthesis of constraint tightenings, gains, and multipliers.

The offline problem couples three groups of unknowns: the tightening
vector t (one entry per stacked constraint row), per-vertex feedback
gains that shape candidate successor plans, and per-vertex nonnegative
multipliers certifying, row by row, that every plan admitted by the
tightened feasible set can be continued one step later for every
disturbance and every uncertainty vertex.  The only nonconvex coupling
is the product of the multipliers with t, so the program is solved by
alternating two convex steps:

* multiplier step: with t fixed, choose gains minimizing the worst
  row-wise containment slack.  The slack of one row is a support
  function of the joint plan-disturbance polytope evaluated at a
  direction affine in the gains, so the step is a minimax over support
  values and is solved with a proximal cutting-plane scheme; the cuts
  come from small support LPs, and the multipliers are recovered from
  the duals of those LPs at the final gains.
* tightening step: with multipliers fixed, a single QP shrinks ||t||^2
  while growing a certified l1 ball of feasible initial states.

The alternation starts from a classical additive-disturbance tightening
computed under the terminal feedback, scaled up until the multiplier
step certifies it, and never accepts an objective increase.
"""

import ast
from dataclasses import dataclass, field

import numpy as np

from . import model, prediction, qpsolver, terminal
from .errors import (
    FingerprintMismatch,
    Infeasible,
    InitialGuessInfeasible,
    ModelFormatError,
    NoProgress,
    SolverFailure,
)
from .linalg import solve_dare
from .utils import parallel_map

SIGMA_GATE = 1e-7
ALPHA_MIN = 1e-9
RESIDUAL_TOL = 1e-6
PROX_WEIGHT = 1e-6
MAX_ROUNDS = 60
STALL_LIMIT = 15
POOL_CAP = 4000
CUT_FEAS_TOL = 1e-9
GUESS_SCALES = (1.0, 2.0, 4.0, 8.0)
CERT_HEADER = "# robust mpc certificate, toolkit text format v1"


@dataclass
class SynthesisConfig:
    """Knobs of the offline phase; defaults match the benchmark setup."""

    n: int = 5
    k_prime: int = 2
    mu: float = 2.0
    epsilon: float = 0.1
    init_scale: float = 1.7
    max_alternations: int = 20
    convergence_tol: float = 1e-6
    q_x: np.ndarray = None
    q_u: np.ndarray = None

    def __post_init__(self):
        if self.n < 1 or self.k_prime < 0 or self.max_alternations < 1:
            raise ValueError("n >= 1, k_prime >= 0, max_alternations >= 1 required")
        if self.mu <= 0 or self.epsilon <= 0 or self.convergence_tol <= 0:
            raise ValueError("mu, epsilon, convergence_tol must be positive")
        if self.init_scale < 1.0:
            raise ValueError("init_scale must be at least 1")

    def weights(self, sys):
        q_x = np.eye(sys.n_x) if self.q_x is None else np.asarray(self.q_x, float)
        q_u = np.eye(sys.n_u) if self.q_u is None else np.asarray(self.q_u, float)
        return q_x, q_u


@dataclass
class MultiplierStep:
    gains: list
    multipliers: list
    max_residual: float
    sigmas: np.ndarray
    pools: list


@dataclass
class TighteningStep:
    tightenings: np.ndarray
    gains: list
    alpha: float
    objective: float


@dataclass
class Certificate:
    """Everything the online controller and the verifier need."""

    tightenings: np.ndarray
    gains: list
    multipliers: list
    terminal: terminal.TerminalSet
    cost: terminal.TerminalCost
    alpha: float
    objective: float
    n: int
    q_x: np.ndarray
    q_u: np.ndarray
    fingerprint: str = ""


def _w_support(w, d):
    """Support value and a maximizer of direction d over the polytope w."""
    box = model._box_bounds(w)
    if box is not None:
        lo, hi = box
        point = np.where(d > 0, hi, np.where(d < 0, lo, 0.5 * (lo + hi)))
        return float(d @ point), point
    sol = qpsolver.linear_program(-d, a_in=w.h, b_in=w.b)
    if sol.status != qpsolver.OPTIMAL:
        raise SolverFailure(f"disturbance support LP ended {sol.status}")
    return -sol.objective, sol.x


def _w_support_dual(w, d):
    """Nonnegative row weights over w's rows reproducing direction d."""
    lam = np.zeros(w.h.shape[0])
    if np.abs(d).max(initial=0.0) < 1e-14:
        return lam
    box = model._box_bounds(w)
    if box is not None:
        # every row touches one coordinate; route d through the binding rows
        for i in range(w.dim):
            if d[i] > 0:
                rows = [r for r in range(w.h.shape[0]) if w.h[r, i] > 0]
                r = min(rows, key=lambda r: w.b[r] / w.h[r, i])
                lam[r] = d[i] / w.h[r, i]
            elif d[i] < 0:
                rows = [r for r in range(w.h.shape[0]) if w.h[r, i] < 0]
                r = min(rows, key=lambda r: w.b[r] / -w.h[r, i])
                lam[r] = d[i] / w.h[r, i]
        return lam
    sol = qpsolver.linear_program(
        w.b, a_in=-np.eye(w.h.shape[0]), b_in=np.zeros(w.h.shape[0]),
        a_eq=w.h.T, b_eq=d,
    )
    if sol.status != qpsolver.OPTIMAL:
        raise SolverFailure(f"disturbance dual LP ended {sol.status}")
    return np.maximum(sol.x, 0.0)


def _plan_support(a_lp, bt, d):
    """Support of direction d over the tightened plan polytope.

    Returns (value, maximizer, row duals); the duals are the Farkas
    weights with a_lp' duals = d.
    """
    if np.abs(d).max(initial=0.0) < 1e-14:
        return 0.0, np.zeros(a_lp.shape[1]), np.zeros(a_lp.shape[0])
    sol = qpsolver.linear_program(-d, a_in=a_lp, b_in=bt)
    if sol.status == qpsolver.UNBOUNDED:
        raise SolverFailure("plan polytope unbounded along a containment direction")
    if sol.status != qpsolver.OPTIMAL:
        raise SolverFailure(f"plan support LP ended {sol.status}")
    return -sol.objective, sol.x, sol.in_duals


@dataclass
class _VertexMaps:
    """Affine decomposition of the successor constraint rows in the gains."""

    base_k: np.ndarray
    base_m: np.ndarray
    p_k: np.ndarray
    p_u: np.ndarray


def _vertex_maps(bundle, sys, vertex):
    zero = prediction.zero_gains(bundle.n, bundle.n_x, bundle.n_u)
    c_k0, c_m0 = prediction.build_gain_matrices(bundle, zero, sys, vertex)
    n, n_x, n_u = bundle.n, bundle.n_x, bundle.n_u
    term_cols = bundle.h_xu[:, n * n_x:(n + 1) * n_x]
    p_k = term_cols @ sys.b + bundle.h_xu[:, bundle.n_rows - n_u:]
    p_u = bundle.h_xu @ bundle.s_u
    return _VertexMaps(bundle.h_xu @ c_k0, bundle.h_xu @ c_m0, p_k, p_u)


def _pack_gains(g):
    return np.concatenate([g.k_term.ravel(), g.m_gains.ravel(), g.k_delta.ravel()])


def _unpack_gains(vec, n, n_x, n_u):
    a = n_u * n_x
    b = a + n * n_u * n_x
    return prediction.GainSet(
        k_term=vec[:a].reshape(n_u, n_x).copy(),
        m_gains=vec[a:b].reshape(n * n_u, n_x).copy(),
        k_delta=vec[b:].reshape(n * n_u, n_x + n_u).copy(),
    )


def _cut_coeffs(maps, term, sys, bundle, r, y_s, y_w):
    """Row-r successor support at plan point (y_s, y_w) as affine(gains)."""
    tau = term @ y_s
    eta = y_s[:bundle.n_x + bundle.n_u]
    zeta = sys.b_w @ y_w
    coef = np.concatenate([
        np.outer(maps.p_k[r], tau).ravel(),
        np.outer(maps.p_u[r], zeta).ravel(),
        np.outer(maps.p_u[r], eta).ravel(),
    ])
    const = float(maps.base_k[r] @ y_s + maps.base_m[r] @ y_w)
    return coef, const


def _separate(bundle, sys, w, a_lp, bt, vertex, gains):
    """Exact row slacks of the containment at the given gains."""
    c_k, c_m = prediction.build_gain_matrices(bundle, gains, sys, vertex)
    rhs = bundle.h_xu @ np.hstack([c_k, c_m])
    n_s = bundle.n_s
    sigmas = np.empty(bundle.n_t)
    points = []
    for r in range(bundle.n_t):
        v_s, y_s, _ = _plan_support(a_lp, bt, rhs[r, :n_s])
        v_w, y_w = _w_support(w, rhs[r, n_s:])
        sigmas[r] = v_s + v_w - bt[r]
        points.append((y_s, y_w))
    return sigmas, points


def _solve_master(cuts, bt_min, g_center):
    """Prox-regularized minimax over the collected cuts."""
    n_g = g_center.size
    h = np.zeros((n_g + 1, n_g + 1))
    h[:n_g, :n_g] = PROX_WEIGHT * np.eye(n_g)
    f = np.concatenate([-PROX_WEIGHT * g_center, [1.0]])
    a = np.zeros((len(cuts) + 1, n_g + 1))
    b = np.empty(len(cuts) + 1)
    a[0, n_g] = -1.0
    b[0] = bt_min  # plan 0 with disturbance 0 gives slack -bt_r on every row
    for i, (coef, cut_b) in enumerate(cuts, start=1):
        a[i, :n_g] = coef
        a[i, n_g] = -1.0
        b[i] = cut_b
    sol = qpsolver.solve_qp(qpsolver.QpProblem(h=h, f=f, a_in=a, b_in=b))
    if sol.status != qpsolver.OPTIMAL:
        raise SolverFailure(f"multiplier master QP ended {sol.status}")
    return sol.x[:n_g], float(sol.x[n_g])


def _vertex_multiplier(bundle, sys, w, a_lp, bt, vertex, warm, pool, target):
    """Cutting-plane gain search plus dual recovery for one vertex."""
    maps = _vertex_maps(bundle, sys, vertex)
    term = bundle.term_rows()
    n_t = bundle.n_t

    entries = {}
    for key, (r, y_s, y_w) in (pool or {}).items():
        # stale plan points outside the new tightened set give invalid cuts
        if (a_lp @ y_s - bt).max() <= CUT_FEAS_TOL:
            entries[key] = (r, y_s, y_w)

    def add_point(r, y_s, y_w):
        if max(np.abs(y_s).max(initial=0.0), np.abs(y_w).max(initial=0.0)) < 1e-14:
            return
        key = (r, y_s.tobytes(), y_w.tobytes())
        if key not in entries:
            entries[key] = (r, y_s.copy(), y_w.copy())

    def cuts_for(bt_vec):
        out = []
        for r, y_s, y_w in entries.values():
            coef, const = _cut_coeffs(maps, term, sys, bundle, r, y_s, y_w)
            out.append((coef, bt_vec[r] - const))
        return out

    g_best = _pack_gains(warm)
    sigmas, points = _separate(bundle, sys, w, a_lp, bt, vertex,
                               _unpack_gains(g_best, bundle.n, bundle.n_x, bundle.n_u))
    sigma_best = float(sigmas.max())
    for r in range(n_t):
        add_point(r, *points[r])

    stall = 0
    rounds = 1
    while not (target is not None and sigma_best <= target) and rounds < MAX_ROUNDS:
        g_new, sigma_pred = _solve_master(cuts_for(bt), float(bt.min()), g_best)
        sigmas, points = _separate(bundle, sys, w, a_lp, bt, vertex,
                                   _unpack_gains(g_new, bundle.n, bundle.n_x, bundle.n_u))
        sigma_new = float(sigmas.max())
        for r in range(n_t):
            if sigmas[r] > sigma_pred + 1e-10:
                add_point(r, *points[r])
        rounds += 1
        if sigma_new < sigma_best - 1e-10:
            g_best, sigma_best = g_new, sigma_new
            stall = 0
        else:
            stall += 1
        if sigma_new - sigma_pred <= 1e-9 * (1.0 + abs(sigma_new)):
            break  # the cut model is exact here; the master cannot improve
        if stall >= STALL_LIMIT:
            break

    gains = _unpack_gains(g_best, bundle.n, bundle.n_x, bundle.n_u)
    c_k, c_m = prediction.build_gain_matrices(bundle, gains, sys, vertex)
    rhs = bundle.h_xu @ np.hstack([c_k, c_m])
    n_s = bundle.n_s
    lam = np.zeros((n_t, n_t + w.h.shape[0]))
    sigma_fin = -np.inf
    for r in range(n_t):
        d_s, d_w = rhs[r, :n_s], rhs[r, n_s:]
        v_s, _, duals = _plan_support(a_lp, bt, d_s)
        lam_w = _w_support_dual(w, d_w)
        lam[r, :n_t] = duals
        lam[r, n_t:] = lam_w
        sigma_fin = max(sigma_fin, v_s + float(w.b @ lam_w) - bt[r])

    eq = np.hstack([lam[:, :n_t] @ a_lp, lam[:, n_t:] @ w.h])
    eq_res = float(np.abs(eq - rhs).max())
    if len(entries) > POOL_CAP:
        keys = list(entries)[-POOL_CAP:]
        entries = {k: entries[k] for k in keys}
    return gains, lam, float(sigma_fin), entries, eq_res


def initial_guess(bundle, sys, w, cfg, k_y=None):
    """Additive-disturbance tightening under the terminal feedback.

    Stage block i accumulates the worst-case effect of i past
    disturbances on each constraint row when the loop is closed with
    k_y.  Terminal block i encodes the same stage constraint pushed to
    closed-loop time n+i, so it accumulates depth n+i along the base
    row directions.  The whole vector is inflated by cfg.init_scale;
    block 0 stays zero.
    """
    n, n_x, n_u, n_c = bundle.n, bundle.n_x, bundle.n_u, bundle.n_c
    if k_y is None:
        q_x, q_u = cfg.weights(sys)
        _, gain = solve_dare(sys.a, sys.b, q_x, q_u)
        k_y = -gain
    a_k = sys.a + sys.b @ k_y
    fgk = bundle.h_xu[:n_c, :n_x] + bundle.h_xu[:n_c, (n + 1) * n_x:(n + 1) * n_x + n_u] @ k_y
    k_prime = bundle.n_y // n_c - 1

    mats = []
    power = np.eye(n_x)
    for _ in range(n + k_prime):
        mats.append(power @ sys.b_w)
        power = a_k @ power

    def accumulate(depth):
        t_block = np.zeros(n_c)
        for l in range(depth):
            dirs = fgk @ mats[l]
            for r in range(n_c):
                value, _ = _w_support(w, dirs[r])
                t_block[r] += value
        return t_block

    blocks = [accumulate(i) for i in range(n)]
    blocks.extend(accumulate(n + i) for i in range(k_prime + 1))
    return np.concatenate(blocks) * cfg.init_scale


def solve_multiplier_step(bundle, sys, w, t_fixed, warm_gains=None, pools=None,
                          target=None):
    """Best gains and Farkas multipliers at a fixed tightening vector.

    Returns the per-vertex gains, the recovered multipliers, and the
    worst containment slack sigma over all vertices; sigma <= 0 means
    the tightened set is recursively feasible as it stands.
    """
    t_fixed = np.asarray(t_fixed, dtype=float).ravel()
    bt = bundle.b_stack - t_fixed
    if bt.min() < -1e-12:
        raise ValueError("tightenings exceed the constraint offsets")
    a_lp = bundle.h_xu @ bundle.s_mat
    n_delta = len(sys.deltas)
    if warm_gains is None:
        warm_gains = [prediction.zero_gains(bundle.n, bundle.n_x, bundle.n_u)
                      for _ in range(n_delta)]
    if pools is None:
        pools = [None] * n_delta

    def run(j):
        return _vertex_multiplier(bundle, sys, w, a_lp, bt, j,
                                  warm_gains[j], pools[j], target)

    results = parallel_map(run, range(n_delta))
    gains = [r[0] for r in results]
    multipliers = [r[1] for r in results]
    sigmas = np.array([r[2] for r in results])
    eq_res = max(r[4] for r in results)
    if eq_res > RESIDUAL_TOL:
        raise SolverFailure(f"multiplier equality residual {eq_res:.3e}")
    return MultiplierStep(
        gains=gains,
        multipliers=multipliers,
        max_residual=float(sigmas.max()),
        sigmas=sigmas,
        pools=[r[3] for r in results],
    )


def solve_tightening_step(bundle, sys, w, multipliers, cfg, gains=None):
    """Shrink the tightenings and grow the certified l1 ball, gains held.

    With the multipliers fixed the containment condition is linear in t,
    and the gains only enter through equalities that the fixed gains
    already satisfy, so they are not re-optimized here.
    """
    n_t, n_x, n_c = bundle.n_t, bundle.n_x, bundle.n_c
    n_plan = bundle.n * bundle.n_u
    n_ball = 2 * n_x
    n_z = n_t + 1 + n_ball * n_plan
    idx_a = n_t

    h = np.zeros((n_z, n_z))
    h[:n_t, :n_t] = 2.0 * np.eye(n_t)
    f = np.zeros(n_z)
    f[idx_a] = -cfg.mu

    rows_a = []
    rows_b = []

    block = np.zeros((n_c, n_z))
    block[:, :n_c] = -np.eye(n_c)
    rows_a.append(block)  # the applied-step tightening stays nonnegative
    rows_b.append(np.zeros(n_c))

    block = np.zeros((n_t, n_z))
    block[:, :n_t] = np.eye(n_t)
    rows_a.append(block)  # tightening may not exceed the constraint offsets
    rows_b.append(bundle.b_stack.copy())

    block = np.zeros((1, n_z))
    block[0, idx_a] = -1.0
    rows_a.append(block)
    rows_b.append(np.array([-ALPHA_MIN]))

    for lam in multipliers:
        if lam.min(initial=0.0) < -1e-12:
            raise ValueError("multipliers must be elementwise nonnegative")
        lam_s = lam[:, :n_t]
        lam_w = lam[:, n_t:]
        block = np.zeros((n_t, n_z))
        block[:, :n_t] = np.eye(n_t) - lam_s
        rows_a.append(block)
        rows_b.append(bundle.b_stack - lam_s @ bundle.b_stack - lam_w @ w.b)

    h_sx = bundle.h_xu @ bundle.s_x
    h_su = bundle.h_xu @ bundle.s_u
    for j in range(n_x):
        for sign in (1.0, -1.0):
            i_ball = 2 * j + (0 if sign > 0 else 1)
            block = np.zeros((n_t, n_z))
            block[:, :n_t] = np.eye(n_t)
            block[:, idx_a] = sign * h_sx[:, j]
            cols = n_t + 1 + i_ball * n_plan
            block[:, cols:cols + n_plan] = h_su
            rows_a.append(block)
            rows_b.append(bundle.b_stack.copy())

    prob = qpsolver.QpProblem(h=h, f=f, a_in=np.vstack(rows_a),
                              b_in=np.concatenate(rows_b))
    sol = qpsolver.solve_qp(prob)
    if sol.status == qpsolver.INFEASIBLE:
        raise Infeasible("tightening step infeasible at the fixed multipliers")
    if sol.status != qpsolver.OPTIMAL:
        raise SolverFailure(f"tightening QP ended {sol.status}")
    t_new = sol.x[:n_t]
    alpha = float(sol.x[idx_a])
    objective = float(t_new @ t_new - cfg.mu * alpha)
    return TighteningStep(tightenings=t_new, gains=gains, alpha=alpha,
                          objective=objective)


def _consistency_residuals(bundle, sys, w, t, gains, multipliers):
    """Recompute both Farkas residual families from the raw pieces."""
    a_lp = bundle.h_xu @ bundle.s_mat
    bt = bundle.b_stack - t
    stacked = np.concatenate([bt, w.b])
    eq_res = 0.0
    in_res = 0.0
    for j, (g, lam) in enumerate(zip(gains, multipliers)):
        c_k, c_m = prediction.build_gain_matrices(bundle, g, sys, j)
        rhs = bundle.h_xu @ np.hstack([c_k, c_m])
        lhs = np.hstack([lam[:, :bundle.n_t] @ a_lp, lam[:, bundle.n_t:] @ w.h])
        eq_res = max(eq_res, float(np.abs(lhs - rhs).max()))
        in_res = max(in_res, float((lam @ stacked - bt).max()))
    return eq_res, max(in_res, 0.0)


def synthesize(sys, w, c, cfg, trace=None):
    """Run the full offline phase and return a checked Certificate.

    When trace is a list, every accepted alternation objective is
    appended to it, oldest first.
    """
    issues = model.validate(sys, w, c)
    if issues:
        raise ModelFormatError("model rejected: " + "; ".join(issues))
    q_x, q_u = cfg.weights(sys)
    ts = terminal.build_terminal_set(sys, c, cfg.k_prime, q_x=q_x, q_u=q_u)
    bundle = prediction.build_bundle(sys, c, ts.y, ts.z, cfg.n)
    base = initial_guess(bundle, sys, w, cfg, k_y=ts.k_y)
    warm = []
    for _ in sys.deltas:
        g = prediction.zero_gains(cfg.n, sys.n_x, sys.n_u)
        g.k_term = ts.k_y.copy()
        warm.append(g)

    step = None
    t_cur = None
    best_sigma = np.inf
    for scale in GUESS_SCALES:
        t_try = base * scale
        if np.any(bundle.b_stack - t_try < 0):
            continue
        ms = solve_multiplier_step(bundle, sys, w, t_try, warm_gains=warm,
                                   target=0.0)
        best_sigma = min(best_sigma, ms.max_residual)
        if ms.max_residual <= SIGMA_GATE:
            step = ms
            t_cur = t_try
            break
    if step is None:
        raise InitialGuessInfeasible(
            f"no scaled initial tightening certified; best slack {best_sigma:.3e}")

    gains, lambdas, pools = step.gains, step.multipliers, step.pools
    alpha = None
    objective = np.inf
    for it in range(cfg.max_alternations):
        try:
            tstep = solve_tightening_step(bundle, sys, w, lambdas, cfg, gains=gains)
        except Infeasible:
            if alpha is None:
                raise NoProgress("first tightening step infeasible at the "
                                 "initial multipliers") from None
            break
        if tstep.objective > objective + 1e-9 * (1.0 + abs(objective)):
            break  # alternation may not increase the accepted objective
        improvement = objective - tstep.objective
        t_cur, alpha, objective = tstep.tightenings, tstep.alpha, tstep.objective
        if trace is not None:
            trace.append(objective)
        if improvement < cfg.convergence_tol or it == cfg.max_alternations - 1:
            break
        ms = solve_multiplier_step(bundle, sys, w, t_cur, warm_gains=gains,
                                   pools=pools)
        gains, lambdas, pools = ms.gains, ms.multipliers, ms.pools
    if alpha is None:
        raise NoProgress("alternation produced no feasible tightening step")

    tc = terminal.synthesize_terminal_cost(bundle, gains, sys, q_x, q_u,
                                           cfg.epsilon)
    eq_res, in_res = _consistency_residuals(bundle, sys, w, t_cur, gains, lambdas)
    if max(eq_res, in_res) > RESIDUAL_TOL:
        raise SolverFailure(
            f"certificate residuals too large: {eq_res:.3e}, {in_res:.3e}")
    fingerprint = model.model_fingerprint(model.write_model_text(sys, w, c))
    return Certificate(
        tightenings=t_cur,
        gains=gains,
        multipliers=lambdas,
        terminal=ts,
        cost=tc,
        alpha=float(alpha),
        objective=float(objective),
        n=cfg.n,
        q_x=q_x,
        q_u=q_u,
        fingerprint=fingerprint,
    )


CERT_KEYS = [
    "n", "k_prime", "epsilon", "p_margin", "slack", "alpha", "objective",
    "fingerprint", "q_x", "q_u", "q_n", "k_y", "term_y", "term_z",
    "tightenings", "k_term", "m_gains", "k_delta", "multipliers",
]


def _format_cert_value(value):
    if isinstance(value, str):
        return repr(value)
    if isinstance(value, float):
        return repr(value)
    return model._format_value(value)


def write_certificate(cert):
    """Serialize a Certificate to the text format read_certificate accepts."""
    fields = {
        "n": cert.n,
        "k_prime": cert.terminal.k_prime,
        "epsilon": cert.cost.epsilon,
        "p_margin": cert.cost.p_margin,
        "slack": cert.cost.slack,
        "alpha": cert.alpha,
        "objective": cert.objective,
        "fingerprint": cert.fingerprint,
        "q_x": cert.q_x,
        "q_u": cert.q_u,
        "q_n": cert.cost.q_n,
        "k_y": cert.terminal.k_y,
        "term_y": cert.terminal.y,
        "term_z": cert.terminal.z,
        "tightenings": cert.tightenings,
        "k_term": [g.k_term for g in cert.gains],
        "m_gains": [g.m_gains for g in cert.gains],
        "k_delta": [g.k_delta for g in cert.gains],
        "multipliers": list(cert.multipliers),
    }
    lines = [CERT_HEADER]
    for key in CERT_KEYS:
        lines.append(f"{key} = {_format_cert_value(fields[key])}")
    return "\n".join(lines) + "\n"


def _parse_keyed(text, keys, what):
    entries = {}
    pending_key = None
    pending = []
    depth = 0
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if pending_key is None:
            if "=" not in line:
                raise ModelFormatError(f"{what}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in keys:
                raise ModelFormatError(f"{what}: unknown key {key!r}")
            if key in entries:
                raise ModelFormatError(f"{what}: duplicate key {key!r}")
            pending_key = key
            pending = [value.strip()]
        else:
            pending.append(line)
        depth = sum(p.count("[") - p.count("]") for p in pending)
        if depth == 0:
            joined = " ".join(pending)
            try:
                entries[pending_key] = ast.literal_eval(joined)
            except (ValueError, SyntaxError) as exc:
                raise ModelFormatError(
                    f"{what}: bad literal for {pending_key!r}: {exc}") from None
            pending_key = None
    if pending_key is not None:
        raise ModelFormatError(f"{what}: unterminated value for {pending_key!r}")
    missing = [k for k in keys if k not in entries]
    if missing:
        raise ModelFormatError(f"{what}: missing keys {missing}")
    return entries


def read_certificate(text, expected_fingerprint=None):
    """Parse a certificate file; reject stale or malformed ones."""
    first = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    if first != CERT_HEADER:
        raise ModelFormatError("certificate: missing format header")
    e = _parse_keyed(text, CERT_KEYS, "certificate")
    n = int(e["n"])
    tight = np.asarray(e["tightenings"], dtype=float)
    k_terms = [np.asarray(m, dtype=float) for m in e["k_term"]]
    m_gains = [np.asarray(m, dtype=float) for m in e["m_gains"]]
    k_deltas = [np.asarray(m, dtype=float) for m in e["k_delta"]]
    lams = [np.asarray(m, dtype=float) for m in e["multipliers"]]
    if not (len(k_terms) == len(m_gains) == len(k_deltas) == len(lams)):
        raise ModelFormatError("certificate: per-vertex lists disagree in length")
    gains = [prediction.GainSet(k_term=k, m_gains=m, k_delta=d)
             for k, m, d in zip(k_terms, m_gains, k_deltas)]
    ts = terminal.TerminalSet(
        y=np.asarray(e["term_y"], dtype=float),
        z=np.asarray(e["term_z"], dtype=float),
        k_y=np.asarray(e["k_y"], dtype=float),
        k_prime=int(e["k_prime"]),
    )
    tc = terminal.TerminalCost(
        q_n=np.asarray(e["q_n"], dtype=float),
        epsilon=float(e["epsilon"]),
        p_margin=float(e["p_margin"]),
        slack=float(e["slack"]),
    )
    cert = Certificate(
        tightenings=tight,
        gains=gains,
        multipliers=lams,
        terminal=ts,
        cost=tc,
        alpha=float(e["alpha"]),
        objective=float(e["objective"]),
        n=n,
        q_x=np.asarray(e["q_x"], dtype=float),
        q_u=np.asarray(e["q_u"], dtype=float),
        fingerprint=str(e["fingerprint"]),
    )
    if tight.ndim != 1:
        raise ModelFormatError("certificate: tightenings must be a vector")
    n_t = tight.shape[0]
    for lam in cert.multipliers:
        # negative entries are left for the verifier to flag, so corrupted
        # certificates stay loadable and fail loudly where it counts
        if lam.shape[0] != n_t:
            raise ModelFormatError("certificate: multiplier row count mismatch")
    if expected_fingerprint is not None and cert.fingerprint != expected_fingerprint:
        raise FingerprintMismatch(
            "certificate was synthesized for a different model")
    return cert
