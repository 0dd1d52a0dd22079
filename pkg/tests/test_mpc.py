import numpy as np
import pytest

from clrmpc import mpc, qpsolver
from clrmpc.errors import FingerprintMismatch, MpcInfeasible

X0 = np.array([1.9, 0.5, -1.7, 1.7])


def test_origin_solution_is_zero(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    sol = mpc.solve_mpc(ctrl, np.zeros(4))
    assert np.abs(sol.u).max() <= 1e-9
    assert abs(sol.value) <= 1e-9
    assert np.abs(sol.states).max() <= 1e-8
    assert np.abs(sol.inputs).max() <= 1e-8


def test_benchmark_state_feasible(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    assert mpc.roa_membership(ctrl, X0)
    sol = mpc.solve_mpc(ctrl, X0)
    assert sol.status == qpsolver.OPTIMAL
    assert sol.value > 0.0
    assert ctrl.last_solution is sol


def test_plan_satisfies_dynamics_and_tightened_rows(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    sol = mpc.solve_mpc(ctrl, X0)
    cert = ctrl.certificate
    n, n_c = cert.n, c_m.n_c
    assert np.allclose(sol.states[0], X0, atol=1e-12)
    for i in range(n):
        step = sys_m.a @ sol.states[i] + sys_m.b @ sol.inputs[i]
        assert np.abs(step - sol.states[i + 1]).max() <= 1e-8
        row = c_m.f @ sol.states[i] + c_m.g @ sol.inputs[i]
        bound = c_m.b - cert.tightenings[i * n_c:(i + 1) * n_c]
        assert (row - bound).max() <= 1e-7
    term = cert.terminal.y @ sol.states[n]
    assert (term - (cert.terminal.z - cert.tightenings[n * n_c:])).max() <= 1e-7


def test_value_matches_plan_cost(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    sol = mpc.solve_mpc(ctrl, X0)
    cert = ctrl.certificate
    total = 0.0
    for i in range(cert.n):
        total += sol.states[i] @ cert.q_x @ sol.states[i]
        total += sol.inputs[i] @ cert.q_u @ sol.inputs[i]
    total += sol.states[cert.n] @ cert.cost.q_n @ sol.states[cert.n]
    assert sol.value == pytest.approx(total, abs=1e-8, rel=1e-8)


def test_condensed_matches_multiple_shooting(msd_controller):
    # same program with explicit state variables and dynamics equalities
    ctrl, sys_m, w_m, c_m = msd_controller
    cert = ctrl.certificate
    n, n_x, n_u, n_c = cert.n, sys_m.n_x, sys_m.n_u, c_m.n_c
    n_var = (n + 1) * n_x + n * n_u
    u_off = (n + 1) * n_x
    h = np.zeros((n_var, n_var))
    for i in range(n):
        sl = slice(i * n_x, (i + 1) * n_x)
        h[sl, sl] = 2.0 * cert.q_x
        su = slice(u_off + i * n_u, u_off + (i + 1) * n_u)
        h[su, su] = 2.0 * cert.q_u
    h[n * n_x:(n + 1) * n_x, n * n_x:(n + 1) * n_x] = 2.0 * cert.cost.q_n
    a_eq = np.zeros((n_x + n * n_x, n_var))
    b_eq = np.zeros(n_x + n * n_x)
    a_eq[:n_x, :n_x] = np.eye(n_x)
    b_eq[:n_x] = X0
    for i in range(n):
        rows = slice(n_x + i * n_x, n_x + (i + 1) * n_x)
        a_eq[rows, (i + 1) * n_x:(i + 2) * n_x] = -np.eye(n_x)
        a_eq[rows, i * n_x:(i + 1) * n_x] = sys_m.a
        a_eq[rows, u_off + i * n_u:u_off + (i + 1) * n_u] = sys_m.b
    n_y = cert.terminal.y.shape[0]
    a_in = np.zeros((n * n_c + n_y, n_var))
    for i in range(n):
        rows = slice(i * n_c, (i + 1) * n_c)
        a_in[rows, i * n_x:(i + 1) * n_x] = c_m.f
        a_in[rows, u_off + i * n_u:u_off + (i + 1) * n_u] = c_m.g
    a_in[n * n_c:, n * n_x:(n + 1) * n_x] = cert.terminal.y
    b_in = np.concatenate([np.tile(c_m.b, n), cert.terminal.z])
    b_in -= cert.tightenings
    ref = qpsolver.solve_qp(qpsolver.QpProblem(
        h=h, f=np.zeros(n_var), a_eq=a_eq, b_eq=b_eq,
        a_in=a_in, b_in=b_in))
    assert ref.status == qpsolver.OPTIMAL
    sol = mpc.solve_mpc(ctrl, X0)
    assert sol.value == pytest.approx(ref.objective, abs=1e-6, rel=1e-6)
    assert np.abs(sol.u - ref.x[u_off:u_off + n_u]).max() <= 1e-5


def test_far_state_infeasible(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    bad = np.array([50.0, 0.0, 0.0, 0.0])
    assert not mpc.roa_membership(ctrl, bad)
    with pytest.raises(MpcInfeasible) as err:
        mpc.solve_mpc(ctrl, bad)
    assert np.allclose(err.value.state, bad)


def test_value_quadratic_lower_bound(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    lam = float(np.linalg.eigvalsh(ctrl.q_x).min())
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.uniform(-0.6, 0.6, size=4)
        sol = mpc.solve_mpc(ctrl, x)
        assert sol.value >= lam * float(x @ x) - 1e-8


def test_roa_boundary_bisection(msd_controller):
    # scale the benchmark start outward until the feasible set is left;
    # the controller must agree with the membership test on both sides
    ctrl, sys_m, w_m, c_m = msd_controller
    d = X0 / np.linalg.norm(X0)
    lo, hi = 0.0, 1.0
    while mpc.roa_membership(ctrl, hi * d):
        lo, hi = hi, 2.0 * hi
        assert hi < 1e6
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mpc.roa_membership(ctrl, mid * d):
            lo = mid
        else:
            hi = mid
    assert hi - lo <= 1e-9 * max(1.0, hi)
    inner = (lo - 1e-6) * d
    outer = (hi + 1e-6) * d
    assert mpc.solve_mpc(ctrl, inner).status == qpsolver.OPTIMAL
    with pytest.raises(MpcInfeasible):
        mpc.solve_mpc(ctrl, outer)


def test_fingerprint_mismatch_rejected(msd_certificate):
    from clrmpc import model
    sys_m, w_m, c_m, cfg, cert, trace = msd_certificate
    other = model.ConstraintSet(f=c_m.f, g=c_m.g, b=c_m.b * 1.01)
    with pytest.raises(FingerprintMismatch):
        mpc.make_controller(sys_m, w_m, other, cert)


def test_state_validation(msd_controller):
    ctrl, sys_m, w_m, c_m = msd_controller
    with pytest.raises(ValueError):
        mpc.solve_mpc(ctrl, np.zeros(3))
    with pytest.raises(ValueError):
        mpc.solve_mpc(ctrl, np.array([np.nan, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        mpc.roa_membership(ctrl, np.zeros(5))


def test_scalar_certain_controller_origin(scalar_certain_controller):
    ctrl, sys, w, c = scalar_certain_controller
    sol = mpc.solve_mpc(ctrl, np.zeros(1))
    assert abs(sol.value) <= 1e-9
    assert np.abs(sol.u).max() <= 1e-9
