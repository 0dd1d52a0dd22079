import numpy as np
import pytest

from clrmpc import linalg, model, prediction, terminal
from clrmpc.errors import InfeasibleLmi
from clrmpc.utils import make_rng


def scalar_setup(a=0.5, b=1.0, n=1):
    sys = model.UncertainSystem(
        a=[[a]], b=[[b]], b_p=[[0.0]], b_w=[[1.0]],
        d_x=[[0.0]], d_u=[[0.0]], d_w=[[0.0]], deltas=[[[0.0]]],
    )
    c = model.ConstraintSet(f=[[1.0], [-1.0]], g=[[0.0], [0.0]], b=[1.0, 1.0])
    return sys, c


def test_terminal_set_depth_zero():
    sys, c = scalar_setup()
    ts = terminal.build_terminal_set(sys, c, k_prime=0, k_y=np.zeros((1, 1)))
    assert np.array_equal(ts.y, c.f + c.g @ ts.k_y)
    assert np.array_equal(ts.z, c.b)


def test_terminal_set_scalar_hand_stack():
    sys, c = scalar_setup(a=0.5, b=1.0)
    ts = terminal.build_terminal_set(sys, c, k_prime=3, k_y=np.zeros((1, 1)))
    expect = np.array([[0.5**i * s] for i in range(4) for s in (1.0, -1.0)])
    assert np.allclose(ts.y, expect, atol=1e-15)
    assert np.array_equal(ts.z, np.ones(8))


def test_terminal_set_msd_shape_and_stability():
    sys, w, c = model.build_msd()
    ts = terminal.build_terminal_set(sys, c, k_prime=2)
    assert ts.y.shape == (36, 4)
    assert ts.z.shape == (36,)
    assert linalg.spectral_radius(sys.a + sys.b @ ts.k_y) < 1.0 - 1e-9


def test_terminal_set_default_gain_matches_riccati():
    sys, w, c = model.build_msd()
    ts = terminal.build_terminal_set(sys, c, k_prime=1)
    _, gain = linalg.solve_dare(sys.a, sys.b, np.eye(4), np.eye(2))
    assert np.allclose(ts.k_y, -gain, atol=1e-12)


def test_stack_cost_matches_unrolled_sum():
    sys, w, c = model.build_msd()
    rng = make_rng(5)
    ts = terminal.build_terminal_set(sys, c, k_prime=2)
    bundle = prediction.build_bundle(sys, c, ts.y, ts.z, n=5)
    q_x = np.diag(rng.uniform(0.5, 2.0, size=4))
    q_u = np.diag(rng.uniform(0.5, 2.0, size=2))
    q_n = np.eye(4) * 3.0
    q_s = terminal.stack_cost(bundle, q_x, q_u, q_n)
    for _ in range(20):
        s = rng.normal(size=bundle.n_s)
        traj = bundle.s_mat @ s
        total = 0.0
        for i in range(5):
            xi = traj[4 * i:4 * (i + 1)]
            ui = traj[24 + 2 * i:24 + 2 * (i + 1)]
            total += xi @ q_x @ xi + ui @ q_u @ ui
        xn = traj[20:24]
        total += xn @ q_n @ xn
        quad = s @ bundle.s_mat.T @ q_s @ bundle.s_mat @ s
        assert abs(total - quad) < 1e-10 * (1.0 + abs(total))


def msd_with_riccati_gains(n=5, k_prime=2):
    sys, w, c = model.build_msd()
    ts = terminal.build_terminal_set(sys, c, k_prime=k_prime)
    bundle = prediction.build_bundle(sys, c, ts.y, ts.z, n=n)
    gains = []
    for _ in range(sys.n_delta):
        g = prediction.zero_gains(n, sys.n_x, sys.n_u)
        g.k_term = ts.k_y.copy()
        gains.append(g)
    return sys, c, ts, bundle, gains


def test_terminal_cost_msd_feasible():
    sys, c, ts, bundle, gains = msd_with_riccati_gains()
    tc = terminal.synthesize_terminal_cost(bundle, gains, sys,
                                           np.eye(4), np.eye(2), epsilon=0.1)
    assert tc.slack >= 1e-6
    assert np.allclose(tc.q_n, tc.q_n.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(tc.q_n) > 0)


def test_terminal_cost_slack_independent_recheck():
    sys, c, ts, bundle, gains = msd_with_riccati_gains()
    tc = terminal.synthesize_terminal_cost(bundle, gains, sys,
                                           np.eye(4), np.eye(2), epsilon=0.1)
    c_k_list = [
        prediction.build_gain_matrices(bundle, g, sys, j)[0]
        for j, g in enumerate(gains)
    ]
    slack = terminal.terminal_cost_slack(bundle, c_k_list, np.eye(4),
                                         np.eye(2), tc.q_n, 0.1)
    assert abs(slack - tc.slack) < 1e-9


def test_terminal_cost_infeasible_overwhelming_uncertainty():
    # the one-step perturbation can triple the state while the vertex gains
    # stay zero, so the successor plan costs more than the current one for
    # every terminal weight and the synthesis must refuse
    sys = model.UncertainSystem(
        a=[[0.5]], b=[[1.0]], b_p=[[1.0]], b_w=[[1.0]],
        d_x=[[3.0]], d_u=[[0.0]], d_w=[[0.0]], deltas=[[[1.0]], [[-1.0]]],
    )
    c = model.ConstraintSet(f=[[1.0], [-1.0]], g=[[0.0], [0.0]], b=[1.0, 1.0])
    ts = terminal.build_terminal_set(sys, c, k_prime=0, k_y=np.zeros((1, 1)))
    bundle = prediction.build_bundle(sys, c, ts.y, ts.z, n=1)
    gains = [prediction.zero_gains(1, 1, 1) for _ in range(2)]
    with pytest.raises(InfeasibleLmi):
        terminal.synthesize_terminal_cost(bundle, gains, sys,
                                          np.eye(1), np.eye(1), epsilon=0.1)


def test_terminal_cost_scalar_perturbation_free():
    sys, c = scalar_setup(a=0.5, b=1.0)
    ts = terminal.build_terminal_set(sys, c, k_prime=0, k_y=np.zeros((1, 1)))
    bundle = prediction.build_bundle(sys, c, ts.y, ts.z, n=1)
    gains = [prediction.zero_gains(1, 1, 1)]
    tc = terminal.synthesize_terminal_cost(bundle, gains, sys,
                                           np.eye(1), np.eye(1), epsilon=1e-3)
    assert tc.slack >= 1e-6


def test_hull_closure_random_mixtures():
    # vertex certificates must close under convex mixtures of the vertices
    sys, c, ts, bundle, gains = msd_with_riccati_gains()
    q_x, q_u = np.eye(4), np.eye(2)
    tc = terminal.synthesize_terminal_cost(bundle, gains, sys, q_x, q_u,
                                           epsilon=0.1)
    q_s = terminal.stack_cost(bundle, q_x, q_u, tc.q_n)
    pi = terminal.optimal_manifold(bundle, q_x, q_u, tc.q_n)
    c_k_list = [
        prediction.build_gain_matrices(bundle, g, sys, j)[0]
        for j, g in enumerate(gains)
    ]
    lhs = pi.T @ bundle.s_mat.T @ q_s @ bundle.s_mat @ pi
    rng = make_rng(6)
    for _ in range(100):
        tau = rng.dirichlet(np.ones(4))
        c_mix = sum(t * ck for t, ck in zip(tau, c_k_list)) @ pi
        g = lhs - 1.1 * c_mix.T @ q_s @ c_mix
        assert np.linalg.eigvalsh(0.5 * (g + g.T))[0] >= tc.p_margin * (1 - 1e-9)


def test_unrestricted_condition_is_structurally_obstructed():
    # directions with zero initial state, zero first input and zero terminal
    # state make the successor plan an exact shift; there the unrestricted
    # quadratic form equals -eps times the path energy for every Q_N, so
    # only the manifold-restricted certificate can be demanded
    sys, c, ts, bundle, gains = msd_with_riccati_gains()
    term = bundle.term_rows()
    sub = term[:, 6:]
    _, _, vt = np.linalg.svd(sub)
    v = np.zeros(14)
    v[6:] = vt[-1]
    assert np.abs(term @ v).max() < 1e-12
    q_s = terminal.stack_cost(bundle, np.eye(4), np.eye(2), 1e6 * np.eye(4))
    traj = bundle.s_mat @ v
    path = traj[4:20] @ traj[4:20] + traj[24:] @ traj[24:]
    for j, g in enumerate(gains):
        c_k, _ = prediction.build_gain_matrices(bundle, g, sys, j)
        gmat = bundle.s_mat.T @ q_s @ bundle.s_mat - 1.1 * c_k.T @ q_s @ c_k
        assert v @ gmat @ v < -0.09 * path
        assert abs(v @ gmat @ v + 0.1 * path) < 1e-8 * (1 + path)
