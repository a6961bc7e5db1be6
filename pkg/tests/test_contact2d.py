import math
import warnings

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqvi.contact2d import (CLAMPED, CONTACT, TRACTION, ContactModel, MarginWarning, Mesh,
                            assemble_spaces, compile_model, damage_source_values, discretize,
                            normal_compliance, normal_compliance_difference,
                            parse_mesh, read_mesh, rectangle, write_mesh)
from dqvi.contact2d.fem import P1Assembler, boundary_lumped_mass
from dqvi.errors import InfeasibleProblem, RejectedInput, StepFailure
from dqvi.history import TimeGrid
from dqvi.stepper import run


def unit_triangle_mesh():
    nodes = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    return Mesh(nodes, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [CONTACT, TRACTION, CLAMPED])


def textbook_element_stiffness(xy, lam, mu):
    """Plane-strain P1 stiffness ``A B' D B`` with engineering shear strain."""
    (x1, y1), (x2, y2), (x3, y3) = xy
    twoA = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    b = [y2 - y3, y3 - y1, y1 - y2]
    c = [x3 - x2, x1 - x3, x2 - x1]
    B = np.array([[b[0], 0, b[1], 0, b[2], 0],
                  [0, c[0], 0, c[1], 0, c[2]],
                  [c[0], b[0], c[1], b[1], c[2], b[2]]]) / twoA
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    return 0.5 * twoA * B.T @ D @ B, B


def textbook_strain_gram(xy):
    """``int eps:eps`` for one element: D = diag(1, 1, 1/2) on engineering strains."""
    K, B = textbook_element_stiffness(xy, 0.0, 0.5)
    return K


# ---- mesh ----------------------------------------------------------------------------

def test_rectangle_tags_and_sizes():
    m = rectangle(2.0, 1.0, 4, 2)
    assert m.n_nodes == 15 and len(m.triangles) == 16
    assert len(m.edges_with(CONTACT)) == 4
    assert len(m.edges_with(CLAMPED)) == 2
    assert np.all(m.areas > 0)


def test_mesh_round_trip(tmp_path):
    m = rectangle(1.0, 1.0, 3, 2)
    path = tmp_path / "m.msh"
    write_mesh(m, path)
    m2 = read_mesh(path)
    npt.assert_array_equal(m.nodes, m2.nodes)
    npt.assert_array_equal(m.triangles, m2.triangles)
    npt.assert_array_equal(m.tags, m2.tags)


def test_mesh_parse_comments_and_errors():
    text = "# header\n3 1 3\n0 0\n1 0  # node\n0 1\n0 1 2\n0 1 3\n1 2 2\n2 0 1\n"
    assert parse_mesh(text).n_nodes == 3
    with pytest.raises(RejectedInput, match="line 1"):
        parse_mesh("3 1\n")
    with pytest.raises(RejectedInput, match="line 4"):
        parse_mesh("3 1 3\n\n0 0\n1 x\n0 1\n0 1 2\n0 1 3\n1 2 2\n2 0 1\n")
    with pytest.raises(RejectedInput, match="data lines"):
        parse_mesh("3 1 3\n0 0\n")
    with pytest.raises(RejectedInput, match="empty"):
        parse_mesh("# nothing\n")


def test_mesh_validation():
    nodes = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    edges = [[0, 1], [1, 2], [2, 0]]
    with pytest.raises(RejectedInput, match="degenerate"):
        Mesh([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]], edges, [1, 2, 3])
    with pytest.raises(RejectedInput, match="clamped"):
        Mesh(nodes, [[0, 1, 2]], edges, [2, 2, 3])
    with pytest.raises(RejectedInput, match="tagging"):
        Mesh(nodes, [[0, 1, 2]], edges[:2], [1, 2])
    with pytest.raises(RejectedInput, match="twice"):
        Mesh(nodes, [[0, 1, 2]], edges + [[1, 0]], [1, 2, 3, 3])
    with pytest.raises(RejectedInput, match="tags"):
        Mesh(nodes, [[0, 1, 2]], edges, [1, 2, 4])
    with pytest.raises(RejectedInput, match="missing"):
        Mesh(nodes, [[0, 1, 5]], edges, [1, 2, 3])
    # clockwise input is reoriented
    m = Mesh(nodes, [[0, 2, 1]], edges, [1, 2, 3])
    assert m.areas[0] > 0


# ---- spaces --------------------------------------------------------------------------

def test_two_triangle_square_space():
    m = ContactModel(rectangle(1.0, 1.0, 1, 1))
    V, Y, W, K_V, K_Y, disc = assemble_spaces(m)
    assert V.dim == 2 * 2
    assert np.linalg.eigvalsh(V.gram_primary)[0] > 1e-8
    assert Y.dim == 4 and W.dim == 1
    assert K_Y.contains(np.full(4, 0.5))


def test_all_clamped_rejected():
    mesh = rectangle(1.0, 1.0, 1, 1, left=CLAMPED, bottom=CLAMPED, right=CLAMPED, top=CLAMPED)
    with pytest.raises(RejectedInput, match="clamped"):
        discretize(ContactModel(mesh))


def test_edge_mass_half_length():
    L = 0.7
    nodes = np.array([[0.0, 0.0], [L, 0.0]])
    mass = boundary_lumped_mass(nodes, np.array([[0, 1]]), 2)
    npt.assert_allclose(mass, [L / 2, L / 2], rtol=1e-15)
    m = ContactModel(rectangle(L, 1.0, 1, 1))
    W = assemble_spaces(m)[2]
    npt.assert_allclose(W.gram_primary.sum(axis=1), [L / 2], rtol=1e-15)


# ---- elasticity ----------------------------------------------------------------------

def test_element_stiffness_matches_textbook():
    mesh = unit_triangle_mesh()
    asm = P1Assembler(mesh)
    lam, mu = 1.0, 1.0
    K = 2 * mu * asm.strain_gram() + lam * asm.divergence_gram()
    K_ref, B = textbook_element_stiffness(mesh.nodes, lam, mu)
    npt.assert_allclose(K, K_ref, atol=1e-14)
    # unit horizontal stretch u = (x, 0)
    u = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    D = np.array([[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 1.0]])
    npt.assert_allclose(K @ u, 0.5 * B.T @ D @ (B @ u), atol=1e-14)
    npt.assert_allclose(B @ u, [1.0, 0.0, 0.0])


def test_strain_gram_matches_textbook():
    rng = np.random.default_rng(0)
    for _ in range(10):
        xy = rng.random((3, 2))
        (ax, ay), (bx, by) = xy[1] - xy[0], xy[2] - xy[0]
        if abs(ax * by - ay * bx) < 0.05:
            continue
        if ax * by - ay * bx < 0:
            xy = xy[[0, 2, 1]]
        mesh = Mesh(xy, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [1, 2, 3])
        npt.assert_allclose(P1Assembler(mesh).strain_gram(), textbook_strain_gram(xy),
                            atol=1e-12)


def test_element_rigid_modes():
    rng = np.random.default_rng(1)
    xy = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
    mesh = Mesh(xy, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [1, 2, 3])
    asm = P1Assembler(mesh)
    K = 2.0 * asm.strain_gram() + 1.0 * asm.divergence_gram()
    npt.assert_allclose(K, K.T, atol=1e-15)
    ev = np.linalg.eigvalsh(K)
    assert np.sum(ev < 1e-10 * np.trace(K)) == 3


def test_rigid_translation_has_no_elastic_force():
    asm = P1Assembler(rectangle(1.0, 1.0, 3, 3))
    K = 2.0 * asm.strain_gram() + asm.divergence_gram()
    t = np.tile([0.3, -1.2], asm.n)
    assert np.max(np.abs(K @ t)) < 1e-13
    # infinitesimal rotation (-y, x)
    r = np.column_stack([-asm.mesh.nodes[:, 1], asm.mesh.nodes[:, 0]]).ravel()
    assert np.max(np.abs(K @ r)) < 1e-13


def test_relaxation_of_zero_is_zero():
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 3, 3)), 1.0)
    assert np.all(p.op_B(0.3, np.zeros(p.space_V.dim), np.zeros(p.space_Y.dim)) == 0.0)
    # zeta = 0: pure relaxation of u
    u = np.random.default_rng(2).standard_normal(p.space_V.dim)
    ops = p.extras["ops"]
    npt.assert_allclose(p.op_B(0.0, u, np.zeros(p.space_Y.dim)), ops.B_u @ u)


def test_assembly_thread_independent():
    mesh = rectangle(1.0, 1.0, 9, 9)
    a, b = P1Assembler(mesh, threads=1), P1Assembler(mesh, threads=4)
    for name in ("strain_gram", "divergence_gram", "laplace", "div_scalar_coupling"):
        assert np.array_equal(getattr(a, name)(), getattr(b, name)())


# ---- compliance, friction, wear and damage source ----------------------------------

def reference_compliance(w, r, k_n, p_max, a_w):
    s = (r if r > 0 else 0.0) + a_w * (w if w > 0 else 0.0)
    return k_n * min(max(s, 0.0), p_max)


def test_compliance_examples():
    assert normal_compliance(0.0, 0.0, 1.0, 10.0, 1.0) == 0.0
    assert normal_compliance(0.0, -3.0, 1.0, 10.0, 1.0) == 0.0
    assert normal_compliance(1.0, 3.0, 2.0, 10.0, 1.0) == 8.0
    assert reference_compliance(1.0, 3.0, 2.0, 10.0, 1.0) == 8.0
    assert normal_compliance(5.0, 9.0, 2.0, 10.0, 1.0) == 20.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(0, 3), st.floats(0.1, 10), st.floats(0, 3))
def test_compliance_lipschitz_and_reference(w1, r1, w2, r2, k_n, p_max, a_w):
    p1 = float(normal_compliance(w1, r1, k_n, p_max, a_w))
    p2 = float(normal_compliance(w2, r2, k_n, p_max, a_w))
    assert p1 == pytest.approx(reference_compliance(w1, r1, k_n, p_max, a_w), abs=1e-12)
    Lp = k_n * max(1.0, a_w)
    assert abs(p1 - p2) <= Lp * (abs(w1 - w2) + abs(r1 - r2)) + 1e-12
    assert 0.0 <= p1 <= k_n * p_max


def test_difference_form():
    assert normal_compliance_difference(0.5, 1.5, 2.0, 10.0) == 2.0
    assert normal_compliance_difference(2.0, 1.5, 2.0, 10.0) == 0.0


def single_edge_model(**kw):
    return ContactModel(rectangle(1.0, 1.0, 1, 1), **kw)


def test_j_gradient_zero_at_rest():
    p = compile_model(single_edge_model(), 1.0)
    j = p.j.at(0.0)
    g = j.gradient_in_v(np.zeros(p.space_W.dim), j.trace(np.zeros(p.space_V.dim)))
    assert np.all(g == 0.0)


def test_frictionless_has_no_tangential_load():
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 4, 4), mu=0.0), 1.0)
    disc = p.extras["disc"]
    z = np.zeros(2 * disc.contact_nodes.size)
    z[0::2] = 0.3
    g = p.j.at(0.0).gradient_in_v(np.zeros(p.space_W.dim), z)
    assert np.all(g[disc.tangent_idx] == 0.0)
    assert np.all(g[disc.normal_idx] > 0.0)


def test_single_edge_tangential_load_by_hand():
    mu, k_n, pbar = 0.4, 0.5, 0.2
    p = compile_model(single_edge_model(mu=mu, k_n=k_n), 1.0)
    disc = p.extras["disc"]
    z = np.array([pbar / k_n, 0.0])
    g = p.j.at(0.0).gradient_in_v(np.zeros(1), z)
    edge_mass = 0.5  # unit edge, free end node
    full = disc.to_full(g).reshape(-1, 2)
    node = int(disc.contact_nodes[0])
    # n* = (-1, 0): load -mu pbar m in x, normal (0, -1): load pbar m pushes in -y
    assert full[node, 0] == pytest.approx(-mu * pbar * edge_mass, rel=1e-14)
    assert full[node, 1] == pytest.approx(-pbar * edge_mass, rel=1e-14)


def test_friction_direction_bit_identity():
    rng = np.random.default_rng(3)
    m = ContactModel(rectangle(1.0, 1.0, 5, 5), mu=0.35, v_star0=(0.6, 0.8),
                     v_star_rate=(0.1, 0.0))
    p = compile_model(m, 1.0)
    disc, ops = p.extras["disc"], p.extras["ops"]
    for t in (0.0, 0.4, 1.0):
        w = rng.random(p.space_W.dim)
        z = rng.standard_normal(2 * disc.contact_nodes.size)
        g = p.j.at(t).gradient_in_v(w, z)
        pres = ops.pressure(w, z[0::2])
        vs = np.array(m.v_star0) + t * np.array(m.v_star_rate)
        nstar = -vs / np.linalg.norm(vs)
        ntau = disc.tangents @ nstar
        assert np.array_equal(g[disc.tangent_idx], disc.contact_mass * 0.35 * pres * ntau)
        assert np.array_equal(g[disc.normal_idx], disc.contact_mass * pres)


def test_j_evaluate_matches_gradient_pairing():
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 4, 4)), 1.0)
    rng = np.random.default_rng(4)
    j = p.j.at(0.5)
    for _ in range(10):
        w = rng.random(p.space_W.dim)
        u, v = rng.standard_normal(p.space_V.dim), rng.standard_normal(p.space_V.dim)
        z = j.trace(u)
        assert abs(j.evaluate(w, z, j.trace(v)) - j.gradient_in_v(w, z) @ v) <= 1e-10


def test_wear_rate_examples():
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 4, 4)), 1.0)
    assert np.all(p.op_F(0.0, np.zeros(p.space_W.dim), np.zeros(p.space_V.dim)) == 0.0)
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = 2.0 * rng.standard_normal(p.space_W.dim)
        v = 2.0 * rng.standard_normal(p.space_V.dim)
        assert np.all(p.op_F(rng.random(), w, v) >= 0.0)


def test_damage_source_values():
    lD, lE, lw, zmin = 0.05, 2.0, 0.02, 0.01
    npt.assert_allclose(damage_source_values(np.ones(3), np.zeros(3), lD, lE, lw, zmin), lw)
    s = 0.3
    val = damage_source_values(zmin / 2, s, lD, lE, lw, zmin)
    assert val == pytest.approx(lD * (1 - zmin) / zmin - 0.5 * lE * s + lw, rel=1e-14)
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 3, 3)), 1.0)
    phi = p.op_phi(0.0, np.zeros(p.space_V.dim), np.ones(p.space_Y.dim))
    npt.assert_allclose(phi, 0.02, rtol=1e-14)


# ---- compile ------------------------------------------------------------------------

def test_frictionless_compliance_free_constants():
    with warnings.catch_warnings():
        warnings.simplefilter("error", MarginWarning)
        p = compile_model(ContactModel(rectangle(1.0, 1.0, 3, 3), mu=0.0, k_n=0.0), 1.0)
    assert p.constants.alpha0 == 0.0 and p.constants.alpha1 == 0.0
    assert p.constants.margin == p.constants.m_C > 0


def test_margin_arithmetic_positive():
    # m_visc = theta_v * 2 mu_L = 1, (0.3 + 1) * 0.5 = 0.65
    m = ContactModel(rectangle(1.0, 1.0, 2, 2), theta_v=0.5, lame_mu=1.0, mu=0.3, k_n=0.5)
    assert m.m_visc == 1.0 and m.Lp == 0.5
    assert m.theorem_margin() == pytest.approx(0.35, abs=1e-15)


def test_margin_violation_warns_and_inflated_friction_fails():
    m = ContactModel(rectangle(1.0, 1.0, 6, 6), theta_v=0.25, mu=1.0, k_n=0.5)
    assert m.theorem_margin() == pytest.approx(-0.5, abs=1e-15)
    with pytest.warns(MarginWarning):
        with pytest.raises(InfeasibleProblem):
            compile_model(m, 0.2)
    m = ContactModel(rectangle(1.0, 1.0, 6, 6), theta_v=0.25, mu=40.0, k_n=0.5)
    with pytest.warns(MarginWarning):
        p = compile_model(m, 0.2, override_margin=True)
    with pytest.raises(StepFailure) as exc:
        run(p, TimeGrid(0.2, 4))
    assert exc.value.reason == "quasi_vi_stagnation"


def test_model_validation():
    mesh = rectangle(1.0, 1.0, 1, 1)
    for kw in (dict(zeta_min=0.0), dict(zeta0=1.0), dict(mu=-0.1), dict(v_star0=(0.0, 0.0)),
               dict(wear_form="x"), dict(kappa=0.0), dict(traction=(1.0,))):
        with pytest.raises(RejectedInput):
            ContactModel(mesh, **kw)
    m = ContactModel(mesh, v_star0=(1.0, 0.0), v_star_rate=(-1.0, 0.0))
    with pytest.raises(RejectedInput):
        compile_model(m, 2.0)
    with pytest.raises(RejectedInput):
        compile_model(ContactModel(mesh), 1.0, g=-1.0)


def test_v_star_bounds():
    m = ContactModel(rectangle(1.0, 1.0, 1, 1), v_star0=(1.0, 0.0), v_star_rate=(-1.0, 1.0))
    lo, hi = m.v_star_bounds(2.0)
    assert lo == pytest.approx(math.sqrt(0.5))
    # v*(t) = (1 - t, t): smallest at t = 1/2, largest at t = 2
    assert hi == pytest.approx(math.sqrt(5.0))


def test_declared_constants_pass_audit():
    from dqvi.core import validate_hypotheses
    p = compile_model(ContactModel(rectangle(1.0, 1.0, 4, 4)), 1.0)
    rep = validate_hypotheses(p, samples=30)
    assert rep.passed, rep.lines()


# ---- energy consistency against an independent dense recursion ----------------------

def independent_linear_reference(mesh, lam, mu_L, theta, c_B, tau_r, traction, N, T):
    """Velocity of the frictionless viscoelastic body with memory, assembled from scratch."""
    n = mesh.n_nodes
    K = np.zeros((2 * n, 2 * n))
    S = np.zeros((2 * n, 2 * n))
    for tri in mesh.triangles:
        xy = mesh.nodes[tri]
        Ke, _ = textbook_element_stiffness(xy, lam, mu_L)
        Se = textbook_strain_gram(xy)
        dofs = np.ravel([[2 * a, 2 * a + 1] for a in tri])
        K[np.ix_(dofs, dofs)] += Ke
        S[np.ix_(dofs, dofs)] += Se
    f = np.zeros(2 * n)
    for (a, b), tag in zip(mesh.edges, mesh.tags):
        if tag == TRACTION:
            L = np.linalg.norm(mesh.nodes[a] - mesh.nodes[b])
            for node in (a, b):
                f[2 * node:2 * node + 2] += 0.5 * L * np.asarray(traction)
    clamped = set(mesh.nodes_with(CLAMPED).tolist())
    free = np.ravel([[2 * i, 2 * i + 1] for i in range(n) if i not in clamped])
    K, S, f = K[np.ix_(free, free)], S[np.ix_(free, free)], f[free]
    dt = T / N
    kern = lambda lag: math.exp(-lag / tau_r) * c_B * S
    us = [np.zeros(free.size)]
    vs = [np.linalg.solve(theta * K, f - K @ us[0])]
    for k in range(1, N + 1):
        past = 0.5 * dt * kern(k * dt) @ us[0]
        for i in range(1, k):
            past += dt * kern((k - i) * dt) @ us[i]
        M = theta * K + dt * K + 0.5 * dt * dt * c_B * S
        rhs = f - K @ us[-1] - past - 0.5 * dt * c_B * S @ us[-1]
        v = np.linalg.solve(M, rhs)
        vs.append(v)
        us.append(us[-1] + dt * v)
    return free, np.array(vs)


def test_linear_frictionless_matches_dense_reference():
    mesh = rectangle(1.0, 1.0, 4, 4)
    m = ContactModel(mesh, lame_lambda=1.0, lame_mu=1.0, theta_v=1.0, c_B=0.5, tau_r=0.5,
                     c_zeta=0.0, k_n=0.0, mu=0.0, g=1e6, traction=(0.1, -0.2))
    p = compile_model(m, 1.0)
    N = 10
    tr = run(p, TimeGrid(1.0, N))
    disc = p.extras["disc"]
    free, vref = independent_linear_reference(mesh, 1.0, 1.0, 1.0, 0.5, 0.5, (0.1, -0.2), N,
                                              1.0)
    for n in range(N + 1):
        full = disc.to_full(tr.udot[n])
        assert np.max(np.abs(full[free] - vref[n])) <= 1e-8
