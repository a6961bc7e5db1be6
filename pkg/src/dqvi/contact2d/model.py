"""Quasistatic viscoelastic frictional contact with wear, damage and memory.

A 2D body is clamped on the tag-1 boundary, loaded by a body force and by
tractions on the tag-2 boundary, and slides on a rigid moving foundation
along the tag-3 boundary. The contact law is a wear-dependent normal
compliance ``p(w, u'_nu)`` with the unilateral bound ``u'_nu <= g``, Coulomb
sliding friction ``-sigma_tau = mu p n*`` and the Archard wear rate
``w' = k |v*| p``.

Discretisation: P1 triangles, lumped (nodal) quadrature on the boundary and
for all mass matrices, and contact degrees of freedom rotated to the local
(normal, tangential) frame so that the velocity constraint is a bound on
single coordinates.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from ..core import Constants, DqviProblem, JSpec
from ..errors import RejectedInput
from ..history import HistoryBuffer
from ..spaces import DiscreteSpace, box_normal_set, unit_interval_set
from .fem import P1Assembler, boundary_lumped_mass, edge_lengths
from .mesh import CLAMPED, CONTACT, TRACTION, Mesh


class MarginWarning(UserWarning):
    """The viscosity does not dominate the friction and compliance sensitivity."""


WEAR_FORMS = ("two_argument", "difference")


@dataclass(frozen=True, eq=False)
class ContactModel:
    """Material, contact, damage and load data on a tagged mesh.

    ``mu`` is a scalar or one value per contact node. Loads are affine in
    time: body force ``body_force + t body_force_rate`` and traction
    ``traction + t traction_rate`` on every tag-2 edge. The foundation
    velocity is ``v_star0 + t v_star_rate``.
    """

    mesh: Mesh
    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    theta_v: float = 1.0
    c_B: float = 0.5
    tau_r: float = 0.5
    c_zeta: float = 0.05
    k_n: float = 0.2
    p_max: float = 10.0
    a_w: float = 1.0
    g: float = 0.05
    mu: object = 0.3
    wear_k: float = 0.1
    v_star0: tuple = (1.0, 0.0)
    v_star_rate: tuple = (0.0, 0.0)
    kappa: float = 0.05
    lambda_D: float = 0.05
    lambda_E: float = 2.0
    lambda_w: float = 0.02
    zeta_min: float = 0.01
    strain_cap: float = 1.0
    zeta0: float = 0.9
    body_force: tuple = (0.0, 0.0)
    body_force_rate: tuple = (0.0, 0.0)
    traction: tuple = (0.0, -0.2)
    traction_rate: tuple = (0.0, 0.0)
    wear_form: str = "two_argument"
    threads: int = 1

    def __post_init__(self):
        pos = ("lame_mu", "theta_v", "tau_r", "p_max", "kappa", "zeta_min", "strain_cap",
               "lambda_D", "lambda_E", "lambda_w")
        for name in pos:
            if not (getattr(self, name) > 0):
                raise RejectedInput(f"{name} must be positive")
        nonneg = ("c_B", "c_zeta", "k_n", "a_w", "g", "wear_k")
        for name in nonneg:
            if not (getattr(self, name) >= 0):
                raise RejectedInput(f"{name} must be nonnegative")
        if self.lame_lambda + self.lame_mu <= 0:
            raise RejectedInput("lame_lambda + lame_mu must be positive")
        if not (0 < self.zeta_min < self.zeta0 < 1):
            raise RejectedInput("need 0 < zeta_min < zeta0 < 1")
        if self.wear_form not in WEAR_FORMS:
            raise RejectedInput(f"wear_form must be one of {WEAR_FORMS}")
        mu = np.asarray(self.mu, dtype=float)
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise RejectedInput("friction coefficient must be finite and nonnegative")
        if np.linalg.norm(self.v_star0) == 0:
            raise RejectedInput("foundation velocity must not vanish")
        for name in ("v_star0", "v_star_rate", "body_force", "body_force_rate", "traction",
                     "traction_rate"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise RejectedInput(f"{name} must have two components")
            object.__setattr__(self, name, v)

    @property
    def Lp(self):
        """Lipschitz constant of the compliance function."""
        if self.wear_form == "difference":
            return self.k_n
        return self.k_n * max(1.0, self.a_w)

    def mu_max(self):
        return float(np.max(np.asarray(self.mu, dtype=float)))

    @property
    def m_visc(self):
        """Coercivity of the viscosity tensor ``theta_v (2 mu_L eps + lambda tr eps I)``."""
        return self.theta_v * (2.0 * self.lame_mu + 2.0 * min(self.lame_lambda, 0.0))

    def theorem_margin(self):
        """``m_visc - (|mu|_inf + 1) Lp``."""
        return self.m_visc - (self.mu_max() + 1.0) * self.Lp

    def v_star(self, t):
        return np.array(self.v_star0) + t * np.array(self.v_star_rate)

    def v_star_bounds(self, T):
        """``min`` and ``max`` of ``|v*(t)|`` over ``[0, T]``."""
        a = np.array(self.v_star0)
        b = np.array(self.v_star_rate)
        bb = float(b @ b)
        cands = [0.0, T]
        if bb > 0:
            s = -float(a @ b) / bb
            if 0 < s < T:
                cands.append(s)
        vals = [float(np.linalg.norm(a + s * b)) for s in cands]
        return min(vals), max(vals)


def normal_compliance(w, r, k_n, p_max, a_w):
    """``k_n clamp(max(r, 0) + a_w max(w, 0), 0, p_max)``."""
    return k_n * np.clip(np.maximum(r, 0.0) + a_w * np.maximum(w, 0.0), 0.0, p_max)


def normal_compliance_difference(w, r, k_n, p_max):
    """``k_n clamp(max(r - w, 0), 0, p_max)``."""
    return k_n * np.clip(np.maximum(np.asarray(r) - np.asarray(w), 0.0), 0.0, p_max)


def damage_source_values(zeta, strain_sq, lambda_D, lambda_E, lambda_w, zeta_min):
    """``lambda_D (1 - z) / z - lambda_E s / 2 + lambda_w`` with ``z = max(zeta, zeta_min)``."""
    z = np.maximum(np.asarray(zeta, dtype=float), zeta_min)
    return lambda_D * (1.0 - z) / z - 0.5 * lambda_E * np.asarray(strain_sq) + lambda_w


def _outward_normals(mesh, edges):
    """Unit outward normals of boundary edges."""
    owner = {}
    for k, (a, b, c) in enumerate(mesh.triangles):
        for e, opp in (((a, b), c), ((b, c), a), ((c, a), b)):
            owner[(min(e), max(e))] = opp
    out = np.zeros((len(edges), 2))
    for k, (a, b) in enumerate(edges):
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        d = pb - pa
        n = np.array([d[1], -d[0]]) / np.hypot(d[0], d[1])
        inside = mesh.nodes[owner[(min(a, b), max(a, b))]] - 0.5 * (pa + pb)
        out[k] = -n if n @ inside > 0 else n
    return out


@dataclass(eq=False)
class Discretization:
    """Assembled matrices in the reduced (free, rotated) velocity coordinates."""

    model: ContactModel
    asm: P1Assembler
    E: np.ndarray              # full xy dofs <- reduced dofs
    free_nodes: np.ndarray
    contact_nodes: np.ndarray
    normals: np.ndarray        # (n_c, 2) nodal outward normals
    tangents: np.ndarray       # (n_c, 2)
    normal_idx: np.ndarray
    tangent_idx: np.ndarray
    trace_idx: np.ndarray
    contact_mass: np.ndarray   # lumped boundary masses on contact nodes
    K_eps: np.ndarray
    K_div: np.ndarray
    K_A: np.ndarray
    Z: np.ndarray
    mass_V: np.ndarray
    mass_Y: np.ndarray
    lap_Y: np.ndarray
    load_const: np.ndarray
    load_rate: np.ndarray
    trace_norm: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.E.shape[1]

    def to_full(self, u):
        return self.E @ u

    def trace(self, v):
        return np.asarray(v, dtype=float)[self.trace_idx]

    def trace_adjoint(self, x):
        out = np.zeros(self.dim)
        out[self.trace_idx] = x
        return out

    def forcing(self, t):
        return self.load_const + t * self.load_rate


def discretize(m):
    """Assemble all matrices of ``m`` in reduced rotated coordinates."""
    mesh = m.mesh
    asm = P1Assembler(mesh, threads=m.threads)
    n = mesh.n_nodes
    clamped = set(mesh.nodes_with(CLAMPED).tolist())
    free_nodes = np.array([i for i in range(n) if i not in clamped], dtype=np.int64)
    if free_nodes.size == 0:
        raise RejectedInput("every node is clamped; the velocity space is empty")
    c_edges = mesh.edges_with(CONTACT)
    c_nodes_all = mesh.nodes_with(CONTACT)
    contact_nodes = np.array([i for i in c_nodes_all if i not in clamped], dtype=np.int64)
    if contact_nodes.size == 0:
        raise RejectedInput("the contact boundary has no free node")

    en = _outward_normals(mesh, c_edges)
    acc = np.zeros((n, 2))
    np.add.at(acc, c_edges[:, 0], en)
    np.add.at(acc, c_edges[:, 1], en)
    normals = acc[contact_nodes]
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])

    # reduced dof k <-> (node, local component); rows of the rotation per node
    pos = {int(i): k for k, i in enumerate(free_nodes)}
    cpos = {int(i): k for k, i in enumerate(contact_nodes)}
    dim = 2 * free_nodes.size
    E = np.zeros((2 * n, dim))
    for k, i in enumerate(free_nodes):
        if int(i) in cpos:
            R = np.vstack([normals[cpos[int(i)]], tangents[cpos[int(i)]]])
        else:
            R = np.eye(2)
        # u_xy = R^T u_local
        E[2 * i:2 * i + 2, 2 * k:2 * k + 2] = R.T
    normal_idx = np.array([2 * pos[int(i)] for i in contact_nodes], dtype=np.int64)
    tangent_idx = normal_idx + 1
    trace_idx = np.empty(2 * contact_nodes.size, dtype=np.int64)
    trace_idx[0::2] = normal_idx
    trace_idx[1::2] = tangent_idx

    K_eps_full = asm.strain_gram()
    K_div_full = asm.divergence_gram()
    K_eps = E.T @ K_eps_full @ E
    K_div = E.T @ K_div_full @ E
    K_eps = 0.5 * (K_eps + K_eps.T)
    K_div = 0.5 * (K_div + K_div.T)
    K_A = 2.0 * m.lame_mu * K_eps + m.lame_lambda * K_div
    Z = E.T @ asm.div_scalar_coupling()
    mass_nodes = asm.lumped_mass()
    mass_V = np.repeat(mass_nodes[free_nodes], 2)
    lap = asm.laplace()
    lap = 0.5 * (lap + lap.T)

    bmass = boundary_lumped_mass(mesh.nodes, c_edges, n)[contact_nodes]

    body = np.zeros(2 * n)
    body_rate = np.zeros(2 * n)
    body[0::2] = mass_nodes * m.body_force[0]
    body[1::2] = mass_nodes * m.body_force[1]
    body_rate[0::2] = mass_nodes * m.body_force_rate[0]
    body_rate[1::2] = mass_nodes * m.body_force_rate[1]
    t_edges = mesh.edges_with(TRACTION)
    tmass = boundary_lumped_mass(mesh.nodes, t_edges, n) if len(t_edges) else np.zeros(n)
    body[0::2] += tmass * m.traction[0]
    body[1::2] += tmass * m.traction[1]
    body_rate[0::2] += tmass * m.traction_rate[0]
    body_rate[1::2] += tmass * m.traction_rate[1]

    d = Discretization(model=m, asm=asm, E=E, free_nodes=free_nodes,
                       contact_nodes=contact_nodes, normals=normals, tangents=tangents,
                       normal_idx=normal_idx, tangent_idx=tangent_idx, trace_idx=trace_idx,
                       contact_mass=bmass, K_eps=K_eps, K_div=K_div, K_A=K_A, Z=Z,
                       mass_V=mass_V, mass_Y=mass_nodes, lap_Y=lap,
                       load_const=E.T @ body, load_rate=E.T @ body_rate)
    X = np.zeros((dim, dim))
    X[trace_idx, trace_idx] = np.repeat(bmass, 2)
    d.trace_norm = math.sqrt(max(_top_eig(X, K_eps), 0.0))
    return d


def _top_eig(A, B):
    n = A.shape[0]
    return float(linalg.eigh(A, B, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])


def _bottom_eig(A, B):
    return float(linalg.eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])[0])


def assemble_spaces(m, g=None, disc=None):
    """Spaces, convex sets and trace maps of the model.

    Returns
    -------
    space_V, space_Y, space_W, K_V, K_Y, disc
        ``disc`` carries the trace maps ``trace`` / ``trace_adjoint``.
    """
    disc = disc or discretize(m)
    g = m.g if g is None else g
    if g < 0:
        raise RejectedInput("the gap bound g must be nonnegative")
    V = DiscreteSpace(disc.dim, disc.K_eps, np.diag(disc.mass_V), "V")
    Y = DiscreteSpace(m.mesh.n_nodes, np.diag(disc.mass_Y) + disc.lap_Y,
                      np.diag(disc.mass_Y), "Y")
    Wg = np.diag(disc.contact_mass)
    W = DiscreteSpace(disc.contact_nodes.size, Wg, Wg, "W")
    K_V = box_normal_set(disc.dim, g, disc.normal_idx)
    K_Y = unit_interval_set(m.mesh.n_nodes)
    return V, Y, W, K_V, K_Y, disc


class ContactOperators:
    """Operator handles of the compiled problem."""

    def __init__(self, m, disc):
        self.m = m
        self.d = disc
        self.mu = np.broadcast_to(np.asarray(m.mu, dtype=float),
                                  (disc.contact_nodes.size,)).copy()
        self.K_C = m.theta_v * disc.K_A
        self.B_u = m.c_B * disc.K_eps
        self.B_z = m.c_zeta * disc.Z

    def op_A(self, t, u):
        return self.d.K_A @ u

    def op_B(self, lag, u, zeta):
        return math.exp(-lag / self.m.tau_r) * (self.B_u @ u + self.B_z @ zeta)

    def op_C(self, t, v):
        return self.K_C @ v

    def pressure(self, w, r):
        m = self.m
        if m.wear_form == "difference":
            return normal_compliance_difference(w, r, m.k_n, m.p_max)
        return normal_compliance(w, r, m.k_n, m.p_max, m.a_w)

    def alpha(self, t):
        return self.m.wear_k * float(np.linalg.norm(self.m.v_star(t)))

    def n_star_tau(self, t):
        vs = self.m.v_star(t)
        n_star = -vs / np.linalg.norm(vs)
        return self.d.tangents @ n_star

    def op_F(self, t, w, v):
        return self.alpha(t) * self.pressure(w, np.asarray(v)[self.d.normal_idx])

    def strain_sq_nodal(self, u):
        eps = self.d.asm.element_strain(self.d.to_full(u))
        s = np.minimum(np.einsum("mi,mi->m", eps, eps), self.m.strain_cap ** 2)
        return self.d.asm.nodal_average(s)

    def op_phi(self, t, u, zeta):
        m = self.m
        return damage_source_values(zeta, self.strain_sq_nodal(u), m.lambda_D, m.lambda_E,
                                    m.lambda_w, m.zeta_min)

    def j_gradient(self, t, w, z):
        """Loads ``m_i p_i`` (normal) and ``m_i mu_i p_i n*_tau`` (tangential)."""
        p = self.pressure(w, np.asarray(z)[0::2])
        x = np.empty(2 * p.size)
        x[0::2] = self.d.contact_mass * p
        x[1::2] = self.d.contact_mass * self.mu * p * self.n_star_tau(t)
        return self.d.trace_adjoint(x)

    def j_at(self, t):
        d = self.d

        def grad(w, z):
            return self.j_gradient(t, w, z)

        def evaluate(w, z, v):
            return float(grad(w, z)[d.trace_idx] @ np.asarray(v, dtype=float))

        return JSpec(evaluate=evaluate, linear_in_v=True, gradient_in_v=grad,
                     trace=d.trace, trace_adjoint=d.trace_adjoint, identity_trace=False)


def functional_j(m, disc=None, ops=None):
    """Friction-plus-compliance functional as a time-bound :class:`JSpec`."""
    if ops is None:
        ops = ContactOperators(m, disc or discretize(m))
    base = ops.j_at(0.0)
    return JSpec(evaluate=base.evaluate, linear_in_v=True, gradient_in_v=base.gradient_in_v,
                 trace=base.trace, trace_adjoint=base.trace_adjoint, identity_trace=False,
                 bind=ops.j_at)


def wear_rhs(ops, t, w, udot):
    return ops.op_F(t, w, udot)


def damage_source(ops, t, u, zeta):
    return ops.op_phi(t, u, zeta)


def discrete_constants(m, disc, T):
    """Operator norms of the assembled maps."""
    V_g = disc.K_eps
    ev = linalg.eigh(disc.K_A, V_g, eigvals_only=True)
    L_A = float(ev[-1])
    a_min = float(ev[0])
    Y_g = np.diag(disc.mass_Y) + disc.lap_Y
    Zn = 0.0
    if m.c_zeta > 0:
        ZGZ = disc.Z.T @ linalg.solve(V_g, disc.Z, assume_a="pos")
        Zn = math.sqrt(max(_top_eig(0.5 * (ZGZ + ZGZ.T), Y_g), 0.0))
    L_B = max(m.c_B, m.c_zeta * Zn)
    c_tr = disc.trace_norm
    Lp = m.Lp
    mu_max = m.mu_max()
    _, vmax = m.v_star_bounds(T)
    alpha_max = m.wear_k * vmax
    return Constants(
        L_A=L_A, L_B=L_B, rho=L_B, L_C1=m.theta_v * L_A, L_C2=0.0,
        m_C=m.theta_v * a_min,
        alpha0=(mu_max + 1.0) * Lp * c_tr, alpha1=(mu_max + 1.0) * Lp * c_tr ** 2,
        L_F=alpha_max * Lp * max(1.0, c_tr),
        L_phi=max(m.lambda_E * m.strain_cap, m.lambda_D / m.zeta_min ** 2),
        a1=m.kappa, a2=m.kappa, T=T)


def compile_model(m, T, g=None, override_margin=False):
    """Build the :class:`DqviProblem` of the contact model on ``[0, T]``.

    Warns with :class:`MarginWarning` when ``m_visc <= (|mu|_inf + 1) Lp``.
    The discrete margin ``m_C > alpha_1`` is enforced by the problem
    constructor unless ``override_margin``.
    """
    if not (T > 0):
        raise RejectedInput("T must be positive")
    vmin, _ = m.v_star_bounds(T)
    if vmin <= 0:
        raise RejectedInput("the foundation velocity vanishes inside [0, T]")
    margin = m.theorem_margin()
    if margin <= 0:
        warnings.warn(f"viscosity margin m_C - (|mu| + 1) Lp = {margin:.4g} <= 0; "
                      "the coupled fixed point may fail to contract", MarginWarning,
                      stacklevel=2)
    V, Y, W, K_V, K_Y, disc = assemble_spaces(m, g)
    ops = ContactOperators(m, disc)
    consts = discrete_constants(m, disc, T)
    dim_y = m.mesh.n_nodes
    return DqviProblem(
        space_V=V, space_Y=Y, space_W=W, K_V=K_V, K_Y=K_Y,
        op_A=ops.op_A, op_B=ops.op_B, op_C=ops.op_C, op_F=ops.op_F, op_phi=ops.op_phi,
        form_a=m.kappa * disc.lap_Y, j=functional_j(m, ops=ops), forcing=disc.forcing,
        u0=np.zeros(disc.dim), w0=np.zeros(disc.contact_nodes.size),
        zeta0=np.full(dim_y, m.zeta0), constants=consts,
        vi_metric=ops.K_C, vi_bounds=(1.0, 1.0), override_margin=override_margin,
        name="contact2d",
        extras={"model": m, "disc": disc, "ops": ops, "theorem_margin": margin,
                "g": m.g if g is None else g})


def complementarity(p, traj):
    """Discrete contact conditions along a trajectory of a compiled contact problem.

    Returns a dict with the normal stress ``sigma_nu``, pressure ``p``, normal
    velocity, and ``residual`` = ``max |(u'_nu - g)(sigma_nu + p)|`` divided by
    the product of the velocity and force scales, together with the largest
    normalised positive part of ``sigma_nu + p``.
    """
    disc = p.extras["disc"]
    ops = p.extras["ops"]
    g = p.extras["g"]
    grid = traj.grid
    buf = HistoryBuffer(grid, p.space_V.dim, p.space_Y.dim)
    sig, pres, vel = [], [], []
    for n, s in enumerate(traj.states):
        buf.append(s.u, s.zeta)
        H = buf.history_term(p.op_B, n)
        j = p.j.at(s.t)
        R = (p.op_C(s.t, s.udot) + p.op_A(s.t, s.u) + H - p.forcing(s.t))
        sigma = R[disc.normal_idx] / disc.contact_mass
        z = j.trace(s.udot)
        pp = ops.pressure(s.w, z[0::2])
        sig.append(sigma)
        pres.append(pp)
        vel.append(s.udot[disc.normal_idx])
    sig, pres, vel = np.array(sig), np.array(pres), np.array(vel)
    force_scale = max(float(np.max(np.abs(sig), initial=0.0)),
                      float(np.max(pres, initial=0.0)), 1e-300)
    vel_scale = max(float(np.max(np.abs(vel), initial=0.0)), g if np.isfinite(g) else 0.0,
                    1e-300)
    prod = (vel - g) * (sig + pres) if np.isfinite(g) else np.zeros_like(sig)
    return {
        "sigma_nu": sig, "p": pres, "udot_nu": vel,
        "force_scale": force_scale, "velocity_scale": vel_scale,
        "residual": float(np.max(np.abs(prod), initial=0.0)) / (force_scale * vel_scale),
        "sign_violation": float(np.max(sig + pres, initial=0.0)) / force_scale,
        "gap_violation": float(np.max(vel - g, initial=-np.inf)),
        "active_fraction": float(np.mean(vel >= g - 1e-12)) if np.isfinite(g) else 0.0,
    }
