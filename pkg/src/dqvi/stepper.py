"""Rothe time stepping of the coupled wear / velocity / damage system.

Each time node ``t_n`` is resolved by outer sweeps

    velocity_solve -> wear_update -> damage_solve

until the three successive changes are below ``tol_outer``. The velocity
solve is itself a Picard loop over the velocity ``eta`` with the displacement
``u_n = u_{n-1} + dt * eta`` treated implicitly in the elastic and history
terms.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MARGIN_MESSAGE, contraction_constants
from .errors import InfeasibleProblem, RejectedInput, StepFailure
from .history import HistoryBuffer, TimeGrid
from .qp import box_qp
from .spaces import BoxSet
from .vi_solver import noncontracting, solve_quasi_vi

__all__ = ["TimeGrid", "State", "StepperConfig", "Trajectory", "StepRecord",
           "initial_velocity", "velocity_solve", "wear_update", "damage_solve",
           "step", "run"]

WEAR_SCHEMES = ("explicit_euler", "backward_euler")
DAMAGE_COUPLINGS = ("semi_implicit", "picard")


@dataclass
class State:
    t: float
    u: np.ndarray
    udot: np.ndarray
    w: np.ndarray
    zeta: np.ndarray


@dataclass
class StepperConfig:
    """Tolerances and scheme switches of the time stepper.

    ``init_perturbation`` adds seeded noise of that size to every initial
    guess of the fixed-point loops; the accepted states must not depend on it.
    """

    tol_outer: float = 1e-10
    tol_velocity: float = 1e-11
    tol_damage: float = 1e-12
    max_picard: int = 200
    max_outer: int = 100
    wear_scheme: str = "explicit_euler"
    damage_source_coupling: str = "semi_implicit"
    init_perturbation: float = 0.0
    init_seed: int = 0
    override_margin: bool = False

    def __post_init__(self):
        for name in ("tol_outer", "tol_velocity", "tol_damage"):
            if not (getattr(self, name) > 0):
                raise RejectedInput(f"{name} must be positive")
        if self.max_picard < 1 or self.max_outer < 1:
            raise RejectedInput("iteration caps must be >= 1")
        if self.wear_scheme not in WEAR_SCHEMES:
            raise RejectedInput(f"wear_scheme must be one of {WEAR_SCHEMES}")
        if self.damage_source_coupling not in DAMAGE_COUPLINGS:
            raise RejectedInput(f"damage_source_coupling must be one of {DAMAGE_COUPLINGS}")
        if self.init_perturbation < 0:
            raise RejectedInput("init_perturbation must be nonnegative")


@dataclass
class StepRecord:
    step: int
    t: float
    sweeps: int
    changes: list
    ratios: list
    picard_iterations: int
    max_picard_ratio: float


@dataclass
class Trajectory:
    grid: TimeGrid
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    wall_time: float = 0.0
    failure: Optional[StepFailure] = None

    def _stack(self, name):
        return np.array([getattr(s, name) for s in self.states])

    @property
    def t(self):
        return np.array([s.t for s in self.states])

    @property
    def u(self):
        return self._stack("u")

    @property
    def udot(self):
        return self._stack("udot")

    @property
    def w(self):
        return self._stack("w")

    @property
    def zeta(self):
        return self._stack("zeta")


def _failure_diagnostics(p, dt, **extra):
    c = p.constants
    diag = {"dt": dt, "dt_L_F": dt * c.L_F, "margin": c.margin}
    if c.margin > 0:
        diag["c_p"], diag["c_q"], diag["c_r"] = contraction_constants(c)
        diag["velocity_factor"] = (c.L_A + c.T * c.L_B) / c.margin
    diag.update(extra)
    return diag


def _solve_velocity_vi(p, t, w, rhs, cfg, start):
    m, L = p.bounds
    rep = solve_quasi_vi(lambda v: p.op_C(t, v), p.j.at(t), w, rhs, p.K_V,
                         tol=0.1 * cfg.tol_velocity, max_iter=cfg.max_picard,
                         m=m, L=L, metric=p.vi_metric_factored, projector=p.vi_projector,
                         start=start, inner_tol=1e-3 * cfg.tol_velocity)
    return rep


def initial_velocity(p, cfg):
    """Velocity at ``t = 0`` from the VI with the initial displacement and wear."""
    rhs = np.asarray(p.forcing(0.0)) - np.asarray(p.op_A(0.0, p.u0))
    rep = _solve_velocity_vi(p, 0.0, p.w0, rhs, cfg, None)
    if not rep.converged:
        raise StepFailure("velocity VI at t=0 did not converge", step=0,
                          reason="quasi_vi_stagnation" if rep.stagnated else "quasi_vi_max_iter",
                          diagnostics=_failure_diagnostics(p, 0.0, ratios=rep.ratios))
    return rep.solution


def velocity_solve(p, buf, w_n, zeta_n, n, prev, cfg, past=None, eta0=None):
    """Picard loop over the velocity at node ``n``.

    Parameters
    ----------
    buf : HistoryBuffer
        Holds the accepted nodes ``0..n-1``.
    w_n, zeta_n : ndarray
        Current wear and damage iterates of the outer sweep.
    prev : State
        Accepted state at node ``n-1``.
    past : ndarray, optional
        Cached history quadrature over nodes ``0..n-1``.
    eta0 : ndarray, optional
        Initial Picard guess; ``prev.udot`` by default.

    Returns
    -------
    udot_n, u_n, info : ndarray, ndarray, dict
    """
    if n < 1:
        raise RejectedInput("velocity_solve needs n >= 1")
    dt = buf.grid.dt
    t = buf.grid.t(n)
    if past is None:
        past = buf.past_sum(p.op_B, n)
    f_t = np.asarray(p.forcing(t))
    eta = np.array(prev.udot if eta0 is None else eta0, dtype=float)
    V = p.space_V
    prev_res = None
    ratios = []
    for it in range(1, cfg.max_picard + 1):
        u = prev.u + dt * eta
        rhs = f_t - past - buf.endpoint(p.op_B, n, u, zeta_n) - np.asarray(p.op_A(t, u))
        rep = _solve_velocity_vi(p, t, w_n, rhs, cfg, eta)
        if not rep.converged:
            raise StepFailure(
                f"velocity VI at step {n} did not converge; reduce dt or check m_C > alpha_1",
                step=n, reason="quasi_vi_stagnation" if rep.stagnated else "quasi_vi_max_iter",
                diagnostics=_failure_diagnostics(p, dt, quasi_vi_ratios=rep.ratios))
        eta_new = rep.solution
        res = V.norm(eta_new - eta)
        eta = eta_new
        if prev_res is not None and prev_res > 0:
            ratios.append(res / prev_res)
        prev_res = res
        if res <= cfg.tol_velocity:
            info = {"iterations": it, "ratios": ratios,
                    "max_ratio": max(ratios) if ratios else 0.0}
            return eta, prev.u + dt * eta, info
        if noncontracting(ratios):
            break
    raise StepFailure(
        f"velocity Picard loop at step {n} is not contracting; reduce dt",
        step=n, reason="velocity_picard",
        diagnostics=_failure_diagnostics(p, dt, picard_ratios=ratios))


def wear_update(p, w_prev, udot_n, t_n, dt, scheme="explicit_euler", tol=1e-13,
                max_iter=200, step_index=None):
    """One Euler step of the wear ODE."""
    w_prev = np.asarray(w_prev, dtype=float)
    if scheme == "explicit_euler":
        return w_prev + dt * np.asarray(p.op_F(t_n, w_prev, udot_n))
    if scheme != "backward_euler":
        raise RejectedInput(f"unknown wear scheme {scheme!r}")
    factor = dt * p.constants.L_F
    if factor >= 1.0:
        raise StepFailure(f"backward-Euler wear map is not contractive "
                          f"(dt*L_F = {factor:.4g} >= 1); reduce dt", step=step_index,
                          reason="wear_fixed_point", diagnostics=_failure_diagnostics(p, dt))
    W = p.space_W
    w = w_prev.copy()
    for _ in range(max_iter):
        w_new = w_prev + dt * np.asarray(p.op_F(t_n, w, udot_n))
        change = W.norm(w_new - w)
        w = w_new
        if change <= tol * max(1.0, W.norm(w)):
            return w
    raise StepFailure("backward-Euler wear iteration did not converge", step=step_index,
                      reason="wear_fixed_point", diagnostics=_failure_diagnostics(p, dt))


def _damage_box(p):
    if not isinstance(p.K_Y, BoxSet):
        raise RejectedInput("damage solve needs K_Y given as a box")
    return p.K_Y.lower, p.K_Y.upper


def _damage_qp(p, zeta_prev, phi_hat, dt, cfg, start, step_index):
    M = p.space_Y.gram_pivot
    Q = M + dt * p.form_a
    c = M @ zeta_prev + dt * (M @ phi_hat)
    lo, hi = _damage_box(p)
    res = box_qp(Q, c, lo, hi, x0=start, tol=cfg.tol_damage)
    if not res.converged:
        raise StepFailure("damage QP hit its iteration cap", step=step_index,
                          reason="damage_qp", diagnostics=_failure_diagnostics(p, dt))
    return np.clip(res.x, lo, hi)


def damage_solve(p, zeta_prev, u_n, t_n, dt, cfg, start=None, step_index=None):
    """Implicit-Euler step of the damage VI as a box-constrained QP.

    Minimises ``0.5 z'(M + dt a)z - (M zeta_prev + dt M phi_hat)'z`` over
    ``K_Y``, where ``M`` is the pivot Gram matrix.
    """
    zeta_prev = np.asarray(zeta_prev, dtype=float)
    if start is None:
        start = zeta_prev
    phi_hat = np.asarray(p.op_phi(t_n, u_n, zeta_prev), dtype=float)
    zeta = _damage_qp(p, zeta_prev, phi_hat, dt, cfg, start, step_index)
    if cfg.damage_source_coupling == "semi_implicit":
        return zeta
    Y = p.space_Y
    prev_change = None
    ratios = []
    for _ in range(cfg.max_picard):
        phi_hat = np.asarray(p.op_phi(t_n, u_n, zeta), dtype=float)
        z_new = _damage_qp(p, zeta_prev, phi_hat, dt, cfg, zeta, step_index)
        change = Y.norm(z_new - zeta, "pivot")
        zeta = z_new
        if change <= cfg.tol_damage:
            return zeta
        if prev_change is not None and prev_change > 0:
            ratios.append(change / prev_change)
        prev_change = change
        if noncontracting(ratios):
            break
    raise StepFailure("damage Picard loop did not converge; reduce dt", step=step_index,
                      reason="damage_picard", diagnostics=_failure_diagnostics(p, dt))


def _perturbed(x, cfg, rng):
    x = np.array(x, dtype=float)
    if cfg.init_perturbation > 0:
        x = x + cfg.init_perturbation * rng.standard_normal(x.shape)
    return x


def step(p, buf, prev, cfg, rng=None):
    """Advance from the accepted node ``n-1`` (``prev``) to node ``n``.

    The new state is appended to ``buf``. Returns ``(state, record)``.
    """
    n = len(buf)
    grid = buf.grid
    if n < 1 or n > grid.N:
        raise RejectedInput(f"cannot step from a buffer holding {n} nodes")
    dt = grid.dt
    t = grid.t(n)
    if rng is None:
        rng = np.random.default_rng(cfg.init_seed + n)
    past = buf.past_sum(p.op_B, n)
    udot = _perturbed(prev.udot, cfg, rng)
    w = _perturbed(prev.w, cfg, rng)
    zeta = _perturbed(prev.zeta, cfg, rng)
    V, W, Y = p.space_V, p.space_W, p.space_Y
    changes, ratios = [], []
    picard_total, picard_max = 0, 0.0
    u = prev.u + dt * udot
    for sweep in range(1, cfg.max_outer + 1):
        udot_new, u_new, info = velocity_solve(p, buf, w, zeta, n, prev, cfg, past=past,
                                               eta0=udot)
        picard_total += info["iterations"]
        picard_max = max(picard_max, info["max_ratio"])
        w_new = wear_update(p, prev.w, udot_new, t, dt, cfg.wear_scheme, step_index=n)
        zeta_new = damage_solve(p, prev.zeta, u_new, t, dt, cfg, start=np.clip(zeta, 0, 1)
                                if sweep > 1 else None, step_index=n)
        change = max(V.norm(udot_new - udot), W.norm(w_new - w),
                     Y.norm(zeta_new - zeta, "pivot"))
        if changes and changes[-1] > 0:
            ratios.append(change / changes[-1])
        changes.append(change)
        udot, u, w, zeta = udot_new, u_new, w_new, zeta_new
        if change <= cfg.tol_outer:
            state = State(t, u, udot, w, zeta)
            buf.append(u, zeta)
            rec = StepRecord(n, t, sweep, changes, ratios, picard_total, picard_max)
            return state, rec
        if noncontracting(ratios):
            break
    raise StepFailure(f"outer coupling loop at step {n} is not contracting; reduce dt",
                      step=n, reason="outer_noncontraction",
                      diagnostics=_failure_diagnostics(p, dt, outer_ratios=ratios,
                                                       outer_changes=changes))


def run(p, grid, cfg=None):
    """Integrate over ``grid``; returns a :class:`Trajectory` with ``N+1`` states.

    A :class:`StepFailure` is re-raised with the partial trajectory attached
    as ``exc.trajectory``.
    """
    cfg = cfg or StepperConfig()
    if abs(grid.T - p.T) > 1e-12 * max(1.0, p.T):
        raise RejectedInput(f"grid horizon {grid.T} differs from the problem horizon {p.T}")
    if p.constants.margin <= 0 and not (p.override_margin or cfg.override_margin):
        raise InfeasibleProblem(MARGIN_MESSAGE)
    start = time.perf_counter()
    traj = Trajectory(grid)
    buf = HistoryBuffer(grid, p.space_V.dim, p.space_Y.dim)
    try:
        udot0 = initial_velocity(p, cfg)
        state = State(0.0, p.u0.copy(), udot0, p.w0.copy(), p.zeta0.copy())
        traj.states.append(state)
        buf.append(state.u, state.zeta)
        for _ in range(grid.N):
            state, rec = step(p, buf, state, cfg)
            traj.states.append(state)
            traj.records.append(rec)
    except StepFailure as exc:
        traj.failure = exc
        traj.wall_time = time.perf_counter() - start
        exc.trajectory = traj
        raise
    traj.wall_time = time.perf_counter() - start
    return traj


def sup_difference(a, b, space=None):
    """Largest node-wise difference of two stacked trajectories of equal length."""
    a = np.asarray(a)
    b = np.asarray(b)
    d = a - b
    if space is None:
        return float(np.max(np.abs(d), initial=0.0))
    return max((space.norm(row) for row in d), default=0.0)


def coarse_to(fine, factor):
    """Every ``factor``-th row of a fine trajectory array."""
    return np.asarray(fine)[::factor]


def order_estimates(diffs):
    """``log2`` of successive ratios of a difference sequence."""
    out = []
    for a, b in zip(diffs[:-1], diffs[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.nan)
    return out
