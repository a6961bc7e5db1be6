"""Reference computations used to check the solvers.

* :func:`brute_force_vi` minimises the quadratic objective of a small
  symmetric VI by grid search, independently of the projection machinery.
* :func:`measure_contraction` records successive-change ratios of a map.
* :func:`manufactured_linear_oracle` integrates a scalar linear instance with
  a 64 times finer step.
* :func:`convergence_study` and :func:`gronwall_probe` drive the time-step
  and data-sensitivity studies.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import OracleInvalid, RejectedInput, StepFailure
from .history import TimeGrid
from .spaces import BoxSet, HalfSpaceSet
from .stepper import StepperConfig, run
from .vi_solver import ViInstance


@dataclass
class OracleInstance:
    """Symmetric VI ``<Q x - rhs + j_grad, v - x> >= 0`` on a box or half-space."""

    Q: np.ndarray
    rhs: np.ndarray
    set: object
    j_grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        d = self.rhs.size
        if d < 1 or d > 3:
            raise RejectedInput("oracle instances have dimension 1, 2 or 3")
        if self.Q.shape != (d, d) or np.max(np.abs(self.Q - self.Q.T)) > 1e-12:
            raise RejectedInput("oracle operator must be a symmetric d x d matrix")
        if not isinstance(self.set, (BoxSet, HalfSpaceSet)):
            raise RejectedInput("oracle sets are boxes or half-spaces")
        self.j_grad = np.zeros(d) if self.j_grad is None else np.asarray(self.j_grad, float)

    @property
    def dim(self):
        return self.rhs.size

    @property
    def load(self):
        return self.rhs - self.j_grad

    def objective(self, X):
        """``0.5 x'Qx - load'x`` for rows of ``X``."""
        return 0.5 * np.einsum("ni,ij,nj->n", X, self.Q, X) - X @ self.load

    def feasible(self, X, tol=0.0):
        if isinstance(self.set, BoxSet):
            return np.all((X >= self.set.lower - tol) & (X <= self.set.upper + tol), axis=1)
        return X @ self.set.normal <= self.set.offset + tol

    def as_vi(self):
        ev = np.linalg.eigvalsh(self.Q)
        return ViInstance(lambda x: self.Q @ x, self.rhs, self.set, m=float(ev[0]),
                          L=float(ev[-1]), phi_gradient=self.j_grad)


def _box_form(inst):
    """Rotate ``inst`` so its set becomes a coordinate box.

    Returns ``(R, Q, load, lower, upper)`` in coordinates ``y = R x``. A
    half-space ``a.x <= b`` becomes ``y_0 <= b / |a|``.
    """
    d = inst.dim
    if isinstance(inst.set, BoxSet):
        return (np.eye(d), inst.Q, inst.load, np.array(inst.set.lower, dtype=float),
                np.array(inst.set.upper, dtype=float))
    a = np.asarray(inst.set.normal, dtype=float)
    na = float(np.linalg.norm(a))
    # first column of the QR basis is parallel to a
    R = np.linalg.qr(np.column_stack([a, np.eye(d)]))[0][:, :d].T
    if R[0] @ a < 0:
        R[0] = -R[0]
    lower = np.full(d, -np.inf)
    upper = np.full(d, np.inf)
    upper[0] = inst.set.offset / na
    Qy = R @ inst.Q @ R.T
    return R, 0.5 * (Qy + Qy.T), R @ inst.load, lower, upper


def _objective(Q, load, Y):
    return 0.5 * np.einsum("ni,ij,nj->n", Y, Q, Y) - Y @ load


def _bounding_box(Q, load, lower, upper):
    """Finite box containing the minimiser over ``[lower, upper]``."""
    if np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)):
        return lower.copy(), upper.copy()
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise RejectedInput("unbounded set with an indefinite operator")
    y_star = np.linalg.solve(Q, load)
    y_feas = np.clip(y_star, lower, upper)
    f = lambda y: float(_objective(Q, load, y[None, :])[0])
    # the sublevel set {f <= f(y_feas)} is an ellipsoid around y_star
    gap = max(f(y_feas) - f(y_star), 0.0)
    half = np.sqrt(2.0 * gap * np.diag(np.linalg.inv(Q))) * 1.01 + 1e-9
    return np.maximum(lower, y_star - half), np.minimum(upper, y_star + half)


def _grid_min(Q, load, lower, upper, points, center=None):
    """Best grid point and its objective, relative to ``center`` if given.

    Differences ``f(c + d) - f(c) = d.(Qc - load) + d'Qd / 2`` keep their
    precision when ``d`` is small, unlike differences of absolute values.
    """
    axes = [np.linspace(lo, hi, points) if hi > lo else np.array([lo])
            for lo, hi in zip(lower, upper)]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lower))
    if center is None:
        vals = _objective(Q, load, Y)
    else:
        D = Y - center
        vals = D @ (Q @ center - load) + 0.5 * np.einsum("ni,ij,nj->n", D, Q, D)
    k = int(np.argmin(vals))
    return Y[k], float(vals[k])


def brute_force_vi(inst, grid_points=101, levels=40, zoom_points=21, target=1e-10):
    """Minimise the quadratic objective of ``inst`` by nested grid search.

    The set is first rotated into a coordinate box so that its faces are grid
    lines. With grid spacing ``h`` the best grid point then lies within
    ``sqrt(cond(Q)) h sqrt(d) / 2`` of the minimiser, and the search zooms
    into a box of 1.5 times that radius, repeatedly, until ``h <= target``.
    """
    if grid_points < 101:
        raise RejectedInput("grid_points must be at least 101")
    R, Q, load, lower, upper = _box_form(inst)
    blo, bhi = _bounding_box(Q, load, lower, upper)
    best, _ = _grid_min(Q, load, blo, bhi, grid_points)
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= 0:
        raise RejectedInput("oracle operator must be positive definite")
    spread = 1.5 * math.sqrt(ev[-1] / ev[0]) * math.sqrt(inst.dim) / 2.0
    h = float(np.max(bhi - blo)) / (grid_points - 1)
    for _ in range(levels):
        if h <= target:
            break
        r = spread * h
        lo = np.maximum(blo, best - r)
        hi = np.minimum(bhi, best + r)
        cand, fc = _grid_min(Q, load, lo, hi, zoom_points, center=best)
        if fc <= 0.0:
            best = cand
        h = float(np.max(hi - lo)) / (zoom_points - 1)
    return R.T @ best


def random_oracle_instance(rng, dim=None, kind=None):
    """Random symmetric instance of dimension <= 3 on a box or half-space."""
    dim = int(rng.integers(1, 4)) if dim is None else dim
    kind = kind or ("box" if rng.random() < 0.5 else "halfspace")
    Qr, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = Qr @ np.diag(rng.uniform(0.5, 3.0, dim)) @ Qr.T
    Q = 0.5 * (Q + Q.T)
    rhs = rng.uniform(-3, 3, dim)
    j_grad = rng.uniform(-0.5, 0.5, dim)
    if kind == "box":
        lo = rng.uniform(-2.0, 0.0, dim)
        hi = lo + rng.uniform(0.5, 3.0, dim)
        lo[rng.random(dim) < 0.2] = -np.inf
        hi[rng.random(dim) < 0.2] = np.inf
        s = BoxSet.from_bounds(lo, hi)
    else:
        a = rng.standard_normal(dim)
        s = HalfSpaceSet.from_normal(a, float(rng.uniform(-1, 1)))
    return OracleInstance(Q, rhs, s, j_grad)


@dataclass
class ContractionReport:
    ratios: list
    converged: bool
    degenerate: bool
    changes: list = field(default_factory=list)


def measure_contraction(mapping, start, iterations, norm=None):
    """Ratios ``|x_{k+1} - x_k| / |x_k - x_{k-1}|`` along ``x_{k+1} = mapping(x_k)``.

    A zero change ends the sequence and marks it converged; a zero first
    change (``start`` already fixed) also marks it degenerate.
    """
    if iterations < 3:
        raise RejectedInput("iterations must be >= 3")
    norm = norm or (lambda v: float(np.linalg.norm(v)))
    x = np.array(start, dtype=float)
    changes, ratios = [], []
    for _ in range(iterations):
        y = np.asarray(mapping(x), dtype=float)
        c = norm(y - x)
        x = y
        if changes:
            ratios.append(c / changes[-1])
        changes.append(c)
        if c == 0.0:
            return ContractionReport(ratios, True, len(ratios) == 0, changes)
    return ContractionReport(ratios, False, False, changes)


@dataclass
class OracleTrajectory:
    t: np.ndarray
    u: np.ndarray
    udot: np.ndarray
    w: np.ndarray
    zeta: np.ndarray


def manufactured_linear_oracle(p, grid, cfg=None, refine=64):
    """Reference trajectory of ``p`` on ``grid`` from the same scheme at ``dt / refine``.

    Raises :class:`OracleInvalid` if a constraint is touched along the
    reference run, since the linear reference then no longer applies.
    """
    cfg = cfg or StepperConfig()
    fine = TimeGrid(grid.T, grid.N * refine)
    tr = run(p, fine, cfg)
    zeta = tr.zeta
    if np.any(zeta <= 0.0) or np.any(zeta >= 1.0):
        raise OracleInvalid("damage reached a bound in the reference run")
    K_V = p.K_V
    if isinstance(K_V, BoxSet):
        ud = tr.udot
        if np.any(ud >= K_V.upper) or np.any(ud <= K_V.lower):
            raise OracleInvalid("velocity reached the bound in the reference run")
    sl = slice(None, None, refine)
    return OracleTrajectory(tr.t[sl], tr.u[sl], tr.udot[sl], tr.w[sl], zeta[sl])


def trajectory_distance(p, a, b, factor=1):
    """Sup over the nodes of ``a`` of the largest component-wise norm difference.

    ``b`` is sampled every ``factor`` nodes. Norms: V for ``u`` and ``udot``,
    W for ``w`` and the pivot norm for ``zeta``.
    """
    V, W, Y = p.space_V, p.space_W, p.space_Y
    out = 0.0
    for name, sp, which in (("u", V, "primary"), ("udot", V, "primary"),
                            ("w", W, "primary"), ("zeta", Y, "pivot")):
        x = np.asarray(getattr(a, name))
        y = np.asarray(getattr(b, name))[::factor]
        if x.shape != y.shape:
            raise RejectedInput("trajectories are not aligned")
        for row in x - y:
            out = max(out, sp.norm(row, which))
    return out


@dataclass
class ConvergenceTable:
    N: list
    differences: list
    orders: list
    exact: bool = False


def _orders(diffs):
    out = []
    for a, b in zip(diffs[:-1], diffs[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.nan)
    return out


def convergence_study(p, N0, levels, cfg=None, reference=None):
    """Run ``p`` at ``N0 * 2**k`` steps, ``k < levels``.

    With ``reference(times) -> object with u, udot, w, zeta`` the errors
    against it are tabulated; otherwise successive self-differences, taken at
    the coarser grid's nodes. If a level fails, the :class:`StepFailure` is
    re-raised with the table of the completed levels as ``exc.table``.
    """
    if levels < 3:
        raise RejectedInput("levels must be >= 3")
    if N0 < 1:
        raise RejectedInput("N0 must be >= 1")
    cfg = cfg or StepperConfig()
    Ns = [N0 * 2 ** k for k in range(levels)]
    trajs = []
    try:
        for N in Ns:
            trajs.append(run(p, TimeGrid(p.T, N), cfg))
    except StepFailure as exc:
        exc.table = _table(p, Ns, trajs, reference)
        exc.level = len(trajs)
        raise
    return _table(p, Ns, trajs, reference)


def _table(p, Ns, trajs, reference):
    if reference is not None:
        diffs = [trajectory_distance(p, reference(tr.t), tr) for tr in trajs]
        Nout = Ns[:len(trajs)]
    else:
        diffs = [trajectory_distance(p, a, b, 2) for a, b in zip(trajs[:-1], trajs[1:])]
        Nout = Ns[:len(diffs)]
    exact = bool(diffs) and all(d == 0.0 for d in diffs)
    return ConvergenceTable(Nout, diffs, _orders(diffs), exact)


def unit_load(p):
    """Forcing direction with unit V* norm."""
    e = np.ones(p.space_V.dim)
    return e / p.space_V.dual_norm(e)


def gronwall_probe(p, grid, deltas=(1e-3, 1e-2), cfg=None, direction=None):
    """Sensitivity of the velocity to a constant forcing perturbation.

    Returns ``{delta: C}`` with ``C = max_n |udot_delta(t_n) - udot(t_n)|_V / delta``.
    """
    cfg = cfg or StepperConfig()
    e = unit_load(p) if direction is None else np.asarray(direction, dtype=float)
    base = run(p, grid, cfg)
    out = {}
    for d in deltas:
        f = p.forcing
        q = replace(p, forcing=lambda t, f=f, d=d: np.asarray(f(t)) + d * e)
        tr = run(q, grid, cfg)
        diff = max(p.space_V.norm(a - b) for a, b in zip(tr.udot, base.udot))
        out[d] = diff / d
    return out
