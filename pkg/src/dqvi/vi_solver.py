"""Projected forward-backward solvers for elliptic (quasi-)variational inequalities.

The elliptic problem is: find ``u`` in a closed convex set ``K`` with

    <Op(u) - rhs, v - u> + phi(v) - phi(u) >= 0   for all v in K,

where ``Op`` is strongly monotone and Lipschitz and ``phi`` is convex. The
quasi-variational version lets ``phi`` depend on the unknown through a frozen
argument, which is resolved by an outer fixed-point loop.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import InfeasibleProblem, RejectedInput
from .spaces import ConvexSet

STAGNATION_WINDOW = 5
STAGNATION_RATIO = 1.0 - 1e-3


def noncontracting(ratios, window=STAGNATION_WINDOW, threshold=STAGNATION_RATIO):
    """True when the last ``window`` change ratios do not shrink on average.

    The geometric mean is used so that a loop oscillating between two states
    (ratios alternating around 1) is caught as well as a diverging one.
    """
    if len(ratios) < window:
        return False
    tail = np.asarray(ratios[-window:], dtype=float)
    if np.any(tail <= 0):
        return False
    return float(np.exp(np.mean(np.log(tail)))) >= threshold


@dataclass
class ViInstance:
    """One elliptic VI.

    Parameters
    ----------
    operator : callable
        ``u -> V*-array``.
    rhs : ndarray
        Load array.
    set : ConvexSet
        Admissible set ``K``.
    m, L : float
        Strong monotonicity and Lipschitz constants of ``operator`` in the
        ``metric`` norm. ``L=None`` triggers an empirical estimate.
    metric : ndarray or Metric, optional
        Gram matrix of the iteration; identity by default.
    phi_prox : callable, optional
        ``(point, step) -> array``, the proximal map of ``step * phi`` in the
        ``metric`` inner product.
    phi_gradient : ndarray, optional
        Load representing ``phi`` when it is linear; folded into ``rhs``.
    phi_value : callable, optional
        ``v -> float``; used only for residual checks.
    projector : callable, optional
        Precomputed projection onto ``set`` in ``metric``.
    """

    operator: Callable
    rhs: np.ndarray
    set: ConvexSet
    m: float = 1.0
    L: Optional[float] = None
    metric: Optional[np.ndarray] = None
    phi_prox: Optional[Callable] = None
    phi_gradient: Optional[np.ndarray] = None
    phi_value: Optional[Callable] = None
    projector: Optional[Callable] = None

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float)
        if not (self.m > 0):
            raise RejectedInput(f"strong monotonicity constant must be positive, got {self.m}")
        if self.L is not None and self.L < self.m * (1 - 1e-12):
            raise RejectedInput("Lipschitz constant L must be >= m")
        if self.phi_prox is not None and self.phi_gradient is not None:
            raise RejectedInput("give phi either as a prox or as a linear gradient, not both")


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_residual: float
    converged: bool
    contraction_estimate: float
    ratios: list = field(default_factory=list)
    stagnated: bool = False
    L_used: float = math.nan
    L_estimated: bool = False
    inner_iterations: int = 0


class Metric:
    """Gram matrix with a cached Cholesky factor; ``None`` means identity."""

    def __init__(self, G, n):
        if isinstance(G, Metric):
            G = G.G
        if G is None:
            self.G = None
        else:
            G = np.asarray(G, dtype=float)
            if G.shape != (n, n):
                raise RejectedInput("metric has the wrong shape")
            self.G = G
            self.factor = linalg.cho_factor(G, lower=True)

    def solve(self, f):
        return f.copy() if self.G is None else linalg.cho_solve(self.factor, f)

    def norm(self, x):
        if self.G is None:
            return float(np.linalg.norm(x))
        return float(np.sqrt(max(x @ self.G @ x, 0.0)))


def estimate_lipschitz(operator, metric, x, samples=8, rng_seed=0):
    """Largest difference quotient of ``operator`` around ``x`` in the metric norm."""
    rng = np.random.default_rng(rng_seed)
    met = metric if isinstance(metric, Metric) else Metric(metric, x.size)
    base = operator(x)
    best = 0.0
    for _ in range(samples):
        d = rng.standard_normal(x.size)
        d *= max(1.0, float(np.linalg.norm(x))) / max(met.norm(d), 1e-300)
        diff = met.solve(operator(x + d) - base)
        best = max(best, met.norm(diff) / met.norm(d))
    return best


def solve_vi(inst, tol=1e-10, max_iter=10000, start=None):
    """Solve ``inst`` by ``u <- P(prox(u - tau G^-1 (Op(u) - rhs))))``, ``tau = m / L**2``.

    The residual is the metric norm of the update. Running out of iterations
    is reported through ``converged=False``, not raised.
    """
    if not (tol > 0):
        raise RejectedInput("tol must be positive")
    n = inst.rhs.size
    met = inst.metric if isinstance(inst.metric, Metric) else Metric(inst.metric, n)
    project = inst.projector
    if project is None:
        project = inst.set.metric_projector(met.G)
    rhs = inst.rhs if inst.phi_gradient is None else inst.rhs - np.asarray(inst.phi_gradient)
    u = np.zeros(n) if start is None else np.array(start, dtype=float)
    L, estimated = inst.L, False
    if L is None:
        L = max(1.5 * estimate_lipschitz(inst.operator, met, u), inst.m)
        estimated = True
    tau = inst.m / L ** 2
    if not (tau > 0) or not np.isfinite(tau):
        raise RejectedInput("step size tau must be positive and finite")
    theory = math.sqrt(max(0.0, 1.0 - (inst.m / L) ** 2))

    def update(x):
        y = x - tau * met.solve(inst.operator(x) - rhs)
        if inst.phi_prox is not None:
            y = inst.phi_prox(y, tau)
        return project(y)

    u = project(u) if start is not None else u
    ratios = []
    prev = None
    res = math.inf
    for it in range(1, max_iter + 1):
        u_new = update(u)
        res = met.norm(u_new - u)
        if prev is not None and prev > 0:
            ratios.append(res / prev)
        prev = res
        u = u_new
        if res <= tol:
            est = max(ratios[-3:]) if ratios else theory
            return SolveReport(u, it, res, True, est, ratios, False, L, estimated)
    est = max(ratios[-3:]) if ratios else theory
    return SolveReport(u, max_iter, res, False, est, ratios, False, L, estimated)


def vi_gap(inst, u, v):
    """``<Op(u) - rhs, v - u> + phi(v) - phi(u)``; nonnegative at a solution."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    val = float((inst.operator(u) - inst.rhs) @ (v - u))
    if inst.phi_gradient is not None:
        val += float(np.asarray(inst.phi_gradient) @ (v - u))
    if inst.phi_value is not None:
        val += inst.phi_value(v) - inst.phi_value(u)
    return val


def solve_quasi_vi(op_C_at_t, j, w, rhs, set, tol=1e-10, max_iter=500, *, m, L=None,
                   alpha1=None, metric=None, projector=None, start=None,
                   inner_tol=None, inner_max_iter=10000, override_margin=False):
    """Solve the VI whose functional ``j(w, z, .)`` is frozen at ``z = trace(u)``.

    Each outer iteration solves the elliptic VI with ``z`` taken from the
    previous iterate. For a ``j`` linear in its last argument the inner
    problem is a gradient shift of the load. The outer loop stops when the
    distance to the fixed point is below ``tol`` by the Banach estimate
    ``|u_k - u| <= (q |u_k - u_{k-1}| + inner_tol) / (1 - q)``, with ``q = alpha1 / m`` when
    that is below one and the observed change ratio otherwise. When the
    geometric mean of the last five change ratios is not below one the loop
    stops with ``stagnated=True``.

    Parameters
    ----------
    op_C_at_t : callable
        ``v -> V*-array`` at the frozen time.
    j : JSpec
    w : ndarray
        Frozen wear.
    m, L : float
        Constants of ``op_C_at_t`` in ``metric``.
    alpha1 : float, optional
        Declared sensitivity of ``j`` in its second argument; if given,
        ``m <= alpha1`` is refused unless ``override_margin``.
    """
    if alpha1 is not None and m <= alpha1 and not override_margin:
        raise InfeasibleProblem(
            f"contraction margin violated: m_C <= alpha_1 ({m:.6g} <= {alpha1:.6g})")
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    if not j.linear_in_v and not j.identity_trace:
        raise RejectedInput("a nonlinear j is supported only with the identity trace")
    met = metric if isinstance(metric, Metric) else Metric(metric, n)
    if projector is None:
        projector = set.metric_projector(met.G)
    if inner_tol is None:
        inner_tol = tol * 1e-2
    u = np.zeros(n) if start is None else np.array(start, dtype=float)
    ratios = []
    prev = None
    res = math.inf
    inner_total = 0
    L_used, L_est = (L if L is not None else math.nan), False
    for it in range(1, max_iter + 1):
        z = j.trace(u)
        if j.linear_in_v:
            inst = ViInstance(op_C_at_t, rhs, set, m=m, L=L, metric=met,
                              phi_gradient=j.gradient_in_v(w, z), projector=projector)
        else:
            zz = z
            inst = ViInstance(op_C_at_t, rhs, set, m=m, L=L, metric=met,
                              phi_prox=lambda point, step, zz=zz: j.prox(w, zz, point, step),
                              projector=projector)
        rep = solve_vi(inst, tol=inner_tol, max_iter=inner_max_iter, start=u)
        inner_total += rep.iterations
        L_used, L_est = rep.L_used, rep.L_estimated
        res = met.norm(rep.solution - u)
        u = rep.solution
        if prev is not None and prev > 0:
            ratios.append(res / prev)
        prev = res
        if alpha1 is not None and alpha1 < m:
            q = alpha1 / m
        else:
            q = min(max(ratios[-3:]), 0.99) if ratios else 0.0
        # each inner solve is only inner_tol accurate, which the map amplifies by 1 / (1 - q)
        if max(res, (q * res + inner_tol) / (1.0 - q)) <= tol or res <= 1e-3 * tol:
            est = max(ratios[-3:]) if ratios else 0.0
            return SolveReport(u, it, res, True, est, ratios, False, L_used, L_est, inner_total)
        if noncontracting(ratios):
            return SolveReport(u, it, res, False, max(ratios[-STAGNATION_WINDOW:]), ratios,
                               True, L_used, L_est, inner_total)
    est = max(ratios[-3:]) if ratios else math.nan
    return SolveReport(u, max_iter, res, False, est, ratios, False, L_used, L_est, inner_total)
