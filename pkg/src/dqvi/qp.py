"""Box-constrained convex quadratic programs.

Solves ``min 0.5 x'Qx - c'x`` subject to ``lo <= x <= hi`` for a symmetric
positive-definite ``Q`` by projected successive over-relaxation. Every few
sweeps the current active set is frozen and the free block is solved
directly; the polished point is accepted only if it satisfies the KKT
conditions, which makes the final answer exact up to round-off once PSOR has
found the right active set.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class BoxQPResult:
    x: np.ndarray
    iterations: int
    converged: bool
    polished: bool


def kkt_violation(Q, c, x, lo, hi):
    """Largest violation of the box-QP optimality conditions at ``x``."""
    g = Q @ x - c
    viol = 0.0
    # infeasibility
    viol = max(viol, float(np.max(np.maximum(lo - x, 0.0), initial=0.0)))
    viol = max(viol, float(np.max(np.maximum(x - hi, 0.0), initial=0.0)))
    # projected gradient
    step = np.clip(x - g, lo, hi) - x
    return max(viol, float(np.max(np.abs(step), initial=0.0)))


def _polish(Q, c, x, lo, hi, scale):
    n = x.size
    g = Q @ x - c
    eps = 1e-12 * scale
    at_lo = (x <= lo + eps) & (g >= -eps)
    at_hi = (x >= hi - eps) & (g <= eps)
    active = at_lo | at_hi
    free = ~active
    y = x.copy()
    y[at_lo] = lo[at_lo]
    y[at_hi] = hi[at_hi]
    if free.any():
        rhs = c[free] - Q[np.ix_(free, active)] @ y[active]
        try:
            y[free] = np.linalg.solve(Q[np.ix_(free, free)], rhs)
        except np.linalg.LinAlgError:
            return None
    tol = 1e-11 * scale
    if np.any(y < lo - tol) or np.any(y > hi + tol):
        return None
    y = np.clip(y, lo, hi)
    g = Q @ y - c
    gtol = 1e-9 * max(scale, float(np.max(np.abs(c), initial=0.0)), 1e-300)
    if n and (np.any(g[at_lo] < -gtol) or np.any(g[at_hi] > gtol)
              or np.any(np.abs(g[free]) > gtol)):
        return None
    return y


def box_qp(Q, c, lo, hi, x0=None, tol=1e-12, max_iter=10000, omega=1.0,
           polish_every=5):
    """Minimise ``0.5 x'Qx - c'x`` over the box ``[lo, hi]``.

    Parameters
    ----------
    Q : (n, n) ndarray
        Symmetric positive-definite matrix.
    c : (n,) ndarray
        Linear term.
    lo, hi : (n,) ndarray
        Bounds; infinite entries are allowed.
    x0 : (n,) ndarray, optional
        Starting point (clipped into the box). Its active set is tried
        first, so a good guess finishes without any sweep.
    tol : float
        Stop when the largest PSOR update is below ``tol`` relative to
        ``max(1, |x|_inf)``.
    omega : float
        Relaxation factor in ``(0, 2)``.

    Returns
    -------
    BoxQPResult
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    if n == 0:
        return BoxQPResult(np.zeros(0), 0, True, False)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x = np.clip(x, lo, hi)
    diag = np.diag(Q).copy()
    if np.any(diag <= 0):
        raise ValueError("box_qp needs a positive diagonal")
    scale = max(1.0, float(np.max(np.abs(x))))
    y = _polish(Q, c, x, lo, hi, scale)
    if y is not None:
        return BoxQPResult(y, 0, True, True)
    rows = [Q[i] for i in range(n)]
    for it in range(1, max_iter + 1):
        dmax = 0.0
        for i in range(n):
            r = c[i] - rows[i] @ x
            xi = x[i] + omega * r / diag[i]
            if xi < lo[i]:
                xi = lo[i]
            elif xi > hi[i]:
                xi = hi[i]
            d = abs(xi - x[i])
            if d > dmax:
                dmax = d
            x[i] = xi
        scale = max(1.0, float(np.max(np.abs(x))))
        if dmax <= tol * scale or it % polish_every == 0:
            y = _polish(Q, c, x, lo, hi, scale)
            if y is not None:
                return BoxQPResult(y, it, True, True)
            if dmax <= tol * scale:
                return BoxQPResult(x, it, True, False)
    return BoxQPResult(x, max_iter, False, False)
