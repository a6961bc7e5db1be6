"""Finite-dimensional spaces, norms and convex sets.

A :class:`DiscreteSpace` stores two symmetric positive-definite Gram
matrices: the primary one realises the norm of ``V`` (or ``Y``, ``W``) and the
pivot one realises the norm of the Hilbert pivot space (``H`` or ``Y1``).
Dual elements are plain load arrays; the pairing with a primal coefficient
array is the dot product, and Riesz maps are explicit Gram solves.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import RejectedInput
from .qp import box_qp

__all__ = [
    "DiscreteSpace", "ConvexSet", "BoxSet", "HalfSpaceSet",
    "MetricBoxProjector", "norm", "project_box_normal",
    "project_unit_interval", "box_normal_set", "unit_interval_set",
    "whole_space",
]


def _check_gram(G, dim, name):
    G = np.array(G, dtype=float)
    if G.shape != (dim, dim):
        raise RejectedInput(f"{name} has shape {G.shape}, expected {(dim, dim)}")
    scale = max(float(np.max(np.abs(G))), 1e-300)
    if np.max(np.abs(G - G.T)) > 1e-12 * scale:
        raise RejectedInput(f"{name} is not symmetric")
    G = 0.5 * (G + G.T)
    try:
        factor = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError as exc:
        raise RejectedInput(f"{name} is not positive definite") from exc
    G.setflags(write=False)
    return G, factor


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Coefficient space with primary and pivot Gram matrices."""

    dim: int
    gram_primary: np.ndarray
    gram_pivot: np.ndarray
    label: str = "V"
    _factors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise RejectedInput(f"dim must be a positive integer, got {self.dim}")
        if self.label not in ("V", "Y", "W"):
            raise RejectedInput(f"unknown space label {self.label!r}")
        gp, fp = _check_gram(self.gram_primary, self.dim, "gram_primary")
        gv, fv = _check_gram(self.gram_pivot, self.dim, "gram_pivot")
        object.__setattr__(self, "gram_primary", gp)
        object.__setattr__(self, "gram_pivot", gv)
        self._factors["primary"] = fp
        self._factors["pivot"] = fv

    @classmethod
    def euclidean(cls, dim, label="V"):
        eye = np.eye(dim)
        return cls(dim, eye, eye, label)

    def gram(self, which="primary"):
        if which == "primary":
            return self.gram_primary
        if which == "pivot":
            return self.gram_pivot
        raise RejectedInput(f"which must be 'primary' or 'pivot', got {which!r}")

    def _vec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise RejectedInput(
                f"array of shape {x.shape} does not belong to a {self.dim}-dim space")
        return x

    def inner(self, x, y, which="primary"):
        return float(self._vec(x) @ self.gram(which) @ self._vec(y))

    def norm(self, x, which="primary"):
        x = self._vec(x)
        return float(np.sqrt(max(x @ self.gram(which) @ x, 0.0)))

    def riesz(self, f, which="primary"):
        """Solve ``G x = f``: the primal representative of a dual element."""
        self.gram(which)
        return linalg.cho_solve(self._factors[which], self._vec(f))

    def dual_norm(self, f, which="primary"):
        f = self._vec(f)
        return float(np.sqrt(max(f @ self.riesz(f, which), 0.0)))

    @staticmethod
    def pairing(f, v):
        return float(np.dot(f, v))


def norm(space, x, which="primary"):
    """``sqrt(x' G x)`` for the selected Gram matrix of ``space``."""
    return space.norm(x, which)


def project_box_normal(values, g, normal_indices):
    """Clamp the entries at ``normal_indices`` to be at most ``g``."""
    if g < 0:
        raise RejectedInput("the gap bound g must be nonnegative")
    out = np.array(values, dtype=float)
    idx = np.asarray(normal_indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= out.size):
        raise RejectedInput("normal index out of range")
    out[idx] = np.minimum(out[idx], g)
    return out


def project_unit_interval(values):
    return np.clip(np.asarray(values, dtype=float), 0.0, 1.0)


@dataclass(frozen=True)
class ConvexSet:
    """Closed convex set given by its (Euclidean/lumped) projection."""

    project: Callable[[np.ndarray], np.ndarray]
    membership_tol: float = 1e-12
    description: str = ""

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.max(np.abs(self.project(x) - x), initial=0.0)
                    <= self.membership_tol * max(1.0, float(np.max(np.abs(x), initial=0.0))))

    def metric_projector(self, G):
        if G is None or _is_identity(G):
            return self.project
        raise RejectedInput(
            f"no projection in a non-Euclidean metric for set {self.description!r}")


def _is_identity(G):
    G = np.asarray(G)
    return G.ndim == 2 and G.shape[0] == G.shape[1] and np.array_equal(G, np.eye(G.shape[0]))


@dataclass(frozen=True)
class BoxSet(ConvexSet):
    """Box ``lower <= x <= upper`` with possibly infinite bounds."""

    lower: np.ndarray = None
    upper: np.ndarray = None

    @classmethod
    def from_bounds(cls, lower, upper, description="box", membership_tol=1e-12):
        lower = np.array(lower, dtype=float)
        upper = np.array(upper, dtype=float)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise RejectedInput("empty or malformed box")
        lower.setflags(write=False)
        upper.setflags(write=False)
        return cls(project=lambda x: np.clip(np.asarray(x, dtype=float), lower, upper),
                   membership_tol=membership_tol, description=description,
                   lower=lower, upper=upper)

    @property
    def dim(self):
        return self.lower.size

    def metric_projector(self, G):
        if G is None or _is_identity(G):
            return self.project
        return MetricBoxProjector(self, G)


@dataclass(frozen=True)
class HalfSpaceSet(ConvexSet):
    """Half-space ``{x : a.x <= b}``."""

    normal: np.ndarray = None
    offset: float = 0.0

    @classmethod
    def from_normal(cls, a, b, description="half-space"):
        a = np.array(a, dtype=float)
        nn = float(a @ a)
        if nn == 0.0:
            raise RejectedInput("half-space normal must be nonzero")
        a.setflags(write=False)

        def project(x):
            x = np.asarray(x, dtype=float)
            excess = float(a @ x) - b
            return x - (excess / nn) * a if excess > 0 else x.copy()

        return cls(project=project, description=description, normal=a, offset=float(b))


class MetricBoxProjector:
    """Projection onto a :class:`BoxSet` in the inner product ``x'Gy``.

    Unconstrained coordinates are eliminated through a Schur complement, so
    the box QP that remains lives on the constrained coordinates only.
    """

    def __init__(self, box, G, tol=1e-15):
        G = np.asarray(G, dtype=float)
        n = box.dim
        if G.shape != (n, n):
            raise RejectedInput("metric has the wrong shape")
        self.lower, self.upper = box.lower, box.upper
        self.tol = tol
        bounded = np.isfinite(box.lower) | np.isfinite(box.upper)
        self.idx_c = np.flatnonzero(bounded)
        self.idx_f = np.flatnonzero(~bounded)
        c, f = self.idx_c, self.idx_f
        if f.size:
            factor = linalg.cho_factor(G[np.ix_(f, f)], lower=True)
            self.coupling = linalg.cho_solve(factor, G[np.ix_(f, c)])
            self.schur = G[np.ix_(c, c)] - G[np.ix_(c, f)] @ self.coupling
        else:
            self.coupling = np.zeros((0, c.size))
            self.schur = G[np.ix_(c, c)].copy()
        self.schur = 0.5 * (self.schur + self.schur.T)

    def __call__(self, x):
        x = np.array(x, dtype=float)
        c = self.idx_c
        if c.size == 0:
            return x
        xc = x[c]
        lo = self.lower[c] - xc
        hi = self.upper[c] - xc
        if np.all(lo <= 0.0) and np.all(hi >= 0.0):
            return x
        res = box_qp(self.schur, np.zeros(c.size), lo, hi, tol=self.tol)
        d = res.x
        x[c] = np.clip(xc + d, self.lower[c], self.upper[c])
        if self.idx_f.size:
            x[self.idx_f] -= self.coupling @ d
        return x


def box_normal_set(dim, g, normal_indices):
    """``K_V``: entries at ``normal_indices`` bounded above by ``g``."""
    if g < 0:
        raise RejectedInput("the gap bound g must be nonnegative")
    upper = np.full(dim, np.inf)
    upper[np.asarray(normal_indices, dtype=int)] = g
    return BoxSet.from_bounds(np.full(dim, -np.inf), upper,
                              description=f"normal components <= {g}")


def unit_interval_set(dim):
    """``K_Y``: every entry in ``[0, 1]``."""
    return BoxSet.from_bounds(np.zeros(dim), np.ones(dim), description="[0, 1] clamp")


def whole_space(dim):
    return BoxSet.from_bounds(np.full(dim, -np.inf), np.full(dim, np.inf),
                              description="whole space")
