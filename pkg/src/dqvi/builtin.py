"""Scalar (one-dimensional) instances of the coupled system.

All operators are affine:

* ``A(t, u) = a u``
* ``B(lag, u, zeta) = exp(-lag / tau_r) (b u + bz zeta)``
* ``C(t, v) = c v``
* ``j(w, z, v) = (jw w + jz z) v``
* ``F(t, w, v) = fw w + fv v``
* ``phi(t, u, zeta) = pu u + pz zeta + p0``
* ``a(zeta, eta) = kappa zeta eta``
* ``f(t) = f0 + f1 t``

With the constraints inactive the system is a linear ODE in
``(u, h, w, zeta)`` where ``h`` is the history integral, which gives a closed
form through the matrix exponential.
"""

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import linalg

from .core import Constants, DqviProblem, linear_j
from .errors import OracleInvalid, RejectedInput
from .spaces import DiscreteSpace, box_normal_set, unit_interval_set, whole_space


@dataclass(frozen=True)
class ScalarParams:
    a: float = 0.0
    b: float = 0.0
    bz: float = 0.0
    tau_r: float = 1.0
    c: float = 1.0
    jw: float = 0.0
    jz: float = 0.0
    fw: float = 0.0
    fv: float = 0.0
    pu: float = 0.0
    pz: float = 0.0
    p0: float = 0.0
    kappa: float = 0.0
    f0: float = 0.0
    f1: float = 0.0
    u0: float = 0.0
    w0: float = 0.0
    zeta0: float = 0.5
    g: float = math.inf
    T: float = 1.0

    def __post_init__(self):
        if self.tau_r <= 0:
            raise RejectedInput("tau_r must be positive")
        if self.kappa < 0:
            raise RejectedInput("kappa must be nonnegative")

    def constants(self):
        L_B = max(abs(self.b), abs(self.bz))
        return Constants(L_A=abs(self.a), L_B=L_B, rho=L_B, L_C1=self.c, L_C2=0.0,
                         m_C=self.c, alpha0=abs(self.jw), alpha1=abs(self.jz),
                         L_F=max(abs(self.fw), abs(self.fv)),
                         L_phi=max(abs(self.pu), abs(self.pz)), a1=1.0, a2=1.0, T=self.T)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def scalar_problem(params=None, override_margin=False, name="scalar", **overrides):
    """Build a one-dimensional :class:`DqviProblem` from :class:`ScalarParams`."""
    prm = params or ScalarParams()
    if overrides:
        prm = replace(prm, **overrides)
    if prm.c <= 0:
        raise RejectedInput("c must be positive")
    one = DiscreteSpace.euclidean(1, "V")
    Y = DiscreteSpace.euclidean(1, "Y")
    W = DiscreteSpace.euclidean(1, "W")
    K_V = whole_space(1) if math.isinf(prm.g) else box_normal_set(1, prm.g, [0])
    P = prm

    def op_A(t, u):
        return P.a * np.asarray(u, dtype=float)

    def op_B(lag, u, zeta):
        return math.exp(-lag / P.tau_r) * (P.b * np.asarray(u, dtype=float)
                                           + P.bz * np.asarray(zeta, dtype=float))

    def op_C(t, v):
        return P.c * np.asarray(v, dtype=float)

    def op_F(t, w, v):
        return P.fw * np.asarray(w, dtype=float) + P.fv * np.asarray(v, dtype=float)

    def op_phi(t, u, zeta):
        return (P.pu * np.asarray(u, dtype=float) + P.pz * np.asarray(zeta, dtype=float)
                + P.p0)

    def forcing(t):
        return np.array([P.f0 + P.f1 * t])

    return DqviProblem(
        space_V=one, space_Y=Y, space_W=W, K_V=K_V, K_Y=unit_interval_set(1),
        op_A=op_A, op_B=op_B, op_C=op_C, op_F=op_F, op_phi=op_phi,
        form_a=np.array([[P.kappa]]), j=linear_j([[P.jw]], [[P.jz]]), forcing=forcing,
        u0=np.array([P.u0]), w0=np.array([P.w0]), zeta0=np.array([P.zeta0]),
        constants=P.constants(), override_margin=override_margin, name=name,
        extras={"params": P})


LINEAR = ScalarParams(a=1.0, b=0.5, bz=0.2, tau_r=0.5, c=2.0, jw=0.2, jz=0.3, fw=-1.0,
                      fv=0.5, pu=0.1, pz=-0.5, p0=0.3, kappa=0.1, f0=1.0, f1=1.0,
                      zeta0=0.5)
REFERENCE = ScalarParams(a=1.0, b=1.0, c=2.0, jw=1.0, f0=1.0, zeta0=0.5)
ZERO = ScalarParams(c=1.0, zeta0=0.5)
DECOUPLED = ScalarParams(a=1.0, c=2.0, fw=-1.0, kappa=0.5, p0=0.2, f0=3.0, w0=1.0,
                         zeta0=0.5)
MARGIN_VIOLATION = ScalarParams(a=1.0, c=0.5, jz=1.0, f0=1.0, zeta0=0.5)

BUILTINS = {
    "zero": ZERO,
    "linear": LINEAR,
    "reference": REFERENCE,
    "decoupled": DECOUPLED,
    "margin_violation": MARGIN_VIOLATION,
}


def builtin_problem(name, override_margin=False, **overrides):
    """One of the named scalar instances, optionally with parameter overrides."""
    if name not in BUILTINS:
        raise RejectedInput(f"unknown built-in problem {name!r}; choose from {sorted(BUILTINS)}")
    unknown = set(overrides) - set(ScalarParams.field_names())
    if unknown:
        raise RejectedInput(f"unknown parameters {sorted(unknown)}")
    return scalar_problem(BUILTINS[name], override_margin=override_margin, name=name,
                          **overrides)


def exact_linear_solution(params, times):
    """Closed-form ``(u, udot, w, zeta)`` of a scalar instance with inactive sets.

    Raises :class:`OracleInvalid` when the damage leaves ``(0, 1)`` or the
    velocity reaches ``g``.
    """
    P = params
    d = P.c + P.jz
    # state (u, h, w, zeta, 1, t)
    M = np.zeros((6, 6))
    M[0] = [-P.a / d, -1.0 / d, -P.jw / d, 0.0, P.f0 / d, P.f1 / d]
    M[1, :4] = [P.b, -1.0 / P.tau_r, 0.0, P.bz]
    M[2] = P.fv * M[0]
    M[2, 2] += P.fw
    M[3, :5] = [P.pu, 0.0, 0.0, P.pz - P.kappa, P.p0]
    M[5, 4] = 1.0
    x0 = np.array([P.u0, 0.0, P.w0, P.zeta0, 1.0, 0.0])
    times = np.asarray(times, dtype=float)
    X = np.array([linalg.expm(M * t) @ x0 for t in times])
    udot = X @ M[0]
    zeta = X[:, 3]
    if np.any(zeta <= 0.0) or np.any(zeta >= 1.0):
        raise OracleInvalid("damage leaves (0, 1); the closed form does not apply")
    if np.any(udot >= P.g):
        raise OracleInvalid("velocity reaches the bound g; the closed form does not apply")
    return X[:, 0], udot, X[:, 2], zeta
