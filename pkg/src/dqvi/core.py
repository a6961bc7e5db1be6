"""Problem definition for the coupled ODE / quasi-VI / parabolic-VI system.

The system couples

* a wear ODE ``w' = F(t, w, u')``,
* a history-dependent quasi-variational inequality for the velocity ``u'``
  with elastic part ``A``, Volterra kernel ``B``, viscous part ``C`` and a
  nonsmooth functional ``j(w, u', .)``, and
* a parabolic variational inequality for the damage field ``zeta`` with
  source ``phi`` and bilinear form ``a``.

:class:`DqviProblem` bundles operator handles with the Lipschitz and
monotonicity constants declared by whoever built the problem. The constants
are audited by sampling in :func:`validate_hypotheses`; sampling can falsify a
declared constant but never certify it.
"""

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import InfeasibleProblem, RejectedInput
from .spaces import ConvexSet, DiscreteSpace

MARGIN_MESSAGE = "contraction margin violated: m_C <= alpha_1"


def _identity(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Constants:
    """Declared constants of the hypotheses.

    ``rho`` bounds the kernel growth ``|B(t,u,zeta)| <= rho (|u| + |zeta|)``
    uniformly in the lag.
    """

    L_A: float = 0.0
    L_B: float = 0.0
    rho: float = 0.0
    L_C1: float = 0.0
    L_C2: float = 0.0
    m_C: float = 1.0
    alpha0: float = 0.0
    alpha1: float = 0.0
    L_F: float = 0.0
    L_phi: float = 0.0
    a1: float = 0.0
    a2: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise RejectedInput(f"constant {f.name} must be finite and nonnegative, got {v}")
        if self.T <= 0:
            raise RejectedInput("time horizon T must be positive")

    @property
    def margin(self):
        return self.m_C - self.alpha1

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class JSpec:
    """The functional ``j(w, z, v)``, convex in ``v``.

    ``z`` and ``v`` are boundary-trace arrays; ``trace`` maps a V-array to its
    trace and ``trace_adjoint`` lifts a trace load back to a V*-array. When
    ``linear_in_v`` is set, ``gradient_in_v(w, z)`` returns the V*-array ``g``
    with ``j(w, z, trace(v)) = g . v``. A time-dependent functional supplies
    ``bind(t)`` returning the frozen-time :class:`JSpec`.
    """

    evaluate: Callable
    prox: Optional[Callable] = None
    linear_in_v: bool = False
    gradient_in_v: Optional[Callable] = None
    trace: Callable = _identity
    trace_adjoint: Callable = _identity
    identity_trace: bool = True
    bind: Optional[Callable] = None

    def at(self, t):
        return self if self.bind is None else self.bind(t)

    def __post_init__(self):
        if self.linear_in_v and self.gradient_in_v is None:
            raise RejectedInput("a linear j needs gradient_in_v")
        if not self.linear_in_v and self.prox is None:
            raise RejectedInput("a nonlinear j needs a proximal map")


def zero_j():
    """``j = 0``."""
    return JSpec(evaluate=lambda w, z, v: 0.0, linear_in_v=True,
                 gradient_in_v=lambda w, z: np.zeros_like(np.asarray(z, dtype=float)))


def linear_j(coef_w, coef_z):
    """``j(w, z, v) = (coef_w w + coef_z z) . v`` with matrices ``coef_w``, ``coef_z``.

    Identity trace; ``alpha0 = |coef_w|`` and ``alpha1 = |coef_z|`` in the
    Euclidean norms.
    """
    cw = np.atleast_2d(np.asarray(coef_w, dtype=float))
    cz = np.atleast_2d(np.asarray(coef_z, dtype=float))

    def grad(w, z):
        return cw @ np.asarray(w, dtype=float) + cz @ np.asarray(z, dtype=float)

    return JSpec(evaluate=lambda w, z, v: float(grad(w, z) @ np.asarray(v, dtype=float)),
                 linear_in_v=True, gradient_in_v=grad)


@dataclass(frozen=True, eq=False)
class DqviProblem:
    """Operator bundle of the coupled system on finite-dimensional spaces.

    Operator signatures: ``op_A(t, u)``, ``op_B(lag, u, zeta)``, ``op_C(t, v)``
    return V*-arrays; ``op_F(t, w, v)`` returns a W-array; ``op_phi(t, u,
    zeta)`` returns nodal Y1 values paired through ``space_Y.gram_pivot``;
    ``forcing(t)`` returns a V*-array.

    ``vi_metric`` and ``vi_bounds`` choose the inner product used by the VI
    solver and the strong-monotonicity / Lipschitz bounds of ``op_C`` with
    respect to it. They default to the V Gram matrix with ``(m_C, L_C1)``.
    """

    space_V: DiscreteSpace
    space_Y: DiscreteSpace
    space_W: DiscreteSpace
    K_V: ConvexSet
    K_Y: ConvexSet
    op_A: Callable
    op_B: Callable
    op_C: Callable
    op_F: Callable
    op_phi: Callable
    form_a: np.ndarray
    j: JSpec
    forcing: Callable
    u0: np.ndarray
    w0: np.ndarray
    zeta0: np.ndarray
    constants: Constants
    vi_metric: Optional[np.ndarray] = None
    vi_bounds: Optional[tuple] = None
    override_margin: bool = False
    name: str = "problem"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.constants
        if c.m_C <= c.alpha1 and not self.override_margin:
            raise InfeasibleProblem(
                f"{MARGIN_MESSAGE} (m_C={c.m_C:.6g}, alpha_1={c.alpha1:.6g})")
        dv, dy, dw = self.space_V.dim, self.space_Y.dim, self.space_W.dim
        for name, arr, d in (("u0", self.u0, dv), ("w0", self.w0, dw), ("zeta0", self.zeta0, dy)):
            a = np.asarray(arr, dtype=float)
            if a.shape != (d,):
                raise RejectedInput(f"{name} has shape {a.shape}, expected {(d,)}")
            object.__setattr__(self, name, a)
        if not self.K_V.contains(self.u0):
            raise RejectedInput("u0 is not in K_V")
        if not self.K_Y.contains(self.zeta0):
            raise RejectedInput("zeta0 is not in K_Y")
        a = np.asarray(self.form_a, dtype=float)
        if a.shape != (dy, dy):
            raise RejectedInput("form_a has the wrong shape")
        scale = max(float(np.max(np.abs(a))), 1e-300)
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise RejectedInput("form_a is not symmetric")
        object.__setattr__(self, "form_a", 0.5 * (a + a.T))
        if c.a2 <= 0:
            raise RejectedInput("a2 must be positive")
        if self.vi_bounds is not None:
            m, L = self.vi_bounds
            if m <= 0 or (L is not None and L < m):
                raise RejectedInput("vi_bounds must satisfy 0 < m <= L")

    @property
    def T(self):
        return self.constants.T

    @property
    def metric(self):
        return self.space_V.gram_primary if self.vi_metric is None else self.vi_metric

    @property
    def bounds(self):
        if self.vi_bounds is not None:
            return self.vi_bounds
        return (self.constants.m_C, self.constants.L_C1 or None)

    @cached_property
    def vi_metric_factored(self):
        from .vi_solver import Metric
        return Metric(self.metric, self.space_V.dim)

    @cached_property
    def vi_projector(self):
        return self.K_V.metric_projector(self.metric)


def contraction_constants(p):
    """Return ``(c_p, c_q, c_r)`` bounding the velocity's sensitivity.

    For solutions driven by two wear histories and two damage histories,

    ``|u'_1(t) - u'_2(t)| <= c_q int_0^t |w_1 - w_2| + c_p |w_1(t) - w_2(t)|
    + c_r |zeta_1 - zeta_2|_{L2(0,T;Y1)}``

    with every constant evaluated at the horizon ``t = T``.
    """
    c = p.constants if isinstance(p, DqviProblem) else p
    gap = c.m_C - c.alpha1
    if gap <= 0:
        raise InfeasibleProblem(MARGIN_MESSAGE)
    T = c.T
    growth = math.exp((2.0 * c.L_A * T + c.L_B * T * T) / (2.0 * gap))
    c_p = c.alpha0 / gap
    c_q = (c.L_A + c.L_B * T) * c.alpha0 / gap ** 2 * growth
    c_r = (c.L_B * math.sqrt(T) / gap
           + 2.0 * c.L_B * T ** 1.5 * (c.L_A + c.L_B * T) / (3.0 * gap ** 2) * growth)
    return c_p, c_q, c_r


@dataclass
class HypothesisCheck:
    name: str
    declared: float
    observed: float
    ratio: float
    passed: bool
    note: str = ""


@dataclass
class HypothesisReport:
    checks: list
    margin: float
    constants: dict
    contraction: Optional[tuple]

    @property
    def passed(self):
        return self.margin > 0 and all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def lines(self):
        out = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            out.append(f"{status}  {c.name:<30} declared={c.declared:.6g} "
                       f"observed={c.observed:.6g} ratio={c.ratio:.4g} {c.note}".rstrip())
        status = "pass" if self.margin > 0 else "FAIL"
        out.append(f"{status}  {'margin m_C - alpha_1':<30} value={self.margin:.6g}")
        if self.contraction is not None:
            cp, cq, cr = self.contraction
            out.append(f"info  contraction constants c_p={cp:.6g} c_q={cq:.6g} c_r={cr:.6g}")
        return out


def _upper_check(name, declared, observed, rtol, note=""):
    if observed <= 0.0:
        ratio = 0.0
    elif declared <= 0.0:
        ratio = math.inf
    else:
        ratio = observed / declared
    return HypothesisCheck(name, declared, observed, ratio, ratio <= 1.0 + rtol, note)


def validate_hypotheses(p, samples=20, rng_seed=0, rtol=1e-8):
    """Audit the declared constants of ``p`` against random samples.

    Each Lipschitz constant is compared with the largest difference quotient
    seen over ``samples`` random pairs; strong monotonicity of ``op_C`` and
    the coercivity of ``a`` are compared from below. Violations become failed
    entries in the report, never exceptions.
    """
    if samples < 1:
        raise RejectedInput("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    c = p.constants
    V, Y, W = p.space_V, p.space_Y, p.space_W
    dv, dy, dw = V.dim, Y.dim, W.dim
    T = c.T
    def rv(d):
        return rng.standard_normal(d) * 10.0 ** rng.uniform(-2, 1)

    obs = dict(A=0.0, B=0.0, rho=0.0, C1=0.0, C2=0.0, j=0.0, F=0.0, phi=0.0)
    mono = math.inf
    for _ in range(samples):
        t = rng.uniform(0.0, T)
        t2 = rng.uniform(0.0, T)
        u1, u2, v1, v2 = rv(dv), rv(dv), rv(dv), rv(dv)
        z1, z2 = rv(dy), rv(dy)
        w1, w2 = rv(dw), rv(dw)
        du = V.norm(u1 - u2)
        dz_Y = Y.norm(z1 - z2)
        dz_piv = Y.norm(z1 - z2, "pivot")
        dw_ = W.norm(w1 - w2)
        dvv = V.norm(v1 - v2)

        dA = V.dual_norm(p.op_A(t, u1) - p.op_A(t, u2))
        obs["A"] = max(obs["A"], dA / du)
        dB = V.dual_norm(p.op_B(t, u1, z1) - p.op_B(t, u2, z2))
        obs["B"] = max(obs["B"], dB / (du + dz_Y))
        size = V.norm(u1) + Y.norm(z1)
        obs["rho"] = max(obs["rho"], V.dual_norm(p.op_B(t, u1, z1)) / size)
        dC = p.op_C(t, u1) - p.op_C(t, u2)
        obs["C1"] = max(obs["C1"], V.dual_norm(dC) / du)
        mono = min(mono, float(dC @ (u1 - u2)) / du ** 2)
        if t != t2:
            obs["C2"] = max(obs["C2"],
                            V.dual_norm(p.op_C(t, u1) - p.op_C(t2, u1)) / abs(t - t2))
        j = p.j.at(t)
        g1, g2 = j.trace(u1), j.trace(u2)
        s1, s2 = j.trace(v1), j.trace(v2)
        lhs = (j.evaluate(w1, g1, s2) - j.evaluate(w1, g1, s1)
               + j.evaluate(w2, g2, s1) - j.evaluate(w2, g2, s2))
        bound = c.alpha0 * dw_ * dvv + c.alpha1 * du * dvv
        if lhs > 0:
            ratio = math.inf if bound <= 0 else lhs / bound
            obs["j"] = max(obs["j"], ratio)
        dF = W.norm(p.op_F(t, w1, u1) - p.op_F(t, w2, u2))
        obs["F"] = max(obs["F"], dF / (du + dw_))
        dphi = Y.norm(p.op_phi(t, u1, z1) - p.op_phi(t, u2, z2), "pivot")
        obs["phi"] = max(obs["phi"], dphi / (du + dz_piv))

    checks = [
        _upper_check("A Lipschitz L_A", c.L_A, obs["A"], rtol),
        _upper_check("B Lipschitz L_B", c.L_B, obs["B"], rtol),
        _upper_check("B growth rho", c.rho, obs["rho"], rtol),
        _upper_check("C Lipschitz L_C1", c.L_C1, obs["C1"], rtol),
        _upper_check("C time Lipschitz L_C2", c.L_C2, obs["C2"], rtol),
    ]
    mono_ratio = math.inf if mono <= 0 else c.m_C / mono
    checks.append(HypothesisCheck("C strong monotone m_C", c.m_C, mono, mono_ratio,
                                  mono_ratio <= 1.0 + rtol))
    jr = obs["j"]
    checks.append(HypothesisCheck("j sensitivity alpha_0/alpha_1", 1.0, jr, jr,
                                  jr <= 1.0 + rtol, "observed = worst lhs/bound"))
    checks.append(_upper_check("F Lipschitz L_F", c.L_F, obs["F"], rtol))
    checks.append(_upper_check("phi Lipschitz L_phi", c.L_phi, obs["phi"], rtol))

    a = p.form_a
    sym = float(np.max(np.abs(a - a.T), initial=0.0))
    lam = float(linalg.eigh(a + c.a1 * Y.gram_pivot, Y.gram_primary, eigvals_only=True)[0])
    coer_ratio = math.inf if lam <= 0 else c.a2 / lam
    checks.append(HypothesisCheck("a coercivity a_2", c.a2, lam, coer_ratio,
                                  coer_ratio <= 1.0 + rtol and sym == 0.0))

    margin = c.m_C - c.alpha1
    contraction = contraction_constants(c) if margin > 0 else None
    return HypothesisReport(checks, margin, c.as_dict(), contraction)
