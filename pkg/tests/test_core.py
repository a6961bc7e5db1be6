import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvi.builtin import builtin_problem, scalar_problem
from dqvi.core import (Constants, DqviProblem, JSpec, contraction_constants, linear_j,
                       validate_hypotheses, zero_j)
from dqvi.errors import InfeasibleProblem, RejectedInput
from dqvi.spaces import DiscreteSpace, box_normal_set, unit_interval_set, whole_space


def make_problem(dim=3, constants=None, op_A=None, j=None, **kw):
    """Small problem with identity-Gram ``op_C`` and zero everything else."""
    V = DiscreteSpace.euclidean(dim, "V")
    Y = DiscreteSpace.euclidean(2, "Y")
    W = DiscreteSpace.euclidean(1, "W")
    zero = lambda *a: np.zeros(dim)
    args = dict(
        space_V=V, space_Y=Y, space_W=W, K_V=whole_space(dim), K_Y=unit_interval_set(2),
        op_A=op_A or (lambda t, u: np.zeros(dim)), op_B=lambda lag, u, z: np.zeros(dim),
        op_C=lambda t, v: np.asarray(v, dtype=float), op_F=lambda t, w, v: np.zeros(1),
        op_phi=lambda t, u, z: np.zeros(2), form_a=np.zeros((2, 2)), j=j or zero_j(),
        forcing=zero, u0=np.zeros(dim), w0=np.zeros(1), zeta0=np.full(2, 0.5),
        constants=constants or Constants(m_C=1.0, L_C1=1.0, a1=1.0, a2=1.0))
    args.update(kw)
    return DqviProblem(**args)


# ---- construction ----------------------------------------------------------------

def test_margin_rejected_at_construction():
    with pytest.raises(InfeasibleProblem, match="contraction margin violated"):
        make_problem(constants=Constants(m_C=1.0, L_C1=1.0, alpha1=1.0))
    p = make_problem(constants=Constants(m_C=1.0, L_C1=1.0, alpha1=1.0), override_margin=True)
    assert p.constants.margin == 0.0


def test_initial_data_must_be_feasible():
    with pytest.raises(RejectedInput, match="zeta0"):
        make_problem(zeta0=np.array([0.5, 1.5]))
    with pytest.raises(RejectedInput, match="u0"):
        make_problem(K_V=box_normal_set(3, 0.1, [0]), u0=np.array([1.0, 0.0, 0.0]))
    with pytest.raises(RejectedInput, match="shape"):
        make_problem(u0=np.zeros(2))


def test_form_a_checks():
    with pytest.raises(RejectedInput, match="symmetric"):
        make_problem(form_a=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(RejectedInput, match="a2"):
        make_problem(constants=Constants(m_C=1.0, L_C1=1.0, a2=0.0))


def test_constants_nonnegative():
    with pytest.raises(RejectedInput):
        Constants(L_A=-1.0)
    with pytest.raises(RejectedInput):
        Constants(T=0.0)
    with pytest.raises(RejectedInput):
        Constants(L_B=math.nan)


# ---- validate_hypotheses -----------------------------------------------------------

def test_identity_gram_problem_passes_with_unit_margin():
    rep = validate_hypotheses(make_problem(), samples=30)
    assert rep.passed, rep.lines()
    assert rep.margin == 1.0


def test_zero_operators_pass():
    rep = validate_hypotheses(make_problem(dim=1), samples=10)
    assert rep.passed


def test_scaled_operator_flagged_with_ratio_two():
    p = make_problem(op_A=lambda t, u: 2.0 * np.asarray(u),
                     constants=Constants(L_A=1.0, m_C=1.0, L_C1=1.0, a1=1.0, a2=1.0))
    rep = validate_hypotheses(p, samples=10)
    assert not rep.passed
    failed = rep.failed()
    assert [c.name for c in failed] == ["A Lipschitz L_A"]
    assert failed[0].ratio == pytest.approx(2.0, rel=1e-12)


def test_overstated_monotonicity_flagged():
    p = make_problem(constants=Constants(m_C=1.5, L_C1=1.5, a1=1.0, a2=1.0))
    rep = validate_hypotheses(p, samples=10)
    assert "C strong monotone m_C" in [c.name for c in rep.failed()]


def test_understated_j_sensitivity_flagged():
    p = make_problem(j=linear_j(np.zeros((3, 1)), 0.3 * np.eye(3)),
                     constants=Constants(m_C=1.0, L_C1=1.0, alpha1=0.1, a1=1.0, a2=1.0))
    rep = validate_hypotheses(p, samples=20)
    assert "j sensitivity alpha_0/alpha_1" in [c.name for c in rep.failed()]
    p = make_problem(j=linear_j(np.zeros((3, 1)), 0.3 * np.eye(3)),
                     constants=Constants(m_C=1.0, L_C1=1.0, alpha1=0.3, a1=1.0, a2=1.0))
    assert validate_hypotheses(p, samples=20).passed


def test_validate_deterministic():
    p = builtin_problem("linear")
    a = validate_hypotheses(p, samples=15, rng_seed=3)
    b = validate_hypotheses(p, samples=15, rng_seed=3)
    assert [(c.name, c.observed) for c in a.checks] == [(c.name, c.observed) for c in b.checks]


def test_builtins_pass_their_audit():
    for name in ("zero", "linear", "reference", "decoupled"):
        rep = validate_hypotheses(builtin_problem(name), samples=40)
        assert rep.passed, (name, rep.lines())


def test_report_lines_mark_status():
    rep = validate_hypotheses(make_problem(), samples=5)
    lines = rep.lines()
    assert all(line.startswith(("pass", "FAIL", "info")) for line in lines)
    assert any("margin" in line for line in lines)


def test_samples_must_be_positive():
    with pytest.raises(RejectedInput):
        validate_hypotheses(make_problem(), samples=0)


# ---- contraction constants ---------------------------------------------------------

def test_contraction_constants_hand_values():
    c = Constants(L_A=1.0, L_B=1.0, alpha0=1.0, alpha1=0.0, m_C=2.0, T=1.0)
    cp, cq, cr = contraction_constants(c)
    # gap 2, exponent (2*1*1 + 1*1)/(2*2) = 3/4
    assert cp == 0.5
    assert cq == pytest.approx(0.5 * math.exp(0.75), rel=1e-14)
    assert cq == pytest.approx(1.05850, abs=5e-6)
    # L_B sqrt(T)/gap + 2 L_B T^1.5 (L_A + L_B T) / (3 gap^2) * e^{3/4} = 1/2 + e^{3/4}/3
    assert cr == pytest.approx(0.5 + math.exp(0.75) / 3.0, rel=1e-14)
    assert cr == pytest.approx(1.20567, abs=5e-6)


def test_zero_alpha0_zeroes_cp_cq():
    cp, cq, cr = contraction_constants(Constants(L_A=2.0, L_B=1.0, m_C=1.0, T=2.0))
    assert cp == 0.0 and cq == 0.0 and cr > 0


def test_zero_LB_zeroes_cr():
    cp, cq, cr = contraction_constants(Constants(L_A=2.0, alpha0=1.0, m_C=3.0, alpha1=1.0))
    assert cr == 0.0 and cp == 0.5


def test_contraction_constants_need_margin():
    with pytest.raises(InfeasibleProblem):
        contraction_constants(Constants(m_C=1.0, alpha1=1.0))


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 0.9),
       st.floats(0.05, 3.0), st.floats(1.0, 2.0))
def test_contraction_constants_monotone_in_T(LA, LB, a0, a1, T, factor):
    base = Constants(L_A=LA, L_B=LB, alpha0=a0, alpha1=a1, m_C=1.0, T=T)
    longer = Constants(L_A=LA, L_B=LB, alpha0=a0, alpha1=a1, m_C=1.0, T=T * factor)
    _, q1, r1 = contraction_constants(base)
    _, q2, r2 = contraction_constants(longer)
    assert q2 >= q1 * (1 - 1e-14)
    assert r2 >= r1 * (1 - 1e-14)


def test_contraction_constants_of_problem():
    p = builtin_problem("reference")
    assert contraction_constants(p) == contraction_constants(p.constants)


# ---- JSpec -------------------------------------------------------------------------

def test_linear_j_evaluate_matches_pairing():
    rng = np.random.default_rng(0)
    cw, cz = rng.standard_normal((3, 2)), rng.standard_normal((3, 3))
    j = linear_j(cw, cz)
    for _ in range(20):
        w, z, v = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
        assert abs(j.evaluate(w, z, v) - j.gradient_in_v(w, z) @ v) <= 1e-10


def test_jspec_requires_matching_maps():
    with pytest.raises(RejectedInput):
        JSpec(evaluate=lambda w, z, v: 0.0, linear_in_v=True)
    with pytest.raises(RejectedInput):
        JSpec(evaluate=lambda w, z, v: 0.0, linear_in_v=False)


def soft_threshold_j(weight):
    """``j(w, z, v) = weight (1 + |z|_1) |v|_1`` with its proximal map."""
    def evaluate(w, z, v):
        return weight * (1.0 + np.abs(z).sum()) * float(np.abs(v).sum())

    def prox(w, z, x, step):
        lam = step * weight * (1.0 + np.abs(z).sum())
        return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)

    return JSpec(evaluate=evaluate, prox=prox)


def test_prox_firmly_nonexpansive_random_pairs():
    j = soft_threshold_j(0.3)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x, y, z = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
        px, py = j.prox(None, z, x, 0.7), j.prox(None, z, y, 0.7)
        assert np.dot(px - py, px - py) <= np.dot(px - py, x - y) + 1e-12


def test_time_binding():
    base = linear_j([[1.0]], [[0.0]])
    j = JSpec(evaluate=base.evaluate, linear_in_v=True, gradient_in_v=base.gradient_in_v,
              bind=lambda t: linear_j([[t]], [[0.0]]))
    assert j.at(2.0).gradient_in_v(np.ones(1), np.zeros(1))[0] == 2.0
    assert base.at(5.0) is base


def test_scalar_problem_rejects_bad_c():
    with pytest.raises(RejectedInput):
        scalar_problem(c=0.0)
