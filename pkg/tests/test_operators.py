"""Operators, commutators, and the symbolic identity suite."""

import pytest

from cancelfield.jets import (
    DiffExpr,
    JetVar,
    normal_form,
    parse,
    tangential_order,
)
from cancelfield.operators import (
    CLASSICAL_CASES,
    MHD_CASES,
    CancellationField,
    Quotient,
    apply_operator,
    cancellation_hypothesis_rules,
    commutator_with_directional,
    linearize_prandtl,
    magnetic_operator,
    mhd_system,
    prandtl_operator,
    prandtl_system,
    replay_report,
    verify_classical,
    verify_mhd,
)


# ---------------------------------------------------------------------------
# operator application
# ---------------------------------------------------------------------------

def test_apply_operator_velocity():
    P = prandtl_operator()
    assert apply_operator(P, parse("u")) == parse("u_t + u*u_x + w*u_z - mu*u_zz")


def test_apply_operator_annihilates_constants():
    P = prandtl_operator()
    assert apply_operator(P, DiffExpr.number(7)).is_zero
    assert apply_operator(P, parse("5/3")).is_zero


def test_apply_operator_on_coordinate():
    # only the normal-advection term survives on the coordinate function
    P = prandtl_operator()
    assert apply_operator(P, parse("zc")) == parse("w")


def test_apply_operator_linear():
    P = prandtl_operator()
    a, b = parse("u_z*w"), parse("test_x")
    assert P.apply(2 * a + b) == 2 * P.apply(a) + P.apply(b)


# ---------------------------------------------------------------------------
# cancellation fields
# ---------------------------------------------------------------------------

def test_cancellation_field_rejects_tangential_velocity_jets():
    with pytest.raises(ValueError):
        CancellationField(parse("u_x"), DiffExpr.zero())
    with pytest.raises(ValueError):
        CancellationField(parse("u_zz"), parse("w_xz"))
    CancellationField(parse("u_zz"), parse("w_zz"))  # fine
    CancellationField(parse("f"), parse("h"))  # fine


# ---------------------------------------------------------------------------
# commutator verification
# ---------------------------------------------------------------------------

def test_commutator_generic_with_hypothesis():
    rs = prandtl_system(extra_rules=cancellation_hypothesis_rules("mu"))
    report = commutator_with_directional(
        prandtl_operator(), CancellationField.generic(), rs)
    assert report.proved
    assert report.max_tangential_order <= 1
    # hand expansion of the product rule gives exactly this remainder
    assert report.remainder == parse("-2*mu*theta1_z*test_xz - 2*mu*theta2_z*test_zz")
    pairs = [t for t in report.trace if t.get("event") == "cancelling_pair"]
    assert pairs and pairs[0]["plus"] == "w_x*theta1*test_z"


def test_commutator_hypothesis_emits_no_dangerous_terms():
    # assertable on the emitted term list: nothing of tangential order two,
    # and in particular no tangential-normal-velocity against z-of-test pair
    rs = prandtl_system(extra_rules=cancellation_hypothesis_rules("mu"))
    report = commutator_with_directional(
        prandtl_operator(), CancellationField.generic(), rs)
    for (jets, _, _), coeff in report.remainder.terms():
        single = DiffExpr({((tuple(jets)), 0, 0): coeff})
        assert tangential_order(single) <= 1
        has_wx = any(v.base == "w" and v.dx >= 1 and v.dz == 0 for v in jets)
        has_testz = any(v.base == "test" and v.dz >= 1 for v in jets)
        assert not (has_wx and has_testz)


def test_commutator_zero_field():
    report = commutator_with_directional(
        prandtl_operator(),
        CancellationField(DiffExpr.zero(), DiffExpr.zero()),
        prandtl_system())
    assert report.proved
    assert report.remainder.is_zero


def test_commutator_unit_x_fails_with_order_two_term():
    report = commutator_with_directional(
        prandtl_operator(), CancellationField.unit_x(), prandtl_system())
    assert report.status == "failed"
    assert report.max_tangential_order == 2
    assert report.remainder == parse("-u_x*test_x - w_x*test_z")
    assert report.residual == parse("-w_x*test_z")
    assert any(order == 2 for _, order in report.offending_terms)


def test_commutator_shear_curvature_field():
    report = commutator_with_directional(
        prandtl_operator(), CancellationField.shear_curvature(), prandtl_system())
    assert report.proved
    pairs = [t for t in report.trace if t.get("event") == "cancelling_pair"]
    assert any("w_x" in p["plus"] and "test_z" in p["plus"] for p in pairs)


def test_commutator_magnetic_field():
    report = commutator_with_directional(
        magnetic_operator(), CancellationField.magnetic(), mhd_system())
    assert report.proved
    assert report.remainder == parse("-2*kappa*f_z*test_xz + 2*kappa*f_x*test_zz")


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------

def test_linearize_generic_background():
    eq = linearize_prandtl()
    assert eq.loss_term == parse("w*ub_z")
    expected = parse("u_t + ub*u_x + wb*u_z + u*ub_x + w*ub_z - mu*u_zz")
    assert eq.evolution == expected


def test_linearize_zero_background():
    eq = linearize_prandtl(("0", "0"))
    assert eq.evolution == parse("u_t - mu*u_zz")
    assert eq.loss_term.is_zero


def test_linearize_shear_background():
    eq = linearize_prandtl(("ub", "0"), x_independent=True)
    assert eq.loss_term == parse("w*ub_z")
    assert eq.evolution == parse("u_t + ub*u_x + w*ub_z - mu*u_zz")
    assert JetVar("ub", 0, 1, 0) not in eq.evolution.jets()


# ---------------------------------------------------------------------------
# the symbolic suite
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("case", sorted(CLASSICAL_CASES))
def test_classical_cases_prove_with_zero_residual(case):
    report = verify_classical(case)
    assert report.proved
    assert report.residual.is_zero
    assert all(r.is_zero for _, r in report.components)


@pytest.mark.parametrize("case", sorted(MHD_CASES))
def test_mhd_cases_prove(case):
    report = verify_mhd(case)
    assert report.proved
    assert report.residual.is_zero


def test_symmetric_system_remainder_first_order_with_cross_terms():
    report = verify_mhd("symmetric_system_m1")
    assert report.max_tangential_order == 1
    assert report.declared_bound == 1
    # both diffusivities appear in the remainder terms
    note = next(n for n in report.notes if "diffusivity" in n)
    assert "mu" in note and "kappa" in note


def test_theta_uzz_fails_without_divergence_rule():
    report = verify_classical(
        "theta_uzz", system=prandtl_system(include_divergence=False))
    assert report.status == "failed"
    assert report.offending_terms
    # the residual is a consequence of the omitted constraint: restoring the
    # full system reduces it to zero
    full = prandtl_system()
    assert all(normal_form(r, full).is_zero for _, r in report.components)
    # and it visibly carries normal-velocity jets
    assert any(v.base == "w" for _, r in report.components for v in r.jets())


def test_stream_transport_uses_no_stream_evolution_rule():
    # the system used must derive the stream transport, not assume it
    report = verify_mhd("stream_transport")
    assert report.proved
    assert any("constant of integration" in n for n in report.notes)


def test_denominator_cases_record_assumptions():
    for case, needle in (("f1_equals_omega_g1", "u_z"),
                         ("directional_equals_minus_omega_f1", "u_z"),
                         ("symmetric_system_m1", "f")):
        report = (verify_classical(case) if case in CLASSICAL_CASES
                  else verify_mhd(case))
        assert any(needle in note for note in report.notes)


def test_unknown_case_names():
    with pytest.raises(ValueError):
        verify_classical("nope")
    with pytest.raises(ValueError):
        verify_mhd("nope")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def test_trace_replays_bit_exactly():
    rs = prandtl_system()
    report = verify_classical("vorticity_transport")
    initial = prandtl_operator().apply(parse("u_z"))
    assert replay_report(initial, rs, report.trace) == report.components[0][1]


def test_report_serialization():
    report = verify_classical("theta_uzz")
    d = report.to_dict()
    assert d["status"] == "proved"
    assert "trace" not in d
    d2 = report.to_dict(include_trace=True)
    assert isinstance(d2["trace"], list) and d2["trace"]


# ---------------------------------------------------------------------------
# linear combinations of proved identities stay proved
# ---------------------------------------------------------------------------

def test_linear_combination_of_claimed_zeros():
    rs = prandtl_system()
    P = prandtl_operator()
    theta = CancellationField.shear_curvature()
    e1 = P.apply(parse("u_z"))                                  # transport of shear
    e2 = P.apply(parse("u_zz")) - theta.directional(parse("u"))  # curvature identity
    combo = parse("3/7") * e1 - 5 * e2
    assert normal_form(combo, rs).is_zero


# ---------------------------------------------------------------------------
# quotient helper
# ---------------------------------------------------------------------------

def test_quotient_arithmetic_and_derivative():
    om = JetVar("u", 0, 0, 1)
    q = Quotient(parse("u_x"), om, 1)  # u_x / u_z
    dq = q.diff("z")
    assert dq.power == 2
    assert dq.numerator == parse("u_xz*u_z - u_x*u_zz")
    s = q + q
    assert s.power == 1
    assert s.numerator == 2 * parse("u_x")
    mixed = q + dq  # powers 1 and 2 align to 2
    assert mixed.power == 2
    assert mixed.numerator == parse("u_x") * parse("u_z") + dq.numerator
    p = q * q
    assert p.power == 2
    assert p.numerator == parse("u_x") * parse("u_x")
