"""Manufactured cases, residual harness, order fits, radius inequality."""

import math

import numpy as np
import pytest

from cancelfield.grids import Grid2D
from cancelfield.verify import (
    ConvergenceReport,
    InsufficientGrids,
    commutator_residual_numeric,
    convergence_order,
    fit_order,
    manufactured_residual,
    mhd_solver_case,
    mhd_standard_case,
    prandtl_standard_case,
    radius_inequality_check,
)

GRIDS = [Grid2D(n, n + 1, 10.0) for n in (32, 64, 128)]


# ---------------------------------------------------------------------------
# manufactured cases
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("factory", [prandtl_standard_case, mhd_standard_case,
                                     mhd_solver_case])
def test_case_jets_agree_with_finite_differences(factory):
    # every supplied derivative closure is checked against a high-order
    # finite difference of the next lower jet at random probe points
    assert factory().self_check(seed=0) <= 1e-6


def test_monotone_case_satisfies_wall_and_shear_conditions():
    case = prandtl_standard_case()
    grid = GRIDS[0]
    u = case.sample(grid, "u")
    assert np.abs(u.values[:, 0]).max() == 0.0
    uz = case.jet("u", 0, 0, 1)(case.t0, *grid.mesh())
    assert uz.min() > 0


def test_mhd_case_magnetic_floor():
    case = mhd_standard_case()
    grid = GRIDS[0]
    f = case.sample(grid, "f")
    assert f.values.min() >= 0.89


def test_solver_case_wall_flat_magnetic_field():
    case = mhd_solver_case()
    grid = GRIDS[0]
    fz = case.jet("f", 0, 0, 1)(case.t0, grid.mesh()[0], np.zeros((grid.nx, grid.nz)))
    assert np.abs(fz).max() <= 1e-14


def test_stream_function_consistent_with_magnetic_pair():
    # psi closures integrate f and differentiate to -h, in closed form
    for case in (mhd_standard_case(), mhd_solver_case()):
        grid = Grid2D(32, 33, 10.0)
        X, Zm = grid.mesh()
        psi_z = case.jet("psi", 0, 0, 1)(case.t0, X, Zm)
        f = case.jet("f")(case.t0, X, Zm)
        psi_x = case.jet("psi", 0, 1, 0)(case.t0, X, Zm)
        h = case.jet("h")(case.t0, X, Zm)
        assert np.abs(psi_z - f).max() <= 1e-13
        assert np.abs(psi_x + h).max() <= 1e-13


# ---------------------------------------------------------------------------
# identity residuals
# ---------------------------------------------------------------------------

EXACT_IDENTITIES = ["theta_uzz", "f1_g1", "directional_g1", "mhd_theta_h", "mhd_f_u1"]


@pytest.mark.parametrize("identity", EXACT_IDENTITIES)
def test_exact_mode_residual_is_roundoff(identity):
    case = mhd_standard_case() if identity.startswith("mhd") else prandtl_standard_case()
    res = manufactured_residual(case, identity, Grid2D(32, 33, 10.0), mode="exact")
    assert res["max"] <= 1e-12


@pytest.mark.parametrize("identity", EXACT_IDENTITIES + ["recovery"])
def test_discrete_mode_residual_second_order(identity):
    case = mhd_standard_case() if identity.startswith("mhd") else prandtl_standard_case()
    errs = [manufactured_residual(case, identity, g)["max"] for g in GRIDS]
    order, _, _ = fit_order([g.dx for g in GRIDS], errs)
    assert 1.8 <= order <= 2.2
    assert errs[0] > 1e-9  # non-vacuous: there is a residual to converge


def test_recovery_has_no_exact_mode():
    with pytest.raises(ValueError):
        manufactured_residual(prandtl_standard_case(), "recovery",
                              GRIDS[0], mode="exact")


def test_unknown_identity_rejected():
    with pytest.raises(ValueError):
        manufactured_residual(prandtl_standard_case(), "nope", GRIDS[0])
    with pytest.raises(ValueError):
        manufactured_residual(prandtl_standard_case(), "mhd_theta_h", GRIDS[0])


# ---------------------------------------------------------------------------
# convergence fits
# ---------------------------------------------------------------------------

def test_fit_order_recovers_synthetic_power_law():
    h = [0.1, 0.05, 0.025, 0.0125]
    errors = [x ** 2 for x in h]
    order, interval, ssr = fit_order(h, errors)
    assert order == pytest.approx(2.0, abs=0.01)
    assert interval[0] <= 2.0 <= interval[1]
    assert ssr <= 1e-20


def test_fit_order_with_noise_keeps_interval():
    rng = np.random.default_rng(2)
    h = [0.1, 0.05, 0.025, 0.0125]
    errors = [x ** 2 * (1 + 0.05 * rng.uniform(-1, 1)) for x in h]
    order, interval, _ = fit_order(h, errors)
    assert interval[0] <= order <= interval[1]
    assert 1.9 <= order <= 2.1


def test_convergence_order_requires_three_grids():
    with pytest.raises(InsufficientGrids):
        convergence_order(prandtl_standard_case(), "f1_g1", GRIDS[:2])


def test_convergence_order_requires_doubling():
    bad = [Grid2D(32, 33, 10.0), Grid2D(48, 49, 10.0), Grid2D(96, 97, 10.0)]
    with pytest.raises(ValueError):
        convergence_order(prandtl_standard_case(), "f1_g1", bad)


def test_convergence_report_structure():
    rep = convergence_order(prandtl_standard_case(), "f1_g1", GRIDS)
    assert isinstance(rep, ConvergenceReport)
    assert rep.grids == [(32, 33), (64, 65), (128, 129)]
    assert len(rep.errors_max) == 3
    assert 1.8 <= rep.order <= 2.2
    d = rep.to_dict()
    assert d["target"] == "f1_g1"


# ---------------------------------------------------------------------------
# radius inequality
# ---------------------------------------------------------------------------

def test_radius_m1_maximum_is_quarter():
    rep = radius_inequality_check(1, rho=1.0, samples=4000)
    assert rep.max_q == pytest.approx(0.25, abs=1e-6)
    assert rep.all_below_one


def test_radius_m10_rho2_closed_form():
    rep = radius_inequality_check(10, rho=2.0, samples=2000)
    assert rep.per_m_max[-1] == pytest.approx((10 / 11) ** 11, abs=1e-6)
    assert rep.per_m_max[-1] == pytest.approx(0.3505, abs=5e-4)


def test_radius_endpoints_vanish():
    rho = 1.0
    for m in (1, 5, 50):
        for r in (1e-12, rho - 1e-12):
            q = m * (r / rho) ** m * (rho - r) / rho
            assert q <= 1e-10


def test_radius_maxima_increase_toward_inverse_e():
    rep = radius_inequality_check(400, rho=1.0, samples=500)
    assert all(b > a for a, b in zip(rep.per_m_max, rep.per_m_max[1:]))
    assert rep.per_m_max[-1] < 1 / math.e
    assert rep.limit_gap <= 1e-3


def test_radius_seeded_samples_stay_below_one():
    rep = radius_inequality_check(100, rho=3.0, samples=200, seed=42)
    assert rep.all_below_one
    assert rep.maximizer_mismatch <= 1e-9


def test_radius_argument_validation():
    with pytest.raises(ValueError):
        radius_inequality_check(0)
    with pytest.raises(ValueError):
        radius_inequality_check(5, samples=3)


# ---------------------------------------------------------------------------
# numerical commutator
# ---------------------------------------------------------------------------

def test_commutator_pair_members_large_and_sum_small():
    case = prandtl_standard_case()
    sums = []
    for grid in GRIDS:
        rep = commutator_residual_numeric(case, "classical", grid)
        assert rep.pair_plus_max >= 0.01
        assert rep.pair_minus_max >= 0.01
        assert rep.pair_sum_max <= 0.15 * rep.pair_minus_max
        sums.append(rep.pair_sum_max)
    order, _, _ = fit_order([g.dx for g in GRIDS], sums)
    assert order >= 1.8


def test_commutator_pair_mhd():
    case = mhd_standard_case()
    rep = commutator_residual_numeric(case, "mhd", GRIDS[0])
    assert rep.pair_plus_max >= 0.01
    assert rep.pair_minus_max >= 0.01
    assert rep.pair_sum_max <= 0.05 * rep.pair_minus_max


def test_commutator_zero_field_vanishes():
    rep = commutator_residual_numeric(prandtl_standard_case(), "zero", GRIDS[0])
    assert rep.residual_max == 0.0


def test_commutator_negative_control_keeps_order_two_term():
    # the harness must prove the classifier can fail: the plain tangential
    # direction leaves an order-one-sized second-order term
    rep = commutator_residual_numeric(prandtl_standard_case(), "unit_x", GRIDS[0])
    assert not rep.cancellation_shown
    assert rep.order2_part_max >= 0.01


def test_commutator_rejects_magnetic_theta_on_plain_case():
    with pytest.raises(ValueError):
        commutator_residual_numeric(prandtl_standard_case(), "mhd", GRIDS[0])
    with pytest.raises(ValueError):
        commutator_residual_numeric(prandtl_standard_case(), "bogus", GRIDS[0])
