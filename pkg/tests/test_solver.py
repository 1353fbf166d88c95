"""Time integration: oracles, boundary conditions, determinism, errors."""

import numpy as np
import pytest

from cancelfield.grids import Grid2D, ScalarField2D
from cancelfield.solver import (
    CflViolation,
    MhdState,
    PrandtlState,
    SolverConfig,
    bernoulli_px,
    outer_flow_preset,
    run,
    step_mhd,
    step_prandtl,
)
from cancelfield.verify import prandtl_standard_case, solver_trajectory_error


# ---------------------------------------------------------------------------
# 1D backward-Euler oracles, implemented independently with a scalar Thomas
# sweep (plain python loops, no scipy)
# ---------------------------------------------------------------------------

def _thomas(a, b, c, d):
    n = d.size
    cp, dp = np.zeros(n), np.zeros(n)
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / m
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m
    x = np.zeros(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def heat_1d_dirichlet(profile, nu, dt, dz, lid, steps):
    p = profile.copy()
    n = p.size
    r = nu * dt / dz ** 2
    for _ in range(steps):
        a = np.full(n, -r)
        b = np.full(n, 1 + 2 * r)
        c = np.full(n, -r)
        d = p.copy()
        b[0], c[0], d[0] = 1.0, 0.0, 0.0
        b[-1], a[-1], d[-1] = 1.0, 0.0, lid
        p = _thomas(a, b, c, d)
    return p


def heat_1d_neumann_wall(profile, nu, dt, dz, lid, steps):
    p = profile.copy()
    n = p.size
    r = nu * dt / dz ** 2
    for _ in range(steps):
        a = np.full(n, -r)
        b = np.full(n, 1 + 2 * r)
        c = np.full(n, -r)
        d = p.copy()
        c[0] = -2 * r  # mirror ghost
        b[-1], a[-1], c[-1], d[-1] = 1.0, 0.0, 0.0, lid
        p = _thomas(a, b, c, d)
    return p


# ---------------------------------------------------------------------------
# Bernoulli forcing
# ---------------------------------------------------------------------------

def test_bernoulli_constant_trace():
    outer = outer_flow_preset("uniform", u0=2.0)
    x = Grid2D(16, 17).x
    assert np.all(bernoulli_px(outer, 0.3, x) == 0.0)


def test_bernoulli_steady_oscillation():
    outer = outer_flow_preset("oscillating", u0=0.0, amplitude=1.0)
    x = Grid2D(64, 17).x
    px = bernoulli_px(outer, 0.0, x)
    assert np.abs(px + np.sin(x) * np.cos(x)).max() <= 1e-14


def test_bernoulli_decaying_trace():
    # u = exp(-t) sin x gives px = exp(-t) sin x - exp(-2t) sin x cos x
    outer = outer_flow_preset("decaying", amplitude=1.0, decay=1.0)
    x = Grid2D(64, 17).x
    for t in (0.0, 0.37, 1.5):
        expected = np.exp(-t) * np.sin(x) - np.exp(-2 * t) * np.sin(x) * np.cos(x)
        assert np.abs(bernoulli_px(outer, t, x) - expected).max() <= 1e-14


# ---------------------------------------------------------------------------
# velocity layer
# ---------------------------------------------------------------------------

def test_zero_data_stays_exactly_zero():
    grid = Grid2D(16, 33, 10.0)
    outer = outer_flow_preset("uniform", u0=0.0)
    state = PrandtlState.from_u(0.0, ScalarField2D.zeros(grid), outer)
    cfg = SolverConfig(mu=0.2, dt=0.01, t_end=1.0)
    for k in range(20):
        state = step_prandtl(state, cfg, step_index=k)
    assert np.all(state.u.values == 0.0)
    assert np.all(state.w.values == 0.0)


def test_x_independent_matches_1d_heat_oracle():
    grid = Grid2D(16, 33, 10.0)
    z = grid.z
    profile = np.sin(np.pi * z / 10.0) * z / 10.0
    profile[0] = 0.0
    profile[-1] = 0.0
    outer = outer_flow_preset("uniform", u0=0.0)
    state = PrandtlState.from_u(
        0.0, ScalarField2D(grid, np.tile(profile, (grid.nx, 1))), outer)
    cfg = SolverConfig(mu=0.07, dt=0.01, t_end=2.0)
    oracle = profile.copy()
    for k in range(100):
        state = step_prandtl(state, cfg, step_index=k)
        oracle = heat_1d_dirichlet(oracle, 0.07, 0.01, grid.dz, 0.0, 1)
        assert np.abs(state.u.values - oracle[None, :]).max() <= 1e-12
    assert np.all(state.w.values == 0.0)
    state.validate()


def test_boundary_rows_exact_after_each_step():
    grid = Grid2D(32, 33, 10.0)
    outer = outer_flow_preset("oscillating", u0=1.0, amplitude=0.1)
    X, Zm = grid.mesh()
    vals = outer.lid_u(0.0, grid.x)[:, None] * (1 - np.exp(-Zm))
    vals[:, 0] = 0.0
    vals[:, -1] = outer.lid_u(0.0, grid.x)
    state = PrandtlState.from_u(0.0, ScalarField2D(grid, vals), outer)
    cfg = SolverConfig(mu=0.1, cfl=0.4, t_end=1.0)
    for k in range(25):
        state = step_prandtl(state, cfg, step_index=k)
        state.validate()


def test_cfl_violation_names_step():
    grid = Grid2D(16, 17, 10.0)
    outer = outer_flow_preset("oscillating", u0=1.0)
    X, Zm = grid.mesh()
    vals = outer.lid_u(0.0, grid.x)[:, None] * (1 - np.exp(-Zm))
    vals[:, 0] = 0.0
    vals[:, -1] = outer.lid_u(0.0, grid.x)
    state = PrandtlState.from_u(0.0, ScalarField2D(grid, vals), outer)
    with pytest.raises(CflViolation, match="step 7"):
        step_prandtl(state, SolverConfig(mu=0.1, dt=50.0, t_end=1.0), step_index=7)


def test_implicit_diffusion_max_norm_non_increasing():
    # zero forcing, zero boundary data, x-independent profile (so advection
    # vanishes and the step is the pure implicit diffusion solve): the
    # tridiagonal system is an M-matrix, so the discrete max principle holds
    grid = Grid2D(16, 33, 10.0)
    rng = np.random.default_rng(3)
    outer = outer_flow_preset("uniform", u0=0.0)
    profile = rng.standard_normal(grid.nz)
    profile[0] = 0.0
    profile[-1] = 0.0
    state = PrandtlState.from_u(
        0.0, ScalarField2D(grid, np.tile(profile, (grid.nx, 1))), outer)
    cfg = SolverConfig(mu=0.5, dt=0.05, t_end=10.0, scheme="upwind1")
    previous = np.abs(state.u.values).max()
    for k in range(30):
        state = step_prandtl(state, cfg, step_index=k)
        current = np.abs(state.u.values).max()
        assert current <= previous + 1e-14
        previous = current


# ---------------------------------------------------------------------------
# coupled layer
# ---------------------------------------------------------------------------

def test_constant_magnetic_field_is_steady():
    grid = Grid2D(16, 33, 10.0)
    outer = outer_flow_preset("uniform", u0=0.0, f0=2.5)
    f0 = ScalarField2D(grid, np.full((grid.nx, grid.nz), 2.5))
    state = MhdState.from_uf(0.0, ScalarField2D.zeros(grid), f0, outer)
    cfg = SolverConfig(mu=0.1, kappa=0.2, dt=0.01, t_end=1.0)
    for k in range(30):
        state = step_mhd(state, cfg, step_index=k)
    assert np.all(state.u.values == 0.0)
    assert np.abs(state.f.values - 2.5).max() <= 1e-13
    assert np.all(state.h.values == 0.0)
    state.validate()


def test_x_independent_mhd_matches_two_heat_oracles():
    grid = Grid2D(16, 33, 10.0)
    z = grid.z
    uprof = np.sin(np.pi * z / 10.0) * z / 10.0
    uprof[0] = uprof[-1] = 0.0
    fprof = 1.0 + 0.3 * np.cos(np.pi * z / 10.0)
    outer = outer_flow_preset("uniform", u0=0.0, f0=float(fprof[-1]))
    state = MhdState.from_uf(
        0.0,
        ScalarField2D(grid, np.tile(uprof, (grid.nx, 1))),
        ScalarField2D(grid, np.tile(fprof, (grid.nx, 1))),
        outer)
    cfg = SolverConfig(mu=0.07, kappa=0.13, dt=0.01, t_end=2.0)
    u_oracle, f_oracle = uprof.copy(), fprof.copy()
    for k in range(100):
        state = step_mhd(state, cfg, step_index=k)
        u_oracle = heat_1d_dirichlet(u_oracle, 0.07, 0.01, grid.dz, 0.0, 1)
        f_oracle = heat_1d_neumann_wall(f_oracle, 0.13, 0.01, grid.dz, fprof[-1], 1)
        assert np.abs(state.u.values - u_oracle[None, :]).max() <= 1e-12
        assert np.abs(state.f.values - f_oracle[None, :]).max() <= 1e-12
    assert np.all(state.h.values == 0.0)


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------

def _small_state():
    grid = Grid2D(16, 17, 10.0)
    outer = outer_flow_preset("oscillating", u0=1.0, amplitude=0.1)
    X, Zm = grid.mesh()
    vals = outer.lid_u(0.0, grid.x)[:, None] * (1 - np.exp(-Zm))
    vals[:, 0] = 0.0
    vals[:, -1] = outer.lid_u(0.0, grid.x)
    return PrandtlState.from_u(0.0, ScalarField2D(grid, vals), outer)


def test_run_zero_span_returns_input():
    state = _small_state()
    result = run(state, SolverConfig(mu=0.1, dt=0.01, t_end=0.0))
    assert result.steps == 0
    assert result.final is state
    assert result.snapshots == []


def test_run_rejects_past_t_end():
    state = _small_state()
    with pytest.raises(ValueError):
        run(PrandtlState(1.0, state.u, state.w, state.outer),
            SolverConfig(mu=0.1, dt=0.01, t_end=0.5))


def test_run_lands_on_t_end_and_snapshots():
    state = _small_state()
    cfg = SolverConfig(mu=0.1, dt=0.013, t_end=0.1, snapshot_every=2)
    result = run(state, cfg)
    assert result.final.t == pytest.approx(0.1, abs=1e-14)
    assert len(result.snapshots) >= 3


def test_normal_velocity_always_reconstructed():
    from cancelfield.grids import reconstruct_w
    state = _small_state()
    cfg = SolverConfig(mu=0.1, cfl=0.4, t_end=1.0)
    for k in range(10):
        state = step_prandtl(state, cfg, step_index=k)
        assert np.array_equal(state.w.values, reconstruct_w(state.u).values)


def test_run_deterministic_bit_identical():
    results = []
    for _ in range(2):
        cfg = SolverConfig(mu=0.1, cfl=0.4, t_end=0.3, snapshot_every=3)
        results.append(run(_small_state(), cfg))
    a, b = results
    assert a.steps == b.steps
    assert np.array_equal(a.final.u.values, b.final.u.values)
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert sa.t == sb.t
        assert np.array_equal(sa.u.values, sb.u.values)
        assert np.array_equal(sa.w.values, sb.w.values)


# ---------------------------------------------------------------------------
# manufactured forcing: time error halves with the step
# ---------------------------------------------------------------------------

def test_time_error_component_halves_with_dt():
    case = prandtl_standard_case()
    grid = Grid2D(64, 65, 10.0)
    errs = {dt0: solver_trajectory_error(case, grid, t_end=0.4, dt0=dt0,
                                         n0=64, scheme="central2")
            for dt0 in (0.02, 0.01, 0.0025)}
    # with the spatial limit approximated at dt/8, pure first-order time
    # error gives (e(dt)-e(dt/8)) / (e(dt/2)-e(dt/8)) = 7/3
    ratio = (errs[0.02] - errs[0.0025]) / (errs[0.01] - errs[0.0025])
    assert ratio == pytest.approx(7 / 3, rel=0.2)
