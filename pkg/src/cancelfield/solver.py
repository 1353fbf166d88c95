"""IMEX time integration of the 2D velocity and velocity/magnetic layers.

Advection, coupling, and forcing are explicit (first-order upwind by default,
central optional for order studies on smooth data); z-diffusion is implicit
through one tridiagonal solve per x column, so the only step restriction is
advective.  The normal components are never integrated independently: after
every step w is rebuilt from u, and h, psi from f, so the divergence
constraints hold by construction.

Boundary rows are re-established exactly after each step: no-slip at the
wall, the outer-flow trace at the (truncated) lid, and a mirror-ghost
homogeneous Neumann row for the tangential magnetic component at the wall.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .grids import (
    Grid2D,
    ScalarField2D,
    discrete_derivative,
    reconstruct_psi_h,
    reconstruct_w,
    NonFiniteFieldError,
)

__all__ = [
    "OuterFlow",
    "PrandtlState",
    "MhdState",
    "SolverConfig",
    "CflViolation",
    "bernoulli_px",
    "step_prandtl",
    "step_mhd",
    "run",
    "RunResult",
    "outer_flow_preset",
]

Trace = Callable[[float, np.ndarray], np.ndarray]
Source = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class CflViolation(Exception):
    """The configured explicit step exceeds the advective bound."""

    def __init__(self, step: int, t: float, dt: float, bound: float):
        super().__init__(
            f"CFL violation at step {step} (t={t:.6g}): dt={dt:.6g} exceeds "
            f"1.05x the advective bound {bound:.6g}")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class OuterFlow:
    """Closed-form outer traces with their exact derivatives.

    ``u_trace(t, x)`` is the tangential velocity at the layer top,
    ``u_trace_t`` and ``u_trace_x`` its exact time and space derivatives.
    The magnetic trace and the total-pressure gradient are optional and used
    by the coupled system only.
    """

    u_trace: Trace
    u_trace_t: Trace
    u_trace_x: Trace
    f_trace: Optional[Trace] = None
    px_trace: Optional[Trace] = None  # total-pressure gradient (coupled system)

    def lid_u(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.u_trace(t, x), dtype=float), x.shape).copy()

    def lid_f(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.f_trace is None:
            raise ValueError("outer flow has no magnetic trace")
        return np.broadcast_to(np.asarray(self.f_trace(t, x), dtype=float), x.shape).copy()


def outer_flow_preset(name: str, **params) -> OuterFlow:
    """Named closed-form outer flows.

    uniform:     u = u0
    oscillating: u = u0 + amplitude*sin(x)
    decaying:    u = amplitude*exp(-decay*t)*sin(x)
    Each carries f = f0 when ``f0`` is given; the total-pressure gradient
    defaults to zero.
    """
    u0 = params.pop("u0", 1.0)
    amplitude = params.pop("amplitude", 0.1)
    decay = params.pop("decay", 0.25)
    f0 = params.pop("f0", None)
    if params:
        raise ValueError(f"unknown outer-flow parameters {sorted(params)}")

    if name == "uniform":
        flow = OuterFlow(
            u_trace=lambda t, x: np.full_like(x, u0),
            u_trace_t=lambda t, x: np.zeros_like(x),
            u_trace_x=lambda t, x: np.zeros_like(x))
    elif name == "oscillating":
        flow = OuterFlow(
            u_trace=lambda t, x: u0 + amplitude * np.sin(x),
            u_trace_t=lambda t, x: np.zeros_like(x),
            u_trace_x=lambda t, x: amplitude * np.cos(x))
    elif name == "decaying":
        flow = OuterFlow(
            u_trace=lambda t, x: amplitude * np.exp(-decay * t) * np.sin(x),
            u_trace_t=lambda t, x: -decay * amplitude * np.exp(-decay * t) * np.sin(x),
            u_trace_x=lambda t, x: amplitude * np.exp(-decay * t) * np.cos(x))
    else:
        raise ValueError(f"unknown outer-flow preset {name!r}")

    if f0 is not None:
        flow = replace(flow,
                       f_trace=lambda t, x: np.full_like(x, float(f0)),
                       px_trace=lambda t, x: np.zeros_like(x))
    return flow


def bernoulli_px(outer: OuterFlow, t: float, x: np.ndarray) -> np.ndarray:
    """Pressure gradient forcing from the outer trace:
    px = -du/dt - u du/dx evaluated at the layer top."""
    return -(np.asarray(outer.u_trace_t(t, x), dtype=float)
             + np.asarray(outer.u_trace(t, x), dtype=float)
             * np.asarray(outer.u_trace_x(t, x), dtype=float))


@dataclass(frozen=True)
class PrandtlState:
    t: float
    u: ScalarField2D
    w: ScalarField2D
    outer: OuterFlow

    @staticmethod
    def from_u(t: float, u: ScalarField2D, outer: OuterFlow) -> "PrandtlState":
        return PrandtlState(t, u, reconstruct_w(u), outer)

    def validate(self, tol: float = 1e-13) -> None:
        x = self.u.grid.x
        assert np.max(np.abs(self.u.values[:, 0])) <= tol, "no-slip violated"
        assert np.max(np.abs(self.w.values[:, 0])) <= tol, "wall-normal flow"
        lid = self.outer.lid_u(self.t, x)
        assert np.max(np.abs(self.u.values[:, -1] - lid)) <= tol, "lid trace violated"


@dataclass(frozen=True)
class MhdState:
    t: float
    u: ScalarField2D
    w: ScalarField2D
    f: ScalarField2D
    h: ScalarField2D
    psi: ScalarField2D
    outer: OuterFlow

    @staticmethod
    def from_uf(t: float, u: ScalarField2D, f: ScalarField2D,
                outer: OuterFlow) -> "MhdState":
        psi, h = reconstruct_psi_h(f)
        return MhdState(t, u, reconstruct_w(u), f, h, psi, outer)

    def validate(self, tol: float = 1e-13) -> None:
        dz = self.f.grid.dz
        assert np.max(np.abs(self.u.values[:, 0])) <= tol
        assert np.max(np.abs(self.w.values[:, 0])) <= tol
        assert np.max(np.abs(self.h.values[:, 0])) <= tol
        # The wall Neumann condition on f is enforced through the mirror
        # ghost inside the implicit solve, so the one-sided gradient is only
        # zero to stencil accuracy.
        fz0 = (-3 * self.f.values[:, 0] + 4 * self.f.values[:, 1]
               - self.f.values[:, 2]) / (2 * dz)
        scale = max(1.0, float(np.abs(self.f.values).max()))
        assert np.max(np.abs(fz0)) <= max(tol, 10.0 * dz * dz * scale)


@dataclass(frozen=True)
class SolverConfig:
    mu: float
    kappa: float = 0.0
    dt: Optional[float] = None  # None: advective bound times cfl, each step
    cfl: float = 0.5
    scheme: str = "upwind1"  # or "central2"
    t_end: float = 1.0
    dt_max: float = 0.05
    snapshot_every: int = 0  # steps between snapshots; 0 disables
    source_u: Optional[Source] = None
    source_f: Optional[Source] = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if not (0 < self.cfl <= 1):
            raise ValueError("cfl must lie in (0, 1]")
        if self.scheme not in ("upwind1", "central2"):
            raise ValueError(f"unknown advection scheme {self.scheme!r}")


def _advective_bound(grid: Grid2D, u: np.ndarray, w: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        bx = grid.dx / max(float(np.max(np.abs(u))), 1e-300)
        bz = grid.dz / max(float(np.max(np.abs(w))), 1e-300)
    return min(bx, bz)


def _pick_dt(cfg: SolverConfig, grid: Grid2D, u: np.ndarray, w: np.ndarray,
             step: int, t: float) -> float:
    bound = _advective_bound(grid, u, w)
    if cfg.dt is not None:
        if cfg.dt > 1.05 * cfg.cfl * bound:
            raise CflViolation(step, t, cfg.dt, cfg.cfl * bound)
        return min(cfg.dt, cfg.dt_max)
    return min(cfg.cfl * bound, cfg.dt_max)


def _advect(grid: Grid2D, u: np.ndarray, w: np.ndarray, target: np.ndarray,
            scheme: str) -> np.ndarray:
    """u d/dx target + w d/dz target."""
    dx, dz = grid.dx, grid.dz
    if scheme == "central2":
        tx = (np.roll(target, -1, axis=0) - np.roll(target, 1, axis=0)) / (2 * dx)
        tz = np.empty_like(target)
        tz[:, 1:-1] = (target[:, 2:] - target[:, :-2]) / (2 * dz)
        tz[:, 0] = (-3 * target[:, 0] + 4 * target[:, 1] - target[:, 2]) / (2 * dz)
        tz[:, -1] = (3 * target[:, -1] - 4 * target[:, -2] + target[:, -3]) / (2 * dz)
        return u * tx + w * tz
    # first-order upwind
    back_x = (target - np.roll(target, 1, axis=0)) / dx
    fwd_x = (np.roll(target, -1, axis=0) - target) / dx
    back_z = np.empty_like(target)
    back_z[:, 1:] = (target[:, 1:] - target[:, :-1]) / dz
    back_z[:, 0] = (target[:, 1] - target[:, 0]) / dz
    fwd_z = np.empty_like(target)
    fwd_z[:, :-1] = (target[:, 1:] - target[:, :-1]) / dz
    fwd_z[:, -1] = (target[:, -1] - target[:, -2]) / dz
    term_x = np.where(u > 0, u * back_x, u * fwd_x)
    term_z = np.where(w > 0, w * back_z, w * fwd_z)
    return term_x + term_z


def _implicit_diffusion(values: np.ndarray, nu: float, dt: float, dz: float,
                        wall: str, wall_value: np.ndarray | float,
                        lid_value: np.ndarray) -> np.ndarray:
    """Backward-Euler z-diffusion solve for all columns at once.

    The matrix is shared by every column (uniform grid, constant nu); only
    the right side varies.  wall is "dirichlet" or "neumann" (mirror ghost).
    """
    nx, nz = values.shape
    r = nu * dt / (dz * dz)
    ab = np.zeros((3, nz))
    ab[0, 2:] = -r          # superdiagonal for interior rows
    ab[1, 1:-1] = 1 + 2 * r
    ab[2, :-2] = -r         # subdiagonal for interior rows
    rhs = values.T.copy()

    if wall == "dirichlet":
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
        rhs[0, :] = wall_value
    elif wall == "neumann":
        ab[1, 0] = 1 + 2 * r
        ab[0, 1] = -2 * r   # mirror ghost keeps second order
    else:
        raise ValueError(f"unknown wall condition {wall!r}")

    ab[1, -1] = 1.0
    ab[2, -2] = 0.0
    rhs[-1, :] = lid_value

    out = solve_banded((1, 1), ab, rhs)
    return out.T


def step_prandtl(s: PrandtlState, cfg: SolverConfig, *, step_index: int = 0,
                 dt: Optional[float] = None) -> PrandtlState:
    """One IMEX step: explicit advection and pressure forcing, implicit
    z-diffusion per column, then the normal velocity is rebuilt."""
    grid = s.u.grid
    x = grid.x
    u, w = s.u.values, s.w.values
    h = dt if dt is not None else _pick_dt(cfg, grid, u, w, step_index, s.t)

    rhs = u - h * (_advect(grid, u, w, u, cfg.scheme)
                   + bernoulli_px(s.outer, s.t, x)[:, None])
    if cfg.source_u is not None:
        X, Zm = grid.mesh()
        rhs = rhs + h * cfg.source_u(s.t, X, Zm)

    t_new = s.t + h
    lid = s.outer.lid_u(t_new, x)
    u_new = _implicit_diffusion(rhs, cfg.mu, h, grid.dz, "dirichlet", 0.0, lid)
    u_new[:, 0] = 0.0
    u_new[:, -1] = lid
    if not np.isfinite(u_new).all():
        raise NonFiniteFieldError(
            f"velocity blew up at step {step_index} (t={t_new:.6g})")

    u_field = s.u.with_values(u_new)
    return PrandtlState(t_new, u_field, reconstruct_w(u_field), s.outer)


def step_mhd(s: MhdState, cfg: SolverConfig, *, step_index: int = 0,
             dt: Optional[float] = None) -> MhdState:
    """One IMEX step of the coupled pair: transport and magnetic coupling
    explicit, both diffusions implicit, reconstructions re-established."""
    if cfg.kappa <= 0:
        raise ValueError("kappa must be positive for the coupled system")
    grid = s.u.grid
    x = grid.x
    u, w = s.u.values, s.w.values
    f, hmag = s.f.values, s.h.values
    h = dt if dt is not None else _pick_dt(cfg, grid, u, w, step_index, s.t)

    fx = discrete_derivative(s.f, "x").values
    fz = discrete_derivative(s.f, "z").values
    ux = discrete_derivative(s.u, "x").values
    uz = discrete_derivative(s.u, "z").values

    px = (s.outer.px_trace(s.t, x) if s.outer.px_trace is not None
          else np.zeros_like(x))

    rhs_u = u - h * (_advect(grid, u, w, u, cfg.scheme) + px[:, None]
                     - (f * fx + hmag * fz))
    rhs_f = f - h * (_advect(grid, u, w, f, cfg.scheme)
                     - (f * ux + hmag * uz))
    if cfg.source_u is not None:
        X, Zm = grid.mesh()
        rhs_u = rhs_u + h * cfg.source_u(s.t, X, Zm)
    if cfg.source_f is not None:
        X, Zm = grid.mesh()
        rhs_f = rhs_f + h * cfg.source_f(s.t, X, Zm)

    t_new = s.t + h
    lid_u = s.outer.lid_u(t_new, x)
    lid_f = s.outer.lid_f(t_new, x)
    u_new = _implicit_diffusion(rhs_u, cfg.mu, h, grid.dz, "dirichlet", 0.0, lid_u)
    f_new = _implicit_diffusion(rhs_f, cfg.kappa, h, grid.dz, "neumann", 0.0, lid_f)
    u_new[:, 0] = 0.0
    u_new[:, -1] = lid_u
    f_new[:, -1] = lid_f
    if not (np.isfinite(u_new).all() and np.isfinite(f_new).all()):
        raise NonFiniteFieldError(
            f"coupled fields blew up at step {step_index} (t={t_new:.6g})")

    u_field = s.u.with_values(u_new)
    f_field = s.f.with_values(f_new)
    psi, h_field = reconstruct_psi_h(f_field)
    return MhdState(t_new, u_field, reconstruct_w(u_field), f_field, h_field,
                    psi, s.outer)


@dataclass
class RunResult:
    final: object
    snapshots: list
    steps: int


def run(state, cfg: SolverConfig) -> RunResult:
    """Step until t_end, collecting snapshots every ``snapshot_every`` steps.

    Deterministic for a fixed configuration: the only dt adaptation is the
    advective bound recomputed from the state, plus a final clamp to land on
    t_end exactly.  Step errors propagate with the step index and time.
    """
    if cfg.t_end < state.t:
        raise ValueError("t_end precedes the state time")
    stepper = step_prandtl if isinstance(state, PrandtlState) else step_mhd
    snapshots = []
    steps = 0
    current = state
    while current.t < cfg.t_end - 1e-14:
        grid = current.u.grid
        h = _pick_dt(cfg, grid, current.u.values, current.w.values, steps, current.t)
        h = min(h, cfg.t_end - current.t)
        current = stepper(current, cfg, step_index=steps, dt=h)
        steps += 1
        if cfg.snapshot_every and steps % cfg.snapshot_every == 0:
            snapshots.append(current)
    return RunResult(final=current, snapshots=snapshots, steps=steps)
