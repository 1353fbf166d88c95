"""Good unknowns, directional derivatives, and tangential-derivative recovery
on discrete fields.

Division by the shear or by the tangential magnetic component is pointwise
and guarded: a field too close to degeneracy raises, naming the offending
grid point, rather than being smoothed.  Thresholds are relative to the
field maximum so the checks do not depend on resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    ScalarField2D,
    discrete_derivative,
    integrate_from_wall,
    reconstruct_w,
)

__all__ = [
    "MonotonicityGuard",
    "MonotonicityViolated",
    "DegenerateMagneticField",
    "vorticity",
    "good_unknown_g1",
    "good_unknown_f1",
    "directional_derivative",
    "classical_theta",
    "good_unknown_m",
    "recover_ux",
]


class MonotonicityViolated(Exception):
    """The shear passes through (or too close to) zero."""


class DegenerateMagneticField(Exception):
    """The tangential magnetic component passes too close to zero."""


@dataclass(frozen=True)
class MonotonicityGuard:
    """Records whether min |shear| clears a relative threshold."""

    min_abs_omega: float
    threshold: float
    satisfied: bool
    argmin: tuple[int, int]

    @staticmethod
    def from_field(omega: ScalarField2D, relative: float = 1e-8) -> "MonotonicityGuard":
        a = np.abs(omega.values)
        idx = np.unravel_index(np.argmin(a), a.shape)
        threshold = relative * float(a.max())
        min_abs = float(a[idx])
        return MonotonicityGuard(min_abs, threshold, min_abs >= threshold,
                                 (int(idx[0]), int(idx[1])))

    def require(self) -> None:
        if not self.satisfied:
            raise MonotonicityViolated(
                f"min |shear| = {self.min_abs_omega:.3e} at grid point "
                f"{self.argmin} is below the threshold {self.threshold:.3e}")


def vorticity(u: ScalarField2D) -> ScalarField2D:
    """The shear d/dz u."""
    return discrete_derivative(u, "z", 1)


def good_unknown_g1(u: ScalarField2D, guard: MonotonicityGuard) -> ScalarField2D:
    """d/dz of (tangential derivative over shear)."""
    guard.require()
    omega = vorticity(u).values
    ux = discrete_derivative(u, "x", 1).values
    quotient = u.with_values(ux / omega)
    return discrete_derivative(quotient, "z", 1)


def good_unknown_f1(u: ScalarField2D, guard: MonotonicityGuard) -> ScalarField2D:
    """Tangential derivative of the shear, shifted by the weighted
    tangential derivative of the velocity."""
    guard.require()
    om = vorticity(u)
    om_x = discrete_derivative(om, "x", 1).values
    om_z = discrete_derivative(om, "z", 1).values
    ux = discrete_derivative(u, "x", 1).values
    return u.with_values(om_x - om_z / om.values * ux)


def directional_derivative(theta: tuple[ScalarField2D, ScalarField2D],
                           target: ScalarField2D) -> ScalarField2D:
    """theta1 d/dx target + theta2 d/dz target."""
    t1, t2 = theta
    out = (t1.values * discrete_derivative(target, "x", 1).values
           + t2.values * discrete_derivative(target, "z", 1).values)
    return target.with_values(out)


def classical_theta(u: ScalarField2D) -> tuple[ScalarField2D, ScalarField2D]:
    """The shear-curvature cancellation pair (d2z u, d2z w) with the normal
    velocity reconstructed from u."""
    w = reconstruct_w(u)
    return discrete_derivative(u, "z", 2), discrete_derivative(w, "z", 2)


def good_unknown_m(state, m: int, *, relative: float = 1e-8):
    """The m-th order pair (u^m, f^m) on a coupled state.

    u^m = dx^m u - (dz u / f) dx^m psi, and the same with f in place of u.
    Requires the tangential magnetic component to stay away from zero.
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    f = state.f
    a = np.abs(f.values)
    idx = np.unravel_index(np.argmin(a), a.shape)
    if float(a[idx]) < relative * float(a.max()):
        raise DegenerateMagneticField(
            f"min |f| = {float(a[idx]):.3e} at grid point "
            f"({idx[0]}, {idx[1]}) is below the threshold "
            f"{relative * float(a.max()):.3e}")

    def dxm(field: ScalarField2D) -> np.ndarray:
        out = field
        for _ in range(m):
            out = discrete_derivative(out, "x", 1)
        return out.values

    psi_m = dxm(state.psi)
    uz = discrete_derivative(state.u, "z", 1).values
    fz = discrete_derivative(f, "z", 1).values
    um = state.u.with_values(dxm(state.u) - uz / f.values * psi_m)
    fm = f.with_values(dxm(f) - fz / f.values * psi_m)
    return um, fm


def recover_ux(directional: ScalarField2D, omega: ScalarField2D,
               guard: MonotonicityGuard) -> ScalarField2D:
    """Tangential derivative recovered from the shear-curvature directional
    derivative under monotonicity.

    The directional derivative equals -(shear)^2 d/dz (u_x / shear), and the
    tangential derivative vanishes on the wall by no-slip, so integrating
    the quotient from the wall and scaling back by the shear recovers u_x.
    The wall row is exactly zero.
    """
    guard.require()
    integrand = directional.with_values(directional.values / omega.values ** 2)
    integral = integrate_from_wall(integrand)
    return directional.with_values(-omega.values * integral.values)
