"""Tensor grids, second-order stencils, and wall quadrature.

x is periodic on [0, 2pi); z spans [0, Z] with the wall z=0 and the lid z=Z
on the grid.  All derivative stencils are second order, with one-sided
second-order closures at the two z boundary rows, and the wall integral is
composite trapezoid so every grid line has a value regardless of parity.
Fields are plain float64 arrays of shape (nx, nz); every public operation
checks the result for NaN/Inf and fails loudly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "Grid2D",
    "ScalarField2D",
    "NonFiniteFieldError",
    "discrete_derivative",
    "integrate_from_wall",
    "reconstruct_w",
    "reconstruct_psi_h",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]


class NonFiniteFieldError(Exception):
    """A field operation produced NaN or Inf values."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid: nx periodic points in x, nz points on [0, Z]."""

    nx: int
    nz: int
    Z: float = 10.0

    def __post_init__(self):
        if self.nx < 8 or self.nz < 8:
            raise ValueError("need at least 8 points per axis")
        if self.Z <= 0:
            raise ValueError("domain height must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / self.nx

    @property
    def dz(self) -> float:
        return self.Z / (self.nz - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.Z, self.nz)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Z) arrays of shape (nx, nz)."""
        return np.meshgrid(self.x, self.z, indexing="ij")

    def refined(self, factor: int = 2) -> "Grid2D":
        """The grid with both axes refined; z keeps wall and lid exactly."""
        return Grid2D(self.nx * factor, (self.nz - 1) * factor + 1, self.Z)


@dataclass(frozen=True)
class ScalarField2D:
    """A scalar sampled on a grid; values are never mutated in place."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.nx, self.grid.nz):
            raise ValueError(f"values shape {v.shape} does not match grid "
                             f"({self.grid.nx}, {self.grid.nz})")
        object.__setattr__(self, "values", v)

    @staticmethod
    def sample(grid: Grid2D, fn) -> "ScalarField2D":
        X, Zm = grid.mesh()
        return ScalarField2D(grid, np.asarray(fn(X, Zm), dtype=np.float64) + np.zeros_like(X))

    @staticmethod
    def zeros(grid: Grid2D) -> "ScalarField2D":
        return ScalarField2D(grid, np.zeros((grid.nx, grid.nz)))

    def with_values(self, values: np.ndarray) -> "ScalarField2D":
        return ScalarField2D(self.grid, values)


FieldLike = Union[ScalarField2D, np.ndarray]


def _ensure_finite(values: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteFieldError(
            f"{op} produced a non-finite value at grid index ({bad[0]}, {bad[1]})")
    return values


def _dx1(v: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2.0 * dx)


def _dx2(v: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(v, -1, axis=0) - 2.0 * v + np.roll(v, 1, axis=0)) / (dx * dx)


def _dz1(v: np.ndarray, dz: float) -> np.ndarray:
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * dz)
    out[:, 0] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * dz)
    out[:, -1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * dz)
    return out


def _dz2(v: np.ndarray, dz: float) -> np.ndarray:
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / (dz * dz)
    # 4-point one-sided closures, second order (exact through cubics).
    out[:, 0] = (2.0 * v[:, 0] - 5.0 * v[:, 1] + 4.0 * v[:, 2] - v[:, 3]) / (dz * dz)
    out[:, -1] = (2.0 * v[:, -1] - 5.0 * v[:, -2] + 4.0 * v[:, -3] - v[:, -4]) / (dz * dz)
    return out


def discrete_derivative(s: ScalarField2D, axis: str, order: int = 1) -> ScalarField2D:
    """Second-order derivative along ``x`` (periodic) or ``z`` (one-sided at
    the wall and lid)."""
    if axis == "x":
        out = _dx1(s.values, s.grid.dx) if order == 1 else _dx2(s.values, s.grid.dx)
    elif axis == "z":
        out = _dz1(s.values, s.grid.dz) if order == 1 else _dz2(s.values, s.grid.dz)
    else:
        raise ValueError("axis must be 'x' or 'z'")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return s.with_values(_ensure_finite(out, f"d{order}/d{axis}{order}"))


def integrate_from_wall(s: ScalarField2D) -> ScalarField2D:
    """Cumulative composite-trapezoid integral along z; zero on the wall row."""
    v = s.values
    dz = s.grid.dz
    out = np.zeros_like(v)
    np.cumsum(0.5 * dz * (v[:, :-1] + v[:, 1:]), axis=1, out=out[:, 1:])
    return s.with_values(_ensure_finite(out, "wall integral"))


def reconstruct_w(u: ScalarField2D) -> ScalarField2D:
    """Normal velocity from the divergence constraint; exactly zero on the wall."""
    w = -integrate_from_wall(discrete_derivative(u, "x", 1)).values
    w[:, 0] = 0.0
    return u.with_values(_ensure_finite(w, "normal velocity reconstruction"))


def reconstruct_psi_h(f: ScalarField2D) -> tuple[ScalarField2D, ScalarField2D]:
    """Stream function and normal magnetic component from the tangential one.

    psi vanishes on the wall and d/dz psi recovers f; h = -d/dx psi is exactly
    zero on the wall because the whole wall row of psi is zero.
    """
    psi = integrate_from_wall(f)
    h = discrete_derivative(psi, "x", 1).values
    h = -h
    h[:, 0] = 0.0
    return psi, f.with_values(_ensure_finite(h, "normal magnetic reconstruction"))


# ---------------------------------------------------------------------------
# Snapshot formats
# ---------------------------------------------------------------------------

_MAGIC = b"CF2D"


def write_binary(path: Union[str, Path], s: ScalarField2D) -> None:
    """Compact layout: magic, nx, nz, Z, then row-major float64, little-endian."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqd", s.grid.nx, s.grid.nz, s.grid.Z))
        fh.write(s.values.astype("<f8").tobytes(order="C"))


def read_binary(path: Union[str, Path]) -> ScalarField2D:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field snapshot")
        nx, nz, Z = struct.unpack("<qqd", fh.read(24))
        values = np.frombuffer(fh.read(8 * nx * nz), dtype="<f8").reshape(nx, nz)
    return ScalarField2D(Grid2D(nx, nz, Z), values.copy())


def write_csv(path: Union[str, Path], s: ScalarField2D) -> None:
    """x-major CSV: one row per x line, %.17g so float64 round-trips."""
    header = f"nx={s.grid.nx} nz={s.grid.nz} Z={s.grid.Z!r}"
    np.savetxt(path, s.values, delimiter=",", fmt="%.17g", header=header)


def read_csv(path: Union[str, Path]) -> ScalarField2D:
    with open(path) as fh:
        header = fh.readline().lstrip("# ").split()
        meta = dict(item.split("=") for item in header)
        values = np.loadtxt(fh, delimiter=",")
    grid = Grid2D(int(meta["nx"]), int(meta["nz"]), float(meta["Z"]))
    return ScalarField2D(grid, values)


def interior_max(values: np.ndarray) -> float:
    """Max norm away from the z boundary rows (their stencils differ)."""
    return float(np.max(np.abs(values[:, 1:-1])))


def interior_rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values[:, 1:-1] ** 2)))
