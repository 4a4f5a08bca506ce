"""Potential handles: a common query surface over chip fields and test traps.

A potential handle exposes energy(points) in joules, gradient(points) in
J/m and the particle mass; trap analysis and the kinetic integrator work
against this surface only.  The chip potential (ZeemanSystem) lives in
magnetics; here are the analytic traps used as oracles and the sampled
FieldTable that feeds the fast kinetic kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import RB87, PhysicalConstants
from .errors import ConfigError
from .magnetics import (
    GridSpec,
    SpinState,
    ZeemanSystem,
    fd_gradient_hessian,
    total_field_and_jacobian,
    zeeman_potential,
)


class Potential:
    """Base: joule-valued scalar field with gradient and a particle mass."""

    mass: float

    def energy(self, points) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, points) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, point, step: float = 1e-6) -> np.ndarray:
        _, hess = fd_gradient_hessian(self.energy, point, step)
        return hess


class CallablePotential(Potential):
    """Ad-hoc potential from an energy function (gradient by differences)."""

    def __init__(self, energy_fn, mass: float = RB87.mass, gradient_fn=None,
                 fd_step: float = 1e-7):
        self._energy_fn = energy_fn
        self._gradient_fn = gradient_fn
        self.mass = mass
        self._fd_step = fd_step

    def energy(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.asarray(self._energy_fn(pts), dtype=float)
        return out[0] if np.asarray(points).ndim == 1 else out

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._gradient_fn is not None:
            g = np.asarray(self._gradient_fn(pts), dtype=float)
        else:
            h = self._fd_step
            g = np.empty_like(pts)
            for ax in range(3):
                dp = np.zeros(3)
                dp[ax] = h
                g[:, ax] = (
                    np.asarray(self._energy_fn(pts + dp))
                    - np.asarray(self._energy_fn(pts - dp))
                ) / (2 * h)
        return g[0] if np.asarray(points).ndim == 1 else g


class HarmonicPotential(Potential):
    """U = sum_i 1/2 m omega_i^2 q_i^2 along given orthonormal axes."""

    def __init__(self, omegas, center=(0.0, 0.0, 0.0), mass: float = RB87.mass,
                 axes=None, offset: float = 0.0):
        self.omegas = np.asarray(omegas, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.mass = float(mass)
        self.axes = np.eye(3) if axes is None else np.asarray(axes, dtype=float)
        self.offset = float(offset)

    def energy(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        q = (pts - self.center) @ self.axes.T
        U = 0.5 * self.mass * np.sum((self.omegas**2) * q**2, axis=1) + self.offset
        return U[0] if np.asarray(points).ndim == 1 else U

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        q = (pts - self.center) @ self.axes.T
        gq = self.mass * (self.omegas**2) * q
        g = gq @ self.axes
        return g[0] if np.asarray(points).ndim == 1 else g

    def hessian(self, point=None, step: float = 1e-6):
        return self.axes.T @ np.diag(self.mass * self.omegas**2) @ self.axes


class IoffePritchardPotential(Potential):
    """Analytic Ioffe-Pritchard field: bias B0, radial gradient Bp, axial
    curvature Bpp, axis along z.  Closed-form frequencies make this the
    standard metrology oracle."""

    def __init__(self, B0: float, Bp: float, Bpp: float,
                 spin: SpinState = SpinState(),
                 constants: PhysicalConstants = RB87,
                 *, gravity: bool = False):
        if B0 <= 0:
            raise ConfigError("IP trap needs B0 > 0")
        self.B0, self.Bp, self.Bpp = float(B0), float(Bp), float(Bpp)
        self.spin = spin
        self.constants = constants
        self.gravity = gravity
        self.mass = constants.mass

    def field(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        half = 0.5 * self.Bpp
        B = np.empty_like(pts)
        B[:, 0] = self.Bp * y - half * x * z
        B[:, 1] = self.Bp * x - half * y * z
        B[:, 2] = self.B0 + half * z**2 - 0.5 * half * (x**2 + y**2)
        return B

    def energy(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        U = zeeman_potential(self.field(pts), self.spin, self.constants,
                             pts, gravity=self.gravity)
        return U[0] if np.asarray(points).ndim == 1 else U

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        half = 0.5 * self.Bpp
        B = self.field(pts)
        Bmag = np.linalg.norm(B, axis=1)
        J = np.empty((pts.shape[0], 3, 3))
        J[:, 0, 0] = -half * z
        J[:, 0, 1] = self.Bp
        J[:, 0, 2] = -half * x
        J[:, 1, 0] = self.Bp
        J[:, 1, 1] = -half * z
        J[:, 1, 2] = -half * y
        J[:, 2, 0] = -half * x
        J[:, 2, 1] = -half * y
        J[:, 2, 2] = self.Bpp * z
        Bhat = B / np.where(Bmag > 0, Bmag, 1.0)[:, None]
        g = self.spin.moment_factor * self.constants.muB * np.einsum(
            "nij,ni->nj", J, Bhat
        )
        if self.gravity:
            g[:, 2] += self.constants.mass * self.constants.gravity
        return g[0] if np.asarray(points).ndim == 1 else g

    def analytic_frequencies(self) -> tuple[float, float]:
        """(omega_radial, omega_axial) in rad/s from the textbook expansion."""
        mu = self.spin.moment_factor * self.constants.muB
        w_rho = np.sqrt(mu * (self.Bp**2 / self.B0 - 0.5 * self.Bpp) / self.mass)
        w_z = np.sqrt(mu * self.Bpp / self.mass)
        return float(w_rho), float(w_z)


class ChipPotential(Potential):
    """Exact Biot-Savart chip potential; thin adapter over ZeemanSystem."""

    def __init__(self, system: ZeemanSystem):
        self.system = system
        self.mass = system.mass

    def energy(self, points):
        return self.system.energy_unchecked(points) if np.asarray(points).ndim > 1 \
            else float(self.system.energy_unchecked(points)[0])

    def gradient(self, points):
        return self.system.gradient_exact(points)

    def hessian(self, point, step: float = 2e-6):
        from .magnetics import potential_gradient_hessian

        _, hess = potential_gradient_hessian(self.system, point, step)
        return hess


# ---------------------------------------------------------------------------
# Sampled field table for the kinetic core
# ---------------------------------------------------------------------------

# Packed channel order per node: Bx,By,Bz then the 9 Jacobian entries dBi/dpj
# in row-major (i,j) order.
N_CHANNELS = 12


@dataclass
class FieldTable:
    """B and dB/dp sampled on a rectilinear grid, packed float32.

    Forces are obtained per particle as F = -mu (J^T Bhat) - m g zhat with
    trilinearly interpolated B and J.  Interpolating the field components
    (smooth on the conductor-distance scale) instead of |B| or U keeps the
    norm nonlinearity exact at the trap bottom, where |B| varies on the much
    shorter offset-field scale.
    """

    origin: np.ndarray          # (3,)
    spacing: np.ndarray         # (3,)
    shape: tuple[int, int, int]
    data: np.ndarray            # (nx,ny,nz,12) float32, C-contiguous
    moment: float               # mF*gF*muB (J/T)
    mass: float
    gravity: float              # signed accel along +z (0 when disabled)

    @classmethod
    def from_system(cls, system: ZeemanSystem, grid: GridSpec,
                    chunk: int = 32768) -> "FieldTable":
        ax = grid.axes()
        nx, ny, nz = (len(a) for a in ax)
        if min(nx, ny, nz) < 2:
            raise ConfigError("field table needs at least 2 nodes per axis")
        spacing = np.array([a[1] - a[0] for a in ax])
        pts = grid.points()
        data = np.empty((pts.shape[0], N_CHANNELS), dtype=np.float32)
        for lo in range(0, pts.shape[0], chunk):
            hi = min(lo + chunk, pts.shape[0])
            B, J = total_field_and_jacobian(
                system.layout, system.currents, pts[lo:hi],
                bias=system.bias, constants=system.constants,
            )
            data[lo:hi, 0:3] = B
            data[lo:hi, 3:12] = J.reshape(-1, 9)
        table = data.reshape(nx, ny, nz, N_CHANNELS)
        return cls(
            origin=np.array([a[0] for a in ax]),
            spacing=spacing,
            shape=(nx, ny, nz),
            data=np.ascontiguousarray(table),
            moment=system.spin.moment_factor * system.constants.muB,
            mass=system.constants.mass,
            gravity=system.constants.gravity if system.gravity else 0.0,
        )

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (pts - self.origin) / self.spacing
        hi = np.array(self.shape) - 1
        return np.all((rel >= 0.0) & (rel <= hi), axis=1)

    def sample(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Reference (numpy) interpolation: (U (N,), grad (N,3), inside (N,)).

        The numba kernel in kinetics implements the same arithmetic; this
        version is the cross-checkable source of truth.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        inside = self.contains(pts)
        U = np.full(n, np.nan)
        grad = np.full((n, 3), np.nan)
        if not np.any(inside):
            return U, grad, inside
        rel = (pts[inside] - self.origin) / self.spacing
        hi = np.array(self.shape) - 2
        idx = np.clip(np.floor(rel).astype(np.int64), 0, hi)
        frac = rel - idx
        acc = np.zeros((idx.shape[0], N_CHANNELS))
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                for dz in (0, 1):
                    wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                    w = (wx * wy * wz)[:, None]
                    acc += w * self.data[
                        idx[:, 0] + dx, idx[:, 1] + dy, idx[:, 2] + dz
                    ]
        B = acc[:, 0:3]
        J = acc[:, 3:12].reshape(-1, 3, 3)
        Bmag = np.linalg.norm(B, axis=1)
        Bhat = B / np.where(Bmag > 0, Bmag, 1.0)[:, None]
        g = self.moment * np.einsum("nij,ni->nj", J, Bhat)
        u = self.moment * Bmag
        if self.gravity != 0.0:
            u = u + self.mass * self.gravity * pts[inside][:, 2]
            g[:, 2] += self.mass * self.gravity
        U[inside] = u
        grad[inside] = g
        return U, grad, inside


class TablePotential(Potential):
    """Potential view over a FieldTable (NaN outside the table)."""

    def __init__(self, table: FieldTable):
        self.table = table
        self.mass = table.mass

    def energy(self, points):
        U, _, _ = self.table.sample(points)
        return U[0] if np.asarray(points).ndim == 1 else U

    def gradient(self, points):
        _, g, _ = self.table.sample(points)
        return g[0] if np.asarray(points).ndim == 1 else g
