"""Magnetic fields of straight-wire layouts and the Zeeman trapping potential.

Fields are evaluated with the closed-form expression for a finite straight
conductor carrying current I from point a to point b.  With e1 = a - p,
e2 = b - p and l1 = |e1|, l2 = |e2| the field at p is

    B(p) = (mu0*I/4pi) * (l1 + l2) / (l1*l2*(l1*l2 + e1.e2)) * (e1 x e2)

which is exact, free of any discretization, and numerically stable except
on the conductor itself (guarded by a configurable core radius).  The
spatial Jacobian dB/dp is available in closed form as well; it is used to
build force-interpolation tables for the kinetic core.

The trapping potential of a low-field-seeking spin state is
U = mF*gF*muB*|B| (+ m*g*z when gravity is enabled).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .constants import GAUSS, RB87, PhysicalConstants
from .errors import ConfigError, CoreRegion, UntrappableState

# Distance from a wire axis below which evaluation is refused (m).
CORE_RADIUS_DEFAULT = 1e-5

# Hard bound on any channel current unless overridden (A).
CURRENT_BOUND_DEFAULT = 150.0

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WireSegment:
    """Straight conductor from start to end (m), owned by a current channel."""

    start: tuple[float, float, float]
    end: tuple[float, float, float]
    channel: str

    def __post_init__(self) -> None:
        a = np.asarray(self.start, dtype=float)
        b = np.asarray(self.end, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConfigError(f"segment of channel {self.channel!r} has non-finite coordinates")
        if float(np.linalg.norm(b - a)) <= 0.0:
            raise ConfigError(f"segment of channel {self.channel!r} has zero length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))


class ChipLayout:
    """Ordered wire segments plus the set of channel names they belong to.

    Segment endpoints are compiled into flat arrays once so that bulk field
    evaluation is pure vectorized arithmetic.
    """

    def __init__(self, segments: Sequence[WireSegment], name: str = "layout"):
        if not segments:
            raise ConfigError("layout needs at least one segment")
        self.name = name
        self.segments: tuple[WireSegment, ...] = tuple(segments)
        self.channels: tuple[str, ...] = tuple(
            dict.fromkeys(s.channel for s in self.segments)
        )
        self._starts = np.array([s.start for s in self.segments], dtype=float)
        self._ends = np.array([s.end for s in self.segments], dtype=float)
        chan_index = {c: i for i, c in enumerate(self.channels)}
        self._seg_channel = np.array(
            [chan_index[s.channel] for s in self.segments], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.segments)

    def segment_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(starts (M,3), ends (M,3), channel index per segment (M,))."""
        return self._starts, self._ends, self._seg_channel

    def segment_currents(self, currents: "CurrentSetting") -> np.ndarray:
        """Per-segment current in A for a given channel setting."""
        per_channel = np.array([currents[c] for c in self.channels], dtype=float)
        return per_channel[self._seg_channel]


class CurrentSetting(Mapping[str, float]):
    """Channel name -> signed current (A), validated against a hardware bound."""

    def __init__(self, currents: Mapping[str, float], bound: float = CURRENT_BOUND_DEFAULT):
        self._currents = {str(k): float(v) for k, v in currents.items()}
        self.bound = float(bound)
        for name, value in self._currents.items():
            if not np.isfinite(value):
                raise ConfigError(f"current of channel {name!r} is not finite")
            if abs(value) > self.bound:
                raise ConfigError(
                    f"current of channel {name!r} is {value:.3f} A, "
                    f"exceeds hardware bound {self.bound:.1f} A"
                )

    def __getitem__(self, key: str) -> float:
        return self._currents[key]

    def __iter__(self):
        return iter(self._currents)

    def __len__(self) -> int:
        return len(self._currents)

    def validate_for(self, layout: ChipLayout) -> None:
        missing = [c for c in layout.channels if c not in self._currents]
        if missing:
            raise ConfigError(f"currents missing for channels: {missing}")

    def replace(self, **changes: float) -> "CurrentSetting":
        merged = dict(self._currents)
        merged.update({k: float(v) for k, v in changes.items()})
        return CurrentSetting(merged, bound=self.bound)

    def scaled(self, factor: float) -> "CurrentSetting":
        return CurrentSetting(
            {k: v * factor for k, v in self._currents.items()}, bound=self.bound
        )


@dataclass(frozen=True)
class SpinState:
    """Hyperfine state in the adiabatic (spin-follows-field) approximation."""

    F: int = 2
    mF: int = 2
    gF: float = 0.5

    def __post_init__(self) -> None:
        if abs(self.mF) > self.F:
            raise ConfigError(f"|mF|={abs(self.mF)} exceeds F={self.F}")

    @property
    def trappable(self) -> bool:
        return self.mF * self.gF > 0.0

    @property
    def moment_factor(self) -> float:
        """mF*gF, multiplies muB*|B| in the potential."""
        return self.mF * self.gF


# A magnetic field sample is a plain length-3 float array (Bx, By, Bz) in tesla.
FieldVector = np.ndarray


# ---------------------------------------------------------------------------
# Core field evaluation
# ---------------------------------------------------------------------------

def _segment_core_distance(start, end, points):
    """Perpendicular distance to each segment line where the foot falls within
    the segment, +inf otherwise.  points (N,3) -> (N, M)."""
    a = start[None, :, :]                     # (1,M,3)
    d = end - start                           # (M,3)
    length = np.linalg.norm(d, axis=1)        # (M,)
    u = d / length[:, None]                   # (M,3)
    rel = points[:, None, :] - a              # (N,M,3)
    t = np.einsum("nmk,mk->nm", rel, u)       # (N,M)
    perp = rel - t[:, :, None] * u[None, :, :]
    dist = np.linalg.norm(perp, axis=2)
    inside = (t >= 0.0) & (t <= length[None, :])
    return np.where(inside, dist, np.inf)


def core_violations(layout: ChipLayout, points: np.ndarray,
                    core_radius: float = CORE_RADIUS_DEFAULT) -> np.ndarray:
    """Boolean mask (N,) of points inside any conductor core."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    starts, ends, _ = layout.segment_arrays()
    dist = _segment_core_distance(starts, ends, points)
    return np.any(dist < core_radius, axis=1)


def _segment_fields_raw(starts, ends, currents, points, mu0):
    """Fields of every segment at every point, no core guard.

    starts/ends (M,3), currents (M,), points (N,3) -> (N,M,3).
    """
    e1 = starts[None, :, :] - points[:, None, :]   # (N,M,3)
    e2 = ends[None, :, :] - points[:, None, :]
    l1 = np.linalg.norm(e1, axis=2)
    l2 = np.linalg.norm(e2, axis=2)
    dot = np.einsum("nmk,nmk->nm", e1, e2)
    cross = np.cross(e1, e2)
    denom = l1 * l2 * (l1 * l2 + dot)
    # Collinear-outside points give cross ~ 0 with denom > 0; true on-wire
    # points (denom -> 0) are the caller's responsibility via the core guard.
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (l1 + l2) / denom
    g = np.where(np.isfinite(g), g, 0.0)
    pref = (mu0 / FOUR_PI) * currents[None, :] * g
    return pref[:, :, None] * cross


def segment_field(seg: WireSegment, current: float, point,
                  *, core_radius: float = CORE_RADIUS_DEFAULT,
                  constants: PhysicalConstants = RB87) -> FieldVector:
    """Field (T) of one finite segment at one point.

    Raises CoreRegion if the point lies within core_radius of the wire axis
    with its perpendicular foot on the segment.
    """
    p = np.asarray(point, dtype=float).reshape(1, 3)
    starts = np.asarray([seg.start], dtype=float)
    ends = np.asarray([seg.end], dtype=float)
    dist = _segment_core_distance(starts, ends, p)
    if dist[0, 0] < core_radius:
        raise CoreRegion(
            f"point {point} is {dist[0, 0]:.2e} m from segment axis "
            f"(core radius {core_radius:.1e} m)"
        )
    out = _segment_fields_raw(starts, ends, np.array([current]), p, constants.mu0)
    return out[0, 0]


def total_field(layout: ChipLayout, currents: CurrentSetting, points,
                *, bias: Sequence[float] | None = None,
                core_radius: float = CORE_RADIUS_DEFAULT,
                constants: PhysicalConstants = RB87,
                check_core: bool = True) -> np.ndarray:
    """Superposed field (T) of the full layout plus a uniform bias field.

    Accepts a single point (3,) or a batch (N,3); returns matching shape.
    The per-segment sum is Kahan-compensated, so reordering segments moves
    the result by O(1e-16) relative only.
    """
    currents.validate_for(layout)
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if check_core:
        bad = core_violations(layout, pts, core_radius)
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise CoreRegion(f"field requested inside conductor core at {pts[idx]}")
    starts, ends, _ = layout.segment_arrays()
    seg_I = layout.segment_currents(currents)
    per_seg = _segment_fields_raw(starts, ends, seg_I, pts, constants.mu0)

    total = np.zeros((pts.shape[0], 3))
    comp = np.zeros_like(total)
    for m in range(per_seg.shape[1]):      # Kahan over segments
        y = per_seg[:, m, :] - comp
        t = total + y
        comp = (t - total) - y
        total = t
    if bias is not None:
        total = total + np.asarray(bias, dtype=float)
    return total[0] if single else total


def _segment_jacobians_raw(starts, ends, currents, points, mu0):
    """Analytic spatial Jacobian dB_i/dp_j summed over segments.

    Returns (B (N,3), J (N,3,3)).  Obtained by differentiating the closed
    form: with c = e1 x e2, s = l1*l2 + e1.e2, g = (l1+l2)/(l1*l2*s),
    dc/dp_j = (end-start) x ehat_j (c is linear in p) and the scalar
    factors differentiate via d(l_i)/dp = -e_i/l_i.
    """
    npts = points.shape[0]
    B = np.zeros((npts, 3))
    J = np.zeros((npts, 3, 3))
    e1 = starts[None, :, :] - points[:, None, :]
    e2 = ends[None, :, :] - points[:, None, :]
    l1 = np.linalg.norm(e1, axis=2)
    l2 = np.linalg.norm(e2, axis=2)
    dot = np.einsum("nmk,nmk->nm", e1, e2)
    cross = np.cross(e1, e2)
    s = l1 * l2 + dot
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (l1 + l2) / (l1 * l2 * s)
        # grad ln g = (grad l1 + grad l2)/(l1+l2) - grad l1/l1 - grad l2/l2 - grad s/s
        u1 = e1 / l1[:, :, None]
        u2 = e2 / l2[:, :, None]
        grad_l1 = -u1
        grad_l2 = -u2
        grad_s = (
            -l2[:, :, None] * u1
            - l1[:, :, None] * u2
            - e1 - e2
        )
        grad_ln_g = (
            (grad_l1 + grad_l2) / (l1 + l2)[:, :, None]
            - grad_l1 / l1[:, :, None]
            - grad_l2 / l2[:, :, None]
            - grad_s / s[:, :, None]
        )
    g = np.where(np.isfinite(g), g, 0.0)
    grad_ln_g = np.where(np.isfinite(grad_ln_g), grad_ln_g, 0.0)

    Lvec = ends - starts                                     # (M,3)
    K = np.zeros((Lvec.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -Lvec[:, 2], Lvec[:, 1]
    K[:, 1, 0], K[:, 1, 2] = Lvec[:, 2], -Lvec[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -Lvec[:, 1], Lvec[:, 0]
    # column j of K is Lvec x ehat_j = dc/dp_j; K_ij = dc_i/dp_j indeed
    # because (Lvec x ehat_j)_i = skew(Lvec)_ij.

    pref = (mu0 / FOUR_PI) * currents[None, :] * g           # (N,M)
    B = np.einsum("nm,nmk->nk", pref, cross)
    # dB_i/dp_j = pref * (c_i * dlng_j + K_ij)
    J = np.einsum("nm,nmi,nmj->nij", pref, cross, grad_ln_g)
    J += np.einsum("nm,mij->nij", pref, K)
    return B, J


def total_field_and_jacobian(layout: ChipLayout, currents: CurrentSetting, points,
                             *, bias: Sequence[float] | None = None,
                             constants: PhysicalConstants = RB87
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Field (N,3) and its spatial Jacobian (N,3,3), both exact closed forms.

    No core guard: intended for bulk table building where the caller masks
    grid nodes near conductors itself.
    """
    currents.validate_for(layout)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    starts, ends, _ = layout.segment_arrays()
    seg_I = layout.segment_currents(currents)
    B, J = _segment_jacobians_raw(starts, ends, seg_I, pts, constants.mu0)
    if bias is not None:
        B = B + np.asarray(bias, dtype=float)
    return B, J


# ---------------------------------------------------------------------------
# Zeeman potential
# ---------------------------------------------------------------------------

def zeeman_potential(B, spin: SpinState, constants: PhysicalConstants = RB87,
                     point=None, *, gravity: bool = True) -> np.ndarray | float:
    """Potential energy U = mF*gF*muB*|B| (+ m*g*z) in joules.

    B may be (3,) or (N,3); point (same batch shape) is required only when
    gravity is enabled.
    """
    if not spin.trappable:
        raise UntrappableState(
            f"state F={spin.F}, mF={spin.mF}, gF={spin.gF} has mF*gF <= 0"
        )
    Barr = np.asarray(B, dtype=float)
    single = Barr.ndim == 1
    Bmag = np.linalg.norm(np.atleast_2d(Barr), axis=1)
    if not np.all(np.isfinite(Bmag)):
        raise ValueError("non-finite field magnitude")
    U = spin.moment_factor * constants.muB * Bmag
    if gravity:
        if point is None:
            raise ValueError("gravity term requires the evaluation point")
        z = np.atleast_2d(np.asarray(point, dtype=float))[:, 2]
        U = U + constants.mass * constants.gravity * z
    return float(U[0]) if single else U


class ZeemanSystem:
    """Layout + currents + spin state bound together for potential queries.

    This is the 'potential handle' used by trap analysis: exact Biot-Savart
    underneath, energies in joules, optional gravity, optional uniform bias.
    """

    def __init__(self, layout: ChipLayout, currents: CurrentSetting,
                 spin: SpinState = SpinState(),
                 constants: PhysicalConstants = RB87,
                 *, gravity: bool = True,
                 bias: Sequence[float] | None = None,
                 core_radius: float = CORE_RADIUS_DEFAULT):
        currents.validate_for(layout)
        if not spin.trappable:
            raise UntrappableState("spin state is not magnetically trappable")
        self.layout = layout
        self.currents = currents
        self.spin = spin
        self.constants = constants
        self.gravity = gravity
        self.bias = None if bias is None else np.asarray(bias, dtype=float)
        self.core_radius = core_radius

    @property
    def mass(self) -> float:
        return self.constants.mass

    def field(self, points) -> np.ndarray:
        return total_field(self.layout, self.currents, points,
                           bias=self.bias, core_radius=self.core_radius,
                           constants=self.constants)

    def energy(self, points) -> np.ndarray | float:
        B = self.field(points)
        return zeeman_potential(B, self.spin, self.constants, points,
                                gravity=self.gravity)

    def energy_unchecked(self, points) -> np.ndarray:
        """Bulk energies without the core guard; nodes inside cores get the
        (finite, huge) closed-form value.  Used for table building."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        B = total_field(self.layout, self.currents, pts, bias=self.bias,
                        core_radius=self.core_radius,
                        constants=self.constants, check_core=False)
        return zeeman_potential(B, self.spin, self.constants, pts,
                                gravity=self.gravity)

    def gradient(self, points, step: float = 1e-6) -> np.ndarray:
        """Central-difference gradient of the energy, vectorized over points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        single = np.asarray(points).ndim == 1
        n = pts.shape[0]
        probes = np.repeat(pts, 6, axis=0)
        for axis in range(3):
            probes[2 * axis::6, axis] += step
            probes[2 * axis + 1::6, axis] -= step
        U = self.energy_unchecked(probes)
        grad = np.empty((n, 3))
        for axis in range(3):
            grad[:, axis] = (U[2 * axis::6] - U[2 * axis + 1::6]) / (2.0 * step)
        return grad[0] if single else grad

    def gradient_exact(self, points) -> np.ndarray:
        """Gradient from the analytic field Jacobian: mu*(J^T Bhat) + m*g*zhat."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        single = np.asarray(points).ndim == 1
        B, J = total_field_and_jacobian(self.layout, self.currents, pts,
                                        bias=self.bias, constants=self.constants)
        Bmag = np.linalg.norm(B, axis=1)
        Bhat = B / np.where(Bmag > 0.0, Bmag, 1.0)[:, None]
        grad = self.spin.moment_factor * self.constants.muB * np.einsum(
            "nij,ni->nj", J, Bhat
        )
        if self.gravity:
            grad[:, 2] += self.constants.mass * self.constants.gravity
        return grad[0] if single else grad


def fd_gradient_hessian(energy_fn, point, step: float
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and symmetrized Hessian of a scalar field.

    energy_fn maps (N,3) points to (N,) energies; all 25 probe points are
    evaluated in one batch.  Exact (to rounding) on quadratic potentials.
    """
    p = np.asarray(point, dtype=float)
    offsets = [np.zeros(3)]
    for i in range(3):
        for sgn in (+1.0, -1.0):
            e = np.zeros(3)
            e[i] = sgn * step
            offsets.append(e)
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (+1.0, -1.0):
                for sj in (+1.0, -1.0):
                    e = np.zeros(3)
                    e[i], e[j] = si * step, sj * step
                    offsets.append(e)
    probes = p[None, :] + np.array(offsets)
    U = np.asarray(energy_fn(probes), dtype=float)

    U0 = U[0]
    grad = np.empty(3)
    hess = np.empty((3, 3))
    for i in range(3):
        up, dn = U[1 + 2 * i], U[2 + 2 * i]
        grad[i] = (up - dn) / (2.0 * step)
        hess[i, i] = (up - 2.0 * U0 + dn) / step**2
    k = 7
    for i in range(3):
        for j in range(i + 1, 3):
            upp, upm, ump, umm = U[k], U[k + 1], U[k + 2], U[k + 3]
            k += 4
            hess[i, j] = hess[j, i] = (upp - upm - ump + umm) / (4.0 * step**2)
    hess = 0.5 * (hess + hess.T)
    return grad, hess


def potential_gradient_hessian(system: ZeemanSystem, point,
                               step: float = 1e-6
                               ) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient (J/m) and symmetrized Hessian (J/m^2).

    step must lie in (1e-7, 1e-4) m and the point must keep 2*step clear of
    conductor cores.
    """
    if not (1e-7 < step < 1e-4):
        raise ValueError(f"finite-difference step {step} outside (1e-7, 1e-4) m")
    p = np.asarray(point, dtype=float)
    pad = 2.0 * step
    probe_box = p[None, :] + pad * np.vstack([np.eye(3), -np.eye(3), np.zeros((1, 3))])
    if np.any(core_violations(system.layout, probe_box, system.core_radius)):
        raise CoreRegion(f"point {point} is within 2*step of a conductor core")
    return fd_gradient_hessian(system.energy_unchecked, p, step)


# ---------------------------------------------------------------------------
# Field maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Rectilinear sampling grid: inclusive bounds and point counts per axis."""

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self) -> None:
        for lo, hi, n in zip(self.mins, self.maxs, self.counts):
            if n < 1:
                raise ConfigError("grid counts must be >= 1")
            if n > 1 and not hi > lo:
                raise ConfigError("grid max must exceed min for counts > 1")

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi, n in zip(self.mins, self.maxs, self.counts)
        )

    def points(self) -> np.ndarray:
        """All grid points, row-major (x slowest, z fastest), shape (Nx*Ny*Nz, 3)."""
        ax, ay, az = self.axes()
        X, Y, Z = np.meshgrid(ax, ay, az, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    @property
    def total(self) -> int:
        return int(np.prod(self.counts))


@dataclass
class FieldMap:
    """Sampled |B| and potential on a grid, with per-sample core mask."""

    grid: GridSpec
    points: np.ndarray          # (N,3) m
    B: np.ndarray               # (N,3) T; NaN where masked
    Bmag_G: np.ndarray          # (N,) gauss
    U_uK: np.ndarray            # (N,) microkelvin
    masked: np.ndarray          # (N,) bool, True where inside a conductor core

    CSV_HEADER = "x_m,y_m,z_m,Bx_T,By_T,Bz_T,Bmag_G,U_over_kB_uK"

    def rows(self) -> np.ndarray:
        return np.column_stack([
            self.points, self.B, self.Bmag_G, self.U_uK
        ])


def field_map(system: ZeemanSystem, grid: GridSpec, chunk: int = 65536) -> FieldMap:
    """Sample the layout's field and potential on a rectilinear grid.

    Samples inside conductor cores are masked (NaN values) rather than
    raising, so a map crossing a wire plane stays usable.
    """
    pts = grid.points()
    n = pts.shape[0]
    B = np.empty((n, 3))
    masked = np.zeros(n, dtype=bool)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = pts[lo:hi]
        masked[lo:hi] = core_violations(system.layout, block, system.core_radius)
        B[lo:hi] = total_field(system.layout, system.currents, block,
                               bias=system.bias, constants=system.constants,
                               check_core=False)
    U = zeeman_potential(B, system.spin, system.constants, pts,
                         gravity=system.gravity)
    B[masked] = np.nan
    Bmag = np.linalg.norm(B, axis=1)
    U = np.where(masked, np.nan, U)
    return FieldMap(
        grid=grid,
        points=pts,
        B=B,
        Bmag_G=Bmag / GAUSS,
        U_uK=np.asarray(U) / system.constants.kB * 1e6,
        masked=masked,
    )
