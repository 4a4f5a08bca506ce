"""Weighted-macroparticle kinetics: symplectic motion, DSMC collisions,
loss channels, and ensemble statistics.

The ensemble is a structure-of-arrays with equal macroparticle weight
(enforced at injection).  Two execution paths share the same contracts:
the production path steps against a FieldTable through numba kernels with
counter-based randomness; the generic path steps against any Potential in
plain numpy and is used by tests and analytic studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import RB87, PhysicalConstants
from .errors import CellOverflow, ConfigError
from .kinetics_kernels import (
    STAT_ALIVE,
    STAT_BG,
    STAT_CROSS,
    STAT_ESCAPE,
    STAT_EVAP,
    STAT_REFLECT,
    bin_particles,
    collide_cells,
    loss_kernel,
    push_table,
    seed_acc_table,
)
from .potentials import FieldTable, Potential

LOSS_CHANNELS = ("background", "crosstalk", "evaporation", "escape", "reflected")
_STAT_TO_CHANNEL = {
    STAT_BG: "background",
    STAT_CROSS: "crosstalk",
    STAT_EVAP: "evaporation",
    STAT_ESCAPE: "escape",
    STAT_REFLECT: "reflected",
}


@dataclass(frozen=True)
class ScatteringModel:
    """Elastic s-wave scattering of identical bosons: sigma = 8*pi*a^2."""

    scattering_length: float = 5.24e-9    # m

    def __post_init__(self) -> None:
        if self.scattering_length <= 0:
            raise ConfigError("scattering length must be positive")

    @property
    def cross_section(self) -> float:
        return 8.0 * np.pi * self.scattering_length**2


@dataclass(frozen=True)
class CollisionCellGrid:
    """Rectilinear DSMC cell grid."""

    origin: tuple[float, float, float]
    cell_size: tuple[float, float, float]
    counts: tuple[int, int, int]
    max_per_cell: int = 1024
    vrel_max_init: float = 1.0            # m/s, generous first-step bound

    def __post_init__(self) -> None:
        if min(self.cell_size) <= 0:
            raise ConfigError("cell sizes must be positive")
        if min(self.counts) < 1:
            raise ConfigError("cell counts must be >= 1")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))


@dataclass
class LossChannels:
    """Loss configuration; taus in seconds, threshold in microkelvin above
    the trap bottom, cull radius measured transversely from the trap axis."""

    tau_background: float | None = 240.0
    tau_crosstalk: float | None = 12.0
    evaporation_threshold_uK: float | None = None
    spatial_cull_radius: float = 2.5e-3
    evaporation_mode: str = "energy"      # or "position"
    U_min_J: float = 0.0                  # trap-bottom energy reference
    axis_y: float = 0.0                   # trap axis for the transverse cull
    axis_z: float = 0.0
    exit_x: float = -np.inf               # upstream removal plane
    barrier_x: float = -np.inf            # crossing-flag plane

    def __post_init__(self) -> None:
        for tau in (self.tau_background, self.tau_crosstalk):
            if tau is not None and tau <= 0:
                raise ConfigError("loss time constants must be positive")
        if (self.evaporation_threshold_uK is not None
                and self.evaporation_threshold_uK < 0):
            raise ConfigError("evaporation threshold must be >= 0")
        if self.evaporation_mode not in ("energy", "position"):
            raise ConfigError(f"unknown evaporation mode {self.evaporation_mode!r}")

    def step_probabilities(self, dt: float) -> tuple[float, float]:
        p_bg = dt / self.tau_background if self.tau_background else 0.0
        p_cross = dt / self.tau_crosstalk if self.tau_crosstalk else 0.0
        if p_bg + p_cross > 0.1:
            raise ConfigError(
                f"dt too coarse for loss channels: dt*(1/tau_bg+1/tau_cross)"
                f" = {p_bg + p_cross:.3f} > 0.1"
            )
        return p_bg, p_cross

    def threshold_J(self, constants: PhysicalConstants = RB87) -> float:
        if self.evaporation_threshold_uK is None:
            return np.inf
        return constants.J_from_uK(self.evaporation_threshold_uK)


@dataclass
class EnsembleStats:
    """Summary statistics of one ensemble snapshot."""

    N: float                  # weighted atom number
    T: float                  # K, from the velocity covariance trace
    n_peak: float             # m^-3
    psd: float                # n_peak * lambda_dB^3
    E_kinetic: float          # J, weighted total kinetic energy
    peak_macroparticles: float
    density_reliable: bool


class Ensemble:
    """Structure-of-arrays particle store with equal weights.

    Removal swaps from the end (order is not meaningful); injection appends.
    All mutation is deterministic for deterministic inputs.
    """

    def __init__(self, weight: float, capacity: int = 4096,
                 constants: PhysicalConstants = RB87):
        if weight < 1.0:
            raise ConfigError("macroparticle weight must be >= 1")
        self.weight = float(weight)
        self.constants = constants
        self.n = 0
        self._next_id = 0
        cap = max(int(capacity), 16)
        self.pos = np.zeros((cap, 3))
        self.vel = np.zeros((cap, 3))
        self.acc = np.zeros((cap, 3))
        self.U = np.full(cap, np.nan)
        self.stat = np.zeros(cap, dtype=np.int8)
        self.ids = np.zeros(cap, dtype=np.int64)
        self.crossed = np.zeros(cap, dtype=np.bool_)
        self.newly_crossed = np.zeros(cap, dtype=np.bool_)

    @property
    def capacity(self) -> int:
        return self.pos.shape[0]

    @property
    def weighted_N(self) -> float:
        return self.n * self.weight

    def _grow(self, need: int) -> None:
        cap = self.capacity
        new_cap = max(2 * cap, need)
        for name in ("pos", "vel", "acc"):
            arr = getattr(self, name)
            grown = np.zeros((new_cap, 3))
            grown[:cap] = arr
            setattr(self, name, grown)
        for name, fill in (("U", np.nan), ("stat", 0), ("ids", 0),
                           ("crossed", False), ("newly_crossed", False)):
            arr = getattr(self, name)
            grown = np.full(new_cap, fill, dtype=arr.dtype)
            grown[:cap] = arr
            setattr(self, name, grown)

    def append(self, pos: np.ndarray, vel: np.ndarray) -> tuple[int, int]:
        """Add particles; returns the new slot range [lo, hi)."""
        k = len(pos)
        if k == 0:
            return self.n, self.n
        if self.n + k > self.capacity:
            self._grow(self.n + k)
        lo, hi = self.n, self.n + k
        self.pos[lo:hi] = pos
        self.vel[lo:hi] = vel
        self.acc[lo:hi] = 0.0
        self.U[lo:hi] = np.nan
        self.stat[lo:hi] = STAT_ALIVE
        self.ids[lo:hi] = np.arange(self._next_id, self._next_id + k)
        self.crossed[lo:hi] = False
        self.newly_crossed[lo:hi] = False
        self._next_id += k
        self.n = hi
        return lo, hi

    def remove_flagged(self) -> dict[str, int]:
        """Remove every particle whose status is non-alive.

        Returns macroparticle counts per loss channel.  Swap-from-end
        keeps arrays dense; the iteration order is deterministic.
        """
        n = self.n
        stat = self.stat[:n]
        removed = np.nonzero(stat != STAT_ALIVE)[0]
        if len(removed) == 0:
            return {}
        counts: dict[str, int] = {}
        for code, channel in _STAT_TO_CHANNEL.items():
            c = int(np.count_nonzero(stat[removed] == code))
            if c:
                counts[channel] = counts.get(channel, 0) + c
        arrays = (self.pos, self.vel, self.acc)
        scalars = (self.U, self.stat, self.ids, self.crossed,
                   self.newly_crossed)
        last = n - 1
        for idx in removed[::-1]:
            if idx != last:
                for a in arrays:
                    a[idx] = a[last]
                for s in scalars:
                    s[idx] = s[last]
            last -= 1
        self.n = last + 1
        self.stat[:self.n][self.stat[:self.n] != STAT_ALIVE] = STAT_ALIVE
        return counts

    def kinetic_energy(self) -> float:
        v = self.vel[:self.n]
        return 0.5 * self.constants.mass * self.weight * float(
            np.sum(v * v))

    def reorder(self, perm: np.ndarray) -> None:
        """Permute particle storage (deterministic cache-locality sort).

        Physics is per-particle, so any permutation is legal; sorting by
        spatial bins keeps field-table gathers cache-resident.
        """
        n = self.n
        for name in ("pos", "vel", "acc", "U", "stat", "ids", "crossed",
                     "newly_crossed"):
            arr = getattr(self, name)
            arr[:n] = arr[:n][perm]

    def sort_key_perm(self, origin, inv_h, counts) -> np.ndarray:
        """Stable permutation ordering particles by coarse spatial bins."""
        n = self.n
        rel = (self.pos[:n] - origin) * inv_h
        idx = np.clip(rel.astype(np.int64), 0, np.asarray(counts) - 1)
        keys = (idx[:, 0] * counts[1] + idx[:, 1]) * counts[2] + idx[:, 2]
        return np.argsort(keys, kind="stable")


# ---------------------------------------------------------------------------
# push
# ---------------------------------------------------------------------------

def push(ensemble: Ensemble, potential: Potential | FieldTable, dt: float
         ) -> None:
    """One velocity-Verlet step: v half-kick, drift, re-force, half-kick.

    Against a FieldTable this runs the fused numba kernel; particles that
    leave the table are frozen with ESCAPE status for the caller's loss
    accounting.  Against a generic Potential, forces come from its
    gradient; NaN energies (outside an interpolated domain) mark escape.
    """
    n = ensemble.n
    if n == 0:
        return
    if isinstance(potential, FieldTable):
        t = potential
        push_table(
            ensemble.pos, ensemble.vel, ensemble.acc, ensemble.U,
            ensemble.stat, n, dt, t.mass, t.data,
            t.origin[0], t.origin[1], t.origin[2],
            t.spacing[0], t.spacing[1], t.spacing[2],
            t.shape[0], t.shape[1], t.shape[2], t.moment, t.gravity,
        )
        return
    pos = ensemble.pos[:n]
    vel = ensemble.vel[:n]
    acc = ensemble.acc[:n]
    half = 0.5 * dt
    vel += half * acc
    pos += dt * vel
    grad = np.asarray(potential.gradient(pos))
    new_acc = -grad / potential.mass
    bad = ~np.all(np.isfinite(new_acc), axis=1)
    if np.any(bad):
        ensemble.stat[:n][bad] = STAT_ESCAPE
        new_acc[bad] = 0.0
    vel += half * new_acc
    acc[:] = new_acc
    ensemble.U[:n] = np.asarray(potential.energy(pos))


def seed_forces(ensemble: Ensemble, potential: Potential | FieldTable,
                lo: int, hi: int) -> None:
    """Initialize force and energy caches for freshly injected slots."""
    if hi <= lo:
        return
    if isinstance(potential, FieldTable):
        t = potential
        seed_acc_table(
            ensemble.pos, ensemble.vel, ensemble.acc, ensemble.U,
            ensemble.stat, lo, hi, t.mass, t.data,
            t.origin[0], t.origin[1], t.origin[2],
            t.spacing[0], t.spacing[1], t.spacing[2],
            t.shape[0], t.shape[1], t.shape[2], t.moment, t.gravity,
        )
        return
    pos = ensemble.pos[lo:hi]
    grad = np.asarray(potential.gradient(pos))
    acc = -grad / potential.mass
    bad = ~np.all(np.isfinite(acc), axis=1)
    acc[bad] = 0.0
    ensemble.stat[lo:hi][bad] = STAT_ESCAPE
    ensemble.acc[lo:hi] = acc
    ensemble.U[lo:hi] = np.asarray(potential.energy(pos))


# ---------------------------------------------------------------------------
# collisions
# ---------------------------------------------------------------------------

class CollisionState:
    """Per-run scratch for the DSMC pass (cell arrays, vrel_max memory)."""

    def __init__(self, grid: CollisionCellGrid):
        self.grid = grid
        nc = grid.n_cells
        self.vmax = np.full(nc, grid.vrel_max_init)
        self.cell_counts = np.zeros(nc, dtype=np.int64)
        self.cell_starts = np.zeros(nc + 1, dtype=np.int64)
        self.cursor = np.zeros(nc, dtype=np.int64)
        self._cellid = np.empty(0, dtype=np.int64)
        self._order = np.empty(0, dtype=np.int64)
        self._occupied = np.empty(0, dtype=np.int64)
        self._ncoll = np.empty(0, dtype=np.int64)

    def ensure_capacity(self, n: int) -> None:
        if self._cellid.shape[0] < n:
            cap = max(n, 2 * self._cellid.shape[0] + 16)
            self._cellid = np.empty(cap, dtype=np.int64)
            self._order = np.empty_like(self._cellid)
            self._occupied = np.empty(cap // 2 + 1, dtype=np.int64)
            self._ncoll = np.empty(cap // 2 + 1, dtype=np.int64)


def collide(ensemble: Ensemble, state: CollisionState, model: ScatteringModel,
            dt: float, seed: int, step: int) -> int:
    """One DSMC collision pass; returns the number of collision events.

    Candidate-pair statistics follow the no-time-counter scheme; each
    cell's randomness comes from its own (seed, step, cell) stream, so
    results are independent of the iteration or thread order.
    """
    n = ensemble.n
    if n < 2:
        return 0
    g = state.grid
    state.ensure_capacity(n)
    binned, nocc = bin_particles(
        ensemble.pos, ensemble.stat, n,
        g.origin[0], g.origin[1], g.origin[2],
        1.0 / g.cell_size[0], 1.0 / g.cell_size[1], 1.0 / g.cell_size[2],
        g.counts[0], g.counts[1], g.counts[2],
        state._cellid, state.cell_counts, state.cell_starts, state.cursor,
        state._order, state._occupied,
    )
    if binned < 2 or nocc == 0:
        return 0
    occupied = state._occupied[:nocc]
    ncoll = state._ncoll[:nocc]
    collide_cells(
        ensemble.vel, state._order, state.cell_starts, state.cell_counts,
        occupied, ensemble.weight, model.cross_section, dt,
        1.0 / g.cell_volume, state.vmax, ncoll,
        np.uint64(seed), np.uint64(step), g.max_per_cell,
    )
    if np.any(ncoll < 0):
        bad = occupied[np.argmax(ncoll < 0)]
        raise CellOverflow(
            f"collision cell {bad} holds more than {g.max_per_cell} "
            f"particles; refine the cell grid or raise max_per_cell"
        )
    return int(ncoll.sum())


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def apply_losses(ensemble: Ensemble, channels: LossChannels, dt: float,
                 seed: int, step: int) -> dict[str, float]:
    """Apply loss channels; returns weighted per-channel losses.

    Each particle draws from its (seed, step, id) stream: one uniform for
    the two exponential channels (disjoint intervals), deterministic
    energy/position tests for the knife, transverse cull, and the
    upstream exit plane.  Also updates barrier-crossing flags.
    """
    n = ensemble.n
    if n == 0:
        return {}
    p_bg, p_cross = channels.step_probabilities(dt)
    thr = channels.threshold_J(ensemble.constants)
    loss_kernel(
        ensemble.pos, ensemble.vel, ensemble.U, ensemble.stat, ensemble.ids,
        ensemble.crossed, ensemble.newly_crossed, n, ensemble.constants.mass,
        np.uint64(seed), np.uint64(step), p_bg, p_cross, thr,
        channels.evaporation_mode == "energy", channels.U_min_J,
        channels.axis_y, channels.axis_z, channels.spatial_cull_radius**2,
        channels.exit_x, channels.barrier_x,
    )
    counts = ensemble.remove_flagged()
    return {k: v * ensemble.weight for k, v in counts.items()}


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def stats(ensemble: Ensemble, grid: CollisionCellGrid,
          constants: PhysicalConstants | None = None,
          select: np.ndarray | None = None,
          min_peak_count: int = 8) -> EnsembleStats:
    """Weighted number, temperature, peak density, and phase-space density.

    Temperature comes from the velocity-covariance trace
    (3 kB T / 2 = m <|v - vbar|^2> / 2).  Peak-density estimator
    (documented): a 3^3 boxcar of the weighted cell histogram selects the
    peak location robustly against single-cell shot noise, and the raw
    count of the selected cell gives the density, avoiding the boxcar's
    smoothing bias.  When that cell holds fewer than min_peak_count
    macroparticles the density and psd are flagged unreliable.
    """
    c = constants or ensemble.constants
    n = ensemble.n
    pos = ensemble.pos[:n]
    vel = ensemble.vel[:n]
    if select is not None:
        pos = pos[select]
        vel = vel[select]
    m = len(pos)
    N = m * ensemble.weight
    E_kin = 0.5 * c.mass * ensemble.weight * float(np.sum(vel * vel))
    if m < 2:
        return EnsembleStats(N=N, T=0.0, n_peak=0.0, psd=0.0,
                             E_kinetic=E_kin, peak_macroparticles=0.0,
                             density_reliable=False)
    vbar = vel.mean(axis=0)
    dv2 = np.sum((vel - vbar) ** 2) / m
    T = c.mass * dv2 / (3.0 * c.kB)

    edges = [
        np.linspace(grid.origin[i], grid.origin[i]
                    + grid.cell_size[i] * grid.counts[i], grid.counts[i] + 1)
        for i in range(3)
    ]
    hist, _ = np.histogramdd(pos, bins=edges)
    raw_peak = float(hist.max())
    if raw_peak == 0.0:
        return EnsembleStats(N=N, T=T, n_peak=0.0, psd=0.0, E_kinetic=E_kin,
                             peak_macroparticles=0.0, density_reliable=False)
    smooth = np.zeros_like(hist)
    norm = np.zeros_like(hist)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                src = hist[
                    max(0, -dx):hist.shape[0] - max(0, dx),
                    max(0, -dy):hist.shape[1] - max(0, dy),
                    max(0, -dz):hist.shape[2] - max(0, dz),
                ]
                smooth[
                    max(0, dx):hist.shape[0] - max(0, -dx),
                    max(0, dy):hist.shape[1] - max(0, -dy),
                    max(0, dz):hist.shape[2] - max(0, -dz),
                ] += src
                norm[
                    max(0, dx):hist.shape[0] - max(0, -dx),
                    max(0, dy):hist.shape[1] - max(0, -dy),
                    max(0, dz):hist.shape[2] - max(0, -dz),
                ] += 1.0
    smooth /= norm
    loc = np.unravel_index(int(np.argmax(smooth)), smooth.shape)
    peak_count = float(hist[loc])
    n_peak = peak_count * ensemble.weight / grid.cell_volume
    reliable = peak_count >= min_peak_count
    lam = c.thermal_de_broglie(T) if T > 0 else 0.0
    psd = n_peak * lam**3 if T > 0 else 0.0
    return EnsembleStats(N=N, T=T, n_peak=n_peak, psd=psd, E_kinetic=E_kin,
                         peak_macroparticles=peak_count,
                         density_reliable=reliable)
