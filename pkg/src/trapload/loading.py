"""Continuous-loading experiments: inject the beam, evolve the kinetics in
the chip potential, record time series, and run parameter scans.

One run advances a single logical timeline (push -> collide -> losses ->
inject -> record).  All randomness is derived from the run's master seed;
scans parallelize over scan points in separate processes with results
reassembled by index, so outputs are identical for any worker count.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .beam import BeamSpec, emit
from .constants import RB87, PhysicalConstants
from .errors import NoTrap, TrapLoadError
from .kinetics import (
    CollisionCellGrid,
    CollisionState,
    Ensemble,
    LossChannels,
    ScatteringModel,
    apply_losses,
    collide,
    push,
    seed_forces,
    stats,
)
from .magnetics import ChipLayout, CurrentSetting, GridSpec, SpinState, ZeemanSystem
from .potentials import ChipPotential, FieldTable
from .rngstreams import rng_for, stream_state_py
from .trapanalysis import AnalysisOptions, TrapCharacterization, characterize

_EMPTY3 = np.empty((0, 3))


def _worker_init():
    """Scan workers run single-threaded kernels: the processes themselves
    provide the parallelism, and physics is thread-count invariant."""
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:
        pass


def _pool(max_workers):
    # spawn, not fork: numba's OpenMP threading layer is not fork-safe
    # once the parent has run parallel kernels
    return ProcessPoolExecutor(
        max_workers=max_workers,
        mp_context=multiprocessing.get_context("spawn"),
        initializer=_worker_init,
    )


@dataclass
class FieldGridConfig:
    """Field-table extent: x explicit, radial box centered on the trap axis."""

    x_min: float = -5e-3
    x_max: float = 40e-3
    dx: float = 2.0e-4
    radial_halfspan: float = 2.6e-3
    dr: float = 1.2e-4

    def grid_around(self, center_y: float, center_z: float) -> GridSpec:
        nx = int(round((self.x_max - self.x_min) / self.dx)) + 1
        nr = int(round(2.0 * self.radial_halfspan / self.dr)) + 1
        return GridSpec(
            (self.x_min, center_y - self.radial_halfspan,
             center_z - self.radial_halfspan),
            (self.x_max, center_y + self.radial_halfspan,
             center_z + self.radial_halfspan),
            (nx, nr, nr),
        )


@dataclass
class CollisionGridConfig:
    """DSMC cell extent, radially centered on the trap axis."""

    x_min: float = -1e-3
    x_max: float = 36e-3
    cell: tuple[float, float, float] = (9.0e-4, 1.0e-4, 1.0e-4)
    radial_halfspan: float = 1.6e-3
    max_per_cell: int = 2048

    def grid_around(self, center_y: float, center_z: float) -> CollisionCellGrid:
        counts = (
            int(math.ceil((self.x_max - self.x_min) / self.cell[0])),
            int(math.ceil(2.0 * self.radial_halfspan / self.cell[1])),
            int(math.ceil(2.0 * self.radial_halfspan / self.cell[2])),
        )
        return CollisionCellGrid(
            (self.x_min, center_y - self.radial_halfspan,
             center_z - self.radial_halfspan),
            self.cell, counts, max_per_cell=self.max_per_cell,
        )


@dataclass
class LoadingConfig:
    """Everything one loading run needs."""

    layout: ChipLayout
    currents: CurrentSetting
    beam: BeamSpec
    losses: LossChannels = field(default_factory=LossChannels)
    scattering: ScatteringModel = field(default_factory=ScatteringModel)
    spin: SpinState = field(default_factory=SpinState)
    constants: PhysicalConstants = RB87
    gravity: bool = True
    bias: tuple[float, float, float] | None = None
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    field_grid: FieldGridConfig = field(default_factory=FieldGridConfig)
    collision_grid: CollisionGridConfig = field(default_factory=CollisionGridConfig)
    dt: float | None = None            # None: 1/(50 f_max) rule
    duration: float = 30.0
    record_interval: float = 0.25
    seed: int = 1
    sort_interval: int = 64            # steps between locality sorts
    emit_interval: int = 3             # steps between emission batches
    trapped_requires_crossing: bool = True
    barrier_reference_x: float = -20e-3   # upstream guide-floor reference

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise TrapLoadError("duration must be positive")
        if self.record_interval < (self.dt or 0.0):
            raise TrapLoadError("record_interval must be >= dt")


@dataclass
class TimeSeriesRecord:
    """One sampling instant of a loading run."""

    t: float
    N: float                   # weighted trapped atom number
    T: float                   # K, trapped subset
    n_peak: float
    psd: float
    loss_bg: float             # weighted losses since the previous record
    loss_cross: float
    loss_evap: float
    loss_escape: float         # includes reflected beam atoms for the CSV
    injected: float            # weighted injections since previous record
    crossed: float             # weighted first-time barrier crossings
    collisions: int
    n_alive: int               # macroparticles alive
    density_reliable: bool


@dataclass
class SaturationFit:
    N_ss: float
    tau_load: float
    converged: bool


@dataclass
class LoadingResult:
    records: list[TimeSeriesRecord]
    characterization: TrapCharacterization
    ledger: dict[str, float]       # weighted totals per channel
    injected_total: float
    crossed_total: float
    final_alive: float             # weighted particles alive at the end
    fit: SaturationFit | None
    dt: float
    seed: int

    def conservation_residual(self) -> float:
        """|injected - alive - sum(losses)| / max(injected, 1)."""
        lost = sum(self.ledger.values())
        return abs(self.injected_total - self.final_alive - lost) / max(
            self.injected_total, 1.0)

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def numbers(self) -> np.ndarray:
        return np.array([r.N for r in self.records])

    def temperatures(self) -> np.ndarray:
        return np.array([r.T for r in self.records])


def fit_saturation(t: np.ndarray, N: np.ndarray) -> SaturationFit | None:
    """Least-squares fit of N(t) = N_ss (1 - exp(-t/tau))."""
    from scipy.optimize import curve_fit

    if len(t) < 5 or N.max() <= 0:
        return None

    def model(tt, nss, tau):
        return nss * (1.0 - np.exp(-tt / tau))

    n0 = max(N.max(), 1.0)
    tau0 = max(t[-1] / 3.0, 1e-3)
    try:
        popt, _ = curve_fit(model, t, N, p0=(n0, tau0), maxfev=20000)
        nss, tau = float(popt[0]), float(popt[1])
        ok = np.isfinite(nss) and np.isfinite(tau) and nss > 0 and tau > 0
        return SaturationFit(N_ss=nss, tau_load=tau, converged=bool(ok))
    except Exception:
        return SaturationFit(N_ss=float(N[-1]), tau_load=float("nan"),
                             converged=False)


class LoadingEngine:
    """Holds the prepared state of one loading run and advances it."""

    def __init__(self, config: LoadingConfig,
                 characterization: TrapCharacterization | None = None,
                 table: FieldTable | None = None):
        self.config = config
        c = config
        self.system = ZeemanSystem(
            c.layout, c.currents, c.spin, c.constants,
            gravity=c.gravity, bias=c.bias,
        )
        # barrier height and guide floor are referenced to the far upstream
        # guide, not to the (short) simulated runway
        self.char = characterization or characterize(
            self.system, c.analysis,
            entrance_x=min(c.barrier_reference_x, c.beam.entrance_x),
        )
        if not np.all(self.char.frequencies > 0):
            raise NoTrap("characterization returned non-positive frequencies")
        minimum = self.char.minimum_position
        if self.char.barrier_position is not None:
            barrier_x = float(self.char.barrier_position[0])
        else:
            barrier_x = c.beam.entrance_x + 0.25 * (
                minimum[0] - c.beam.entrance_x)

        grid = c.field_grid.grid_around(minimum[1], minimum[2])
        self.table = table if table is not None else FieldTable.from_system(
            self.system, grid)
        self.collision_grid = c.collision_grid.grid_around(minimum[1], minimum[2])
        self.cstate = CollisionState(self.collision_grid)

        f_max = float(self.char.frequencies[0]) / (2.0 * np.pi)
        self.dt = c.dt if c.dt is not None else 1.0 / (50.0 * f_max)

        depth = self.char.depth_uK
        self.depth_J = (c.constants.J_from_uK(depth)
                        if np.isfinite(depth) else np.inf)
        self.losses = replace(
            c.losses,
            U_min_J=self.char.minimum_energy_J,
            axis_y=float(minimum[1]),
            axis_z=float(minimum[2]),
            exit_x=c.beam.entrance_x - 1e-3,
            barrier_x=barrier_x,
        )
        self.losses.step_probabilities(self.dt)   # validate dt vs taus

        self.beam, entry_U = self._prepare_beam()
        # WKB entry transform: the beam's longitudinal distribution is
        # defined on the far guide floor; propagating it to the (short)
        # simulated runway costs the potential difference in axial kinetic
        # energy, and atoms below that never arrive (reflected unsimulated).
        floor_J = (self.char.minimum_energy_J
                   + c.constants.J_from_uK(self.char.guide_floor_uK)
                   if np.isfinite(self.char.guide_floor_uK)
                   else self.char.minimum_energy_J)
        self.entry_dU = max(float(entry_U - floor_J), 0.0)
        cap = int(2e5)
        self.ensemble = Ensemble(weight=self.beam.weight, capacity=cap,
                                 constants=c.constants)
        self.rng_emit = rng_for(c.seed, 0xE)
        self.seed_collide = stream_state_py(c.seed, 1, 0xC)
        self.seed_loss = stream_state_py(c.seed, 2, 0x1)
        self.step_index = 0
        self.time = 0.0
        self.ledger: dict[str, float] = {}
        self.injected_total = 0.0
        self.crossed_total = 0.0
        self.collisions_total = 0
        self._sort_origin = np.array(self.table.origin)
        self._sort_inv_h = 1.0 / (np.array(self.table.spacing) * 2.0)
        self._sort_counts = (np.array(self.table.shape) + 1) // 2

        if not self.table.contains(
                np.array([[c.beam.entrance_x, self.beam.center_y,
                           self.beam.center_z]]))[0]:
            raise TrapLoadError("beam entrance plane lies outside the field table")

    def _prepare_beam(self) -> tuple[BeamSpec, float]:
        """Aim the beam at the local guide trough; derive the transverse
        spread from thermal equilibrium in the guide cross-section unless
        configured explicitly.  Also returns the trough energy at the
        entrance plane (J) for the WKB entry transform."""
        c = self.config
        beam = c.beam
        pot = ChipPotential(self.system)
        from .trapanalysis import _plane_minimum

        e1 = np.array([0.0, 1.0, 0.0])
        e2 = np.array([0.0, 0.0, 1.0])
        origin = np.array([beam.entrance_x, self.char.minimum_position[1],
                           self.char.minimum_position[2]])
        ab, entry_U = _plane_minimum(pot, origin, e1, e2, np.zeros(2),
                                     c.analysis.box_radial)
        center_y = origin[1] + ab[0]
        center_z = origin[2] + ab[1]
        sigma = beam.transverse_sigma
        if sigma is None or sigma <= 0.0:
            # Boltzmann <rho^2> of T_rad in the local guide cross-section
            half = 0.9 * c.analysis.box_radial
            axis = np.linspace(-half, half, 61)
            Y, Z = np.meshgrid(axis, axis, indexing="ij")
            pts = np.column_stack([
                np.full(Y.size, beam.entrance_x),
                center_y + Y.ravel(), center_z + Z.ravel(),
            ])
            U = np.asarray(pot.energy(pts))
            U = U - U.min()
            w = np.exp(-U / (c.constants.kB * beam.T_rad))
            w /= w.sum()
            r2 = (Y.ravel() ** 2 + Z.ravel() ** 2)
            sigma = float(np.sqrt(0.5 * np.sum(w * r2)))
        spec = replace(beam, center_y=float(center_y), center_z=float(center_z),
                       transverse_sigma=float(sigma))
        return spec, float(entry_U)

    def run_steps(self, n_steps: int) -> None:
        ens = self.ensemble
        for _ in range(n_steps):
            step = self.step_index
            if ens.n:
                push(ens, self.table, self.dt)
                self.collisions_total += collide(
                    ens, self.cstate, self.config.scattering, self.dt,
                    self.seed_collide, step)
                led = apply_losses(ens, self.losses, self.dt,
                                   self.seed_loss, step)
                for k, v in led.items():
                    self.ledger[k] = self.ledger.get(k, 0.0) + v
                self.crossed_total += float(
                    np.count_nonzero(ens.newly_crossed[:ens.n])) * ens.weight
            every = max(1, self.config.emit_interval)
            if step % every == 0:
                pos, vel = emit(self.beam, self.time, every * self.dt,
                                self.rng_emit, self.config.constants)
            else:
                pos = vel = _EMPTY3
            if len(pos):
                self.injected_total += len(pos) * ens.weight
                if self.entry_dU > 0.0:
                    vx2 = vel[:, 0] ** 2 - 2.0 * self.entry_dU / self.config.constants.mass
                    arrives = vx2 > 0.0
                    n_reflected = len(pos) - int(np.count_nonzero(arrives))
                    if n_reflected:
                        self.ledger["reflected"] = self.ledger.get(
                            "reflected", 0.0) + n_reflected * ens.weight
                    pos = pos[arrives]
                    vel = vel[arrives]
                    vel[:, 0] = np.sqrt(vx2[arrives])
                if len(pos):
                    lo, hi = ens.append(pos, vel)
                    seed_forces(ens, self.table, lo, hi)
            if self.config.sort_interval and ens.n and (
                    step % self.config.sort_interval == self.config.sort_interval - 1):
                perm = ens.sort_key_perm(self._sort_origin, self._sort_inv_h,
                                         self._sort_counts)
                ens.reorder(perm)
            self.step_index += 1
            self.time += self.dt

    def trapped_mask(self) -> np.ndarray:
        ens = self.ensemble
        n = ens.n
        if n == 0:
            return np.zeros(0, dtype=bool)
        ke = 0.5 * self.config.constants.mass * np.sum(ens.vel[:n] ** 2, axis=1)
        E = ens.U[:n] + ke - self.char.minimum_energy_J
        mask = np.isfinite(E) & (E < self.depth_J)
        mask &= ens.pos[:n, 0] > self.losses.barrier_x
        if self.config.trapped_requires_crossing:
            mask &= ens.crossed[:n]
        return mask

    def record(self, prev_ledger: dict[str, float], prev_injected: float,
               prev_crossed: float, prev_collisions: int) -> TimeSeriesRecord:
        mask = self.trapped_mask()
        s = stats(self.ensemble, self.collision_grid,
                  self.config.constants, select=mask)
        delta = {k: self.ledger.get(k, 0.0) - prev_ledger.get(k, 0.0)
                 for k in set(self.ledger) | set(prev_ledger)}
        return TimeSeriesRecord(
            t=self.time,
            N=s.N,
            T=s.T,
            n_peak=s.n_peak,
            psd=s.psd,
            loss_bg=delta.get("background", 0.0),
            loss_cross=delta.get("crosstalk", 0.0),
            loss_evap=delta.get("evaporation", 0.0),
            loss_escape=delta.get("escape", 0.0) + delta.get("reflected", 0.0),
            injected=self.injected_total - prev_injected,
            crossed=self.crossed_total - prev_crossed,
            collisions=self.collisions_total - prev_collisions,
            n_alive=self.ensemble.n,
            density_reliable=s.density_reliable,
        )


def run_loading(config: LoadingConfig,
                characterization: TrapCharacterization | None = None,
                table: FieldTable | None = None,
                on_record=None) -> LoadingResult:
    """Run one continuous-loading experiment and return its time series.

    on_record(engine, record, index), when given, fires after every record
    (snapshot export hooks live there).  Raises NoTrap when the configured
    currents produce no bound minimum.
    """
    engine = LoadingEngine(config, characterization, table)
    steps_per_record = max(1, int(round(config.record_interval / engine.dt)))
    n_steps = int(round(config.duration / engine.dt))
    records: list[TimeSeriesRecord] = []
    done = 0
    while done < n_steps:
        chunk = min(steps_per_record, n_steps - done)
        snapshot = (dict(engine.ledger), engine.injected_total,
                    engine.crossed_total, engine.collisions_total)
        engine.run_steps(chunk)
        records.append(engine.record(*snapshot))
        if on_record is not None:
            on_record(engine, records[-1], len(records) - 1)
        done += chunk
    t = np.array([r.t for r in records])
    N = np.array([r.N for r in records])
    fit = fit_saturation(t, N)
    return LoadingResult(
        records=records,
        characterization=engine.char,
        ledger=dict(engine.ledger),
        injected_total=engine.injected_total,
        crossed_total=engine.crossed_total,
        final_alive=engine.ensemble.weighted_N,
        fit=fit,
        dt=engine.dt,
        seed=config.seed,
    )


def capture_fraction(config: LoadingConfig, window: tuple[float, float],
                     characterization: TrapCharacterization | None = None,
                     table: FieldTable | None = None) -> float:
    """Weighted fraction of injected atoms that cross the barrier inward.

    Counts first-time crossings and injections inside the time window
    [t0, t1]; the beam should be quasi-stationary there (t0 larger than a
    transit time).
    """
    t0, t1 = window
    if not 0.0 <= t0 < t1:
        raise TrapLoadError("capture window must satisfy 0 <= t0 < t1")
    engine = LoadingEngine(config, characterization, table)
    n0 = int(round(t0 / engine.dt))
    n1 = int(round(t1 / engine.dt))
    engine.run_steps(n0)
    injected_before = engine.injected_total
    crossed_before = engine.crossed_total
    engine.run_steps(n1 - n0)
    injected = engine.injected_total - injected_before
    crossed = engine.crossed_total - crossed_before
    if injected <= 0:
        return 0.0
    return min(max(crossed / injected, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Scans
# ---------------------------------------------------------------------------

@dataclass
class ScanPoint:
    x_value: float                 # barrier height (uK) or threshold (uK)
    control: float                 # current (A) or threshold (uK)
    N_mean: float
    N_std: float
    N_seeds: list[float]
    missing: bool = False
    reason: str = ""


def _barrier_point(args) -> ScanPoint:
    config, channel, current, loading_time, seeds = args
    currents = config.currents.replace(**{channel: current})
    cfg = replace(config, currents=currents, duration=loading_time)
    try:
        engine_char = characterize(
            ZeemanSystem(cfg.layout, cfg.currents, cfg.spin, cfg.constants,
                         gravity=cfg.gravity, bias=cfg.bias),
            cfg.analysis,
            entrance_x=min(cfg.barrier_reference_x, cfg.beam.entrance_x),
        )
    except TrapLoadError as exc:
        return ScanPoint(float("nan"), current, float("nan"), float("nan"),
                         [], missing=True, reason=f"{type(exc).__name__}: {exc}")
    barrier = engine_char.barrier_height_uK
    table = None
    finals: list[float] = []
    for s in seeds:
        cfg_s = replace(cfg, seed=s)
        try:
            engine = LoadingEngine(cfg_s, engine_char, table)
            table = engine.table          # reuse across seeds
            n_steps = int(round(loading_time / engine.dt))
            engine.run_steps(n_steps)
            mask = engine.trapped_mask()
            finals.append(float(np.count_nonzero(mask)) * engine.ensemble.weight)
        except TrapLoadError as exc:
            return ScanPoint(barrier, current, float("nan"), float("nan"),
                             finals, missing=True,
                             reason=f"{type(exc).__name__}: {exc}")
    arr = np.array(finals)
    return ScanPoint(barrier, current, float(arr.mean()),
                     float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                     finals)


def scan_barrier(config: LoadingConfig, channel: str, currents_A,
                 loading_time: float, seeds, max_workers: int = 1
                 ) -> list[ScanPoint]:
    """N(loading_time) versus entrance-barrier height, controlled by the
    current in `channel`.  Points that fail trap analysis are recorded as
    missing; output is sorted by barrier height."""
    tasks = [(config, channel, float(I), loading_time, list(seeds))
             for I in currents_A]
    if max_workers > 1:
        with _pool(max_workers) as pool:
            points = list(pool.map(_barrier_point, tasks))
    else:
        points = [_barrier_point(t) for t in tasks]
    order = np.argsort([p.x_value if np.isfinite(p.x_value) else np.inf
                        for p in points], kind="stable")
    return [points[i] for i in order]


def _evaporation_point(args) -> ScanPoint:
    config, threshold_uK, loading_time, seeds = args
    losses = replace(config.losses, evaporation_threshold_uK=threshold_uK)
    cfg = replace(config, losses=losses, duration=loading_time)
    table = None
    char = None
    finals: list[float] = []
    try:
        for s in seeds:
            cfg_s = replace(cfg, seed=s)
            engine = LoadingEngine(cfg_s, char, table)
            table = engine.table
            char = engine.char
            n_steps = int(round(loading_time / engine.dt))
            engine.run_steps(n_steps)
            mask = engine.trapped_mask()
            finals.append(float(np.count_nonzero(mask)) * engine.ensemble.weight)
    except TrapLoadError as exc:
        return ScanPoint(threshold_uK, threshold_uK, float("nan"),
                         float("nan"), finals, missing=True,
                         reason=f"{type(exc).__name__}: {exc}")
    arr = np.array(finals)
    return ScanPoint(threshold_uK, threshold_uK, float(arr.mean()),
                     float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                     finals)


def scan_evaporation(config: LoadingConfig, thresholds_uK, loading_time: float,
                     seeds, max_workers: int = 1) -> list[ScanPoint]:
    """N(loading_time) versus microwave-knife threshold (uK above the trap
    bottom); the trap itself is unchanged across points."""
    tasks = [(config, float(th), loading_time, list(seeds))
             for th in thresholds_uK]
    if max_workers > 1:
        with _pool(max_workers) as pool:
            points = list(pool.map(_evaporation_point, tasks))
    else:
        points = [_evaporation_point(t) for t in tasks]
    return points
