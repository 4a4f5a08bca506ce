"""Trap metrology: minimum, frequencies, depth, and entrance-barrier height.

All energies leave this module in microkelvin (E/kB); positions in meters;
frequencies in rad/s.  The search routines are deterministic: fixed
iteration order, no randomness, so repeated charactherizations of the same
inputs agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .constants import GAUSS, RB87
from .errors import NoBarrier, NoConvergence, NotAMinimum, NoTrap, SaddleDetected, Unbounded
from .magnetics import ZeemanSystem
from .potentials import ChipPotential, Potential


@dataclass
class AnalysisOptions:
    """Search-budget knobs for trap characterization."""

    guess: tuple[float, float, float] = (0.0, 0.0, 0.0)
    box_radial: float = 2.0e-3        # half-width of the search box, radial (m)
    box_axial: float = 8.0e-3         # half-width along the weak axis (m)
    hessian_step: float = 2.0e-6      # FD step for curvature (m)
    gtol: float = 1.0e-12             # gradient-norm tolerance (J/m)
    max_iter: int = 400
    depth_rays: int = 64              # radial ray directions per slice
    depth_slices: int = 32            # axial slices for the ridge search
    depth_steps: int = 160            # march steps per ray


@dataclass
class TrapCharacterization:
    """Summary of one layout+currents trap."""

    minimum_position: np.ndarray      # (3,) m
    minimum_energy_J: float
    offset_field_G: float
    frequencies: np.ndarray           # (3,) rad/s, descending
    axes: np.ndarray                  # rows are principal axes, matching order
    depth_uK: float
    barrier_height_uK: float
    aspect_ratio: float
    barrier_position: np.ndarray | None = None   # (3,) m, entrance crest
    guide_floor_uK: float = float("nan")         # upstream floor above U_min

    def frequencies_Hz(self) -> np.ndarray:
        return self.frequencies / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# Minimum
# ---------------------------------------------------------------------------

def find_minimum(potential: Potential, guess, options: AnalysisOptions | None = None
                 ) -> np.ndarray:
    """Local minimizer of the potential energy near guess.

    Quasi-Newton (L-BFGS-B with the potential's own gradient) followed by a
    Newton polish on the finite-difference Hessian; Nelder-Mead fallback if
    the gradient path stalls.  Raises NoConvergence if the gradient norm
    tolerance is never met, SaddleDetected if the converged point has a
    negative curvature direction.
    """
    opts = options or AnalysisOptions()
    p0 = np.asarray(guess, dtype=float)

    def f(p):
        return float(np.atleast_1d(potential.energy(p[None, :]))[0])

    def g(p):
        return np.asarray(potential.gradient(p[None, :]))[0]

    # L-BFGS-B on a normalized objective: atomic-physics energies are
    # ~1e-27 J, far below the solver's unit-scale heuristics.
    L = opts.box_radial
    probes = p0[None, :] + 0.5 * L * np.vstack([np.eye(3), -np.eye(3)])
    U_probe = np.atleast_1d(potential.energy(probes))
    E_scale = float(np.max(np.abs(U_probe - f(p0))))
    if not np.isfinite(E_scale) or E_scale <= 0.0:
        E_scale = abs(f(p0)) + 1e-300

    res = minimize(
        lambda q: f(p0 + q * L) / E_scale,
        np.zeros(3),
        jac=lambda q: g(p0 + q * L) * (L / E_scale),
        method="L-BFGS-B",
        options={"maxiter": opts.max_iter, "gtol": 1e-14, "ftol": 1e-16},
    )
    p = p0 + res.x * L
    if not np.all(np.isfinite(p)):
        res = minimize(lambda q: f(p0 + q * L) / E_scale, np.zeros(3),
                       method="Nelder-Mead",
                       options={"maxiter": 4 * opts.max_iter,
                                "xatol": 1e-12, "fatol": 0.0})
        p = p0 + res.x * L

    # Newton polish: quadratic convergence to sub-nm position resolution.
    gnorm = float(np.linalg.norm(g(p)))
    for _ in range(60):
        grad = g(p)
        gnorm = float(np.linalg.norm(grad))
        hess = potential.hessian(p, step=opts.hessian_step)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad / max(np.linalg.norm(hess), 1e-300)
        stepnorm = float(np.linalg.norm(step))
        limit = 0.25 * opts.box_radial
        if stepnorm > limit:
            step *= limit / stepnorm
            stepnorm = limit
        p_new = p - step
        if f(p_new) > f(p) and stepnorm > 1e-13:
            p_new = p - 0.25 * step   # Hessian not trustworthy here; damp
        p = p_new
        if stepnorm < 1e-13:
            break
    else:
        raise NoConvergence(
            f"Newton polish did not settle (last step {stepnorm:.2e} m, "
            f"gradient {gnorm:.2e} J/m)"
        )
    if gnorm > max(opts.gtol, 1e-6 * E_scale / L):
        raise NoConvergence(
            f"gradient norm {gnorm:.3e} J/m above scaled tolerance"
        )

    hess = potential.hessian(p, step=opts.hessian_step)
    eigvals = np.linalg.eigvalsh(hess)
    if np.any(eigvals <= 0.0):
        raise SaddleDetected(
            f"stationary point at {p} has Hessian eigenvalues {eigvals}"
        )
    return p


# ---------------------------------------------------------------------------
# Frequencies
# ---------------------------------------------------------------------------

def trap_frequencies(potential: Potential, minimum,
                     hessian_step: float = 2.0e-6
                     ) -> tuple[np.ndarray, np.ndarray]:
    """(omegas (3,) rad/s descending, axes (3,3) rows orthonormal).

    omega_i = sqrt(lambda_i / m) from the Hessian eigenvalues at the minimum.
    """
    hess = potential.hessian(np.asarray(minimum, dtype=float), step=hessian_step)
    eigvals, eigvecs = np.linalg.eigh(hess)
    if np.any(eigvals <= 0.0):
        raise NotAMinimum(f"Hessian eigenvalues {eigvals} not all positive")
    omegas = np.sqrt(eigvals / potential.mass)
    order = np.argsort(omegas)[::-1]
    return omegas[order], eigvecs[:, order].T


# ---------------------------------------------------------------------------
# Depth: lowest escape saddle by trough walk + radial ridge rays
# ---------------------------------------------------------------------------

def _plane_minimum(potential: Potential, origin, e1, e2, guess2, radius):
    """Minimize U over origin + a*e1 + b*e2 within |(a,b)| <= radius.

    Probes outside 1.5x the radius score +inf so the simplex cannot run
    away through planes without a bounded transverse minimum.
    """

    def f2(ab):
        if max(abs(ab[0]), abs(ab[1])) > 1.5 * radius:
            return float("inf")
        p = origin + ab[0] * e1 + ab[1] * e2
        return float(np.atleast_1d(potential.energy(p[None, :]))[0])

    res = minimize(f2, np.asarray(guess2, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 0.0, "maxiter": 400})
    ab = np.clip(res.x, -radius, radius)
    return ab, f2(ab)


def trough_profile(potential: Potential, minimum, axis, e1, e2,
                   s_values, radius) -> tuple[np.ndarray, np.ndarray]:
    """Transverse-minimum chain along the weak axis.

    Returns (points (K,3), energies (K,)) at the given signed offsets
    s_values (sorted ascending, containing 0 implicitly not required).
    Walks outward from the minimum re-using the previous transverse offset
    as warm start, which keeps the chain on one valley branch.
    """
    minimum = np.asarray(minimum, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    pts = np.empty((len(s_values), 3))
    Us = np.empty(len(s_values))
    order = np.argsort(np.abs(s_values), kind="stable")
    warm: dict[int, np.ndarray] = {}
    for rank, j in enumerate(order):
        s = s_values[j]
        # warm start: nearest already-solved slice on the same side
        guess2 = np.zeros(2)
        best = None
        for jj in warm:
            if best is None or abs(s_values[jj] - s) < abs(s_values[best] - s):
                best = jj
        if best is not None:
            guess2 = warm[best]
        origin = minimum + s * axis
        ab, U = _plane_minimum(potential, origin, e1, e2, guess2, radius)
        warm[j] = ab
        pts[j] = origin + ab[0] * e1 + ab[1] * e2
        Us[j] = U
    return pts, Us


def _parabolic_peak(u_before, u_max, u_after):
    """Peak of the parabola through three equally spaced samples; never
    below the middle sample."""
    denom = u_before - 2.0 * u_max + u_after
    if denom >= 0.0:
        return u_max
    return u_max - (u_before - u_after) ** 2 / (8.0 * denom)


def _first_ridge(seg, base, eps):
    """Escape barrier along one sampled path.

    Returns (energy, ok, idx_max): the running maximum once the profile
    strictly drops below it (descent into another basin), or the running
    maximum at the path end when the profile has stopped setting new maxima
    there (plateau).  ok is False for paths still climbing at their end
    (boundary-limited) or that never rose above base; idx_max is the sample
    index of the maximum for caller-side refinement.
    """
    runmax = base
    before_max = base
    prev = base
    idx_max = -1
    rose = False
    climbing = False
    for k, u in enumerate(seg):
        if not np.isfinite(u):
            break
        if u > runmax:
            before_max = prev
            runmax = u
            idx_max = k
            rose = True
            climbing = True
        else:
            climbing = False
            if rose and runmax - u > eps:
                return _parabolic_peak(before_max, runmax, u), True, idx_max
        prev = u
    if rose and not climbing:
        return runmax, True, idx_max
    return float("nan"), False, idx_max


def _march_rays(potential: Potential, starts, dirs, step, n_steps, base_max,
                eps):
    """March rays to the search-box edge; return (candidate, found) per ray.

    Vectorized over rays: all rays advance together, the per-ray ridge rule
    of _first_ridge is applied with running state.
    """
    n = starts.shape[0]
    runmax = np.array(base_max, dtype=float).copy()
    before_max = runmax.copy()
    prev = runmax.copy()
    rose = np.zeros(n, dtype=bool)
    climbing = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    found = np.zeros(n, dtype=bool)
    candidate = np.full(n, np.nan)
    for k in range(1, n_steps + 1):
        pos = starts + (k * step) * dirs
        U = np.atleast_1d(potential.energy(pos))
        finite = np.isfinite(U)
        active = ~done & finite
        done |= ~finite
        newmax = active & (U > runmax)
        before_max = np.where(newmax, prev, before_max)
        runmax = np.where(newmax, U, runmax)
        rose |= newmax
        climbing = np.where(active, newmax, climbing)
        ridge = active & rose & ~newmax & (runmax - U > eps)
        take = ridge & ~found
        if np.any(take):
            denom = before_max - 2.0 * runmax + U
            refined = np.where(
                denom < 0.0,
                runmax - (before_max - U) ** 2 / np.where(denom < 0, 8.0 * denom, -1.0),
                runmax,
            )
            candidate = np.where(take, np.maximum(refined, runmax), candidate)
        found |= ridge
        done |= ridge
        prev = np.where(active, U, prev)
    at_end = ~done & rose & ~climbing
    candidate = np.where(at_end & ~found, runmax, candidate)
    found |= at_end
    return candidate, found


def trap_depth(potential: Potential, minimum,
               options: AnalysisOptions | None = None,
               axes: np.ndarray | None = None) -> float:
    """Lowest escape energy above the minimum, in microkelvin.

    Escape channels examined: along the trough toward both axial ends, and
    radial rays (depth_rays directions) launched from trough points on
    depth_slices axial slices.  A channel contributes the running maximum
    of U along its path; the depth is the smallest such barrier.  Raises
    Unbounded when no direction exhibits a ridge inside the search box.
    """
    opts = options or AnalysisOptions()
    minimum = np.asarray(minimum, dtype=float)
    U_min = float(np.atleast_1d(potential.energy(minimum[None, :]))[0])
    if axes is None:
        _, axes = trap_frequencies(potential, minimum, opts.hessian_step)
    axial = axes[2]          # weakest-curvature direction
    e1, e2 = axes[0], axes[1]

    s_vals = np.linspace(-opts.box_axial, opts.box_axial, opts.depth_slices)
    pts, Us = trough_profile(potential, minimum, axial, e1, e2,
                             s_vals, opts.box_radial)

    candidates: list[float] = []
    center = int(np.argmin(np.abs(s_vals)))
    span = max(float(np.max(Us)) - U_min, abs(U_min) * 1e-12, 1e-300)
    eps = 1e-9 * span

    # axial escape: first ridge of the trough profile toward each end,
    # refined by a bounded 1D maximization of the trough energy.
    from scipy.optimize import minimize_scalar

    def trough_energy(s, warm):
        origin = minimum + s * axial
        ab, U = _plane_minimum(potential, origin, e1, e2, warm, opts.box_radial)
        return U, ab

    for sl in (slice(center, None, 1), slice(center, None, -1)):
        seg = Us[sl]
        s_seg = s_vals[sl]
        if len(seg) < 2:
            continue
        cand, ok, idx = _first_ridge(seg[1:], float(seg[0]), eps)
        if not ok:
            continue
        j = idx + 1
        if 1 <= j < len(seg) - 1:
            lo = min(s_seg[j - 1], s_seg[j + 1])
            hi = max(s_seg[j - 1], s_seg[j + 1])
            warm = np.zeros(2)

            def neg(s):
                U, _ = trough_energy(s, warm)
                return -U

            res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-3 * (hi - lo)})
            cand = max(cand, -float(res.fun))
        candidates.append(cand)

    # radial escape from each slice: barrier = max(trough max up to the
    # slice, ridge max along the ray).
    runmax_right = np.maximum.accumulate(Us[center:])
    runmax_left = np.maximum.accumulate(Us[center::-1])
    trough_max_to = np.empty_like(Us)
    trough_max_to[center:] = runmax_right
    trough_max_to[:center + 1] = runmax_left[::-1]

    theta = 2.0 * np.pi * np.arange(opts.depth_rays) / opts.depth_rays
    ray_dirs = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)
    step = opts.box_radial / opts.depth_steps
    for j in range(len(s_vals)):
        starts = np.repeat(pts[j][None, :], opts.depth_rays, axis=0)
        base = np.full(opts.depth_rays, max(Us[j], U_min))
        cand, found = _march_rays(potential, starts, ray_dirs, step,
                                  opts.depth_steps, base, eps)
        if np.any(found):
            ridge = np.min(cand[found])
            candidates.append(float(max(ridge, trough_max_to[j])))

    if not candidates:
        raise Unbounded("no escape saddle below the search-box boundary energy")
    depth_J = min(candidates) - U_min
    return RB87.uK(depth_J)


# ---------------------------------------------------------------------------
# Entrance barrier
# ---------------------------------------------------------------------------

def barrier_height(potential: Potential, path_points) -> tuple[float, int]:
    """Barrier along a guide path ordered entrance -> trap.

    Returns (crest energy minus upstream guide floor, in microkelvin;
    crest index into path_points).  The guide floor is the minimum of U
    over the path upstream of the crest.  Raises NoBarrier when the path
    potential decreases monotonically into the trap (no interior crest).
    """
    pts = np.atleast_2d(np.asarray(path_points, dtype=float))
    U = np.atleast_1d(potential.energy(pts))
    if not np.all(np.isfinite(U)):
        raise ValueError("path leaves the evaluable region")
    crest = int(np.argmax(U))
    scale = np.max(U) - np.min(U) + 1e-300
    if crest == 0:
        raise NoBarrier("path potential is highest at the entrance")
    floor = float(np.min(U[:crest + 1]))
    height = float(U[crest]) - floor
    if height <= 1e-9 * scale or crest == len(U) - 1:
        raise NoBarrier("no interior crest above the upstream floor")
    return RB87.uK(height), crest


# ---------------------------------------------------------------------------
# Full characterization of a chip system
# ---------------------------------------------------------------------------

def characterize(system: ZeemanSystem, options: AnalysisOptions | None = None,
                 *, entrance_x: float | None = None,
                 with_depth: bool = True) -> TrapCharacterization:
    """Minimum, offset field, frequencies, depth, and entrance barrier.

    The entrance barrier is measured along the guide trough from
    entrance_x (default: the axial search-box edge upstream, i.e. smaller
    x) to the trap minimum; the guide-floor convention is used as the
    barrier reference level.  Raises NoTrap if no bound minimum exists.
    """
    opts = options or AnalysisOptions()
    potential = ChipPotential(system)
    try:
        minimum = find_minimum(potential, opts.guess, opts)
    except (NoConvergence, SaddleDetected) as exc:
        raise NoTrap(f"no bound minimum near {opts.guess}: {exc}") from exc
    omegas, axes = trap_frequencies(potential, minimum, opts.hessian_step)
    U_min = float(np.atleast_1d(potential.energy(minimum[None, :]))[0])
    offset_G = float(np.linalg.norm(system.field(minimum))) / GAUSS
    aspect = float(omegas[0] / omegas[2])

    depth_uK = float("nan")
    if with_depth:
        try:
            depth_uK = trap_depth(potential, minimum, opts, axes=axes)
        except Unbounded:
            depth_uK = float("inf")

    # Entrance path: trough slices along -x from the entrance to the trap.
    barrier_uK = float("nan")
    barrier_pos = None
    floor_uK = float("nan")
    x_start = entrance_x if entrance_x is not None else minimum[0] - opts.box_axial
    if x_start < minimum[0]:
        xs = np.linspace(x_start, minimum[0], max(opts.depth_slices, 24))
        e1 = np.array([0.0, 1.0, 0.0])
        e2 = np.array([0.0, 0.0, 1.0])
        axis_x = np.array([1.0, 0.0, 0.0])
        pts, Us = trough_profile(
            potential, minimum, axis_x, e1, e2, xs - minimum[0],
            opts.box_radial,
        )
        try:
            barrier_uK, crest = barrier_height(potential, pts)
            barrier_pos = pts[crest]
            floor_uK = RB87.uK(float(np.min(Us[:crest + 1])) - U_min)
        except NoBarrier:
            barrier_uK = 0.0

    return TrapCharacterization(
        minimum_position=minimum,
        minimum_energy_J=U_min,
        offset_field_G=offset_G,
        frequencies=omegas,
        axes=axes,
        depth_uK=depth_uK,
        barrier_height_uK=barrier_uK,
        aspect_ratio=aspect,
        barrier_position=barrier_pos,
        guide_floor_uK=floor_uK,
    )
