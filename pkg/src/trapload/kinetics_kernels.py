"""Hot loops of the kinetic core, numba-compiled.

All kernels are deterministic for a fixed seed at any thread count:
parallel loops write only to their own particle or cell slots, and all
randomness comes from counter-based splitmix64 streams keyed by
(seed, step, particle id) or (seed, step, cell index).  Status codes:

    0 alive    1 background loss    2 cross-talk loss    3 evaporated
    4 escaped (left table / cull radius / past exit while marked)
    5 reflected (returned upstream without ever crossing the barrier)
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange, uint64

from .rngstreams import next_unit, stream_state

STAT_ALIVE = 0
STAT_BG = 1
STAT_CROSS = 2
STAT_EVAP = 3
STAT_ESCAPE = 4
STAT_REFLECT = 5


@njit(cache=True, inline="always")
def _interp_force_energy(data, ox, oy, oz, hx, hy, hz, nx, ny, nz,
                         x, y, z, moment, mass, gravity):
    """Trilinear field+Jacobian interpolation and force at one point.

    Returns (ok, U, ax, ay, az); everything lives in registers, no per-call
    allocation.  ok is False outside the table.
    """
    fx = (x - ox) / hx
    fy = (y - oy) / hy
    fz = (z - oz) / hz
    if fx < 0.0 or fy < 0.0 or fz < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0
    if fx > nx - 1 or fy > ny - 1 or fz > nz - 1:
        return False, 0.0, 0.0, 0.0, 0.0
    ix = int(fx)
    iy = int(fy)
    iz = int(fz)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2
    tx = fx - ix
    ty = fy - iy
    tz = fz - iz

    b0 = 0.0
    b1 = 0.0
    b2 = 0.0
    j00 = 0.0
    j01 = 0.0
    j02 = 0.0
    j10 = 0.0
    j11 = 0.0
    j12 = 0.0
    j20 = 0.0
    j21 = 0.0
    j22 = 0.0
    for dx in range(2):
        wx = tx if dx == 1 else 1.0 - tx
        for dy in range(2):
            wxy = wx * (ty if dy == 1 else 1.0 - ty)
            for dz in range(2):
                w = wxy * (tz if dz == 1 else 1.0 - tz)
                ax_ = ix + dx
                ay_ = iy + dy
                az_ = iz + dz
                b0 += w * data[ax_, ay_, az_, 0]
                b1 += w * data[ax_, ay_, az_, 1]
                b2 += w * data[ax_, ay_, az_, 2]
                j00 += w * data[ax_, ay_, az_, 3]
                j01 += w * data[ax_, ay_, az_, 4]
                j02 += w * data[ax_, ay_, az_, 5]
                j10 += w * data[ax_, ay_, az_, 6]
                j11 += w * data[ax_, ay_, az_, 7]
                j12 += w * data[ax_, ay_, az_, 8]
                j20 += w * data[ax_, ay_, az_, 9]
                j21 += w * data[ax_, ay_, az_, 10]
                j22 += w * data[ax_, ay_, az_, 11]

    bmag = np.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    if bmag > 0.0:
        ibm = 1.0 / bmag
        hbx = b0 * ibm
        hby = b1 * ibm
        hbz = b2 * ibm
    else:
        hbx = 0.0
        hby = 0.0
        hbz = 0.0
    # grad|B|_j = Bhat_i * J_ij
    gx = hbx * j00 + hby * j10 + hbz * j20
    gy = hbx * j01 + hby * j11 + hbz * j21
    gz = hbx * j02 + hby * j12 + hbz * j22
    U = moment * bmag + mass * gravity * z
    inv_m = 1.0 / mass
    return (True, U,
            -moment * gx * inv_m,
            -moment * gy * inv_m,
            -moment * gz * inv_m - gravity)


@njit(cache=True, parallel=True, fastmath=True)
def push_table(pos, vel, acc, U, stat, n, dt, mass,
               data, ox, oy, oz, hx, hy, hz, nx, ny, nz, moment, gravity):
    """Velocity-Verlet step against an interpolated field table.

    Particles leaving the table are frozen in place with status ESCAPE;
    their U entry becomes NaN.
    """
    half = 0.5 * dt
    for i in prange(n):
        if stat[i] != STAT_ALIVE:
            continue
        vx = vel[i, 0] + half * acc[i, 0]
        vy = vel[i, 1] + half * acc[i, 1]
        vz = vel[i, 2] + half * acc[i, 2]
        x = pos[i, 0] + dt * vx
        y = pos[i, 1] + dt * vy
        z = pos[i, 2] + dt * vz
        ok, u, ax, ay, az = _interp_force_energy(
            data, ox, oy, oz, hx, hy, hz, nx, ny, nz, x, y, z,
            moment, mass, gravity)
        if not ok:
            stat[i] = STAT_ESCAPE
            U[i] = np.nan
            continue
        pos[i, 0] = x
        pos[i, 1] = y
        pos[i, 2] = z
        vel[i, 0] = vx + half * ax
        vel[i, 1] = vy + half * ay
        vel[i, 2] = vz + half * az
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
        U[i] = u


@njit(cache=True, fastmath=True)
def seed_acc_table(pos, vel, acc, U, stat, lo, hi, mass,
                   data, ox, oy, oz, hx, hy, hz, nx, ny, nz, moment, gravity):
    """Initialize acceleration and energy caches for slots [lo, hi).

    Serial: injection batches are small and the parallel-launch overhead
    would dominate."""
    for i in range(lo, hi):
        ok, u, ax, ay, az = _interp_force_energy(
            data, ox, oy, oz, hx, hy, hz, nx, ny, nz,
            pos[i, 0], pos[i, 1], pos[i, 2], moment, mass, gravity)
        if not ok:
            stat[i] = STAT_ESCAPE
            U[i] = np.nan
            continue
        stat[i] = STAT_ALIVE
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
        U[i] = u


@njit(cache=True, parallel=True)
def loss_kernel(pos, vel, U, stat, ids, crossed, newly_crossed, n, mass,
                seed, step, p_bg, p_cross, thr_J, energy_mode, U_min,
                cy, cz, r2_cull, x_exit, x_barrier):
    """Stochastic and geometric loss channels plus barrier bookkeeping.

    Exponential channels draw one uniform per particle from the
    (seed, step, id) stream and use disjoint intervals, so each particle
    is removed by at most one channel per step with the exact per-channel
    probability.
    """
    for i in prange(n):
        newly_crossed[i] = False
        if stat[i] != STAT_ALIVE:
            continue
        if p_bg > 0.0 or p_cross > 0.0:
            s = stream_state(seed, step, uint64(ids[i]))
            s, u = next_unit(s)
            if u < p_bg:
                stat[i] = STAT_BG
                continue
            if u < p_bg + p_cross:
                stat[i] = STAT_CROSS
                continue
        if np.isfinite(thr_J):
            if energy_mode:
                ke = 0.5 * mass * (vel[i, 0] ** 2 + vel[i, 1] ** 2
                                   + vel[i, 2] ** 2)
                if U[i] + ke - U_min > thr_J:
                    stat[i] = STAT_EVAP
                    continue
            else:
                if U[i] - U_min > thr_J:
                    stat[i] = STAT_EVAP
                    continue
        dy = pos[i, 1] - cy
        dz = pos[i, 2] - cz
        if dy * dy + dz * dz > r2_cull:
            stat[i] = STAT_ESCAPE
            continue
        if pos[i, 0] < x_exit and vel[i, 0] < 0.0:
            stat[i] = STAT_REFLECT if not crossed[i] else STAT_ESCAPE
            continue
        if not crossed[i] and pos[i, 0] > x_barrier:
            crossed[i] = True
            newly_crossed[i] = True


@njit(cache=True)
def bin_particles(pos, stat, n, ox, oy, oz, ihx, ihy, ihz, ncx, ncy, ncz,
                  cellid, counts, starts, cursor, order, occupied):
    """Deterministic counting sort of alive particles into collision cells.

    Returns (number of binned particles, number of cells holding >= 2).
    The occupied array (sized n//2+1 is always enough) receives the ids of
    collision-capable cells in ascending order."""
    ncells = ncx * ncy * ncz
    for c in range(ncells):
        counts[c] = 0
    m = 0
    for i in range(n):
        c = -1
        if stat[i] == STAT_ALIVE:
            fx = (pos[i, 0] - ox) * ihx
            fy = (pos[i, 1] - oy) * ihy
            fz = (pos[i, 2] - oz) * ihz
            if (0.0 <= fx < ncx) and (0.0 <= fy < ncy) and (0.0 <= fz < ncz):
                c = (int(fx) * ncy + int(fy)) * ncz + int(fz)
        cellid[i] = c
        if c >= 0:
            counts[c] += 1
            m += 1
    total = 0
    nocc = 0
    for c in range(ncells):
        starts[c] = total
        cursor[c] = total
        total += counts[c]
        if counts[c] >= 2:
            occupied[nocc] = c
            nocc += 1
    starts[ncells] = total
    for i in range(n):
        c = cellid[i]
        if c >= 0:
            order[cursor[c]] = i
            cursor[c] += 1
    return m, nocc


@njit(cache=True, parallel=True)
def collide_cells(vel, order, starts, counts, occupied, weight, sigma, dt,
                  inv_vol, vmax, ncoll_out, seed, step, max_per_cell):
    """No-time-counter DSMC pass over occupied cells.

    Candidate pairs per cell: 0.5*Nc*(Nc-1)*W*sigma*vmax*dt/V with
    randomized rounding; acceptance vrel/vmax (always accepted above vmax,
    which then grows); scattering isotropic with |vrel| preserved, so
    momentum and kinetic energy are conserved exactly per collision.
    vmax refresh keeps 20% headroom: it jumps immediately to 1.2x any
    larger sampled relative speed and decays by 0.5% per step otherwise;
    a hard per-step refresh from the few sampled candidates would collapse
    toward the typical (not maximal) relative speed and bias the rate low.
    Returns per-occupied-cell collision counts; a cell exceeding
    max_per_cell reports -1 (caller raises).
    """
    nocc = occupied.shape[0]
    for k in prange(nocc):
        c = occupied[k]
        Nc = counts[c]
        ncoll_out[k] = 0
        if Nc < 2:
            continue
        if Nc > max_per_cell:
            ncoll_out[k] = -1
            continue
        s0 = starts[c]
        st = stream_state(seed, step, uint64(c))
        coef = 0.5 * Nc * (Nc - 1) * weight * sigma * vmax[c] * dt * inv_vol
        m_int = int(coef)
        st, u = next_unit(st)
        if u < coef - m_int:
            m_int += 1
        maxseen = 0.0
        accepted = 0
        for _ in range(m_int):
            st, u1 = next_unit(st)
            st, u2 = next_unit(st)
            ia = int(u1 * Nc)
            if ia >= Nc:
                ia = Nc - 1
            jb = int(u2 * (Nc - 1))
            if jb >= Nc - 1:
                jb = Nc - 2
            if jb >= ia:
                jb += 1
            i = order[s0 + ia]
            j = order[s0 + jb]
            gx = vel[i, 0] - vel[j, 0]
            gy = vel[i, 1] - vel[j, 1]
            gz = vel[i, 2] - vel[j, 2]
            g = np.sqrt(gx * gx + gy * gy + gz * gz)
            if g > maxseen:
                maxseen = g
            st, u3 = next_unit(st)
            if u3 * vmax[c] < g:
                st, u4 = next_unit(st)
                st, u5 = next_unit(st)
                ct = 2.0 * u4 - 1.0
                snt = np.sqrt(max(0.0, 1.0 - ct * ct))
                phi = 2.0 * np.pi * u5
                nx_ = snt * np.cos(phi)
                ny_ = snt * np.sin(phi)
                nz_ = ct
                cmx = 0.5 * (vel[i, 0] + vel[j, 0])
                cmy = 0.5 * (vel[i, 1] + vel[j, 1])
                cmz = 0.5 * (vel[i, 2] + vel[j, 2])
                hg = 0.5 * g
                vel[i, 0] = cmx + hg * nx_
                vel[i, 1] = cmy + hg * ny_
                vel[i, 2] = cmz + hg * nz_
                vel[j, 0] = cmx - hg * nx_
                vel[j, 1] = cmy - hg * ny_
                vel[j, 2] = cmz - hg * nz_
                accepted += 1
        if maxseen > 0.0:
            # no update without samples: sparse cells must keep their ceiling
            relaxed = 0.995 * vmax[c]
            if 1.2 * maxseen > relaxed:
                relaxed = 1.2 * maxseen
            vmax[c] = relaxed
        ncoll_out[k] = accepted
