"""Independent numerical oracles shared by the test suite.

Everything here deliberately avoids the closed forms used in production:
fields come from adaptive quadrature of the raw Biot-Savart integrand,
trap frequencies from textbook analytic traps, collision rates from
kinetic theory.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def biot_savart_quadrature(start, end, current, point, mu0=1.25663706212e-6,
                           epsrel=1e-13):
    """Field of a finite straight segment by adaptive quadrature.

    Integrates (mu0*I/4pi) * u x (p - r(t)) / |p - r(t)|^3 dt component by
    component with scipy's adaptive QUADPACK routine.
    """
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    p = np.asarray(point, dtype=float)
    d = b - a
    length = np.linalg.norm(d)
    u = d / length

    def integrand(t, comp):
        r = p - (a + t * u)
        cr = np.cross(u, r)
        return cr[comp] / np.linalg.norm(r) ** 3

    out = np.empty(3)
    for comp in range(3):
        val, _ = quad(integrand, 0.0, length, args=(comp,),
                      epsabs=0.0, epsrel=epsrel, limit=200)
        out[comp] = val
    return (mu0 * current / (4.0 * np.pi)) * out


def harmonic_peak_density(N, T, omegas, mass, kB=1.380649e-23):
    """Peak density of a thermal cloud in a 3D harmonic trap:
    n0 = N * prod(omega) * (m / (2 pi kB T))^(3/2)."""
    wx, wy, wz = omegas
    return N * wx * wy * wz * (mass / (2.0 * np.pi * kB * T)) ** 1.5


def mean_relative_speed(T, mass, kB=1.380649e-23):
    """Mean relative speed of two thermal atoms: sqrt(16 kB T / (pi m))."""
    return np.sqrt(16.0 * kB * T / (np.pi * mass))


def ioffe_pritchard_frequencies(B0, Bp, Bpp, moment, mass):
    """Radial and axial angular frequencies of an Ioffe-Pritchard trap.

    omega_rho = sqrt(mu (Bp^2/B0 - Bpp/2) / m), omega_z = sqrt(mu Bpp / m),
    with mu the magnetic moment (J/T).
    """
    w_rho = np.sqrt(moment * (Bp**2 / B0 - Bpp / 2.0) / mass)
    w_z = np.sqrt(moment * Bpp / mass)
    return w_rho, w_z
