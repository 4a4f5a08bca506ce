"""Physical constants and the Rb-87 spin state used throughout.

All values are CODATA-2018 (SI-2019 exact where applicable) and carry at
least 6 significant figures.  Energies are reported in microkelvin via
E / kB wherever a temperature-equivalent is more useful than joules.
"""

from __future__ import annotations

from dataclasses import dataclass

CONSTANTS_VERSION = "codata2018-rb87-v1"


@dataclass(frozen=True)
class PhysicalConstants:
    """Bundle of constants for one atomic species in SI units.

    gravity is the signed acceleration applied along +z: the potential
    picks up a term m*gravity*z, so the force is -m*gravity*zhat and a
    positive value means z is "up".
    """

    mu0: float = 1.25663706212e-6     # vacuum permeability, T*m/A
    muB: float = 9.2740100783e-24     # Bohr magneton, J/T
    kB: float = 1.380649e-23          # Boltzmann constant, J/K (exact)
    h: float = 6.62607015e-34         # Planck constant, J*s (exact)
    mass: float = 1.44316060e-25      # Rb-87 atomic mass, kg (86.909180531 u)
    gravity: float = 9.80665          # m/s^2, signed along +z

    def __post_init__(self) -> None:
        for name in ("mu0", "muB", "kB", "h", "mass"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"constant {name} must be strictly positive")

    def thermal_velocity(self, T: float) -> float:
        """One-dimensional thermal velocity sqrt(kB*T/m) in m/s."""
        return (self.kB * T / self.mass) ** 0.5

    def thermal_de_broglie(self, T: float) -> float:
        """Thermal de Broglie wavelength h/sqrt(2*pi*m*kB*T) in m."""
        import math

        return self.h / math.sqrt(2.0 * math.pi * self.mass * self.kB * T)

    def uK(self, energy_J: float) -> float:
        """Energy in joules -> microkelvin equivalent."""
        return energy_J / self.kB * 1e6

    def J_from_uK(self, energy_uK: float) -> float:
        """Microkelvin equivalent -> joules."""
        return energy_uK * 1e-6 * self.kB


RB87 = PhysicalConstants()

# Gauss <-> tesla
GAUSS = 1e-4
