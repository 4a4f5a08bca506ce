"""trapload: loading a finite-depth wire trap from a cold atom beam.

Wire-layout magnetostatics, trap metrology, DSMC loading kinetics, and
differential-evolution current optimization, with a config-driven CLI.
"""

__version__ = "0.1.0"

from .constants import RB87, PhysicalConstants
from .magnetics import (
    ChipLayout,
    CurrentSetting,
    GridSpec,
    SpinState,
    WireSegment,
    ZeemanSystem,
)

__all__ = [
    "RB87",
    "PhysicalConstants",
    "ChipLayout",
    "CurrentSetting",
    "GridSpec",
    "SpinState",
    "WireSegment",
    "ZeemanSystem",
    "__version__",
]
