"""fiberlink: polarization quantum channel simulation and stabilization.

Models a deployed telecom fiber as a time-varying polarization channel
(rotation drift, polarization-dependent loss, background light, delay
drift), implements closed-loop polarization stabilization driven by a
four-channel piezo controller, and runs entanglement-distribution,
ion-photon and teleportation protocols on top, with full tomography and
error analysis.
"""

__version__ = "0.1.0"

from . import analysis, channel, instruments, polcore, quantum, seeding, stabilizer

__all__ = [
    "__version__",
    "analysis",
    "channel",
    "instruments",
    "polcore",
    "quantum",
    "seeding",
    "stabilizer",
]
