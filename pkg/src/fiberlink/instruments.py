"""Measurement and actuation hardware models.

Covers the polarimeter at the receiver, the four-channel piezo polarization
controller, waveplate projection setups with two-port detection, the
switchable H/D reference lasers at the sender, and single-photon detectors.
Instrument instances are stateful (latency bookkeeping, private generators)
and must be serialized per instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import polcore
from .polcore import S_D, S_H

__all__ = [
    "Detector",
    "Polarimeter",
    "PiezoController",
    "ProjectionSetup",
    "ReferenceSwitch",
    "VoltageOutOfRange",
    "piezo_rotation",
    "polarimeter_read",
    "project_and_count",
    "waveplate_angles_for_axis",
    "projector_for_waveplates",
]

# Default squeezer geometry: physical squeeze axes alternating 0 deg / 45 deg,
# i.e. Poincare rotation axes alternating between the s1 and s2 directions.
# Two orthogonal equatorial axes with four channels give full rotation
# coverage (verified by the controllability test).
PIEZO_AXES_DEFAULT = (
    np.array([1.0, 0.0, 0.0]),
    np.array([0.0, 1.0, 0.0]),
    np.array([1.0, 0.0, 0.0]),
    np.array([0.0, 1.0, 0.0]),
)


class VoltageOutOfRange(ValueError):
    """Requested piezo voltage exceeds the controller limits."""


@dataclass
class Polarimeter:
    """Stokes polarimeter with iid Gaussian read noise per component.

    The 45 ms default latency makes one measure-feedback cycle (H probe read
    + D probe read + voltage update) take the 90 ms the stabilization
    receiver needs per cycle.
    """

    sigma: float = 0.0
    latency_s: float = 0.045
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self) -> None:
        if self.sigma < 0.0 or self.latency_s < 0.0:
            raise ValueError("sigma and latency must be >= 0")

    def read(self, s_true: np.ndarray) -> np.ndarray:
        return polarimeter_read(self, s_true)


def polarimeter_read(p: Polarimeter, s_true: np.ndarray) -> np.ndarray:
    """Noisy Stokes read; renormalized only if the noisy norm exceeds 1.

    The renormalization keeps reads inside the physical ball. It shifts the
    reported degree of polarization of pure inputs inward by O(sigma) but
    leaves the polarization direction unbiased to O(sigma^2), which is what
    the downstream two-probe fidelity estimate consumes.
    """
    s = np.asarray(s_true, dtype=float)
    if p.sigma > 0.0:
        s = s + p.rng.normal(0.0, p.sigma, size=3)
    n = np.linalg.norm(s)
    if n > 1.0:
        s = s / n
    return s


@dataclass
class PiezoController:
    """Four-channel piezo polarization controller.

    Channel i rotates the Poincare sphere by gain_i * U_i about its fixed
    axis; the channels act on the light in order 1 -> 4. Voltages are
    clamped at +/- limit_v; `set_voltages` raises on out-of-range requests
    while `apply_clamped` clamps after attempting a full-period re-centering
    (a 2*pi/gain shift leaves the rotation unchanged) and logs the event.
    """

    voltages: np.ndarray = field(default_factory=lambda: np.zeros(4))
    axes: tuple[np.ndarray, ...] = PIEZO_AXES_DEFAULT
    gains_rad_per_v: np.ndarray = field(default_factory=lambda: np.full(4, 0.5))
    limit_v: float = 10.0
    settle_s: float = 0.0
    clamp_events: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        self.voltages = np.asarray(self.voltages, dtype=float).copy()
        self.gains_rad_per_v = np.asarray(self.gains_rad_per_v, dtype=float)
        if np.any(self.gains_rad_per_v == 0.0) or not np.all(np.isfinite(self.gains_rad_per_v)):
            raise ValueError("gains must be finite and nonzero")
        if np.any(np.abs(self.voltages) > self.limit_v):
            raise VoltageOutOfRange("initial voltages exceed limits")

    def bias_neutral(self) -> None:
        """Move to the neutral operating point (net identity, full-rank control).

        At zero voltage the two equatorial rotation axes span only the
        equatorial tangent directions, so a small circular-axis error is not
        first-order correctable there. Biasing channels 2 and 4 by -/+ a
        quarter turn keeps the net rotation at identity while making all
        three rotation directions actuatable, like idling a squeezer at
        mid-range.
        """
        quarter = 0.5 * math.pi
        bias = np.array([0.0, -quarter, 0.0, quarter]) / self.gains_rad_per_v
        if np.any(np.abs(bias) > self.limit_v):
            raise VoltageOutOfRange("neutral bias exceeds voltage limits")
        self.voltages = bias

    def set_voltages(self, u: np.ndarray) -> None:
        u = np.asarray(u, dtype=float)
        if np.any(np.abs(u) > self.limit_v + 1e-12):
            raise VoltageOutOfRange(f"requested voltages {u} exceed +/-{self.limit_v} V")
        self.voltages = u.copy()

    def apply_clamped(self, u: np.ndarray) -> np.ndarray:
        """Set voltages, re-centering by full rotation periods where possible."""
        u = np.asarray(u, dtype=float).copy()
        for i in range(4):
            if abs(u[i]) > self.limit_v:
                period = 2.0 * math.pi / abs(self.gains_rad_per_v[i])
                shifted = u[i] - math.copysign(period, u[i])
                u[i] = shifted if abs(shifted) <= self.limit_v else math.copysign(self.limit_v, u[i])
                self.clamp_events += 1
        self.voltages = u
        return u

    def rotation(self) -> np.ndarray:
        return piezo_rotation(self)


def piezo_rotation(c: PiezoController) -> np.ndarray:
    """Net Stokes rotation of the controller at its current voltages."""
    if np.any(np.abs(c.voltages) > c.limit_v + 1e-12):
        raise VoltageOutOfRange("voltages exceed limits")
    m = np.eye(3)
    for axis, gain, u in zip(c.axes, c.gains_rad_per_v, c.voltages):
        m = polcore.rotation_about(axis, gain * u) @ m
    return m


@dataclass(frozen=True)
class Detector:
    """Threshold single-photon detector."""

    efficiency: float = 0.8
    dark_rate_per_s: float = 0.5
    jitter_s: float = 50e-12

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dark_rate_per_s < 0.0 or self.jitter_s < 0.0:
            raise ValueError("dark rate and jitter must be >= 0")


@dataclass
class ProjectionSetup:
    """Motorized quarter/half waveplate pair and a two-port polarizing prism.

    The analysis basis is set directly as a Bloch axis; the corresponding
    waveplate angles follow from `waveplate_angles_for_axis`. Port 1 collects
    the projection onto +axis, port 2 onto -axis.
    """

    qwp_rad: float = 0.0
    hwp_rad: float = 0.0
    port1: Detector = field(default_factory=Detector)
    port2: Detector = field(default_factory=Detector)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def set_basis_axis(self, axis: np.ndarray) -> None:
        self.qwp_rad, self.hwp_rad = waveplate_angles_for_axis(axis)

    def analysis_axis(self) -> np.ndarray:
        ket = _waveplate_pass_ket(self.qwp_rad, self.hwp_rad)
        return polcore.bloch_of_ket(ket)


def waveplate_angles_for_axis(axis: np.ndarray) -> tuple[float, float]:
    """Waveplate angles (qwp, hwp) in [0, pi) projecting onto a Bloch axis.

    For the pass state with linear-polarization angle psi and ellipticity
    chi (axis = (cos2psi cos2chi, sin2psi cos2chi, sin2chi)) the quarter-wave
    plate at psi turns it linear at psi - chi and the half-wave plate at
    (psi - chi)/2 maps that onto horizontal.
    """
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("analysis axis must be nonzero")
    n = n / norm
    psi = 0.5 * math.atan2(n[1], n[0])
    chi = 0.5 * math.asin(max(-1.0, min(1.0, n[2])))
    qwp = psi % math.pi
    hwp = ((psi - chi) / 2.0) % math.pi
    return qwp, hwp


def _jones_rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _jones_qwp(theta: float) -> np.ndarray:
    r = _jones_rotation(theta)
    return r @ np.diag([1.0, 1.0j]) @ r.conj().T


def _jones_hwp(theta: float) -> np.ndarray:
    r = _jones_rotation(theta)
    return r @ np.diag([1.0, -1.0]) @ r.conj().T


def _waveplate_pass_ket(qwp_rad: float, hwp_rad: float) -> np.ndarray:
    """Ket projected onto port 1 for the given waveplate angles."""
    w = _jones_hwp(hwp_rad) @ _jones_qwp(qwp_rad)
    ket = w.conj().T @ np.array([1.0, 0.0], dtype=complex)
    return ket / np.linalg.norm(ket)


def projector_for_waveplates(qwp_rad: float, hwp_rad: float) -> np.ndarray:
    """Rank-1 projector measured at port 1 of the Wollaston prism."""
    ket = _waveplate_pass_ket(qwp_rad, hwp_rad)
    return np.outer(ket, ket.conj())


def project_and_count(
    ps: ProjectionSetup,
    rho: np.ndarray,
    integration_s: float,
    rate_per_s: float = 1000.0,
    arm: int = 1,
) -> tuple[int, int]:
    """Poisson counts at the two output ports for one analysis setting.

    `rho` may be a single-qubit (2x2) or a two-qubit (4x4) density matrix;
    for the latter `arm` selects which qubit the setup analyzes (0 or 1) and
    probabilities are marginals of that qubit. Mean counts are
    rate * probability * efficiency * integration + dark * integration.
    """
    if integration_s <= 0.0:
        raise ValueError("integration must be > 0")
    proj = projector_for_waveplates(ps.qwp_rad, ps.hwp_rad)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape == (2, 2):
        p1 = float(np.trace(proj @ rho).real)
    elif rho.shape == (4, 4):
        full = np.kron(proj, np.eye(2)) if arm == 0 else np.kron(np.eye(2), proj)
        p1 = float(np.trace(full @ rho).real)
    else:
        raise ValueError("rho must be 2x2 or 4x4")
    p1 = min(1.0, max(0.0, p1))
    mean1 = rate_per_s * p1 * ps.port1.efficiency * integration_s
    mean2 = rate_per_s * (1.0 - p1) * ps.port2.efficiency * integration_s
    mean1 += ps.port1.dark_rate_per_s * integration_s
    mean2 += ps.port2.dark_rate_per_s * integration_s
    return int(ps.rng.poisson(mean1)), int(ps.rng.poisson(mean2))


@dataclass
class ReferenceSwitch:
    """Switchable reference lasers with fixed H and D output polarizations."""

    latency_s: float = 0.0
    current: str = "H"

    def select(self, which: str) -> np.ndarray:
        if which not in ("H", "D"):
            raise ValueError(f"unknown reference polarization {which!r}")
        self.current = which
        return S_H.copy() if which == "H" else S_D.copy()
