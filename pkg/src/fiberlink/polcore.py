"""Exact polarization calculus on the Poincaré sphere.

Stokes convention used throughout the package:

    s1 : H/V axis, horizontal = (1, 0, 0)
    s2 : D/A axis, diagonal   = (0, 1, 0)
    s3 : R/L axis, right-hand circular = (0, 0, 1)

Classical Stokes vectors and single-qubit Bloch vectors share this
representation. The matching Pauli triple is (sigma_hv, sigma_da, sigma_rl) =
(diag(1,-1), sigma_x, sigma_y) in the {|H>, |V>} ket basis, which preserves
the cyclic commutators, so all standard SU(2) <-> SO(3) formulas apply
unchanged.

A lossy polarization element is parametrized by its amplitude transmission
T of the worst-transmitted state and the loss vector Gamma pointing along
the fully transmitted (pass) state, with |Gamma| = (1 - T^2)/(1 + T^2).
The corresponding 2x2 operator is B = T*I + (1-T)|P><P|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "S_H",
    "S_D",
    "S_R",
    "PAULI",
    "DegenerateProbes",
    "FullyExtinguished",
    "InvalidTransmission",
    "NonUnitProbe",
    "PdlElement",
    "PdlComposition",
    "bloch_of_ket",
    "bloch_of_density",
    "density_of_bloch",
    "ket_of_bloch",
    "is_rotation",
    "pdl_apply_bloch",
    "pdl_compose",
    "pdl_db",
    "pdl_fidelity_bound",
    "pdl_gamma",
    "process_fidelity",
    "process_fidelity_from_trace",
    "random_rotation",
    "rotation_about",
    "rotation_from_probe_pairs",
    "rotation_of_unitary",
    "rotation_to_axis_angle",
    "su2_of_rotation",
    "trace_from_probe_pair",
]

# Reference probe polarizations (unit Stokes vectors).
S_H = np.array([1.0, 0.0, 0.0])
S_D = np.array([0.0, 1.0, 0.0])
S_R = np.array([0.0, 0.0, 1.0])

# Pauli triple matching the (s1, s2, s3) axes in the {|H>, |V>} basis.
PAULI = (
    np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
    np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
)

_ORTHO_TOL = 1e-10
_PROBE_NORM_TOL = 1e-3


class NonUnitProbe(ValueError):
    """Measured probe Stokes vector is too far from unit norm."""


class DegenerateProbes(ValueError):
    """Input probe pair is (nearly) collinear and cannot fix a rotation."""


class InvalidTransmission(ValueError):
    """Intensity transmissions outside 0 < t_min <= t_max."""


class FullyExtinguished(ValueError):
    """State is orthogonal to the pass state of a perfect polarizer."""


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def is_rotation(m: np.ndarray, tol: float = _ORTHO_TOL) -> bool:
    """True if m is a proper rotation (orthogonal, det = +1) within tol."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    return (
        np.allclose(m.T @ m, np.eye(3), atol=tol)
        and abs(np.linalg.det(m) - 1.0) < tol
    )


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Right-handed rotation by `angle` (rad) about `axis` (Rodrigues form)."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    a = a / n
    k = np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn from the Haar (uniform) measure via a random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return _rotation_of_quaternion(q)


def _rotation_of_quaternion(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quaternion_of_rotation(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix, stable in all branches."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        r = math.sqrt(1.0 + t)
        w = 0.5 * r
        s = 0.5 / r
        q = np.array([
            w,
            (m[2, 1] - m[1, 2]) * s,
            (m[0, 2] - m[2, 0]) * s,
            (m[1, 0] - m[0, 1]) * s,
        ])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = math.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_to_axis_angle(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis (unit vector) and angle in [0, pi] of a rotation matrix."""
    q = _quaternion_of_rotation(m)
    w = min(1.0, max(-1.0, q[0]))
    angle = 2.0 * math.acos(w)
    v = q[1:]
    n = np.linalg.norm(v)
    if n < 1e-15:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return v / n, angle


def su2_of_rotation(m: np.ndarray) -> np.ndarray:
    """SU(2) lift of a Bloch rotation, sign fixed by trace >= 0.

    Returns U with U (v . sigma) U^dag = (m v) . sigma for every Bloch
    vector v. The global sign is unobservable in every implemented protocol.
    """
    q = _quaternion_of_rotation(m)
    u = q[0] * np.eye(2, dtype=complex)
    for comp, s in zip(q[1:], PAULI):
        u = u - 1.0j * comp * s
    return u


def rotation_of_unitary(u: np.ndarray) -> np.ndarray:
    """Bloch rotation effected by conjugation with a 2x2 unitary."""
    m = np.empty((3, 3))
    for j, sj in enumerate(PAULI):
        t = u @ sj @ u.conj().T
        for i, si in enumerate(PAULI):
            m[i, j] = 0.5 * np.trace(si @ t).real
    return m


# ---------------------------------------------------------------------------
# Bloch <-> ket/density helpers
# ---------------------------------------------------------------------------

def density_of_bloch(lam: np.ndarray) -> np.ndarray:
    """2x2 density matrix (I + lam . sigma)/2."""
    lam = np.asarray(lam, dtype=float)
    rho = np.eye(2, dtype=complex)
    for comp, s in zip(lam, PAULI):
        rho = rho + comp * s
    return rho / 2.0


def bloch_of_density(rho: np.ndarray) -> np.ndarray:
    return np.array([np.trace(rho @ s).real for s in PAULI])


def ket_of_bloch(n: np.ndarray) -> np.ndarray:
    """Unit ket whose Bloch vector is the unit vector n."""
    n = np.asarray(n, dtype=float)
    if n[0] < -1.0 + 1e-12:
        return np.array([0.0, 1.0], dtype=complex)
    ket = np.array([1.0 + n[0], n[1] + 1.0j * n[2]])
    return ket / np.linalg.norm(ket)


def bloch_of_ket(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.array([(ket.conj() @ (s @ ket)).real for s in PAULI])


# ---------------------------------------------------------------------------
# Process fidelity
# ---------------------------------------------------------------------------

def process_fidelity(m: np.ndarray) -> float:
    """Overlap of a rotation-only channel with the identity process.

    F = (1 + tr m) / 4, so the identity gives 1 and any half-turn gives 0.
    """
    return (1.0 + float(np.trace(m))) / 4.0


def process_fidelity_from_trace(trace: float) -> float:
    """Process fidelity (1 + tr) / 4 from an already-measured matrix trace."""
    return (1.0 + trace) / 4.0


def trace_from_probe_pair(s1_out: np.ndarray, s2_out: np.ndarray) -> float:
    """Rotation-matrix trace recovered from the H and D probe outputs.

    With outputs S1 = m @ S_H and S2 = m @ S_D of a rotation m,

        tr m = S1[0] + S2[1] + S1[0]*S2[1] - S1[1]*S2[0]

    which needs only the two measured output vectors.

    Raises NonUnitProbe if either output norm deviates from 1 by more
    than 1e-3 (a rotation cannot produce non-unit outputs; large deviation
    indicates a broken measurement).
    """
    s1 = np.asarray(s1_out, dtype=float)
    s2 = np.asarray(s2_out, dtype=float)
    for s in (s1, s2):
        if abs(np.linalg.norm(s) - 1.0) > _PROBE_NORM_TOL:
            raise NonUnitProbe(
                f"probe output norm {np.linalg.norm(s):.6f} deviates from 1"
            )
    return float(s1[0] + s2[1] + s1[0] * s2[1] - s1[1] * s2[0])


def rotation_from_probe_pairs(
    in1: np.ndarray,
    out1: np.ndarray,
    in2: np.ndarray,
    out2: np.ndarray,
) -> np.ndarray:
    """Rotation mapping the probe pair (in1, in2) onto (out1, out2).

    Both the input and the measured output pair are re-orthonormalized
    (Gram-Schmidt, second vector against the first) before the frames are
    matched, so small measurement noise is projected out.
    """
    e = _orthonormal_frame(in1, in2)
    f = _orthonormal_frame(out1, out2)
    return f @ e.T


def _orthonormal_frame(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    cross = np.cross(v1, v2)
    if np.linalg.norm(cross) < 1e-3:
        raise DegenerateProbes("probe vectors are (nearly) collinear")
    e1 = v1 / np.linalg.norm(v1)
    u2 = v2 - (v2 @ e1) * e1
    e2 = u2 / np.linalg.norm(u2)
    e3 = np.cross(e1, e2)
    return np.column_stack([e1, e2, e3])


# ---------------------------------------------------------------------------
# Polarization-dependent loss
# ---------------------------------------------------------------------------

def pdl_db(t_max: float, t_min: float) -> float:
    """Loss figure 10*log10(t_max/t_min) in dB from intensity transmissions."""
    if t_min <= 0.0 or t_max < t_min:
        raise InvalidTransmission(
            f"need 0 < t_min <= t_max, got t_max={t_max}, t_min={t_min}"
        )
    return 10.0 * math.log10(t_max / t_min)


def pdl_gamma(amplitude_transmission: float) -> float:
    """Loss-vector magnitude (1 - T^2)/(1 + T^2) for amplitude transmission T."""
    t2 = amplitude_transmission * amplitude_transmission
    return (1.0 - t2) / (1.0 + t2)


def pdl_fidelity_bound(amplitude_transmission: float) -> float:
    """Worst-case process fidelity (1 + T)^2 / 4 of a lossy element alone."""
    return (1.0 + amplitude_transmission) ** 2 / 4.0


@dataclass(frozen=True)
class PdlElement:
    """Polarization-dependent loss element.

    gamma_vec points along the fully transmitted (pass) state and has
    magnitude (1 - T^2)/(1 + T^2); amplitude_transmission T in [0, 1] is the
    amplitude transmission of the orthogonal (extinguished) state. Use
    `PdlElement.from_axis` or `PdlElement.from_db` instead of filling the
    fields by hand.
    """

    gamma_vec: np.ndarray
    amplitude_transmission: float

    def __post_init__(self) -> None:
        t = self.amplitude_transmission
        if not 0.0 <= t <= 1.0:
            raise InvalidTransmission(f"amplitude transmission {t} outside [0, 1]")
        g = np.linalg.norm(self.gamma_vec)
        if abs(g - pdl_gamma(t)) > 1e-10:
            raise ValueError(
                f"|gamma_vec| = {g} inconsistent with transmission {t}"
            )

    @classmethod
    def from_axis(cls, axis: np.ndarray, amplitude_transmission: float) -> PdlElement:
        """Element with pass state along `axis` (any nonzero 3-vector)."""
        g = pdl_gamma(amplitude_transmission)
        axis = np.asarray(axis, dtype=float)
        if g == 0.0:
            vec = np.zeros(3)
        else:
            n = np.linalg.norm(axis)
            if n == 0.0:
                raise ValueError("pass axis must be nonzero for a lossy element")
            vec = g * axis / n
        return cls(gamma_vec=vec, amplitude_transmission=float(amplitude_transmission))

    @classmethod
    def from_db(cls, axis: np.ndarray, loss_db: float) -> PdlElement:
        """Element whose worst/best intensity ratio equals `loss_db`."""
        if loss_db < 0.0:
            raise InvalidTransmission(f"loss {loss_db} dB is negative")
        return cls.from_axis(axis, 10.0 ** (-loss_db / 20.0))

    @property
    def gamma(self) -> float:
        return float(np.linalg.norm(self.gamma_vec))

    @property
    def loss_db(self) -> float:
        return pdl_db(1.0, self.amplitude_transmission ** 2)

    def pass_axis(self) -> np.ndarray:
        g = self.gamma
        if g == 0.0:
            raise ValueError("lossless element has no preferred axis")
        return self.gamma_vec / g

    def operator(self) -> np.ndarray:
        """2x2 loss operator B = T*I + (1-T)|P><P| (non-trace-preserving)."""
        t = self.amplitude_transmission
        if self.gamma == 0.0:
            return np.eye(2, dtype=complex)
        p = ket_of_bloch(self.pass_axis())
        return t * np.eye(2, dtype=complex) + (1.0 - t) * np.outer(p, p.conj())


def pdl_apply_bloch(lambda_in: np.ndarray, pdl: PdlElement) -> np.ndarray:
    """Post-selected Bloch-vector map of a lossy element.

    Implements

        lam_out = [sqrt(1-g^2) lam + ((1-sqrt(1-g^2))/g^2 (lam.G) + 1) G]
                  / (1 + lam.G)

    with G = gamma_vec and g = |G|; the middle coefficient is evaluated in
    the equivalent form 1/(1 + sqrt(1-g^2)) which is exact at g = 0. Pure
    states stay pure; the pass state +G/g and the extinguished state -G/g
    are the only fixed points.
    """
    lam = np.asarray(lambda_in, dtype=float)
    g_vec = pdl.gamma_vec
    g2 = float(g_vec @ g_vec)
    dot = float(lam @ g_vec)
    denom = 1.0 + dot
    if denom <= 1e-12:
        raise FullyExtinguished(
            "input state is fully blocked by the polarizing element"
        )
    root = math.sqrt(max(0.0, 1.0 - g2))
    coeff = 1.0 / (1.0 + root)  # equals (1 - sqrt(1-g^2)) / g^2
    return (root * lam + (coeff * dot + 1.0) * g_vec) / denom


@dataclass(frozen=True)
class PdlComposition:
    """Polar factorization of two concatenated lossy elements.

    Applying `element` first and `rotation` second reproduces the exact
    post-selected Bloch action of the concatenation; `scale` is the largest
    singular value of the combined operator (the amplitude transmission of
    the best-transmitted state).
    """

    rotation: np.ndarray
    element: PdlElement
    scale: float

    def apply_bloch(self, lambda_in: np.ndarray) -> np.ndarray:
        return self.rotation @ pdl_apply_bloch(lambda_in, self.element)


def pdl_compose(a: PdlElement, b: PdlElement) -> PdlComposition:
    """Concatenate two lossy elements (b applied after a).

    Coaxial elements combine into a single element on the same axis with
    T = T_a * T_b and an identity rotation. The general case is handled at
    the 2x2 operator level: K = B_b B_a is polar-decomposed (via SVD) into a
    unitary times a positive factor, and the positive factor rescaled to
    unit maximum transmission becomes the returned element.
    """
    k = b.operator() @ a.operator()
    u, sing, vh = np.linalg.svd(k)
    w = u @ vh
    h = vh.conj().T @ np.diag(sing) @ vh
    scale = float(sing[0])
    if scale <= 0.0:
        raise FullyExtinguished("composition blocks every state")
    t = float(sing[1] / sing[0])
    if 1.0 - t < 1e-12:
        element = PdlElement.from_axis(np.zeros(3), 1.0)
    else:
        # Pass axis of the positive factor = Bloch vector of its top eigenvector.
        hv = h / scale
        evals, evecs = np.linalg.eigh(hv)
        pass_ket = evecs[:, int(np.argmax(evals))]
        element = PdlElement.from_axis(bloch_of_ket(pass_ket), t)
    return PdlComposition(rotation=rotation_of_unitary(w), element=element, scale=scale)
