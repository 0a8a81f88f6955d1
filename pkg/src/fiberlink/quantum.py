"""Two-qubit density-matrix engine for the network protocols.

Conventions
-----------
Single-qubit kets are written in the {|H>, |V>} basis; two-qubit states are
ordered arm A (x) arm B (kron of the single-qubit spaces). Polarization
labels map to kets as H=(1,0), V=(0,1), D=(H+V)/sqrt2, A=(H-V)/sqrt2,
R=(H+iV)/sqrt2, L=(H-iV)/sqrt2, matching the Stokes axes of `polcore`.

The pair source emits (|HV> + e^{-i phi} |VH>)/sqrt2 mixed with a white
admixture p. The arm-B ket phase reference is chosen so that phi = 0 gives
the maximally entangled state with +|VH> (the convention the source is
calibrated to in situ); a unit test pins this choice.

The ion memory qubit lives in the Zeeman pair {|-1/2>, |+1/2>}, stored as
basis order (e0, e1) = (|-1/2>, |+1/2>). Heralded absorption maps an
incoming photon onto the memory such that the ideal pair input produces
(|-1/2>|R> - |+1/2>|L>)/sqrt2; the natural photonic partner basis of the
memory is therefore circular, and process matrices of the teleportation are
reported in the Pauli order (identity, H/V flip, D/A flip, R/L flip) whose
last element is the "z" rotation of the memory basis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelState, transmit_qubit_kraus
from .polcore import PAULI, FullyExtinguished

__all__ = [
    "BASIS_KETS",
    "BELL_PSI_PLUS",
    "ION_PHOTON_TARGET",
    "TOMO_BASES_1Q",
    "TOMO_BASES_2Q",
    "IonMemory",
    "McResult",
    "SingularDesign",
    "SpdcSource",
    "TeleportOutcome",
    "apply_channel_arm_b",
    "background_correction",
    "bell_fidelity",
    "bsm_branches",
    "bsm_teleport",
    "check_state",
    "coincidence_probabilities",
    "fidelity",
    "heralded_absorption",
    "mc_uncertainty",
    "pauli_basis",
    "process_fidelity_element",
    "process_matrix_from_io",
    "process_tomography",
    "purity",
    "read_counts_csv",
    "write_counts_csv",
    "spdc_state",
    "tomography_2q",
]

_SQ2 = math.sqrt(2.0)

BASIS_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQ2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQ2,
    "R": np.array([1.0, 1.0j], dtype=complex) / _SQ2,
    "L": np.array([1.0, -1.0j], dtype=complex) / _SQ2,
}

TOMO_BASES_1Q = ("H", "V", "D", "R")
TOMO_BASES_2Q = tuple(
    (a, b) for a in TOMO_BASES_1Q for b in TOMO_BASES_1Q
)

# Pauli set (identity, H/V flip, D/A flip, R/L flip); see module docstring.
_PAULI4 = (np.eye(2, dtype=complex),) + PAULI
PAULI_LABELS = ("i", "hv", "da", "rl")

BELL_PSI_PLUS = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / _SQ2

# Ideal memory-photon state after absorption of one pair photon:
# (|-1/2>|R> - |+1/2>|L>)/sqrt2 with memory order (|-1/2>, |+1/2>).
ION_PHOTON_TARGET = (
    np.kron(np.array([1.0, 0.0]), BASIS_KETS["R"])
    - np.kron(np.array([0.0, 1.0]), BASIS_KETS["L"])
) / _SQ2

# Absorption isometry: photon polarization -> memory qubit, fixed by the
# requirement that the ideal pair input maps onto ION_PHOTON_TARGET.
_ABSORB = np.array([[1.0j, 1.0], [1.0j, -1.0]], dtype=complex) / _SQ2

# Preparation encoding making the ideal teleportation the identity channel:
# the memory amplitudes carry the circular components of the target state.
_ENCODE = np.array([[1.0, -1.0j], [1.0, 1.0j]], dtype=complex) / _SQ2

_BELL_MINUS_MEM = np.array([1.0, 0.0, 0.0, -1.0], dtype=complex) / _SQ2
_BELL_PLUS_MEM = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / _SQ2


class SingularDesign(ValueError):
    """Measurement set is not informationally complete."""


def check_state(rho: np.ndarray, context: str = "state") -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity of a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise ValueError(f"{context}: not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-10:
        raise ValueError(f"{context}: trace {np.trace(rho).real} != 1")
    if np.linalg.eigvalsh(rho).min() < -1e-9:
        raise ValueError(f"{context}: negative eigenvalue")
    return rho


def purity(rho: np.ndarray) -> float:
    return float(np.trace(rho @ rho).real)


def fidelity(rho: np.ndarray, target_ket: np.ndarray) -> float:
    """Overlap <psi| rho |psi> with a pure target."""
    k = np.asarray(target_ket, dtype=complex)
    return float((k.conj() @ (rho @ k)).real)


def bell_fidelity(rho: np.ndarray) -> float:
    return fidelity(rho, BELL_PSI_PLUS)


def pauli_basis() -> tuple[np.ndarray, ...]:
    return _PAULI4


# ---------------------------------------------------------------------------
# Pair source and channel action
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpdcSource:
    """Cavity-enhanced pair source with adjustable phase and white admixture."""

    phase_rad: float = 0.0
    pair_rate_per_s: float = 144.4
    noise_p: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_p <= 1.0:
            raise ValueError("noise admixture must be in [0, 1]")
        if self.pair_rate_per_s < 0.0:
            raise ValueError("pair rate must be >= 0")


def spdc_state(src: SpdcSource) -> np.ndarray:
    """Source state (1-p) |psi(phi)><psi(phi)| + p I/4.

    psi(phi) = (|HV> + e^{-i phi} |VH>)/sqrt2 in the calibrated arm-B phase
    reference, so phi = 0 yields the maximally entangled state whose
    fidelity is measured in the experiments.
    """
    ket = np.zeros(4, dtype=complex)
    ket[1] = 1.0 / _SQ2
    ket[2] = np.exp(-1.0j * src.phase_rad) / _SQ2
    rho = (1.0 - src.noise_p) * np.outer(ket, ket.conj()) + src.noise_p * np.eye(4) / 4.0
    return check_state(rho, "spdc_state")


def apply_channel_arm_b(rho: np.ndarray, ch: ChannelState) -> tuple[np.ndarray, float]:
    """Send the arm-B photon through the link; post-selected state + success."""
    k = np.kron(np.eye(2, dtype=complex), transmit_qubit_kraus(ch))
    out = k @ np.asarray(rho, dtype=complex) @ k.conj().T
    prob = float(np.trace(out).real)
    if prob <= 1e-12:
        raise FullyExtinguished("arm-B photon is fully blocked")
    return check_state(out / prob, "apply_channel_arm_b"), prob


# ---------------------------------------------------------------------------
# Ion memory: heralded absorption and teleportation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IonMemory:
    """Abstract memory qubit with exponential dephasing in the Zeeman basis.

    decay_per_s is the effective dephasing rate after the spin echo; the
    coherence factor over the exposure window is exp(-decay * window).
    """

    exposure_window_s: float = 400e-6
    decay_per_s: float = 0.0

    def __post_init__(self) -> None:
        if self.exposure_window_s <= 0.0 or self.decay_per_s < 0.0:
            raise ValueError("window must be > 0 and decay >= 0")

    def coherence(self) -> float:
        return math.exp(-self.decay_per_s * self.exposure_window_s)


def _dephase_first_qubit(rho4: np.ndarray, coherence: float) -> np.ndarray:
    """Phase damping of the first qubit of a two-qubit state."""
    if coherence >= 1.0:
        return rho4
    z = np.kron(np.diag([1.0, -1.0]).astype(complex), np.eye(2, dtype=complex))
    return 0.5 * (1.0 + coherence) * rho4 + 0.5 * (1.0 - coherence) * (z @ rho4 @ z)


def heralded_absorption(rho_pair: np.ndarray, ion: IonMemory) -> np.ndarray:
    """Map the arm-A photon onto the memory qubit, then dephase it.

    Returns the (memory (x) photon-B) state; a perfect pair input yields the
    ideal memory-photon target up to the dephasing of the exposure window.
    """
    v = np.kron(_ABSORB, np.eye(2, dtype=complex))
    out = v @ np.asarray(rho_pair, dtype=complex) @ v.conj().T
    out = _dephase_first_qubit(out, ion.coherence())
    return check_state(out, "heralded_absorption")


@dataclass(frozen=True)
class TeleportOutcome:
    success: bool
    herald: str | None
    photon_state: np.ndarray | None


def _encode_prepared(prepared: np.ndarray) -> np.ndarray:
    """Memory density matrix for a prepared qubit state (ket or 2x2)."""
    prepared = np.asarray(prepared, dtype=complex)
    if prepared.ndim == 1:
        rho = np.outer(prepared, prepared.conj())
    else:
        rho = prepared
    return _ENCODE @ rho @ _ENCODE.conj().T


def bsm_branches(
    prepared: np.ndarray,
    rho_pair: np.ndarray,
    ion: IonMemory,
) -> dict[str, tuple[float, np.ndarray]]:
    """Born probabilities and unnormalized photon-B states per herald.

    The memory is prepared (with dephasing over the exposure window), the
    arm-A photon is absorbed, and the joint memory pair is projected onto
    the two distinguished Bell states. Values are (probability,
    probability * conditional_state), so the second entry is the linear
    (trace = probability) branch output used for process reconstruction.
    """
    rho_m = _encode_prepared(prepared)
    rho_m = _dephase_first_qubit(
        np.kron(rho_m, np.eye(2, dtype=complex) / 2.0), ion.coherence()
    )
    rho_m = _partial_trace(rho_m, keep=0, dims=(2, 2))

    v = np.kron(_ABSORB, np.eye(2, dtype=complex))
    rho_ab = v @ np.asarray(rho_pair, dtype=complex) @ v.conj().T
    joint = np.kron(rho_m, rho_ab)  # qubits (m, a, B)

    branches = {}
    for name, bell in (("phi_minus", _BELL_MINUS_MEM), ("phi_plus", _BELL_PLUS_MEM)):
        proj = np.kron(np.outer(bell, bell.conj()), np.eye(2, dtype=complex))
        sub = proj @ joint @ proj
        prob = float(np.trace(sub).real)
        rho_b = _partial_trace_to_last(sub)
        branches[name] = (prob, rho_b)
    return branches


def bsm_teleport(
    prepared: np.ndarray,
    rho_pair: np.ndarray,
    ion: IonMemory,
    rng: np.random.Generator,
) -> TeleportOutcome:
    """One shot of the teleportation protocol.

    Draws one of the two distinguished heralds (or a failure for the
    undistinguished outcomes) with Born probabilities and returns the
    conditional photon-B state. Ideal resources reproduce the prepared state
    for the phi_minus herald and its memory-basis phase flip for phi_plus.
    """
    branches = bsm_branches(prepared, rho_pair, ion)
    names = list(branches)
    probs = np.array([branches[n][0] for n in names])
    p_fail = max(0.0, 1.0 - probs.sum())
    pick = rng.choice(len(names) + 1, p=np.append(probs, p_fail) / (probs.sum() + p_fail))
    if pick == len(names):
        return TeleportOutcome(success=False, herald=None, photon_state=None)
    name = names[pick]
    prob, rho_b = branches[name]
    return TeleportOutcome(
        success=True,
        herald=name,
        photon_state=check_state(rho_b / prob, "bsm_teleport"),
    )


def _partial_trace(rho: np.ndarray, keep: int, dims: tuple[int, int]) -> np.ndarray:
    d0, d1 = dims
    r = rho.reshape(d0, d1, d0, d1)
    if keep == 0:
        return np.einsum("ikjk->ij", r)
    return np.einsum("kikj->ij", r)


def _partial_trace_to_last(rho8: np.ndarray) -> np.ndarray:
    """Trace out the first two qubits of a three-qubit state."""
    r = rho8.reshape(4, 2, 4, 2)
    return np.einsum("kikj->ij", r)


# ---------------------------------------------------------------------------
# State tomography
# ---------------------------------------------------------------------------

def _projector(label: str) -> np.ndarray:
    try:
        ket = BASIS_KETS[label]
    except KeyError:
        raise SingularDesign(f"unknown basis label {label!r}") from None
    return np.outer(ket, ket.conj())


def coincidence_probabilities(
    rho: np.ndarray,
    bases: tuple[tuple[str, str], ...] = TOMO_BASES_2Q,
) -> dict[tuple[str, str], float]:
    """Forward model: coincidence probability per analyzer setting."""
    rho = np.asarray(rho, dtype=complex)
    out = {}
    for ba, bb in bases:
        proj = np.kron(_projector(ba), _projector(bb))
        out[(ba, bb)] = float(np.trace(proj @ rho).real)
    return out


def tomography_2q(counts) -> np.ndarray:
    """Two-qubit state from a 16-setting coincidence table.

    `counts` is a sequence of (basis_a, basis_b, counts) or (basis_a,
    basis_b, counts, integration_s) rows. Counts are converted to rates,
    the unnormalized Hermitian operator X with tr(P_nu X) = rate_nu is
    solved for by linear inversion, and X is normalized and projected onto
    the physical cone (eigenvalue clipping). Exact probabilities of any
    physical state round-trip to that state.

    Raises SingularDesign when the setting list does not span the two-qubit
    operator space.
    """
    rows = [_count_row(r) for r in counts]
    if len(rows) < 16:
        raise SingularDesign(f"need at least 16 settings, got {len(rows)}")
    basis = _hermitian_basis()
    design = np.empty((len(rows), 16))
    rates = np.empty(len(rows))
    for i, (ba, bb, n, integration) in enumerate(rows):
        proj = np.kron(_projector(ba), _projector(bb))
        design[i] = [np.trace(proj @ b).real for b in basis]
        rates[i] = n / integration
    if np.linalg.matrix_rank(design, tol=1e-10) < 16:
        raise SingularDesign("measurement settings are not informationally complete")
    params, *_ = np.linalg.lstsq(design, rates, rcond=None)
    x = sum(p * b for p, b in zip(params, basis))
    total = float(np.trace(x).real)
    if total <= 0.0:
        # Pathological data (e.g. all-zero counts): fall back to the
        # maximally mixed state rather than dividing by a non-positive trace.
        return np.eye(4, dtype=complex) / 4.0
    return _project_physical(x / total)


def _count_row(row) -> tuple[str, str, float, float]:
    if len(row) == 3:
        ba, bb, n = row
        return str(ba), str(bb), float(n), 1.0
    ba, bb, n, integration = row
    return str(ba), str(bb), float(n), float(integration)


_HERM_BASIS: list[np.ndarray] | None = None


def _hermitian_basis() -> list[np.ndarray]:
    """Real basis of the 4x4 Hermitian matrices (diagonal, symmetric, antisymmetric)."""
    global _HERM_BASIS
    if _HERM_BASIS is None:
        basis = []
        for i in range(4):
            m = np.zeros((4, 4), dtype=complex)
            m[i, i] = 1.0
            basis.append(m)
        for i in range(4):
            for j in range(i + 1, 4):
                m = np.zeros((4, 4), dtype=complex)
                m[i, j] = m[j, i] = 1.0
                basis.append(m)
                m = np.zeros((4, 4), dtype=complex)
                m[i, j] = -1.0j
                m[j, i] = 1.0j
                basis.append(m)
        _HERM_BASIS = basis
    return _HERM_BASIS


def _project_physical(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, 0.0, None)
    s = evals.sum()
    if s <= 0.0:
        return np.eye(4, dtype=complex) / 4.0
    rho = (evecs * (evals / s)) @ evecs.conj().T
    return check_state(rho, "tomography_2q")


@dataclass
class McResult:
    """Monte Carlo resampling summary of a tomography-derived quantity."""

    mean: float
    sigma: float
    values: np.ndarray
    point_estimate: float
    warnings: list[str] = field(default_factory=list)


def mc_uncertainty(
    counts,
    n_resamples: int,
    rng: np.random.Generator,
    metric=bell_fidelity,
) -> McResult:
    """Poisson-resample the count table and propagate through tomography.

    Each count is resampled as Poisson(count); the tomography and the metric
    (default: fidelity to the maximally entangled pair state) are re-run per
    resample. Deterministic given the generator state.
    """
    if n_resamples < 100:
        raise ValueError("need n_resamples >= 100 for a meaningful spread")
    rows = [_count_row(r) for r in counts]
    warnings = []
    nonzero = sum(1 for r in rows if r[2] > 0)
    if nonzero < 16:
        warnings.append(
            f"degenerate design: only {nonzero} of {len(rows)} settings have counts"
        )
    point = float(metric(tomography_2q(rows)))
    values = np.empty(n_resamples)
    for k in range(n_resamples):
        resampled = [
            (ba, bb, float(rng.poisson(n)), integration)
            for ba, bb, n, integration in rows
        ]
        values[k] = metric(tomography_2q(resampled))
    return McResult(
        mean=float(values.mean()),
        sigma=float(values.std(ddof=1)),
        values=values,
        point_estimate=point,
        warnings=warnings,
    )


def background_correction(counts, rate_a_per_s: float, rate_b_per_s: float, window_s: float):
    """Subtract expected accidental coincidences from a count table.

    The expectation per setting is rate_a * rate_b * window * integration
    (singles rates on the two arms, coincidence window, per-setting
    integration time); corrected counts are clamped at zero.
    """
    if rate_a_per_s < 0.0 or rate_b_per_s < 0.0 or window_s < 0.0:
        raise ValueError("rates and window must be >= 0")
    out = []
    for ba, bb, n, integration in (_count_row(r) for r in counts):
        expected = rate_a_per_s * rate_b_per_s * window_s * integration
        out.append((ba, bb, max(0.0, n - expected), integration))
    return out


def subtract_expected_accidentals(counts, expected_per_setting: float):
    """Subtract a flat expected accidental count from every setting."""
    out = []
    for ba, bb, n, integration in (_count_row(r) for r in counts):
        out.append((ba, bb, max(0.0, n - expected_per_setting), integration))
    return out


COUNTS_CSV_HEADER = ("basis_a", "basis_b", "counts", "integration_s")


def write_counts_csv(path, counts) -> None:
    """Write a coincidence count table with the fixed four-column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COUNTS_CSV_HEADER)
        for ba, bb, n, integration in (_count_row(r) for r in counts):
            writer.writerow([ba, bb, repr(n), repr(integration)])


def read_counts_csv(path) -> list[tuple[str, str, float, float]]:
    """Read a coincidence count table written by `write_counts_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != COUNTS_CSV_HEADER:
            raise ValueError(f"unexpected count-table header {header}")
        return [(ba, bb, float(n), float(integration))
                for ba, bb, n, integration in reader]


# ---------------------------------------------------------------------------
# Process tomography
# ---------------------------------------------------------------------------

def process_matrix_from_io(
    inputs: list[np.ndarray],
    outputs: list[np.ndarray],
    normalize_trace: bool = True,
) -> np.ndarray:
    """Pauli-basis process matrix from input/output density-matrix pairs.

    Outputs may be unnormalized (trace = branch probability); with
    normalize_trace the returned chi is rescaled to unit trace, which is the
    convention used for the heralded teleportation branches. chi is
    Hermitized and clipped to the positive cone.
    """
    if len(inputs) != len(outputs) or len(inputs) < 4:
        raise SingularDesign("need >= 4 input/output pairs")
    columns = []
    for m in range(4):
        for n in range(4):
            col = []
            for rho_in in inputs:
                term = _PAULI4[m] @ np.asarray(rho_in, dtype=complex) @ _PAULI4[n]
                col.append(term.reshape(4))
            columns.append(np.concatenate(col))
    a = np.column_stack(columns)
    b = np.concatenate([np.asarray(o, dtype=complex).reshape(4) for o in outputs])
    chi_vec, *_ = np.linalg.lstsq(a, b, rcond=None)
    chi = chi_vec.reshape(4, 4)
    chi = 0.5 * (chi + chi.conj().T)
    evals, evecs = np.linalg.eigh(chi)
    evals = np.clip(evals, 0.0, None)
    chi = (evecs * evals) @ evecs.conj().T
    if normalize_trace:
        t = float(np.trace(chi).real)
        if t <= 0.0:
            raise SingularDesign("reconstructed process has non-positive trace")
        chi = chi / t
    return chi


def process_tomography(
    channel_fn,
    input_labels: tuple[str, ...] = TOMO_BASES_1Q,
    normalize_trace: bool = True,
) -> np.ndarray:
    """Process matrix of a single-qubit map probed with an input set.

    channel_fn maps a 2x2 density matrix to a (possibly unnormalized) 2x2
    output; the default input set {H, V, D, R} is informationally complete.
    """
    inputs, outputs = [], []
    for label in input_labels:
        rho_in = _projector(label)
        inputs.append(rho_in)
        outputs.append(np.asarray(channel_fn(rho_in), dtype=complex))
    _check_input_completeness(inputs)
    return process_matrix_from_io(inputs, outputs, normalize_trace=normalize_trace)


def _check_input_completeness(inputs: list[np.ndarray]) -> None:
    stack = np.stack([np.asarray(r).reshape(4) for r in inputs])
    flat = np.column_stack([stack.real, stack.imag]).T
    if np.linalg.matrix_rank(flat, tol=1e-10) < 4:
        raise SingularDesign("input set does not span the single-qubit operator space")


def process_fidelity_element(chi: np.ndarray, label: str) -> float:
    """Diagonal chi element for the named Pauli ('i', 'hv', 'da', 'rl')."""
    idx = PAULI_LABELS.index(label)
    return float(chi[idx, idx].real)
