"""Statistical post-processing of characterization data.

Batch functions turning raw simulation or measurement series into
figure-ready tables: free-drift fidelity quantile surfaces, loss-statistics
estimation for the looped-fiber measurement, exponential wave-packet fits,
and temperature/delay correlation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmptyOverlap",
    "FitDiverged",
    "QuantileSurface",
    "WavePacketFit",
    "delay_correlation",
    "pdl_statistics",
    "quantile_surface",
    "wavepacket_fit",
    "write_quantile_surface_csv",
]

DEFAULT_QUANTILES = (0.90, 0.99, 0.999)


class FitDiverged(ValueError):
    """Wave-packet fit failed (too few usable bins or non-decaying flank)."""


class EmptyOverlap(ValueError):
    """Two series share no common time support."""


@dataclass
class QuantileSurface:
    """Empirical fidelity distribution versus free-drift time.

    incidence[i, j] is the per-column-normalized share of fidelity bin j at
    drift time tau_grid[i]; curves[q][i] is the fidelity maintained with
    probability q after tau_grid[i]. Raw empirical curves are reported (no
    monotone smoothing); `isotonic()` returns regularized copies.
    """

    tau_grid: np.ndarray
    fidelity_grid: np.ndarray
    incidence: np.ndarray
    curves: dict[float, np.ndarray]
    counts: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def isotonic(self) -> dict[float, np.ndarray]:
        """Non-increasing envelope of each quantile curve (optional post-pass)."""
        out = {}
        for q, curve in self.curves.items():
            out[q] = np.minimum.accumulate(curve)
        return out


def quantile_surface(
    samples,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
    fidelity_bins: int = 60,
    min_samples_per_bin: int = 100,
) -> QuantileSurface:
    """Bin (tau, fidelity) samples by tau and extract maintenance quantiles.

    The q-curve value at a given tau is the fidelity f such that a fraction
    q of the samples at that tau lies at or above f, i.e. the (1-q) quantile
    of the per-bin empirical distribution. Bins with fewer samples than
    min_samples_per_bin are kept but flagged in `warnings`.
    """
    samples = np.asarray(list(samples), dtype=float)
    if samples.size == 0:
        raise ValueError("no samples")
    taus = np.unique(samples[:, 0])
    f_lo = min(0.0, samples[:, 1].min())
    edges = np.linspace(f_lo, 1.0, fidelity_bins + 1)
    incidence = np.zeros((taus.size, fidelity_bins))
    counts = np.zeros(taus.size, dtype=int)
    curves = {q: np.empty(taus.size) for q in quantiles}
    warnings = []
    for i, tau in enumerate(taus):
        vals = samples[samples[:, 0] == tau, 1]
        counts[i] = vals.size
        if vals.size < min_samples_per_bin:
            warnings.append(
                f"tau={tau:g}: only {vals.size} samples for quoted quantiles"
            )
        hist, _ = np.histogram(vals, bins=edges)
        if hist.sum() > 0:
            incidence[i] = hist / hist.sum()
        for q in quantiles:
            curves[q][i] = np.quantile(vals, 1.0 - q)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return QuantileSurface(
        tau_grid=taus,
        fidelity_grid=centers,
        incidence=incidence,
        curves=curves,
        counts=counts,
        warnings=warnings,
    )


def write_quantile_surface_csv(surface: QuantileSurface, curves_path, incidence_path) -> None:
    """Write the quantile curves and the incidence matrix as two panel files."""
    qs = sorted(surface.curves)
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_s"] + [f"q{q:g}" for q in qs] + ["n_samples"])
        for i, tau in enumerate(surface.tau_grid):
            writer.writerow(
                [repr(float(tau))]
                + [repr(float(surface.curves[q][i])) for q in qs]
                + [int(surface.counts[i])]
            )
    with open(incidence_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_s"] + [repr(float(f)) for f in surface.fidelity_grid])
        for i, tau in enumerate(surface.tau_grid):
            writer.writerow([repr(float(tau))] + [repr(float(x)) for x in surface.incidence[i]])


def pdl_statistics(samples_db, detection_db) -> tuple[float, float]:
    """Single-fiber loss estimate from looped-link and detection-only series.

    The loop traverses the fiber twice, so the fiber mean is
    (mean(total) - mean(detection)) / 2 assuming the two passes contribute
    equally; the spreads of the two input distributions propagate in
    quadrature with the same factor.
    """
    tot = np.asarray(list(samples_db), dtype=float)
    det = np.asarray(list(detection_db), dtype=float)
    if tot.size == 0 or det.size == 0:
        raise ValueError("need non-empty sample sets")
    mean = (tot.mean() - det.mean()) / 2.0
    s_tot = tot.std(ddof=1) if tot.size > 1 else 0.0
    s_det = det.std(ddof=1) if det.size > 1 else 0.0
    sigma = math.sqrt(s_tot**2 + s_det**2) / 2.0
    return float(mean), float(sigma)


@dataclass(frozen=True)
class WavePacketFit:
    """Exponential decay fit of an arrival-time correlation histogram."""

    decay_ns: float
    amplitude: float
    window_ns: tuple[float, float]
    residual_norm: float
    n_bins: int


def wavepacket_fit(
    bins_ns,
    counts,
    flank_floor_fraction: float = 0.05,
) -> WavePacketFit:
    """Fit the decaying flank of a wave packet with A * exp(-t / tau).

    The flank runs from the histogram peak to the first bin below
    flank_floor_fraction of the peak. The fit is linear in the log domain
    with per-bin weights equal to the counts (Poisson weighting).
    """
    t = np.asarray(list(bins_ns), dtype=float)
    n = np.asarray(list(counts), dtype=float)
    if t.size != n.size or t.size == 0:
        raise FitDiverged("histogram is empty or misaligned")
    peak = int(np.argmax(n))
    floor = flank_floor_fraction * n[peak]
    end = t.size
    for i in range(peak, t.size):
        if n[i] < floor:
            end = i
            break
    tt = t[peak:end]
    nn = n[peak:end]
    usable = nn > 0
    if usable.sum() < 10:
        raise FitDiverged(f"only {int(usable.sum())} usable bins above the noise floor")
    tt, nn = tt[usable], nn[usable]
    w = nn
    x = tt - tt[0]
    y = np.log(nn)
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    sxy = (w * (x - xm) * (y - ym)).sum()
    if sxx <= 0.0:
        raise FitDiverged("degenerate time axis")
    slope = sxy / sxx
    if slope >= 0.0:
        raise FitDiverged("flank does not decay")
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    return WavePacketFit(
        decay_ns=float(-1.0 / slope),
        amplitude=float(np.exp(intercept)),
        window_ns=(float(tt[0]), float(tt[-1])),
        residual_norm=float(np.sqrt((w * resid**2).sum() / sw)),
        n_bins=int(tt.size),
    )


def delay_correlation(measured, predicted) -> tuple[float, float]:
    """Pearson correlation and residual RMS of two (t, ps) series.

    Both series are linearly resampled onto the overlap of their time
    supports before comparison.
    """
    m = np.asarray(list(measured), dtype=float)
    p = np.asarray(list(predicted), dtype=float)
    if m.size == 0 or p.size == 0:
        raise EmptyOverlap("empty series")
    lo = max(m[:, 0].min(), p[:, 0].min())
    hi = min(m[:, 0].max(), p[:, 0].max())
    if hi <= lo:
        raise EmptyOverlap(f"no common time support ({lo} vs {hi})")
    grid = np.linspace(lo, hi, max(m.shape[0], p.shape[0]))
    mv = np.interp(grid, m[:, 0], m[:, 1])
    pv = np.interp(grid, p[:, 0], p[:, 1])
    if np.std(mv) == 0.0 or np.std(pv) == 0.0:
        r = 1.0 if np.allclose(mv, pv) else 0.0
    else:
        r = float(np.corrcoef(mv, pv)[0, 1])
    rms = float(np.sqrt(np.mean((mv - pv) ** 2)))
    return r, rms
