"""Protocol runners: compose channel, instruments, stabilizer and quantum
state engine into reproducible experiments.

Each runner takes a parsed Scenario and an output directory, writes its
protocol-specific CSV/JSON files, and returns the list of files written.
All randomness comes from labeled streams of the scenario seed, so outputs
are byte-identical across runs of the same configuration.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import analysis, channel as chmod, polcore, quantum, stabilizer
from .config import Scenario
from .instruments import PiezoController
from .output import matrix_payload, write_csv, write_json

__all__ = ["ProtocolFailed", "run_protocol", "RUNNERS"]


class ProtocolFailed(RuntimeError):
    """A protocol could not produce its outputs."""


# ---------------------------------------------------------------------------
# pdl-characterize
# ---------------------------------------------------------------------------

def run_pdl_characterize(scn: Scenario, out: Path) -> list[Path]:
    rng = scn.rng("protocol.pdl")
    n = scn.protocol_value("n_samples")
    period = scn.protocol_value("sample_period_s")
    link_mean = scn.protocol_value("link_pdl_mean_db")
    link_sigma = scn.protocol_value("link_pdl_sigma_db")
    det_mean = scn.protocol_value("det_pdl_mean_db")
    det_sigma = scn.protocol_value("det_pdl_sigma_db")

    link = np.clip(rng.normal(link_mean, link_sigma, size=n), 0.0, None)
    det = np.clip(rng.normal(det_mean, det_sigma, size=n), 0.0, None)
    det_campaign = np.clip(rng.normal(det_mean, det_sigma, size=n), 0.0, None)
    tot = 2.0 * link + det

    mean_db, sigma_db = analysis.pdl_statistics(tot, det_campaign)
    bounds = [polcore.pdl_fidelity_bound(10.0 ** (-l / 20.0)) for l in link]

    rows = [
        (i, i * period, tot[i], det_campaign[i], bounds[i])
        for i in range(n)
    ]
    files = [
        write_csv(
            out / "pdl_series.csv",
            ("sample", "t_s", "l_tot_db", "l_det_db", "fp_bound"),
            rows,
        ),
        write_json(
            out / "pdl_summary.json",
            {
                "single_fiber_mean_db": mean_db,
                "single_fiber_sigma_db": sigma_db,
                "fp_bound_at_mean": polcore.pdl_fidelity_bound(10.0 ** (-mean_db / 20.0)),
                "fp_bound_min": min(bounds),
                "n_samples": n,
            },
        ),
    ]
    return files


# ---------------------------------------------------------------------------
# drift-characterize
# ---------------------------------------------------------------------------

def run_drift_characterize(scn: Scenario, out: Path) -> list[Path]:
    total = scn.protocol_value("total_s")
    period = scn.protocol_value("trace_period_s")
    tau_grid = scn.protocol_value("tau_grid_s")
    ch = scn.make_channel()

    n_points = int(total / period) + 1
    rotations = [ch.rotation().copy()]
    for _ in range(n_points - 1):
        ch.advance(period)
        rotations.append(ch.rotation().copy())

    trace_rows = []
    for i, m in enumerate(rotations):
        s1 = m @ polcore.S_H
        s2 = m @ polcore.S_D
        trace_rows.append((i * period, *s1, *s2))

    samples = []
    for tau in tau_grid:
        lag = max(1, round(tau / period))
        for i in range(len(rotations) - lag):
            rel = rotations[i + lag] @ rotations[i].T
            samples.append((lag * period, polcore.process_fidelity(rel)))
    surface = analysis.quantile_surface(samples)

    files = [
        write_csv(
            out / "stokes_trace.csv",
            ("t_s", "h_s1", "h_s2", "h_s3", "d_s1", "d_s2", "d_s3"),
            trace_rows,
        ),
    ]
    analysis.write_quantile_surface_csv(
        surface, out / "quantile_curves.csv", out / "incidence.csv"
    )
    files += [out / "quantile_curves.csv", out / "incidence.csv"]
    if surface.warnings:
        files.append(write_json(out / "warnings.json", {"warnings": surface.warnings}))
    return files


# ---------------------------------------------------------------------------
# stabilize
# ---------------------------------------------------------------------------

def _static_channel(scn: Scenario, rotation: np.ndarray, label: str):
    ch = scn.make_channel(label)
    ch.drift = chmod.DriftProcess(
        rng=ch.drift.rng,
        day_rate=0.0,
        night_rate=0.0,
        schedule=ch.drift.schedule,
        rotation=rotation,
        clock_s=ch.drift.clock_s,
    )
    return ch

def run_stabilize(scn: Scenario, out: Path) -> list[Path]:
    n_trials = scn.protocol_value("n_trials")
    cfg = scn.make_stabilizer_config()
    rot_rng = scn.rng("protocol.channels")

    rows = []
    first_run = None
    for trial in range(n_trials):
        rotation = polcore.random_rotation(rot_rng)
        ch = _static_channel(scn, rotation, f"channel.drift.{trial}")
        piezo = scn.make_piezo()
        pol = scn.make_polarimeter(f"polarimeter.{trial}")
        run = stabilizer.stabilize(ch, piezo, pol, cfg, scn.make_switch())
        if first_run is None:
            first_run = run
        rows.append(
            (trial, run.outcome.value, run.iterations, run.final_fp,
             run.duration_s, run.clamp_events)
        )

    converged = sum(1 for r in rows if r[1] == stabilizer.Outcome.CONVERGED.value)
    files = [
        write_csv(
            out / "stabilize_trials.csv",
            ("trial", "outcome", "iterations", "final_fp", "duration_s", "clamp_events"),
            rows,
        ),
        write_json(
            out / "stabilize_summary.json",
            {
                "n_trials": n_trials,
                "converged": converged,
                "convergence_rate": converged / n_trials,
                "mean_iterations": float(np.mean([r[2] for r in rows])),
                "mean_duration_s": float(np.mean([r[4] for r in rows])),
            },
        ),
    ]
    first_run.write_trace_csv(out / "stabilize_trace.csv")
    files.append(out / "stabilize_trace.csv")
    return files


# ---------------------------------------------------------------------------
# distribute-entanglement
# ---------------------------------------------------------------------------

def _arm_b_operator(ch, piezo: PiezoController) -> np.ndarray:
    """Arm-B single-qubit operator: link (rotation + loss) then compensator."""
    comp = polcore.su2_of_rotation(piezo.rotation())
    return comp @ chmod.transmit_qubit_kraus(ch)


def _window_counts(rho_bar, n_per_basis, accidental_mean, rng):
    probs = quantum.coincidence_probabilities(rho_bar)
    counts = []
    for (ba, bb), p in probs.items():
        mean = n_per_basis * p + accidental_mean
        value = float(rng.poisson(mean)) if rng is not None else mean
        counts.append((ba, bb, value, 1.0))
    return counts


def _corrected_counts(counts, noise_p, accidental_mean):
    if accidental_mean > 0.0:
        counts = quantum.subtract_expected_accidentals(counts, accidental_mean)
    group = {(a, b) for a in "HV" for b in "HV"}
    n_hat = sum(row[2] for row in counts if (row[0], row[1]) in group)
    return quantum.subtract_expected_accidentals(counts, n_hat * noise_p / 4.0)


def run_distribute_entanglement(scn: Scenario, out: Path) -> list[Path]:
    intervals = scn.protocol_value("intervals_s")
    total = scn.protocol_value("total_per_interval_s")
    counts_per_basis = scn.protocol_value("counts_per_basis")
    correct = scn.protocol_value("correct_background")
    acc_a = scn.protocol_value("accidental_rate_a_per_s")
    acc_b = scn.protocol_value("accidental_rate_b_per_s")
    coinc_w = scn.protocol_value("coincidence_window_s")
    drift_dt = scn[("channel", "drift_dt_s")]
    cfg = scn.make_stabilizer_config()
    src = scn.make_source()
    rho_src = quantum.spdc_state(src)
    noise_p = src.noise_p

    rows = []
    summary = []
    for interval in intervals:
        ch = scn.make_channel(f"channel.drift.{interval:g}")
        ch.drift = chmod.DriftProcess(
            rng=ch.drift.rng,
            day_rate=ch.drift.day_rate,
            night_rate=ch.drift.night_rate,
            schedule=ch.drift.schedule,
            rotation=polcore.random_rotation(scn.rng(f"protocol.initial.{interval:g}")),
            clock_s=ch.drift.clock_s,
        )
        piezo = scn.make_piezo()
        pol = scn.make_polarimeter(f"polarimeter.{interval:g}")
        count_rng = scn.rng(f"counts.{interval:g}") if counts_per_basis > 0 else None

        integration = interval / 16.0
        n_per_basis = (
            counts_per_basis if counts_per_basis > 0
            else src.pair_rate_per_s * integration
        )
        accidental_mean = acc_a * acc_b * coinc_w * integration

        window_states: dict[int, np.ndarray] = {}
        window_norms: dict[int, float] = {}

        def accumulate(window, ch, piezo, _states=window_states, _norms=window_norms):
            k = np.kron(np.eye(2, dtype=complex), _arm_b_operator(ch, piezo))
            term = k @ rho_src @ k.conj().T
            if window not in _states:
                _states[window] = term
                _norms[window] = float(np.trace(term).real)
            else:
                _states[window] += term
                _norms[window] += float(np.trace(term).real)

        log = stabilizer.duty_cycle_run(
            ch, piezo, pol, cfg,
            transmit_window_s=float(interval),
            total_s=total,
            switch=scn.make_switch(),
            drift_dt_s=drift_dt,
            on_step=accumulate,
        )

        fids_raw, fids_corr = [], []
        for rec in log.records:
            acc_rho = window_states[rec.window]
            tr = float(np.trace(acc_rho).real)
            if tr <= 0.0:
                raise ProtocolFailed("window state fully extinguished")
            rho_bar = acc_rho / tr
            n_steps = max(1, round(interval / drift_dt))
            success = window_norms[rec.window] / n_steps
            counts = _window_counts(rho_bar, n_per_basis, accidental_mean, count_rng)
            fid_raw = quantum.bell_fidelity(quantum.tomography_2q(counts))
            if correct:
                corrected = _corrected_counts(counts, noise_p, accidental_mean)
                fid_corr = quantum.bell_fidelity(quantum.tomography_2q(corrected))
            else:
                fid_corr = fid_raw
            fids_raw.append(fid_raw)
            fids_corr.append(fid_corr)
            rows.append(
                (interval, rec.window, rec.fp_before, rec.fp_after,
                 rec.stab_iterations, rec.stab_duration_s,
                 fid_raw, fid_corr, success)
            )

        summary.append(
            (
                interval,
                len(log.records),
                float(np.mean([r.fp_after for r in log.records])),
                float(np.mean(fids_raw)),
                float(np.mean(fids_corr)),
                log.stabilization_count(),
                log.duty_ratio if math.isfinite(log.duty_ratio) else -1.0,
            )
        )

    return [
        write_csv(
            out / "dutycycle.csv",
            ("interval_s", "window", "fp_before", "fp_after", "stab_iterations",
             "stab_duration_s", "fidelity_raw", "fidelity_corrected", "success_prob"),
            rows,
        ),
        write_csv(
            out / "dutycycle_summary.csv",
            ("interval_s", "n_windows", "mean_fp_after", "mean_fidelity_raw",
             "mean_fidelity_corrected", "n_stabilizations", "duty_ratio"),
            summary,
        ),
    ]


# ---------------------------------------------------------------------------
# ion-photon
# ---------------------------------------------------------------------------

def _prepare_arm_b(scn: Scenario, rho_pair: np.ndarray):
    """Optionally transmit arm B through the link after one stabilization."""
    if not scn.protocol_value("apply_link_to_arm_b"):
        return rho_pair, 1.0, None
    ch = scn.make_channel()
    ch.drift = chmod.DriftProcess(
        rng=ch.drift.rng,
        day_rate=ch.drift.day_rate,
        night_rate=ch.drift.night_rate,
        schedule=ch.drift.schedule,
        rotation=polcore.random_rotation(scn.rng("protocol.initial_rotation")),
        clock_s=ch.drift.clock_s,
    )
    piezo = scn.make_piezo()
    run = None
    if scn.protocol_value("stabilize_first"):
        run = stabilizer.stabilize(
            ch, piezo, scn.make_polarimeter(), scn.make_stabilizer_config(),
            scn.make_switch(),
        )
    k = np.kron(np.eye(2, dtype=complex), _arm_b_operator(ch, piezo))
    rho = k @ rho_pair @ k.conj().T
    prob = float(np.trace(rho).real)
    if prob <= 1e-12:
        raise ProtocolFailed("arm-B photon fully blocked")
    return rho / prob, prob, run


def run_ion_photon(scn: Scenario, out: Path) -> list[Path]:
    counts_per_basis = scn.protocol_value("counts_per_basis")
    src = scn.make_source()
    ion = scn.make_ion()
    rho_pair, success, run = _prepare_arm_b(scn, quantum.spdc_state(src))
    rho = quantum.heralded_absorption(rho_pair, ion)

    probs = quantum.coincidence_probabilities(rho)
    rng = scn.rng("counts.ion_photon") if counts_per_basis > 0 else None
    n_per_basis = counts_per_basis if counts_per_basis > 0 else 1e6
    counts = []
    for (ba, bb), p in probs.items():
        mean = n_per_basis * p
        counts.append((ba, bb, float(rng.poisson(mean)) if rng else mean, 1.0))

    rho_hat = quantum.tomography_2q(counts)
    corrected = _corrected_counts(counts, src.noise_p, 0.0)
    rho_corr = quantum.tomography_2q(corrected)

    fid_raw = quantum.fidelity(rho_hat, quantum.ION_PHOTON_TARGET)
    fid_corr = quantum.fidelity(rho_corr, quantum.ION_PHOTON_TARGET)
    quantum.write_counts_csv(out / "tomo_counts.csv", counts)
    files = [
        out / "tomo_counts.csv",
        write_json(out / "ion_photon_state.json", matrix_payload(rho_hat)),
        write_json(
            out / "ion_photon_summary.json",
            {
                "fidelity_raw": fid_raw,
                "fidelity_corrected": fid_corr,
                "purity_raw": quantum.purity(rho_hat),
                "purity_corrected": quantum.purity(rho_corr),
                "arm_b_success_prob": success,
                "stabilizer_iterations": run.iterations if run else 0,
                "ion_coherence": ion.coherence(),
            },
        ),
    ]
    return files


# ---------------------------------------------------------------------------
# teleport
# ---------------------------------------------------------------------------

def _sampled_branch_tomography(branches_by_input, n_events, rng):
    """Finite-statistics reconstruction of the two heralded teleport channels.

    For each prepared input and analysis axis, n_events protocol shots are
    distributed over (phi_minus, phi_plus, failure) with Born probabilities;
    heralded shots are measured along the axis and the conditional states
    are rebuilt from the port asymmetries.
    """
    axes = {"hv": 0, "da": 1, "rl": 2}
    io_pairs = {"phi_minus": ([], []), "phi_plus": ([], [])}
    for rho_in, branches in branches_by_input:
        est = {}
        for herald in ("phi_minus", "phi_plus"):
            prob, unnorm = branches[herald]
            rho_c = unnorm / prob if prob > 0 else np.eye(2, dtype=complex) / 2
            lam = polcore.bloch_of_density(rho_c)
            lam_hat = np.zeros(3)
            herald_counts = 0
            for name, idx in axes.items():
                n_herald = rng.binomial(n_events, min(1.0, prob))
                herald_counts += n_herald
                p_port1 = 0.5 * (1.0 + lam[idx])
                n1 = rng.binomial(n_herald, min(1.0, max(0.0, p_port1)))
                lam_hat[idx] = 2.0 * n1 / n_herald - 1.0 if n_herald else 0.0
            norm = np.linalg.norm(lam_hat)
            if norm > 1.0:
                lam_hat /= norm
            p_hat = herald_counts / (3.0 * n_events)
            est[herald] = p_hat * polcore.density_of_bloch(lam_hat)
        for herald in ("phi_minus", "phi_plus"):
            io_pairs[herald][0].append(rho_in)
            io_pairs[herald][1].append(est[herald])
    return io_pairs


def run_teleport(scn: Scenario, out: Path) -> list[Path]:
    counts_per_basis = scn.protocol_value("counts_per_basis")
    labels = scn.protocol_value("input_states")
    src = scn.make_source()
    ion = scn.make_ion()
    rho_pair, success, _ = _prepare_arm_b(scn, quantum.spdc_state(src))

    inputs, branch_list = [], []
    for label in labels:
        ket = quantum.BASIS_KETS[label]
        rho_in = np.outer(ket, ket.conj())
        inputs.append(rho_in)
        branch_list.append((rho_in, quantum.bsm_branches(rho_in, rho_pair, ion)))

    chis = {}
    herald_probs = {}
    if counts_per_basis > 0:
        rng = scn.rng("counts.teleport")
        io_pairs = _sampled_branch_tomography(branch_list, int(counts_per_basis), rng)
        for herald, (ins_, outs) in io_pairs.items():
            chis[herald] = quantum.process_matrix_from_io(ins_, outs)
    else:
        for herald in ("phi_minus", "phi_plus"):
            outs = [branches[herald][1] for _, branches in branch_list]
            chis[herald] = quantum.process_matrix_from_io(inputs, outs)
    for herald in ("phi_minus", "phi_plus"):
        herald_probs[herald] = float(
            np.mean([branches[herald][0] for _, branches in branch_list])
        )

    expected = {"phi_minus": "i", "phi_plus": "rl"}
    rows = []
    files = []
    for herald, chi in chis.items():
        fid = quantum.process_fidelity_element(chi, expected[herald])
        rows.append((herald, expected[herald], fid, herald_probs[herald]))
        files.append(write_json(out / f"chi_{herald}.json", matrix_payload(chi)))
    files.append(
        write_csv(
            out / "teleport_summary.csv",
            ("herald", "expected_pauli", "process_fidelity", "herald_probability"),
            rows,
        )
    )
    files.append(
        write_json(
            out / "teleport_meta.json",
            {
                "arm_b_success_prob": success,
                "input_states": list(labels),
                "counts_per_basis": counts_per_basis,
                "failure_probability": 1.0 - sum(herald_probs.values()),
            },
        )
    )
    return files


# ---------------------------------------------------------------------------
# delay-drift
# ---------------------------------------------------------------------------

def run_delay_drift(scn: Scenario, out: Path) -> list[Path]:
    rng = scn.rng("protocol.delay")
    days = scn.protocol_value("days")
    period = scn.protocol_value("series_period_s")
    amp = scn.protocol_value("temp_amplitude_k")
    t_period = scn.protocol_value("temp_period_s")
    trend = scn.protocol_value("temp_trend_k_per_day")
    temp_noise = scn.protocol_value("temp_noise_k")
    meas_noise = scn.protocol_value("measurement_noise_ps")

    model = scn.make_channel().delay
    n = int(days * 86400.0 / period) + 1
    t = np.arange(n) * period
    temp_actual = (
        283.0
        + amp * np.sin(2.0 * math.pi * t / t_period)
        + trend * t / 86400.0
    )
    temp_observed = temp_actual + rng.normal(0.0, temp_noise, size=n)

    predicted = chmod.temperature_delay_prediction(model, list(zip(t, temp_observed)))
    true_delay = chmod.temperature_delay_prediction(model, list(zip(t, temp_actual)))
    measured = [
        (ti, d + rng.normal(0.0, meas_noise)) for (ti, d) in true_delay
    ]

    r, rms = analysis.delay_correlation(measured, predicted)
    rows = [
        (t[i], temp_observed[i], predicted[i][1], measured[i][1])
        for i in range(n)
    ]
    return [
        write_csv(
            out / "delay_series.csv",
            ("t_s", "temp_k", "predicted_ps", "measured_ps"),
            rows,
        ),
        write_json(
            out / "delay_summary.json",
            {
                "pearson_r": r,
                "residual_rms_ps": rms,
                "step_response_ps_per_k": model.sensitivity_ps_per_km_k * 2.0 * model.overhead_km,
            },
        ),
    ]


RUNNERS = {
    "pdl-characterize": run_pdl_characterize,
    "drift-characterize": run_drift_characterize,
    "stabilize": run_stabilize,
    "distribute-entanglement": run_distribute_entanglement,
    "ion-photon": run_ion_photon,
    "teleport": run_teleport,
    "delay-drift": run_delay_drift,
}


def run_protocol(scn: Scenario, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        runner = RUNNERS[scn.protocol]
    except KeyError:
        raise ProtocolFailed(f"unknown protocol {scn.protocol!r}") from None
    return runner(scn, out)
