import math

import numpy as np
import pytest
from scipy import stats

from fiberlink import channel as chm
from fiberlink import polcore as pc

from conftest import make_test_channel, random_bloch


# ---------------------------------------------------------------------------
# drift process
# ---------------------------------------------------------------------------

def test_drift_step_zero_rate_keeps_rotation(rng):
    d = chm.DriftProcess(rng=rng, day_rate=0.0, night_rate=0.0)
    d2 = chm.drift_step(d, 5.0)
    assert np.array_equal(d2.rotation, d.rotation)
    assert d2.clock_s == 5.0


def test_drift_step_requires_positive_dt(rng):
    d = chm.DriftProcess(rng=rng)
    with pytest.raises(ValueError):
        chm.drift_step(d, 0.0)


def test_drift_is_deterministic_given_seed():
    def run(seed):
        d = chm.DriftProcess(rng=np.random.default_rng(seed), day_rate=1e-5, night_rate=1e-5)
        for _ in range(50):
            d = chm.drift_step(d, 1.0)
        return d.rotation

    assert np.array_equal(run(7), run(7))
    assert not np.array_equal(run(7), run(8))


def test_drift_mean_fidelity_decays_monotonically():
    taus = (20.0, 80.0, 320.0)
    means = []
    for tau in taus:
        fps = []
        for k in range(400):
            d = chm.DriftProcess(
                rng=np.random.default_rng(1000 + k), day_rate=1e-5, night_rate=1e-5
            )
            for _ in range(int(tau / 10)):
                d = chm.drift_step(d, 10.0)
            fps.append(pc.process_fidelity(d.rotation))
        means.append(np.mean(fps))
    assert means[0] > means[1] > means[2]


def test_drift_calibration_night_quantiles():
    # defaults keep the 99 % curve above 0.99 for at least 60 s of night
    # drift and the 90 % curve above 0.98 at 160 s
    fps_60, fps_160 = [], []
    for k in range(1500):
        d = chm.DriftProcess(rng=np.random.default_rng(3000 + k))  # night at clock 0
        for step in range(160):
            d = chm.drift_step(d, 1.0)
            if step == 59:
                fps_60.append(pc.process_fidelity(d.rotation))
        fps_160.append(pc.process_fidelity(d.rotation))
    assert np.quantile(fps_60, 0.01) >= 0.99
    assert np.quantile(fps_160, 0.10) >= 0.98


def test_drift_axis_distribution_uniform_chi2():
    d = chm.DriftProcess(rng=np.random.default_rng(99), day_rate=1e-4, night_rate=1e-4)
    n = 100_000
    axes = np.empty((n, 3))
    prev = d.rotation
    for i in range(n):
        d = chm.drift_step(d, 1.0)
        inc = d.rotation @ prev.T
        axis, _ = pc.rotation_to_axis_angle(inc)
        axes[i] = axis
        prev = d.rotation
    # equal-area bins: 10 bands in z, 10 sectors in azimuth
    z_bin = np.clip(((axes[:, 2] + 1.0) / 0.2).astype(int), 0, 9)
    az = np.arctan2(axes[:, 1], axes[:, 0])
    az_bin = np.clip(((az + math.pi) / (2 * math.pi / 10)).astype(int), 0, 9)
    counts = np.bincount(z_bin * 10 + az_bin, minlength=100)
    expected = n / 100
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < stats.chi2.ppf(0.99, df=99)


def test_day_schedule_rate_selection():
    sched = chm.DaySchedule()
    day = chm.DriftProcess(
        rng=np.random.default_rng(0), clock_s=12 * 3600.0, schedule=sched
    )
    night = chm.DriftProcess(
        rng=np.random.default_rng(0), clock_s=3 * 3600.0, schedule=sched
    )
    assert day.current_rate() == chm.DAY_RATE_DEFAULT
    assert night.current_rate() == chm.NIGHT_RATE_DEFAULT
    assert sched.is_day(7.5 * 3600.0)
    assert not sched.is_day(18.0 * 3600.0)
    assert sched.is_day((24 + 12) * 3600.0)  # wraps across midnight


# ---------------------------------------------------------------------------
# probe and qubit transmission
# ---------------------------------------------------------------------------

def test_transmit_probe_identity():
    ch = make_test_channel()
    s = np.array([0.3, -0.5, 0.2])
    assert np.allclose(chm.transmit_probe(ch, s), s, atol=1e-15)


def test_transmit_probe_known_rotation(rng):
    r = pc.random_rotation(rng)
    ch = make_test_channel(rotation=r)
    for _ in range(20):
        s = random_bloch(rng, pure=True)
        assert np.allclose(chm.transmit_probe(ch, s), r @ s, atol=1e-12)


def test_transmit_probe_rotation_plus_pdl_oracle(rng):
    r = pc.random_rotation(rng)
    ch = make_test_channel(rotation=r, pdl_axis=[0, 1, 0], pdl_transmission=0.9)
    el = ch.pdl
    for _ in range(50):
        s = random_bloch(rng, pure=True)
        expected = pc.pdl_apply_bloch(r @ s, el)
        assert np.allclose(chm.transmit_probe(ch, s), expected, atol=1e-10)


def test_transmit_probe_norm_preserved_without_pdl(rng):
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    for _ in range(50):
        s = random_bloch(rng, pure=True)
        assert abs(np.linalg.norm(chm.transmit_probe(ch, s)) - 1.0) < 1e-12


def test_transmit_qubit_kraus_identity_channel():
    ch = make_test_channel()
    k = chm.transmit_qubit_kraus(ch)
    assert np.allclose(k / k[0, 0], np.eye(2), atol=1e-12)


def test_transmit_qubit_kraus_matches_probe_map(rng):
    for _ in range(10):
        r = pc.random_rotation(rng)
        ch = make_test_channel(rotation=r, pdl_axis=random_bloch(rng, pure=True),
                               pdl_transmission=rng.uniform(0.5, 1.0))
        k = chm.transmit_qubit_kraus(ch)
        for _ in range(10):
            s = random_bloch(rng, pure=True)
            rho = pc.density_of_bloch(s)
            out = k @ rho @ k.conj().T
            lam = pc.bloch_of_density(out / np.trace(out))
            assert np.allclose(lam, chm.transmit_probe(ch, s), atol=1e-9)


def test_transmit_qubit_kraus_success_probability_bounds(rng):
    for _ in range(20):
        t = rng.uniform(0.3, 1.0)
        ch = make_test_channel(
            rotation=pc.random_rotation(rng),
            pdl_axis=random_bloch(rng, pure=True),
            pdl_transmission=t,
        )
        k = chm.transmit_qubit_kraus(ch)
        for _ in range(20):
            rho = pc.density_of_bloch(random_bloch(rng))
            p = np.trace(k @ rho @ k.conj().T).real
            assert t**2 - 1e-12 <= p <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# attenuation budget
# ---------------------------------------------------------------------------

MEASURED_BUDGET = (
    ("qfc_and_transfer", 6.78),
    ("link_q", 10.4),
    ("stab_sender", 0.46),
    ("stab_receiver", 1.3),
    ("filter_projection", 0.65),
    ("detector", 0.97),
    ("residual", 2.17),
)


def test_total_loss_db_measured_budget():
    budget = chm.AttenuationBudget(components=MEASURED_BUDGET)
    assert chm.total_loss_db(budget) == pytest.approx(22.73, abs=1e-9)


def test_effective_coincidence_reduction():
    total = chm.total_loss_db(chm.AttenuationBudget(components=MEASURED_BUDGET))
    assert total - 9.07 == pytest.approx(13.66, abs=1e-9)


def test_total_loss_db_zero_entry():
    assert chm.total_loss_db(chm.AttenuationBudget.of(("nothing", 0.0))) == 0.0


def test_total_loss_db_permutation_invariant(rng):
    perm = list(MEASURED_BUDGET)
    rng.shuffle(perm)
    assert chm.total_loss_db(chm.AttenuationBudget(components=tuple(perm))) == pytest.approx(
        22.73, abs=1e-9
    )


def test_budget_rejects_negative_loss():
    with pytest.raises(ValueError):
        chm.AttenuationBudget.of(("bad", -0.1))


# ---------------------------------------------------------------------------
# background counts
# ---------------------------------------------------------------------------

def test_sample_background_zero_rate(rng):
    bg = chm.BackgroundSource(0.0)
    assert chm.sample_background(bg, 100.0, rng) == 0


def test_sample_background_mean(rng):
    bg = chm.BackgroundSource(19.7)
    n = 10_000
    counts = [chm.sample_background(bg, 100.0, rng) for _ in range(n)]
    mean = np.mean(counts)
    sigma_of_mean = math.sqrt(1970.0 / n)
    assert abs(mean - 1970.0) < 3 * sigma_of_mean


def test_sample_background_deterministic():
    bg = chm.BackgroundSource(19.7)
    a = [chm.sample_background(bg, 1.0, np.random.default_rng(5)) for _ in range(10)]
    b = [chm.sample_background(bg, 1.0, np.random.default_rng(5)) for _ in range(10)]
    assert a == b


# ---------------------------------------------------------------------------
# delay drift
# ---------------------------------------------------------------------------

def test_doppler_delay_step_zero():
    m = chm.DelayDriftModel()
    assert chm.doppler_delay_step(m, 0.0) == 0.0


def test_doppler_delay_step_example():
    m = chm.DelayDriftModel(nu0_hz=1.9986e14, gate_time_s=0.01)
    assert chm.doppler_delay_step(m, 100.0) == pytest.approx(2.50e-15, abs=1e-17)


def test_doppler_integration_recovers_path_change(rng):
    # synthesize a path-length rate profile; integrating the per-gate delays
    # must recover the total delay Delta(nL)/c
    m = chm.DelayDriftModel()
    t_gate = m.gate_time_s
    n = 2000
    rates = 1e-4 * np.sin(np.linspace(0, 4 * math.pi, n)) + rng.normal(0, 1e-6, n)
    total = 0.0
    for dnl_dt in rates:
        dnu = chm.doppler_shift_from_path_rate(m, dnl_dt)
        total += chm.doppler_delay_step(m, dnu)
    expected = np.sum(rates) * t_gate / chm.SPEED_OF_LIGHT
    assert total == pytest.approx(expected, rel=1e-6)


def test_temperature_delay_constant_series():
    m = chm.DelayDriftModel()
    series = [(0.0, 280.0), (60.0, 280.0), (120.0, 280.0)]
    out = chm.temperature_delay_prediction(m, series)
    assert all(d == 0.0 for _, d in out)


def test_temperature_delay_one_kelvin_step():
    m = chm.DelayDriftModel(overhead_km=1.278, sensitivity_ps_per_km_k=37.4)
    out = chm.temperature_delay_prediction(m, [(0.0, 283.0), (60.0, 284.0)])
    assert out[1][1] == pytest.approx(95.6, abs=0.1)


def test_temperature_delay_linear_in_temperature(rng):
    m = chm.DelayDriftModel()
    temps = [(float(i), 280.0 + 0.01 * i) for i in range(10)]
    out = chm.temperature_delay_prediction(m, temps)
    deltas = np.diff([d for _, d in out])
    assert np.allclose(deltas, deltas[0], atol=1e-9)


def test_temperature_delay_empty_series():
    with pytest.raises(chm.EmptySeries):
        chm.temperature_delay_prediction(chm.DelayDriftModel(), [])


def test_temperature_delay_requires_monotone_timestamps():
    m = chm.DelayDriftModel()
    with pytest.raises(ValueError):
        chm.temperature_delay_prediction(m, [(1.0, 280.0), (0.0, 281.0)])


# ---------------------------------------------------------------------------
# spikes
# ---------------------------------------------------------------------------

def test_pdl_spike_raises_loss_temporarily():
    ch = make_test_channel(pdl_axis=[1, 0, 0], pdl_transmission=0.99)
    ch.spikes = chm.PdlSpikeProcess(rate_per_s=1e9, extra_db=1.0, duration_s=5.0)
    base_db = ch.pdl.loss_db
    ch.advance(1.0)
    assert ch.current_pdl().loss_db == pytest.approx(base_db + 1.0, abs=1e-9)
    ch.spikes = chm.PdlSpikeProcess(rate_per_s=0.0)
    ch._spike_until_s = -1.0
    assert ch.current_pdl().loss_db == pytest.approx(base_db, abs=1e-12)
