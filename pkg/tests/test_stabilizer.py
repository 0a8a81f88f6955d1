import math

import numpy as np
import pytest

from fiberlink import channel as chm
from fiberlink import instruments as ins
from fiberlink import polcore as pc
from fiberlink import stabilizer as st

from conftest import make_test_channel


def noise_free_polarimeter():
    return ins.Polarimeter(sigma=0.0, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# error function
# ---------------------------------------------------------------------------

def test_error_function_compensated_channel_is_zero():
    ch = make_test_channel()
    piezo = ins.PiezoController()
    assert st.error_function(ch, piezo, noise_free_polarimeter()) == pytest.approx(0.0, abs=1e-15)


def test_error_function_half_turn_about_s3():
    ch = make_test_channel(rotation=pc.rotation_about([0, 0, 1], math.pi))
    piezo = ins.PiezoController()
    f = st.error_function(ch, piezo, noise_free_polarimeter())
    assert f == pytest.approx(8.0, abs=1e-12)


def test_error_function_equivalent_to_fidelity(rng):
    # in the rotation-only noise-free model f = 4 - 2(Q11 + Q22), so f = 0,
    # trace 3 and unit fidelity coincide
    pol = noise_free_polarimeter()
    piezo = ins.PiezoController()
    for _ in range(1000):
        q = pc.random_rotation(rng)
        ch = make_test_channel(rotation=q)
        f = st.error_function(ch, piezo, pol)
        assert f == pytest.approx(4.0 - 2.0 * (q[0, 0] + q[1, 1]), abs=1e-9)
        fp = pc.process_fidelity(q)
        if f < 1e-12:
            assert fp == pytest.approx(1.0, abs=1e-9)
        if fp > 1.0 - 1e-12:
            assert f == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def test_gradient_vanishes_at_optimum():
    ch = make_test_channel()
    piezo = ins.PiezoController()
    g = st.gradient(ch, piezo, noise_free_polarimeter(), delta_u_v=1e-3)
    assert np.linalg.norm(g) < 1e-9


def test_gradient_matches_analytic_on_synthetic_quadratic(monkeypatch):
    # central difference against the analytic derivative of a known quadratic
    a = np.array([
        [2.0, 0.3, 0.0, -0.1],
        [0.3, 1.5, 0.2, 0.0],
        [0.0, 0.2, 1.0, 0.4],
        [-0.1, 0.0, 0.4, 2.5],
    ])
    b = np.array([0.4, -0.2, 0.1, 0.3])

    def synthetic_error(ch, piezo, polarimeter, switch=None):
        u = piezo.voltages
        return float(u @ a @ u + b @ u + 1.0)

    monkeypatch.setattr(st, "error_function", synthetic_error)
    piezo = ins.PiezoController(voltages=np.array([0.5, -0.4, 0.2, 0.1]))
    ch = make_test_channel()
    g = st.gradient(ch, piezo, noise_free_polarimeter(), delta_u_v=1e-3)
    analytic_descent = -(2.0 * a @ piezo.voltages + b)
    assert np.all(np.abs(g - analytic_descent) < 1e-6)
    assert np.array_equal(piezo.voltages, np.array([0.5, -0.4, 0.2, 0.1]))


def test_gradient_direction_decreases_error(rng):
    pol = noise_free_polarimeter()
    for k in range(100):
        ch = make_test_channel(rotation=pc.random_rotation(rng))
        piezo = ins.PiezoController()
        piezo.bias_neutral()
        f0 = st.error_function(ch, piezo, pol)
        if f0 < 1e-9:
            continue
        g = st.gradient(ch, piezo, pol, delta_u_v=1e-4)
        piezo.set_voltages(piezo.voltages + 1e-3 * g)
        assert st.error_function(ch, piezo, pol) < f0


def test_gradient_one_sided_fallback_at_limits():
    ch = make_test_channel(rotation=pc.rotation_about([0, 1, 0], 0.4))
    piezo = ins.PiezoController(voltages=np.array([10.0, 0.0, 0.0, 0.0]))
    pol = noise_free_polarimeter()
    g = st.gradient(ch, piezo, pol, delta_u_v=0.1)
    assert np.all(np.isfinite(g))
    assert np.array_equal(piezo.voltages, np.array([10.0, 0.0, 0.0, 0.0]))


def test_gradient_raises_when_no_probe_fits():
    ch = make_test_channel()
    piezo = ins.PiezoController(voltages=np.array([10.0, 0.0, 0.0, 0.0]))
    with pytest.raises(ins.VoltageOutOfRange):
        st.gradient(ch, piezo, noise_free_polarimeter(), delta_u_v=25.0)


# ---------------------------------------------------------------------------
# adaptive schedule
# ---------------------------------------------------------------------------

def test_adapt_parameters_three_point_table():
    cfg = st.StabilizerConfig(fp_threshold=0.99, fp_crossover=0.95,
                              d0=2.0, d1=0.1, du0_v=0.2, du1_v=0.02)
    assert st.adapt_parameters(cfg, 0.5) == (2.0, 0.2)
    assert st.adapt_parameters(cfg, 0.95) == (2.0 + 0.1, 0.2 + 0.02)
    assert st.adapt_parameters(cfg, 1.0) == (0.1, 0.02)


def test_adapt_parameters_constant_below_crossover():
    cfg = st.StabilizerConfig()
    for fp in (0.0, 0.3, 0.9499):
        assert st.adapt_parameters(cfg, fp) == (cfg.d0, cfg.du0_v)


def test_adapt_parameters_decreasing_above_crossover():
    cfg = st.StabilizerConfig()
    ds = [st.adapt_parameters(cfg, fp)[0] for fp in (0.95, 0.97, 0.99, 1.0)]
    assert all(d2 < d1 for d1, d2 in zip(ds, ds[1:]))


def test_stabilizer_config_validation():
    with pytest.raises(ValueError):
        st.StabilizerConfig(fp_threshold=1.2)
    with pytest.raises(ValueError):
        st.StabilizerConfig(fp_crossover=0.99, fp_threshold=0.98)
    with pytest.raises(ValueError):
        st.StabilizerConfig(d0=-1.0)


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------

def test_stabilize_identity_channel_converges_immediately():
    ch = make_test_channel()
    run = st.stabilize(ch, ins.PiezoController(), noise_free_polarimeter())
    assert run.outcome is st.Outcome.CONVERGED
    assert run.iterations == 0
    assert run.final_fp >= 0.99


def test_stabilize_random_channels_noise_free(rng):
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    converged = 0
    for k in range(100):
        ch = make_test_channel(rotation=pc.random_rotation(rng))
        run = st.stabilize(ch, ins.PiezoController(), noise_free_polarimeter(), cfg)
        if run.outcome is st.Outcome.CONVERGED:
            converged += 1
            assert run.final_fp >= cfg.fp_threshold
    assert converged >= 99


def test_stabilize_trace_and_limits(rng):
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    piezo = ins.PiezoController()
    run = st.stabilize(ch, piezo, noise_free_polarimeter(), cfg)
    assert len(run.trace) == run.iterations + 1
    for row in run.trace:
        assert len(row) == len(st.TRACE_HEADER)
        assert all(abs(u) <= piezo.limit_v + 1e-9 for u in row[1:5])
    times = [row[-1] for row in run.trace]
    assert all(t2 > t1 for t1, t2 in zip(times, times[1:]))


def test_stabilize_trace_csv_header(tmp_path, rng):
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    run = st.stabilize(ch, ins.PiezoController(), noise_free_polarimeter())
    path = tmp_path / "trace.csv"
    run.write_trace_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "iteration,u1_v,u2_v,u3_v,u4_v,error_f,process_fidelity,time_s"


def test_stabilize_max_iterations_outcome(rng):
    cfg = st.StabilizerConfig(fp_threshold=0.999999, max_iterations=2)
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    run = st.stabilize(ch, ins.PiezoController(), noise_free_polarimeter(), cfg)
    assert run.outcome is st.Outcome.MAX_ITERATIONS
    assert run.iterations == 2
    assert len(run.trace) == 3


def test_stabilize_warm_start_faster_than_cold(rng):
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    pol = noise_free_polarimeter()
    cold, warm = [], []
    for k in range(40):
        ch = make_test_channel(rotation=pc.random_rotation(rng))
        piezo = ins.PiezoController()
        run = st.stabilize(ch, piezo, pol, cfg)
        cold.append(run.duration_s)
        # small drift after convergence: fidelity ~ 0.96
        angle = 2.0 * math.sqrt(0.04)
        pert = pc.rotation_about(rng.normal(size=3), angle)
        ch.drift = chm.DriftProcess(
            rng=ch.drift.rng, day_rate=0.0, night_rate=0.0,
            rotation=pert @ ch.drift.rotation, schedule=ch.drift.schedule,
        )
        warm.append(st.stabilize(ch, piezo, pol, cfg).duration_s)
    assert np.mean(warm) < np.mean(cold)
    assert np.median(warm) < np.median(cold)


def test_stabilize_with_noise_converges(rng):
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    converged = 0
    for k in range(100):
        ch = make_test_channel(rotation=pc.random_rotation(rng))
        pol = ins.Polarimeter(sigma=1e-3, rng=np.random.default_rng(4000 + k))
        run = st.stabilize(ch, ins.PiezoController(), pol, cfg)
        converged += run.outcome is st.Outcome.CONVERGED
    assert converged >= 94


# ---------------------------------------------------------------------------
# duty cycle
# ---------------------------------------------------------------------------

def test_duty_cycle_zero_drift_single_stabilization(rng):
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    piezo = ins.PiezoController()
    piezo.bias_neutral()
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    log = st.duty_cycle_run(
        ch, piezo, noise_free_polarimeter(), cfg,
        transmit_window_s=100.0, total_s=1000.0,
    )
    assert log.stabilization_count() == 1
    assert log.records[0].stabilized
    assert all(not r.stabilized for r in log.records[1:])
    assert all(r.fp_after >= cfg.fp_threshold for r in log.records)


def test_duty_cycle_night_drift_keeps_fidelity(rng):
    # calibrated night drift with 100 s windows: post-window fidelity stays
    # high at the 90 % quantile
    post_window = []
    for k in range(30):
        ch = make_test_channel(
            rotation=pc.random_rotation(rng),
            rng=np.random.default_rng(500 + k),
            night_rate=chm.NIGHT_RATE_DEFAULT,
            day_rate=chm.NIGHT_RATE_DEFAULT,
        )
        piezo = ins.PiezoController()
        piezo.bias_neutral()
        cfg = st.StabilizerConfig(fp_threshold=0.99)
        log = st.duty_cycle_run(
            ch, piezo, noise_free_polarimeter(), cfg,
            transmit_window_s=100.0, total_s=600.0, drift_dt_s=10.0,
        )
        # fidelity at the start of window w+1 is the post-window value of w
        post_window.extend(r.fp_before for r in log.records[1:])
    assert np.quantile(post_window, 0.10) >= 0.98


def test_duty_cycle_ratio_bookkeeping(rng):
    ch = make_test_channel(
        rotation=pc.random_rotation(rng),
        rng=np.random.default_rng(17),
        night_rate=5e-5, day_rate=5e-5,
    )
    piezo = ins.PiezoController()
    piezo.bias_neutral()
    cfg = st.StabilizerConfig(fp_threshold=0.99)
    log = st.duty_cycle_run(
        ch, piezo, noise_free_polarimeter(), cfg,
        transmit_window_s=100.0, total_s=2000.0, drift_dt_s=10.0,
    )
    durations = [r.stab_duration_s for r in log.records if r.stabilized]
    assert durations
    expected = 100.0 / np.mean(durations)
    assert log.duty_ratio == pytest.approx(expected, rel=0.1)


def test_duty_cycle_on_step_counts(rng):
    ch = make_test_channel(rotation=pc.random_rotation(rng))
    piezo = ins.PiezoController()
    seen = []
    st.duty_cycle_run(
        ch, piezo, noise_free_polarimeter(), st.StabilizerConfig(),
        transmit_window_s=10.0, total_s=50.0, drift_dt_s=1.0,
        on_step=lambda w, c, p: seen.append(w),
    )
    assert len(seen) == 50
    assert seen == sorted(seen)
