"""End-to-end acceptance checks for the simulator and solver suite.

Every test prints a single PASS/FAIL verdict line directly to the real
stdout (bypassing capture) before asserting, so a plain ``pytest -v``
run shows one line per criterion. Tolerances and trial counts are part
of the acceptance contract and must not be weakened; a failing assert
here is a real finding, not a flaky test.
"""
import math
import os
import sys
import time

import numpy as np
import pytest
from scipy import stats

from isacpix.ao import AoOptions, ThresholdSchedule, run_ao
from isacpix.gamp import ScatterPrior, SymbolPrior, gamp_solve
from isacpix.harness import _build_context, desk_config, run_sweep, run_trial
from isacpix.measure import (EffectiveSystem, noiseless_signal, scatter_system,
                             symbol_system, synthesize)
from isacpix.channel import DopplerSpec, apply_doppler, build_channels
from isacpix.scene import QPSK, build_geometry, sample_scene

from oracles import (exhaustive_detection, scatter_posterior_oracle,
                     symbol_posterior_oracle, triple_loop_signal)


_capman = None


@pytest.fixture(autouse=True)
def _grab_capture_manager(request):
    global _capman
    _capman = request.config.pluginmanager.getplugin("capturemanager")


def _verdict(name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] {name}"
    if detail:
        line += f" -- {detail}"
    if _capman is not None:
        with _capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    return ok


@pytest.fixture(scope="module")
def desk():
    cfg = desk_config()
    geometry, channels = _build_context(cfg)
    return cfg, geometry, channels


# --------------------------------------------------------------------------
# 1. Denoiser posterior moments match quadrature on a 10x10 (r, tau) grid.
# --------------------------------------------------------------------------

def test_criterion_1_denoiser_oracle_grid():
    t0 = time.perf_counter()
    sym_prior = SymbolPrior.qpsk(0.3, sigma=0.05)
    sct_prior = ScatterPrior(gamma=0.1, theta=1.0, sigma=0.2)
    radii = np.linspace(0.05, 1.6, 10)
    phases = np.linspace(0.0, 2.0 * math.pi, 10, endpoint=False)
    taus = np.logspace(-4, 0.5, 10)

    sym_err = 0.0
    sct_err = 0.0
    for i in range(10):
        r_c = radii[i] * np.exp(1j * phases[i])
        r_x = float(np.linspace(-0.4, 1.4, 10)[i])
        for tau in taus:
            m, v = sym_prior.denoise(np.array([r_c]), np.array([tau]))
            mo, vo = symbol_posterior_oracle(r_c, tau, sym_prior)
            sym_err = max(sym_err, abs(m[0] - mo), abs(v[0] - vo))
            m, v = sct_prior.denoise(np.array([r_x]), np.array([tau]))
            mo, vo = scatter_posterior_oracle(r_x, tau, sct_prior)
            sct_err = max(sct_err, abs(m[0] - mo), abs(v[0] - vo))
    runtime = time.perf_counter() - t0

    ok = sym_err <= 1e-6 and sct_err <= 1e-8 and runtime < 5.0
    _verdict("criterion 1 (denoiser oracle equivalence)", ok,
             f"symbol err {sym_err:.2e} <= 1e-06, scatter err {sct_err:.2e} "
             f"<= 1e-08, runtime {runtime:.2f}s < 5s")
    assert sym_err <= 1e-6
    assert sct_err <= 1e-8
    assert runtime < 5.0


# --------------------------------------------------------------------------
# 2. Linear compressed-sensing sanity on the 10-sparse N=200/K=100 instance.
# --------------------------------------------------------------------------

def test_criterion_2_linear_cs_sanity():
    t0 = time.perf_counter()
    n, k, sparsity, snr_db = 200, 100, 10, 40.0
    prior = SymbolPrior.qpsk(sparsity / n, sigma=0.05)
    ok_trials = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        a = (rng.standard_normal((k, n))
             + 1j * rng.standard_normal((k, n))) / math.sqrt(2 * k)
        idx = rng.choice(n, sparsity, replace=False)
        u = np.zeros(n, dtype=complex)
        u[idx] = QPSK[rng.integers(0, 4, sparsity)]
        signal = a @ u
        noise_var = float(np.mean(np.abs(signal) ** 2)) / 10 ** (snr_db / 10)
        b = signal + math.sqrt(noise_var / 2) * (
            rng.standard_normal(k) + 1j * rng.standard_normal(k))
        state = gamp_solve(EffectiveSystem(a=a, b=b, kind="symbols"),
                           prior, noise_var, max_iters=100)
        nmse = 10 * math.log10(float(np.linalg.norm(state.u - u) ** 2
                                     / np.linalg.norm(u) ** 2))
        ok_trials += nmse <= -30.0
    runtime = time.perf_counter() - t0

    ok = ok_trials >= 95 and runtime < 30.0
    _verdict("criterion 2 (linear CS sanity)", ok,
             f"NMSE <= -30 dB in {ok_trials}/100 trials (need >= 95), "
             f"runtime {runtime:.2f}s < 30s")
    assert ok_trials >= 95
    assert runtime < 30.0


# --------------------------------------------------------------------------
# 3. Tiny bilinear instance: solver matches the 16-hypothesis exhaustion.
# --------------------------------------------------------------------------

def test_criterion_3_bilinear_oracle_equivalence():
    t0 = time.perf_counter()
    geometry = build_geometry(3.0, 3.0, (1.5, 1.5), (1.5, 1.5), 8)
    channels = build_channels(geometry)
    sym_prior = SymbolPrior.qpsk(0.25)
    sct_prior = ScatterPrior(gamma=0.05, theta=1.0, sigma=0.2)
    agree = 0
    for seed in range(100):
        truth = sample_scene(geometry, 1, 0.0, rng_seed=seed)
        batch = synthesize(truth, channels, math.inf, rng_seed=seed)
        est, _ = run_ao(batch, channels, sym_prior, sct_prior,
                        ThresholdSchedule(), AoOptions())
        p_ref, s_ref = exhaustive_detection(batch.y, channels, 1, QPSK)
        agree += (np.array_equal(est.p_hat, p_ref)
                  and np.allclose(est.s_hat, s_ref, atol=1e-9))
    runtime = time.perf_counter() - t0

    ok = agree == 100 and runtime < 5.0
    _verdict("criterion 3 (bilinear oracle equivalence)", ok,
             f"matched exhaustive search in {agree}/100 trials "
             f"(need 100), runtime {runtime:.2f}s < 5s")
    assert agree == 100
    assert runtime < 5.0


# --------------------------------------------------------------------------
# 4. Measurement-model consistency against the triple-loop oracle.
# --------------------------------------------------------------------------

def test_criterion_4_measurement_model_consistency(desk):
    _, geometry, channels = desk
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        nv = int(rng.integers(1, 13))
        truth = sample_scene(geometry, nv, float(rng.uniform(0.0, 0.3)),
                             rng_seed=seed, target_amplitude="uniform")
        y = noiseless_signal(truth, channels)
        y_loop = triple_loop_signal(truth, channels)
        scale = float(np.linalg.norm(y_loop))
        worst = max(worst, float(np.linalg.norm(y - y_loop)) / scale)
        # Symbol-side factorization: y = A(p, x) s.
        sym = symbol_system(channels, truth.p, truth.x, y)
        worst = max(worst,
                    float(np.linalg.norm(sym.a @ truth.s - y_loop)) / scale)
        # Sensing-side factorization: y - p^T H_v s = A(s) x.
        sct = scatter_system(channels, truth.p, truth.s, y)
        worst = max(worst,
                    float(np.linalg.norm(sct.a @ truth.x - sct.b)) / scale)

    ok = worst <= 1e-12
    _verdict("criterion 4 (measurement model consistency)", ok,
             f"worst relative error {worst:.2e} <= 1e-12 over 50 scenes")
    assert worst <= 1e-12


# --------------------------------------------------------------------------
# 5. Known-to-unknown power ratio at the first iteration.
# --------------------------------------------------------------------------

# Frozen on first run of this configuration (master seed 1, desk scale,
# 10 dB / gamma_s 0.1 / 12 vehicles / 30 m/s, 100 trials).
FROZEN_MEAN_DELTA0 = 132738.2190371949


def test_criterion_5_initial_power_ratio(desk):
    cfg, geometry, channels = desk
    cell = (10.0, 0.1, 12, 30.0)
    deltas = []
    for trial in range(100):
        trace = run_trial(cfg, geometry, channels, cell, trial,
                          with_baseline=False)["ao"][1]
        deltas.append(trace.records[0].delta)
    mean_delta = float(np.mean(deltas))
    rel = abs(mean_delta - FROZEN_MEAN_DELTA0) / FROZEN_MEAN_DELTA0

    ok = mean_delta > 10.0 and rel <= 1e-6
    _verdict("criterion 5 (initial power ratio)", ok,
             f"mean delta0 {mean_delta:.4f} > 10, matches frozen value "
             f"within {rel:.2e} (tol 1e-06)")
    assert mean_delta > 10.0
    assert rel <= 1e-6


# --------------------------------------------------------------------------
# 6. Alternating solver beats the single-pass baseline at 10 and 20 dB.
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def paired_trials(desk):
    """200 paired trials per SNR at the default desk cell."""
    cfg, geometry, channels = desk
    out = {}
    for snr in (10.0, 20.0):
        cell = (snr, 0.1, 12, 30.0)
        rows = []
        for trial in range(200):
            r = run_trial(cfg, geometry, channels, cell, trial,
                          with_baseline=True)
            rows.append((r["ao"][0], r["baseline"][0]))
        out[snr] = rows
    return out


def _paired_gain(rows, key):
    """Mean per-trial improvement and its one-sided p-value."""
    d = np.array([b[key] - a[key] for a, b in rows])
    if np.all(d == 0):
        return 0.0, 1.0
    p = stats.ttest_1samp(d, 0.0, alternative="greater").pvalue
    return float(d.mean()), float(p)


def test_criterion_6_ser_beats_baseline(paired_trials):
    t0 = time.perf_counter()
    details = []
    ok = True
    for snr, rows in paired_trials.items():
        gain, p = _paired_gain(rows, "ser")
        details.append(f"{snr:.0f} dB: dSER {gain:+.4f} p={p:.2e}")
        ok = ok and gain > 0 and p < 0.05
    runtime = time.perf_counter() - t0
    _verdict("criterion 6a (SER: alternating < baseline)", ok,
             "; ".join(details))
    for snr, rows in paired_trials.items():
        gain, p = _paired_gain(rows, "ser")
        assert gain > 0, f"SER not improved at {snr} dB"
        assert p < 0.05, f"SER improvement not significant at {snr} dB"
    assert runtime < 300.0


def test_criterion_6_mse_beats_baseline(paired_trials):
    """Sensing-MSE half of the comparison.

    Known limitation: at desk scale the two-hop scattered paths sit
    roughly 70 dB below the direct paths, so at communication SNRs the
    scattering estimate of either algorithm is pinned at the prior
    floor and the paired MSE difference is statistical noise. The
    assertion is kept at its stated strength regardless.
    """
    details = []
    ok = True
    for snr, rows in paired_trials.items():
        gain, p = _paired_gain(rows, "mse")
        details.append(f"{snr:.0f} dB: dMSE {gain:+.3e} p={p:.2e}")
        ok = ok and gain > 0 and p < 0.05
    _verdict("criterion 6b (MSE: alternating < baseline)", ok,
             "; ".join(details))
    for snr, rows in paired_trials.items():
        gain, p = _paired_gain(rows, "mse")
        assert gain > 0, f"MSE not improved at {snr} dB"
        assert p < 0.05, f"MSE improvement not significant at {snr} dB"


# --------------------------------------------------------------------------
# 7. Monotone trends over the SNR grid and target sparsity.
# --------------------------------------------------------------------------

def _cell_means(cfg, geometry, channels, cell, trials=100):
    sers, mses, tprs = [], [], []
    for trial in range(trials):
        m = run_trial(cfg, geometry, channels, cell, trial,
                      with_baseline=False)["ao"][0]
        sers.append(m["ser"])
        mses.append(m["mse"])
        tprs.append(m["detection_tpr"])
    return float(np.mean(sers)), float(np.mean(mses)), float(np.mean(tprs))


def test_criterion_7_monotone_trends(desk):
    cfg, geometry, channels = desk
    snrs = (0.0, 10.0, 20.0, 30.0)
    # Static scenes: the Doppler-stressed default would mix the SNR trend
    # with a model-mismatch floor, so the sweep runs at zero speed.
    sweep = {gs: [_cell_means(cfg, geometry, channels, (snr, gs, 12, 0.0))
                  for snr in snrs]
             for gs in (0.05, 0.1, 0.15)}

    main = sweep[0.1]
    ser_ok = all(main[i + 1][0] <= main[i][0] for i in range(3))
    mse_ok = all(main[i + 1][1] <= main[i][1] for i in range(3))
    tpr_ok = all(main[i + 1][2] >= main[i][2] for i in range(3))
    gs_ok = all(sweep[0.15][i][1] > sweep[0.05][i][1] for i in range(4))

    ok = ser_ok and mse_ok and tpr_ok and gs_ok
    _verdict("criterion 7 (monotone trends)", ok,
             f"SER non-increasing {ser_ok}, MSE non-increasing {mse_ok}, "
             f"TPR non-decreasing {tpr_ok}, MSE grows with target "
             f"density {gs_ok}")
    assert ser_ok, f"SER means along SNR: {[m[0] for m in main]}"
    assert mse_ok, f"MSE means along SNR: {[m[1] for m in main]}"
    assert tpr_ok, f"TPR means along SNR: {[m[2] for m in main]}"
    assert gs_ok


# --------------------------------------------------------------------------
# 8. Convergence: late iterations no worse than the first, shrinking support.
# --------------------------------------------------------------------------

def test_criterion_8_convergence(desk):
    cfg, geometry, channels = desk
    cell = (10.0, 0.1, 12, 30.0)
    ser_ok = mse_ok = mono_ok = 0
    trials = 100
    for trial in range(trials):
        trace = run_trial(cfg, geometry, channels, cell, trial,
                          with_baseline=False)["ao"][1]
        recs = trace.records
        first = recs[0]
        late = recs[min(9, len(recs) - 1)]
        ser_ok += late.ser <= first.ser
        mse_ok += late.mse <= first.mse
        mono_ok += all(
            np.all(recs[i + 1].support <= recs[i].support)
            for i in range(len(recs) - 1))

    ok = ser_ok >= 95 and mse_ok >= 95 and mono_ok == trials
    _verdict("criterion 8 (convergence)", ok,
             f"SER improved-or-equal {ser_ok}/100 (need >= 95), MSE "
             f"{mse_ok}/100 (need >= 95), occupancy monotone "
             f"{mono_ok}/100 (need 100)")
    assert ser_ok >= 95
    assert mse_ok >= 95
    assert mono_ok == trials


# --------------------------------------------------------------------------
# 9. Doppler degradation orders SER by speed; zero speed is a no-op.
# --------------------------------------------------------------------------

def test_criterion_9_doppler_degradation(desk):
    cfg, geometry, channels = desk
    means = {}
    for speed in (0.0, 10.0, 30.0):
        sers = [run_trial(cfg, geometry, channels, (10.0, 0.1, 12, speed),
                          trial, with_baseline=False)["ao"][0]["ser"]
                for trial in range(100)]
        means[speed] = float(np.mean(sers))
    order_ok = means[30.0] >= means[10.0] >= means[0.0]

    # Zero speed with the impairment pipeline enabled must be a no-op.
    spec = DopplerSpec(symbol_duration=cfg.symbol_duration_s)
    bits_ok = True
    for seed in range(5):
        truth = sample_scene(geometry, 12, 0.1, rng_seed=seed, v_max=0.0)
        plain = synthesize(truth, channels, 10.0, rng_seed=seed)
        ch = apply_doppler(channels, spec, truth, geometry, rng_seed=seed)
        moved = synthesize(truth, ch, 10.0, rng_seed=seed, doppler=True)
        bits_ok = bits_ok and plain.y.tobytes() == moved.y.tobytes()

    ok = order_ok and bits_ok
    _verdict("criterion 9 (Doppler degradation)", ok,
             f"mean SER {means[30.0]:.4f} (30 m/s) >= {means[10.0]:.4f} "
             f"(10 m/s) >= {means[0.0]:.4f} (static); zero-speed runs "
             f"bit-identical {bits_ok}")
    assert order_ok, means
    assert bits_ok


# --------------------------------------------------------------------------
# 10. Fixed-seed sweeps write byte-identical CSV files.
# --------------------------------------------------------------------------

def test_criterion_10_csv_determinism(tmp_path):
    cfg = desk_config(snr_db=(10.0,), trials=5)
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        run_sweep(cfg, out_dir=str(out))
        outputs.append({name: (out / name).read_bytes()
                        for name in ("metrics.csv", "convergence.csv")})
    same = {name: outputs[0][name] == outputs[1][name]
            for name in outputs[0]}

    ok = all(same.values())
    _verdict("criterion 10 (CSV determinism)", ok,
             "byte-identical across two runs: "
             + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert all(same.values()), same
