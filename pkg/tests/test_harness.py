"""Configuration files, seeding, metrics, sweeps, and the CLI."""
import numpy as np
import pytest

from isacpix.ao import Estimate
from isacpix.cli import main
from isacpix.harness import (ExperimentConfig, _build_context,
                             compute_metrics, desk_config, load_config,
                             full_config, run_sweep, run_trial, save_config,
                             trial_seed)
from isacpix.scene import ConfigurationError, sample_scene


def test_config_round_trip(tmp_path):
    cfg = desk_config(snr_db=(5.0, 15.0), gamma_s=(0.05, 0.2), trials=7,
                      em=True, damping=0.65, out_dir="results")
    path = tmp_path / "exp.ini"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded == cfg


def test_config_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[sweep]\nwarp_factor = 9\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_config_bad_value(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[sweep]\ntrials = lots\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.ini")


def test_scale_presets():
    desk = desk_config()
    full = full_config()
    assert desk.roi_length == 9.0 and full.roi_length == 15.0
    assert full.bs_count > desk.bs_count


def test_trial_seed_pairing():
    """Scenes and noise are shared along the SNR and speed axes so those
    sweeps are paired; they differ across scene-shaping parameters."""
    base = trial_seed(1, (10.0, 0.1, 12, 30.0), 0)
    assert trial_seed(1, (20.0, 0.1, 12, 30.0), 0) == base
    assert trial_seed(1, (10.0, 0.1, 12, 0.0), 0) == base
    assert trial_seed(1, (10.0, 0.2, 12, 30.0), 0) != base
    assert trial_seed(1, (10.0, 0.1, 6, 30.0), 0) != base
    assert trial_seed(1, (10.0, 0.1, 12, 30.0), 1) != base
    assert trial_seed(2, (10.0, 0.1, 12, 30.0), 0) != base
    scene, noise = base
    assert scene != noise


def test_compute_metrics_perfect():
    cfg = desk_config()
    geometry, _ = _build_context(cfg)
    truth = sample_scene(geometry, 4, 0.1, rng_seed=0)
    est = Estimate(p_hat=truth.p.copy(), s_hat=truth.s.copy(),
                   x_hat=truth.x.copy(), iteration=1, residual=0.0)
    m = compute_metrics(truth, est)
    assert m["ser"] == 0.0
    assert m["detection_tpr"] == 1.0
    assert m["mse"] == 0.0
    assert m["detection_rate_pixels"] == pytest.approx(4 / geometry.n_p)


def test_compute_metrics_missed_vehicle():
    cfg = desk_config()
    geometry, _ = _build_context(cfg)
    truth = sample_scene(geometry, 4, 0.1, rng_seed=0)
    p = truth.p.copy()
    s = truth.s.copy()
    drop = int(np.flatnonzero(p)[0])
    p[drop] = 0.0
    s[drop] = 0.0
    est = Estimate(p_hat=p, s_hat=s, x_hat=truth.x.copy(), iteration=1,
                   residual=0.0)
    m = compute_metrics(truth, est)
    assert m["detection_tpr"] == pytest.approx(0.75)
    assert m["ser"] == pytest.approx(0.25)  # the miss counts as an error


def test_run_trial_structure():
    cfg = desk_config()
    geometry, channels = _build_context(cfg)
    out = run_trial(cfg, geometry, channels, (10.0, 0.1, 12, 30.0), 0)
    for algo in ("ao", "baseline"):
        metrics, trace = out[algo]
        assert set(metrics) == {"detection_rate_pixels", "detection_tpr",
                                "ser", "mse"}
        assert len(trace.records) >= 1
    assert len(out["baseline"][1].records) == 1


def test_run_sweep_outputs(tmp_path):
    cfg = desk_config(snr_db=(10.0, 20.0), trials=3,
                      out_dir=str(tmp_path / "out"))
    metric_rows, conv_rows = run_sweep(cfg)
    assert (tmp_path / "out" / "metrics.csv").exists()
    assert (tmp_path / "out" / "convergence.csv").exists()
    # Two cells, two algorithms each.
    assert len(metric_rows) == 4
    assert {r["algorithm"] for r in metric_rows} == {"ao", "baseline"}
    assert all(r["trials"] == 3 and r["aborts"] == 0 for r in metric_rows)
    assert conv_rows[0]["iteration"] == 0
    header = (tmp_path / "out" / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("algorithm,snr_db,")


def test_run_sweep_deterministic(tmp_path):
    cfg = desk_config(snr_db=(10.0,), trials=2)
    run_sweep(cfg, out_dir=str(tmp_path / "a"))
    run_sweep(cfg, out_dir=str(tmp_path / "b"))
    for name in ("metrics.csv", "convergence.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_thread_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("ISACPIX_THREADS", "2")
    cfg = desk_config(snr_db=(10.0, 20.0), trials=2)
    rows, _ = run_sweep(cfg, out_dir=str(tmp_path / "out"))
    assert len(rows) == 4


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def test_cli_sweep_and_demo(tmp_path, capsys):
    cfg = desk_config(snr_db=(10.0,), trials=2)
    ini = tmp_path / "exp.ini"
    save_config(cfg, ini)
    assert main(["sweep", "--config", str(ini),
                 "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "metrics.csv").exists()
    assert main(["demo", "--config", str(ini)]) == 0
    out = capsys.readouterr().out
    assert "final metrics (ao)" in out


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sweep]\nwarp_factor = 9\n")
    assert main(["sweep", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_channel_dump(tmp_path, capsys):
    assert main(["channel-dump", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "channels.bin").exists()
