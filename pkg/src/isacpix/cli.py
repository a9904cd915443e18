"""Command-line front end.

Subcommands: ``sweep`` (run a config file), ``demo`` (single verbose
trial), ``oracle`` (tiny-instance exhaustive comparison), and
``channel-dump`` (emit the gain matrices as a binary cache).
"""
import argparse
import math
import os
import sys

import numpy as np

from .ao import AoOptions, ThresholdSchedule, run_ao
from .channel import build_channels, save_channel_cache
from .gamp import ScatterPrior, SymbolPrior
from .harness import (ExperimentConfig, _build_context, compute_metrics,
                      desk_config, load_config, run_sweep, run_trial)
from .measure import synthesize
from .scene import ConfigurationError, QPSK, build_geometry, sample_scene


def _add_common(p):
    p.add_argument("--config", default=None, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker count")


def _load(args):
    cfg = load_config(args.config) if args.config else desk_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def cmd_sweep(args):
    cfg = _load(args)
    metric_rows, _ = run_sweep(cfg)
    print(f"wrote {len(metric_rows)} metric rows to "
          f"{os.path.join(cfg.out_dir, 'metrics.csv')}")
    return 0


def cmd_demo(args):
    cfg = _load(args)
    geometry, channels = _build_context(cfg)
    cell = (cfg.snr_db[0], cfg.gamma_s[0], cfg.n_vehicles[0], cfg.speed[0])
    result = run_trial(cfg, geometry, channels, cell, 0, with_baseline=True)
    metrics, trace = result["ao"]
    print(f"demo trial: snr={cell[0]} dB, gamma_s={cell[1]}, "
          f"n_vehicles={cell[2]}, speed={cell[3]} m/s, seed={cfg.seed}")
    print(f"{'t':>3} {'residual':>14} {'delta':>12} {'ser':>8} {'mse':>10} "
          f"{'active':>7}")
    for rec in trace.records:
        delta = f"{rec.delta:.4g}" if math.isfinite(rec.delta) else "inf"
        print(f"{rec.t:>3} {rec.residual:>14.6e} {delta:>12} "
              f"{rec.ser:>8.3f} {rec.mse:>10.4e} {rec.n_active:>7}")
    print(f"stopped: {trace.stopped}")
    print("final metrics (ao):      " + "  ".join(
        f"{k}={v:.6g}" for k, v in metrics.items()))
    print("final metrics (baseline): " + "  ".join(
        f"{k}={v:.6g}" for k, v in result["baseline"][0].items()))
    return 0


def exhaustive_search(batch, channels, n_vehicles=1, constellation=QPSK):
    """Brute-force minimization of ||y - h s||^2 over tiny instances.

    Enumerates every occupied-pixel choice and constellation assignment;
    only meant for oracle-scale problems.
    """
    from itertools import combinations, product
    n_p = channels.n_p
    best = (math.inf, None, None)
    for occ in combinations(range(n_p), n_vehicles):
        for syms in product(range(len(constellation)), repeat=n_vehicles):
            p = np.zeros(n_p)
            s = np.zeros(n_p, dtype=complex)
            p[list(occ)] = 1.0
            s[list(occ)] = constellation[list(syms)]
            model = ((p @ channels.h_v) @ s)
            cost = float(np.linalg.norm(batch.y - model) ** 2)
            if cost < best[0]:
                best = (cost, p, s)
    return best[1], best[2]


def oracle_trial(seed):
    """One tiny noiseless instance: alternating solver vs exhaustion."""
    geometry = build_geometry(3.0, 3.0, (1.5, 1.5), (1.5, 1.5), n_bs=8)
    channels = build_channels(geometry)
    truth = sample_scene(geometry, 1, 0.0, rng_seed=seed)
    batch = synthesize(truth, channels, math.inf, rng_seed=seed)
    sym_prior = SymbolPrior.qpsk(0.25)
    sct_prior = ScatterPrior(gamma=0.05, theta=1.0, sigma=0.2)
    est, _ = run_ao(batch, channels, sym_prior, sct_prior,
                    ThresholdSchedule(), AoOptions(), truth=truth)
    p_ref, s_ref = exhaustive_search(batch, channels, n_vehicles=1)
    agree = (np.array_equal(est.p_hat, p_ref)
             and np.allclose(est.s_hat, s_ref, atol=1e-9))
    return agree


def cmd_oracle(args):
    trials = 20
    base = args.seed if args.seed is not None else 0
    agreed = sum(oracle_trial(base + i) for i in range(trials))
    verdict = "AGREE" if agreed == trials else "DISAGREE"
    print(f"oracle comparison: alternating solver matched exhaustive search "
          f"in {agreed}/{trials} trials -> {verdict}")
    return 0 if agreed == trials else 1


def cmd_channel_dump(args):
    cfg = _load(args)
    geometry, channels = _build_context(cfg)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "channels.bin")
    save_channel_cache(path, channels, geometry)
    diag = np.abs(np.diagonal(channels.h_v, axis1=1, axis2=2))
    off = np.abs(channels.h_v[:, ~np.eye(channels.n_p, dtype=bool)])
    print(f"wrote {path}: K={channels.k}, N_p={channels.n_p}, "
          f"N_s={channels.n_s}, wavelength={channels.wavelength:.6g} m")
    print(f"mean diagonal power {np.mean(diag ** 2):.6e}, "
          f"mean off-diagonal power {np.mean(off ** 2):.6e}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="isacpix",
        description="Joint communication, positioning, and sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("sweep", cmd_sweep), ("demo", cmd_demo),
                     ("oracle", cmd_oracle), ("channel-dump", cmd_channel_dump)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
