"""Command-line entry point: ``quakeinv {forward,sample,diagnose,sensitivity,synth}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .forward import ForwardFailure
from .geometry import PARAM_NAMES, EarthquakeParams
from .mcmc import ResampleError, SampleStore, SamplerInitError, diagnostics, run_sampler
from .obsmodel import ObservationConfigError
from .priors import PriorConfigError, PriorSpec
from .sensitivity import (
    ScoreDomainError,
    expectation_bounds,
    fim_from_store,
    perturbation_table,
    sensitivity_table,
    write_bounds,
    write_fim,
    write_perturbation_table,
    write_sensitivity_table,
)
from .synth import NoiseSpec, SyntheticScenarioError, generate_synthetic_scenario, synthetic_scenario, synthetic_truth, write_synthetic_basin

log = logging.getLogger("quakeinv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _with_seed(cfg: ScenarioConfig, seed) -> ScenarioConfig:
    if seed is None:
        return cfg
    cfg.seed = seed
    cfg.sampler = dataclasses.replace(cfg.sampler, seed=seed)
    return cfg


def _parse_params(text: str) -> EarthquakeParams:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != len(PARAM_NAMES):
        raise ConfigError(f"--params needs {len(PARAM_NAMES)} values ({', '.join(PARAM_NAMES)})")
    return EarthquakeParams(*vals)


def cmd_forward(args) -> int:
    cfg = load_config(args.config)
    p = _parse_params(args.params)
    out = cfg.scenario().forward(p)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["gauge", "arrival_min", "max_height_m", "inundation_m"])
    for name, o in out.gauges.items():
        w.writerow([name, repr(o.arrival), repr(o.max_height), repr(o.inundation)])
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    workers = args.workers if args.workers is not None else cfg.sampler.n_chains
    model = cfg.model()
    initial = None if args.resume else cfg.initial_states()
    res = run_sampler(cfg.sampler, model, initial, cfg.output_dir, workers=workers, resume=args.resume)
    print(f"wrote {res.samples_path}")
    print("acceptance: " + " ".join(f"{a:.3f}" for a in res.acceptance))
    return EXIT_OK


def _load_store(cfg):
    path = cfg.output_dir / "samples.csv"
    return SampleStore.read(path)


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    store = _load_store(cfg)
    rep = diagnostics(store, cfg.sampler.posterior_start, window=args.window)
    out = cfg.output_dir
    with (out / "diagnostics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = store.param_names
        w.writerow(["step"] + [f"{p}_{s}" for p in names for s in ("mean", "std")])
        for k, step in enumerate(rep.steps):
            w.writerow([int(step)] + [repr(float(v)) for p in names for v in (rep.rolling_mean[p][k], rep.rolling_std[p][k])])
    with (out / "acceptance.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "acceptance_rate"])
        for c, a in rep.acceptance.items():
            w.writerow([c, repr(a)])
    with (out / "posterior_summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        stats = ["mean", "std", "q05", "q25", "q50", "q75", "q95"]
        w.writerow(["parameter"] + stats + ["map", "mle"])
        for p, s in rep.summary.items():
            w.writerow([p] + [repr(s[k]) for k in stats] + [repr(rep.map_record[p]), repr(rep.mle_record[p])])
    post = store.subset(store.posterior_mask(cfg.sampler.posterior_start))
    with (out / "predictive.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "bin_lo", "bin_hi", "count"])
        for col in store.output_names:
            v = post.columns[col]
            v = v[np.isfinite(v)]
            if v.size == 0:
                continue
            counts, edges = np.histogram(v, bins=args.bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([col, repr(float(lo)), repr(float(hi)), int(c)])
    print(f"posterior set: {rep.n_posterior} records")
    for p, s in rep.summary.items():
        print(f"{p:>13s}  mean {s['mean']:.4g}  std {s['std']:.3g}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config)
    obs = cfg.load_data()["observations"]
    store = _load_store(cfg)
    start = cfg.sampler.posterior_start
    I = fim_from_store(store, obs, start, cfg.fim_mode)
    out = cfg.output_dir
    write_fim(out / "fim.csv", I)
    write_perturbation_table(out / "perturbation.csv", perturbation_table(I, cfg.rel_perturbation))
    post = store.subset(store.posterior_mask(start))
    samples = {p: post.columns[p] for p in store.param_names}
    write_sensitivity_table(out / "sensitivity.csv", sensitivity_table(samples, I, cfg.rel_perturbation))
    write_bounds(out / "bounds.csv", {p: expectation_bounds(f) for p, f in samples.items()})
    if I.n_excluded:
        print(f"{I.n_excluded} samples outside an observation's support were excluded", file=sys.stderr)
    print(f"wrote fim.csv, perturbation.csv, sensitivity.csv, bounds.csv to {out}")
    return EXIT_OK


_INI_TEMPLATE = """\
# Synthetic scenario: flat 4000 m basin, straight trench, known source.
[files]
geometry = geometry.csv
bathymetry = bathymetry.asc
gauges = gauges.csv
observations = observations.csv
output_dir = output

[simulation]
duration_min = {duration!r}

[sampler]
seed = {seed}
n_chains = 4
total_steps = 5000
resample_steps = 1000
burn_in = 0
initial = prior
"""


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    truth = synthetic_truth()
    if args.truth:
        truth = _parse_params(args.truth)
    scenario = synthetic_scenario(duration=args.duration)
    noise = NoiseSpec(height_rel=args.height_rel, arrival_sigma=args.arrival_sigma)
    write_synthetic_basin(out, scenario)
    generate_synthetic_scenario(truth, noise, out, scenario, PriorSpec())
    (out / "scenario.ini").write_text(_INI_TEMPLATE.format(duration=args.duration, seed=args.seed or 0))
    print(f"wrote synthetic scenario to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quakeinv", description="Bayesian earthquake-source inversion from tsunami observations.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and forward-model failures")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="run the forward model once and print gauge observables")
    p.add_argument("config")
    p.add_argument("--params", required=True, help="lat, lon, depth_offset, magnitude, dlogl, dlogw")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("sample", help="run (or resume) the multi-chain sampler")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: one per chain)")
    p.add_argument("--resume", default=None, metavar="CHECKPOINT")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="rolling statistics, acceptance, MAP/MLE, predictive histograms")
    p.add_argument("config")
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--bins", type=int, default=30)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sensitivity", help="Fisher information, relative-entropy table, bounds")
    p.add_argument("config")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("synth", help="write a synthetic scenario with a known source")
    p.add_argument("out_dir")
    p.add_argument("--truth", default=None, help="lat, lon, depth_offset, magnitude, dlogl, dlogw")
    p.add_argument("--height-rel", type=float, default=0.10)
    p.add_argument("--arrival-sigma", type=float, default=2.0)
    p.add_argument("--duration", type=float, default=45.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ObservationConfigError, SamplerInitError, SyntheticScenarioError, PriorConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ForwardFailure, ResampleError, ScoreDomainError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
