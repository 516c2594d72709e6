"""Command-line front end.

    perturbvamp run --config exp.cfg --out results/
    perturbvamp demo [--seed 0] [--modes oracle,pi,pc]
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .denoiser import BernoulliGaussianPrior
from .harness import (
    ExperimentSpec,
    active_fraction,
    default_threads,
    load_coefficients,
    run_experiment,
    write_aggregate_csv,
    write_trace_csv,
)
from .solver import Mode, VampConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

# key -> (default, description); order is the manifest order
CONFIG_KEYS = {
    "experiment": ("experiment", "name written to the first CSV column"),
    "n": ("512", "signal length N"),
    "ratio": ("0.5", "measurement ratio M/N"),
    "rho": ("0.2", "prior activity probability"),
    "mu_x": ("0", "prior slab mean"),
    "sigma_x2": ("1", "prior slab variance"),
    "perturbation.kind": ("gaussian", "gaussian | iid | circulant"),
    "perturbation.decay": ("0.3", "circulant generator a_i = decay**i"),
    "snr_w_db": ("30", "signal-to-noise ratio in dB"),
    "snr_e_db": ("20", "SNR_e in dB, scalar or comma list; inf disables the perturbation"),
    "snr_e_ref": ("signal", "signal: ||Ax||^2/||dAx||^2, noise: ||dAx||^2/||w||^2"),
    "trials": ("1", "Monte-Carlo trials"),
    "seed": ("0", "base seed; trial t uses seed + t"),
    "modes": ("oracle,pi,pc", "comma list of oracle, pi, pc"),
    "max_iters": ("60", "iterations per run"),
    "gamma1_init": ("1e-4", "initial message precision"),
    "damping": ("1.0", "message damping in (0, 1]"),
    "stop_tol": ("0", "relative-change stopping tolerance, 0 runs max_iters"),
    "whitening": ("eigh", "eigh | cholesky"),
    "coeff_path": ("", "optional coefficient file replacing the random signal"),
}

CONFIG_HELP = "config file keys (key = value, '#' starts a comment):\n" + "\n".join(
    f"  {k:<20} {desc} [default {d or 'none'}]" for k, (d, desc) in CONFIG_KEYS.items()
)


class ConfigError(ValueError):
    pass


def parse_config(text):
    """Parse ``key = value`` lines; unknown or repeated keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def resolve(values, notify=None):
    """Fill in defaults (announcing each through ``notify``)."""
    resolved = {}
    for key, (default, _) in CONFIG_KEYS.items():
        if key in values:
            resolved[key] = values[key]
        else:
            resolved[key] = default
            if notify is not None:
                notify(f"note: {key} not set, using default {default!r}")
    return resolved


def _float_list(text):
    return tuple(float(s) for s in text.split(",") if s.strip())


def _modes(text):
    modes = tuple(Mode(s.strip().lower()) for s in text.split(",") if s.strip())
    if not modes:
        raise ValueError("no modes given")
    return modes


def build_spec(cfg):
    """ExperimentSpec from a resolved key -> string mapping."""
    try:
        prior = BernoulliGaussianPrior(float(cfg["rho"]), float(cfg["mu_x"]), float(cfg["sigma_x2"]))
        solver = VampConfig(
            max_iters=int(cfg["max_iters"]),
            gamma1_init=float(cfg["gamma1_init"]),
            damping=float(cfg["damping"]),
            stop_tol=float(cfg["stop_tol"]),
            whitening=cfg["whitening"],
        )
        if solver.whitening not in ("eigh", "cholesky"):
            raise ValueError(f"unknown whitening {solver.whitening!r}")
        return ExperimentSpec(
            name=cfg["experiment"],
            N=int(cfg["n"]),
            measurement_ratio=float(cfg["ratio"]),
            prior=prior,
            perturbation=cfg["perturbation.kind"],
            circulant_decay=float(cfg["perturbation.decay"]),
            snr_w_db=float(cfg["snr_w_db"]),
            snr_e_db=_float_list(cfg["snr_e_db"]),
            snr_e_reference=cfg["snr_e_ref"],
            trials=int(cfg["trials"]),
            seed=int(cfg["seed"]),
            modes=_modes(cfg["modes"]),
            solver=solver,
            coeff_path=cfg["coeff_path"] or None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def manifest_text(cfg, extra=()):
    lines = [f"# perturbvamp {__version__}", "# rerun: perturbvamp run --config manifest.txt --out DIR"]
    lines += [f"# {line}" for line in extra]
    lines += [f"{key} = {cfg[key]}" for key in CONFIG_KEYS]
    return "\n".join(lines) + "\n"


def cmd_run(config_path, out_dir, seed=None, threads=None, modes=None):
    """Run the configured experiment and write trace.csv, aggregate.csv, manifest.txt."""
    try:
        with open(config_path, encoding="utf-8") as fh:
            values = parse_config(fh.read())
        if seed is not None:
            values["seed"] = str(seed)
        if modes is not None:
            values["modes"] = modes
        cfg = resolve(values, notify=lambda msg: print(msg, file=sys.stderr))
        spec = build_spec(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    extra = []
    try:
        if spec.coeff_path:
            x = load_coefficients(spec.coeff_path, spec.N)
            extra.append(f"coefficients active fraction = {active_fraction(x):.6g}")
    except OSError as exc:
        print(f"cannot read coefficients: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run_experiment(spec, threads=threads)

    try:
        os.makedirs(out_dir, exist_ok=True)
        write_trace_csv(result, os.path.join(out_dir, "trace.csv"))
        write_aggregate_csv(result, os.path.join(out_dir, "aggregate.csv"))
        with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
            fh.write(manifest_text(cfg, extra))
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO

    for row in result.aggregate:
        print(f"{row.mode.value:>6}  snr_e={row.snr_e_db:g} dB  mean NMSE={row.mean_nmse_db:.2f} dB"
              f"  ({row.trials} ok, {row.diverged} diverged)")
    if result.all_diverged:
        print("every run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def demo_table(seed=0, modes=(Mode.ORACLE, Mode.PI, Mode.PC), n=512, threads=None):
    """Single realization, SNR_w = 30 dB, SNR_e = 20 dB; returns the formatted table."""
    spec = ExperimentSpec(name="demo", N=n, snr_w_db=30.0, snr_e_db=(20.0,), trials=1,
                          seed=seed, modes=modes)
    result = run_experiment(spec, threads=threads)
    trial = result.trials[0]
    header = f"{'iter':>5}" + "".join(f"{m.value:>10}" for m in spec.modes)
    lines = [header]
    for k in range(spec.solver.max_iters):
        cells = []
        for m in spec.modes:
            recs = trial.traces[m]
            cells.append(f"{recs[k].nmse_db:10.2f}" if k < len(recs) else f"{'':>10}")
        lines.append(f"{k:5d}" + "".join(cells))
    lines.append("final" + "".join(f"{trial.final_nmse_db[m]:10.2f}" for m in spec.modes))
    return "\n".join(lines)


def cmd_demo(seed=0, modes=None, n=512, threads=None):
    try:
        modes = _modes(modes) if modes else (Mode.ORACLE, Mode.PI, Mode.PC)
    except ValueError as exc:
        print(f"bad --modes: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"NMSE (dB) per iteration, N={n}, M={n // 2}, SNR_w=30 dB, SNR_e=20 dB, seed={seed}")
    print(demo_table(seed, modes, n, threads))
    return EXIT_OK


def _threads_arg(value):
    if value is not None:
        return value
    return default_threads()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="perturbvamp",
        description="Vector AMP with structured sensing-matrix perturbation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment",
                           epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p_run.add_argument("--config", required=True, help="key = value config file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--modes", help="override the config modes, e.g. pi,pc")
    p_run.add_argument("--threads", type=int,
                       help="worker threads (default: $PERTURBVAMP_THREADS or CPU count)")

    p_demo = sub.add_parser("demo", help="single-realization NMSE-vs-iteration table")
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--modes", help="comma list of oracle, pi, pc")
    p_demo.add_argument("--n", type=int, default=512, help="signal length")
    p_demo.add_argument("--threads", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = _threads_arg(args.threads)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, threads, args.modes)
    return cmd_demo(args.seed, args.modes, args.n, threads)


if __name__ == "__main__":
    sys.exit(main())
