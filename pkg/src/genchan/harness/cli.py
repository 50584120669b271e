"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file format
error, 3 numerical failure.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .. import baselines, gce
from ..channel import ChannelConfig, flat_to_tensor, generate_dataset, normalize, \
    random_channel, read_dataset, stream, write_dataset
from ..errors import ArgumentError, ConfigError, FormatError, GenchanError, NumericalError, PlotError
from ..genprior import TrainerConfig, critic_spec, generator_spec, load_weights, save_weights, \
    wgan_train
from ..measurement import PilotMatrix, gen_pilots, measure, n_pilots, quantize_measurement, read_measurement, \
    write_measurement
from .config import load_config
from .metrics import nmse, scaled_nmse, to_db
from .plots import emit_plots
from .sweep import format_csv, run_sweep, timing_benchmark, write_csv

log = logging.getLogger("genchan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors map to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _channel_args(p):
    g = p.add_argument_group("channel model")
    g.add_argument("--n-r", type=int, default=16, help="receive antennas (default 16)")
    g.add_argument("--n-t", type=int, default=64, help="transmit antennas (default 64)")
    g.add_argument("--spacing", type=float, default=0.1, help="element spacing in wavelengths (default 0.1)")
    g.add_argument("--clusters", type=int, default=3, help="number of clusters (default 3)")
    g.add_argument("--rays", type=int, default=10, help="rays per cluster (default 10)")
    g.add_argument("--angular-spread-deg", type=float, default=5.0, help="per-cluster angular spread (default 5)")


def _channel_config(args):
    return ChannelConfig(n_r=args.n_r, n_t=args.n_t, spacing=args.spacing, n_clusters=args.clusters,
                         rays_per_cluster=args.rays, angular_spread=math.radians(args.angular_spread_deg))


def _sweep_args(p):
    p.add_argument("--config", help="INI experiment file; presets are used when omitted")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry (repeatable), e.g. experiment.trials=10")
    p.add_argument("--output-dir", help="directory for CSV and SVG output (overrides the config)")


def build_parser():
    parser = _Parser(prog="genchan", description="Generative-prior MIMO channel estimation tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a channel dataset (GCH1)")
    _channel_args(p)
    p.add_argument("--count", type=int, default=3654, help="number of channels (default 3654)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("-o", "--output", required=True, help="output .gch path")

    p = sub.add_parser("train", help="train a WGAN generator on a GCH1 dataset")
    p.add_argument("dataset", help="input .gch file")
    p.add_argument("-o", "--output", required=True, help="output .ggw weight file")
    p.add_argument("--log", help="per-epoch CSV log (default: <output>.log.csv)")
    p.add_argument("--latent-dim", type=int, default=35, help="latent dimension d (default 35)")
    p.add_argument("--channels", type=int, default=128, help="generator feature channels (default 128)")
    p.add_argument("--epochs", type=int, default=3000, help="training epochs (default 3000)")
    p.add_argument("--lr", type=float, default=5e-5, help="RMSProp learning rate (default 5e-5)")
    p.add_argument("--batch-size", type=int, default=200, help="minibatch size (default 200)")
    p.add_argument("--n-critic", type=int, default=5, help="critic steps per epoch (default 5)")
    p.add_argument("--clip", type=float, default=0.01, help="critic weight clip (default 0.01)")
    p.add_argument("--seed", type=int, default=0, help="seed for initialization and sampling (default 0)")

    p = sub.add_parser("simulate", help="draw one channel and write its measurement (GMS1), pilots and truth")
    _channel_args(p)
    p.add_argument("--alpha", type=float, default=0.4, help="pilot density N_p/N_t (default 0.4)")
    p.add_argument("--snr-db", type=float, default=10.0, help="SNR in dB; 'inf' for noiseless (default 10)")
    p.add_argument("--onebit", action="store_true", help="quantize to one bit per real dimension")
    p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    p.add_argument("-o", "--output", required=True,
                   help="output prefix; writes <prefix>.gms, <prefix>.pilots.npy, <prefix>.h.npy")

    p = sub.add_parser("estimate", help="estimate a channel from one GMS1 measurement")
    p.add_argument("measurement", help="input .gms file")
    p.add_argument("--pilots", required=True, help="pilot matrix as .npy (N_t x N_p complex)")
    p.add_argument("--pilot-scale", type=float, default=1.0, help="pilot amplitude s (default 1)")
    p.add_argument("--estimator", choices=("gce", "omp", "lasso", "gamp"), default="gce",
                   help="estimator (default gce)")
    p.add_argument("--weights", help="generator .ggw file (required for gce)")
    p.add_argument("--iterations", type=int, default=100, help="GCE Adam iterations (default 100)")
    p.add_argument("--lr", type=float, default=1e-2, help="GCE Adam step size (default 1e-2)")
    p.add_argument("--restarts", type=int, default=3, help="GCE random restarts (default 3)")
    p.add_argument("--lambda-reg", default=None,
                   help="GCE latent penalty: a number, or 'noise' for half the noise variance")
    p.add_argument("--model-error", type=float, default=0.0,
                   help="with --lambda-reg noise: relative generator error added to the noise (default 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for latent initialization (default 0)")
    p.add_argument("--truth", help="true channel .npy; adds NMSE to the record")
    p.add_argument("--save", help="write the estimate as .npy")
    p.add_argument("-o", "--output", help="append the JSON record to this file instead of stdout")

    p = sub.add_parser("sweep", help="run an alpha/SNR sweep and write CSV and SVG output")
    _sweep_args(p)
    p.add_argument("--workers", type=int, help="parallel grid points (overrides the config)")

    p = sub.add_parser("bench", help="time solver iterations at each pilot density")
    _sweep_args(p)
    p.add_argument("--alphas", default="0.2,0.4,0.75,1.0", help="comma-separated densities")
    p.add_argument("--snr-db", type=float, default=-10.0, help="SNR in dB (default -10)")

    p = sub.add_parser("inspect-weights", help="summarize a GGW1 weight file")
    p.add_argument("weights", help="input .ggw file")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    return parser


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args):
    if args.count < 1:
        raise ArgumentError("--count must be >= 1")
    cfg = _channel_config(args)
    data = generate_dataset(cfg, args.count, args.seed)
    write_dataset(args.output, data)
    print(f"wrote {args.count} channels of {cfg.n_r}x{cfg.n_t} to {args.output}")


def cmd_train(args):
    channels, stats = read_dataset(args.dataset)
    n_r, n_t = stats.n_r, stats.n_t
    x = flat_to_tensor(normalize(channels, stats), n_r, n_t)
    gs = generator_spec(n_r, n_t, latent_dim=args.latent_dim, channels=args.channels)
    cs = critic_spec(n_r, n_t)
    tc = TrainerConfig(n_critic=args.n_critic, clip=args.clip, lr=args.lr,
                       batch_size=args.batch_size, epochs=args.epochs)
    rng = np.random.default_rng(args.seed)
    start = time.perf_counter()

    def progress(epoch, history):
        if (epoch + 1) % 100 == 0:
            log.info("epoch %d/%d  W=%.5f  %.0fs", epoch + 1, args.epochs, history.wasserstein[-1],
                     time.perf_counter() - start)

    result = wgan_train(x, gs, cs, tc, rng, callback=progress)
    store = replace(result.generator, stats=stats)
    save_weights(args.output, gs, store)
    log_path = args.log or args.output + ".log.csv"
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "wasserstein", "generator_loss", "critic_max_abs"))
        n_c = tc.n_critic
        for e, (wd, gl) in enumerate(zip(result.log.wasserstein, result.log.generator_loss)):
            w.writerow((e, f"{wd:.8g}", f"{gl:.8g}", f"{result.log.critic_max_abs[(e + 1) * n_c - 1]:.8g}"))
    print(f"wrote {args.output} and {log_path}")


def cmd_simulate(args):
    cfg = _channel_config(args)
    h = random_channel(cfg, stream(args.seed, (0,))).h
    pilot = gen_pilots(cfg.n_t, n_pilots(args.alpha, cfg.n_t), stream(args.seed, (1,)))
    m = measure(h, pilot, args.snr_db, stream(args.seed, (2,)))
    if args.onebit:
        m = quantize_measurement(m)
    write_measurement(args.output + ".gms", m, cfg.n_r)
    np.save(args.output + ".pilots.npy", pilot.p)
    np.save(args.output + ".h.npy", h)
    print(f"wrote {args.output}.gms, {args.output}.pilots.npy, {args.output}.h.npy")


def _load_npy(path, what):
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read {what} from {path}: {exc}") from exc
    if arr.ndim != 2:
        raise FormatError(f"{what} in {path} must be 2-D, got shape {arr.shape}")
    return arr.astype(complex)


def _lambda(text):
    if text is None:
        return None
    if text.strip().lower() == "noise":
        return "noise"
    try:
        return float(text)
    except ValueError as exc:
        raise ArgumentError(f"--lambda-reg must be a number or 'noise', got {text!r}") from exc


def cmd_estimate(args):
    m, n_r = read_measurement(args.measurement)
    pilot = PilotMatrix(_load_npy(args.pilots, "pilots"), s=args.pilot_scale)
    if pilot.p.shape[1] * n_r != m.y.size:
        raise FormatError(f"pilots have {pilot.p.shape[1]} columns but the measurement holds "
                          f"{m.y.size // n_r} per antenna")
    mode = "onebit" if m.is_onebit else "fullres"
    record = {"estimator": args.estimator, "mode": mode, "n_r": n_r, "n_t": pilot.p.shape[0],
              "n_p": pilot.p.shape[1]}
    if args.estimator == "gce":
        if not args.weights:
            raise ArgumentError("--weights is required for the gce estimator")
        spec, store = load_weights(args.weights)
        prior = gce.GenerativePrior(spec, store)
        if (prior.n_r, prior.n_t) != (n_r, pilot.p.shape[0]):
            raise ArgumentError(f"generator is {prior.n_r}x{prior.n_t}, measurement {n_r}x{pilot.p.shape[0]}")
        cfg = gce.GceConfig(lambda_reg=_lambda(args.lambda_reg), iterations=args.iterations, lr=args.lr,
                            restarts=args.restarts, model_error=args.model_error)
        res = gce.estimate(m, pilot, prior, cfg, mode=mode, rng=np.random.default_rng(args.seed))
        record.update(res.to_record(include_h=False))
        h_hat = res.h_hat
    else:
        system = baselines.beamspace_system(pilot, n_r)
        h_hat, est = baselines.estimate_channel(args.estimator, m.y, system, m.noise_var, onebit=m.is_onebit)
        record.update(iterations=est.iterations_used, wall_time_per_iteration=est.wall_time_per_iteration,
                      residual_norm=est.residual_norm)
    if args.truth:
        h = _load_npy(args.truth, "true channel")
        record["nmse_db"] = to_db(nmse(h, h_hat))
        record["scaled_nmse_db"] = to_db(scaled_nmse(h, h_hat))
    if args.save:
        np.save(args.save, h_hat)
    line = json.dumps(record, sort_keys=True, default=float)
    if args.output:
        with open(args.output, "a") as fh:
            fh.write(line + "\n")
    else:
        print(line)


def _experiment(args, extra=()):
    overrides = list(args.overrides) + list(extra)
    if args.output_dir:
        overrides.append(f"experiment.output_dir={args.output_dir}")
    return load_config(args.config, overrides)


def _plot_all(table, config, kinds):
    y = "scaled_nmse_db" if config.mode == "onebit" else None
    written = []
    for kind in kinds:
        try:
            written.extend(emit_plots(table, kind, config.output_dir,
                                      y=y if kind.startswith("nmse") else None,
                                      title=f"{config.scenario} {config.mode}"))
        except PlotError as exc:
            log.warning("skipping %s plot: %s", kind, exc)
    return written


def cmd_sweep(args):
    extra = [f"experiment.workers={args.workers}"] if args.workers else []
    config = _experiment(args, extra)
    table = run_sweep(config)
    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, "results.csv")
    write_csv(table, path)
    failures = sum(r.failures for r in table.rows)
    written = _plot_all(table, config, ("nmse_vs_snr", "nmse_vs_alpha", "se_vs_snr"))
    print(f"wrote {path} ({len(table.rows)} rows, {failures} failed trials) and {len(written)} plot files")


def cmd_bench(args):
    config = _experiment(args)
    try:
        alphas = tuple(float(a) for a in args.alphas.split(","))
    except ValueError as exc:
        raise ArgumentError(f"bad --alphas {args.alphas!r}") from exc
    table = timing_benchmark(config, alphas=alphas, snr_db=args.snr_db)
    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, "timing.csv")
    write_csv(table, path)
    _plot_all(table, config, ("timing",))
    sys.stdout.write(format_csv(table))
    lo, hi = min(alphas), max(alphas)
    for name in sorted({r.estimator for r in table.rows}):
        rows = {r.alpha: r.time_per_iteration_ms for r in table.rows if r.estimator == name}
        if rows.get(lo) and math.isfinite(rows[lo]) and math.isfinite(rows.get(hi, math.nan)):
            print(f"{name}: time ratio alpha={hi:g}/alpha={lo:g} = {rows[hi] / rows[lo]:.2f}")


def cmd_inspect_weights(args):
    spec, store = load_weights(args.weights)
    layers = []
    total = 0
    for layer, params, shape in zip(spec.layers, store.params, spec.shapes()):
        n = int(sum(a.size for a in params.values()))
        total += n
        layers.append({"layer": type(layer).__name__, "output_shape": list(shape), "params": n})
    info = {"input_shape": list(spec.input_shape), "output_shape": list(spec.output_shape),
            "layers": layers, "total_params": total, "has_stats": store.stats is not None}
    if store.stats is not None:
        info["n_r"], info["n_t"] = store.stats.n_r, store.stats.n_t
    if args.json:
        print(json.dumps(info, sort_keys=True))
        return
    print(f"input {tuple(spec.input_shape)} -> output {tuple(spec.output_shape)}")
    for i, entry in enumerate(layers):
        print(f"  {i:2d} {entry['layer']:<12} {str(tuple(entry['output_shape'])):<18} {entry['params']:>9}")
    print(f"total parameters: {total}")
    print("normalization stats: " + (f"{info['n_r']}x{info['n_t']}" if store.stats is not None else "none"))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "inspect-weights": cmd_inspect_weights,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ArgumentError, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GenchanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK
