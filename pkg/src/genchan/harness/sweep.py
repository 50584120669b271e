"""Paired-trial sweeps over pilot density and SNR, timing runs, and CSV tables.

Every estimator at a grid point sees the same channel, pilots and noise.
Channels depend only on the trial index, so the same channels recur across
the whole grid; pilots depend on (alpha, trial) and noise on
(alpha, snr, trial).
"""
import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from .. import baselines, gce, precoding
from ..channel import random_channel, stream
from ..errors import ArgumentError, FormatError, GenchanError
from ..genprior.weights import load_weights
from ..measurement import gen_pilots, measure, n_pilots, quantize_measurement
from .metrics import nmse, scaled_nmse, to_db

SCHEMA_VERSION = 1
TIMING_ALPHAS = (0.2, 0.4, 0.75, 1.0)
TIMING_SNR_DB = -10.0

# spawn-key prefixes for the paired streams
_CHANNEL, _PILOT, _NOISE, _LATENT = 0, 1, 2, 3


@dataclass(frozen=True, order=True)
class ResultRow:
    estimator: str
    alpha: float
    snr_db: float
    d: int
    nmse_db: float
    scaled_nmse_db: float
    spectral_efficiency: float
    time_per_iteration_ms: float
    trials: int
    failures: int


@dataclass
class ResultTable:
    rows: tuple
    trial_log: tuple = ()

    def select(self, **match):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def row(self, **match):
        found = self.select(**match)
        if len(found) != 1:
            raise ArgumentError(f"expected one row for {match}, found {len(found)}")
        return found[0]


@dataclass(frozen=True)
class TrialRecord:
    estimator: str
    alpha: float
    snr_db: float
    d: int
    trial: int
    y_checksum: str
    nmse: float
    scaled_nmse: float
    spectral_efficiency: float
    time_per_iteration: float
    failed: bool


def checksum(y):
    return hashlib.sha256(np.ascontiguousarray(y, dtype=np.complex128).tobytes()).hexdigest()[:16]


def load_priors(config):
    """``{d: GenerativePrior}`` for every configured latent dimension."""
    priors = {}
    for d in config.latent_dims:
        spec, store = load_weights(config.weights[d])
        prior = gce.GenerativePrior(spec, store)
        if prior.latent_dim != d:
            raise ArgumentError(f"weights for d={d} have latent dim {prior.latent_dim}")
        priors[d] = prior
    return priors


def _dictionary(config):
    n_cand = config.precoding.n_cand or 2 * config.channel.n_t
    return precoding.build_dictionary(config.channel.tx, n_cand)


def _spectral_efficiency(config, dictionary, h, h_hat, snr_db):
    if not config.precoding.enabled or not np.any(h_hat):
        return math.nan
    p = config.precoding
    f = precoding.hybrid_precoder_omp(h_hat, dictionary, p.n_rf, p.n_s)
    return precoding.spectral_efficiency(h, f, 10.0 ** (snr_db / 10.0))


def _onebit_noise_var(snr_db):
    """Noise share of the unit per-sample power left after one-bit quantization."""
    return 1.0 / (1.0 + 10.0 ** (snr_db / 10.0))


def _run_point(config, priors, ai, si, dictionary=None):
    """All trials and estimators for one (alpha, snr) grid point."""
    alpha, snr_db = config.alphas[ai], config.snrs_db[si]
    dictionary = _dictionary(config) if dictionary is None else dictionary
    n_t, n_r = config.channel.n_t, config.channel.n_r
    onebit = config.mode == "onebit"
    records = []
    for t in range(config.trials):
        h = random_channel(config.channel, stream(config.seed, (_CHANNEL, t))).h
        pilot = gen_pilots(n_t, n_pilots(alpha, n_t), stream(config.seed, (_PILOT, ai, t)))
        m = measure(h, pilot, snr_db, stream(config.seed, (_NOISE, ai, si, t)))
        if onebit:
            m = quantize_measurement(m)
        y_sum = checksum(m.y)
        system = None
        for name in config.estimators:
            dims = config.latent_dims if name == "gce" else (0,)
            for di, d in enumerate(dims):
                h_hat, per_iter = None, math.nan
                try:
                    if name == "perfect":
                        h_hat = h
                    elif name == "gce":
                        res = gce.estimate(m, pilot, priors[d], config.gce, mode=config.mode,
                                           rng=stream(config.seed, (_LATENT, ai, si, di, t)))
                        h_hat, per_iter = res.h_hat, res.wall_time_per_iteration
                    else:
                        if system is None:
                            system = baselines.beamspace_system(pilot, n_r)
                        nv = _onebit_noise_var(snr_db) if onebit else m.noise_var
                        h_hat, est = baselines.estimate_channel(name, m.y, system, nv, onebit=onebit)
                        per_iter = est.wall_time_per_iteration
                    err = nmse(h, h_hat)
                    err_s = scaled_nmse(h, h_hat)
                    se = _spectral_efficiency(config, dictionary, h, h_hat, snr_db)
                    ok = math.isfinite(err)
                except (GenchanError, ArithmeticError, np.linalg.LinAlgError):
                    err = err_s = se = math.nan
                    ok = False
                records.append(TrialRecord(name, alpha, snr_db, d, t, y_sum, err, err_s, se, per_iter, not ok))
    return records


def _aggregate(records, timing):
    groups = {}
    for r in records:
        groups.setdefault((r.estimator, r.alpha, r.snr_db, r.d), []).append(r)
    rows = []
    for (name, alpha, snr_db, d), rs in groups.items():
        good = [r for r in rs if not r.failed]
        if good:
            err = to_db(float(np.mean([r.nmse for r in good])))
            err_s = to_db(float(np.mean([r.scaled_nmse for r in good])))
            ses = [r.spectral_efficiency for r in good if math.isfinite(r.spectral_efficiency)]
            se = float(np.mean(ses)) if ses else math.nan
            times = [r.time_per_iteration for r in good if math.isfinite(r.time_per_iteration)]
            ms = 1e3 * float(np.median(times)) if timing and times else math.nan
        else:
            err = err_s = se = ms = math.nan
        rows.append(ResultRow(name, alpha, snr_db, d, err, err_s, se, ms, len(rs), len(rs) - len(good)))
    return tuple(sorted(rows))


def _point_task(args):
    config, priors, ai, si = args
    return _run_point(config, priors, ai, si)


def run_sweep(config, priors=None):
    """Run every estimator over the (alpha, snr) grid.

    Parameters
    ----------
    config : ExperimentConfig
    priors : dict, optional
        ``{d: GenerativePrior}``; loaded from ``config.weights`` when omitted
        and GCE is requested.

    Returns
    -------
    ResultTable
        Rows sorted by (estimator, alpha, snr, d). Timing columns are left
        empty so that equal seeds give byte-identical CSV output.
    """
    config.validate(check_files=priors is None)
    if priors is None:
        priors = load_priors(config) if "gce" in config.estimators else {}
    points = [(ai, si) for ai in range(len(config.alphas)) for si in range(len(config.snrs_db))]
    records = []
    if config.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for recs in pool.map(_point_task, [(config, priors, ai, si) for ai, si in points]):
                records.extend(recs)
    else:
        dictionary = _dictionary(config)
        for ai, si in points:
            records.extend(_run_point(config, priors, ai, si, dictionary))
    return ResultTable(rows=_aggregate(records, timing=False), trial_log=tuple(sorted(records, key=_record_key)))


def _record_key(r):
    return (r.estimator, r.alpha, r.snr_db, r.d, r.trial)


def timing_benchmark(config, priors=None, alphas=TIMING_ALPHAS, snr_db=TIMING_SNR_DB):
    """Median wall-clock time per solver iteration at each pilot density.

    Runs serially regardless of ``config.workers``.
    """
    bench = replace(config, alphas=tuple(alphas), snrs_db=(snr_db,), workers=1,
                    precoding=replace(config.precoding, enabled=False))
    bench.validate(check_files=priors is None)
    if priors is None:
        priors = load_priors(bench) if "gce" in bench.estimators else {}
    records = []
    for ai in range(len(bench.alphas)):
        records.extend(_run_point(bench, priors, ai, 0))
    return ResultTable(rows=_aggregate(records, timing=True), trial_log=tuple(sorted(records, key=_record_key)))


# -- CSV --------------------------------------------------------------------------

COLUMNS = tuple(f.name for f in fields(ResultRow))


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def format_csv(table):
    buf = io.StringIO()
    buf.write(f"# genchan-results schema={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in table.rows:
        w.writerow([_fmt(v) for v in astuple(row)])
    return buf.getvalue()


def write_csv(table, path):
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(table))


def read_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# genchan-results schema={SCHEMA_VERSION}":
            raise FormatError(f"unexpected schema line {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != COLUMNS:
            raise FormatError(f"unexpected CSV header {header}")
        rows = []
        for rec in reader:
            if len(rec) != len(COLUMNS):
                raise FormatError(f"row has {len(rec)} fields, expected {len(COLUMNS)}")
            rows.append(ResultRow(rec[0], float(rec[1]), float(rec[2]), int(rec[3]), float(rec[4]), float(rec[5]),
                                  float(rec[6]), float(rec[7]), int(rec[8]), int(rec[9])))
    return ResultTable(rows=tuple(rows))
