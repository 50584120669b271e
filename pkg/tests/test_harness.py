import json
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_prior
from genchan.channel import ChannelConfig
from genchan.errors import ArgumentError, ConfigError, FormatError, PlotError
from genchan.gce import GceConfig
from genchan.harness import cli
from genchan.harness.config import ExperimentConfig, PrecodingSettings, load_config, preset
from genchan.harness.metrics import nmse, nmse_db, scaled_nmse, to_db
from genchan.harness.plots import emit_plots
from genchan.harness.sweep import (
    ResultRow, ResultTable, format_csv, read_csv, run_sweep, timing_benchmark, write_csv,
)

SVG = "{http://www.w3.org/2000/svg}"


# -- metrics ----------------------------------------------------------------------

def test_nmse_examples(rng):
    h = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    assert nmse(h, h) == 0 and nmse_db(h, h) == -120.0
    assert nmse(h, np.zeros_like(h)) == pytest.approx(1.0)
    assert nmse(h, 2 * h) == pytest.approx(1.0)
    assert scaled_nmse(h, 2 * h) == pytest.approx(0.0, abs=1e-28)
    assert scaled_nmse(h, np.zeros_like(h)) == pytest.approx(1.0)
    assert to_db(0.1) == pytest.approx(-10.0)
    with pytest.raises(ArgumentError):
        nmse(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ArgumentError):
        nmse(h, h[:2])


# -- config -----------------------------------------------------------------------

def test_presets():
    smoke = preset("smoke")
    assert (smoke.channel.n_r, smoke.channel.n_t, smoke.latent_dims, smoke.trials) == (4, 16, (8,), 5)
    assert smoke.training.epochs == 200
    full = preset("full")
    assert (full.channel.n_r, full.channel.n_t, full.latent_dims) == (16, 64, (35,))
    with pytest.raises(ConfigError):
        preset("huge")


def test_load_config_with_overrides(tmp_path):
    (tmp_path / "w.ggw").write_bytes(b"")
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[experiment]\npreset = smoke\nalphas = 0.2, 0.4\nsnr_db = -10 0\nmode = onebit   ; one-bit receiver\ntrials = 3\n"
        "[channel]\nangular_spread_deg = 10\n[gce]\nlambda_reg = noise\nmodel_error = 0.25\niterations = 50\n"
        "[weights]\n8 = w.ggw\n"
    )
    cfg = load_config(str(ini), ["experiment.trials=7", "gce.lr=0.05"])
    assert cfg.alphas == (0.2, 0.4) and cfg.snrs_db == (-10.0, 0.0) and cfg.mode == "onebit"
    assert cfg.trials == 7 and cfg.gce.lr == 0.05 and cfg.gce.iterations == 50
    assert cfg.gce.lambda_reg == "noise"
    assert cfg.gce.model_error == 0.25
    assert cfg.channel.angular_spread == pytest.approx(math.radians(10))
    assert cfg.weights[8] == str(tmp_path / "w.ggw")


@pytest.mark.parametrize("text", [
    "[experiment]\nalphas = 0, 0.5\n",
    "[experiment]\ntrials = 0\n",
    "[experiment]\nmode = twobit\n",
    "[experiment]\nbogus = 1\n",
    "[experiment]\nestimators = gce, cosamp\n",
    "[gce]\nlr = fast\n",
    "[channel]\nn_clusters = 0\n",
    "[weights]\neight = x.ggw\n",
    "[experiment]\nestimators = gce\n[weights]\n8 = missing.ggw\n",
])
def test_config_errors(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(ini))


def test_config_missing_file_and_bad_override():
    with pytest.raises(ConfigError):
        load_config("/nonexistent.ini")
    with pytest.raises(ConfigError):
        load_config(None, ["trials=3"])


# -- sweeps -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    prior = make_prior(4, 8, 3, 4, std=0.3)
    cfg = ExperimentConfig(
        scenario="tiny", channel=ChannelConfig(n_r=4, n_t=8), alphas=(0.5, 1.0), snrs_db=(0.0, 10.0),
        latent_dims=(3,), estimators=("perfect", "gce", "omp", "lasso", "gamp"), trials=2, seed=3,
        gce=GceConfig(iterations=10), precoding=PrecodingSettings(n_s=2),
    )
    return cfg, {3: prior}


def test_sweep_rows_and_determinism(tiny):
    cfg, priors = tiny
    a = run_sweep(cfg, priors)
    b = run_sweep(cfg, priors)
    assert len(a.rows) == 5 * 2 * 2
    assert format_csv(a) == format_csv(b)
    assert {(r.estimator, r.d) for r in a.rows} >= {("gce", 3), ("omp", 0)}
    for r in a.rows:
        assert r.trials == 2 and r.failures == 0 and math.isfinite(r.nmse_db)
        assert math.isnan(r.time_per_iteration_ms)
    assert a.row(estimator="perfect", alpha=0.5, snr_db=0.0).nmse_db == -120.0


def test_sweep_pairs_measurements(tiny):
    cfg, priors = tiny
    table = run_sweep(cfg, priors)
    by_key = {}
    for rec in table.trial_log:
        by_key.setdefault((rec.alpha, rec.snr_db, rec.trial), set()).add(rec.y_checksum)
    assert all(len(v) == 1 for v in by_key.values())
    # channels are shared across alphas, noise differs between SNRs
    assert len({next(iter(v)) for v in by_key.values()}) == len(by_key)


def test_sweep_seed_changes_results(tiny):
    cfg, priors = tiny
    a = run_sweep(cfg, priors)
    b = run_sweep(replace(cfg, seed=4), priors)
    assert format_csv(a) != format_csv(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_records_failures(tiny):
    cfg, priors = tiny
    bad = replace(cfg, estimators=("gce", "omp"), gce=GceConfig(iterations=2, lr=float("inf")))
    table = run_sweep(bad, priors)
    gce_rows = table.select(estimator="gce")
    assert all(r.failures == r.trials for r in gce_rows) and all(math.isnan(r.nmse_db) for r in gce_rows)
    assert all(r.failures == 0 for r in table.select(estimator="omp"))


def test_sweep_with_workers_matches_serial(tiny):
    cfg, priors = tiny
    serial = run_sweep(replace(cfg, estimators=("omp", "gamp")), priors)
    parallel = run_sweep(replace(cfg, estimators=("omp", "gamp"), workers=2), priors)
    assert format_csv(serial) == format_csv(parallel)


def test_timing_benchmark(tiny):
    cfg, priors = tiny
    table = timing_benchmark(replace(cfg, trials=1), priors, alphas=(1.0,))
    assert {r.alpha for r in table.rows} == {1.0} and {r.snr_db for r in table.rows} == {-10.0}
    for r in table.rows:
        if r.estimator == "perfect":
            assert math.isnan(r.time_per_iteration_ms)
        else:
            assert r.time_per_iteration_ms > 0


def test_csv_round_trip(tmp_path, tiny):
    cfg, priors = tiny
    table = run_sweep(replace(cfg, estimators=("omp",)), priors)
    path = tmp_path / "r.csv"
    write_csv(table, path)
    assert path.read_text().startswith("# genchan-results schema=1\nestimator,alpha,")
    back = read_csv(path)
    assert format_csv(back) == format_csv(table)
    path.write_text("estimator\n")
    with pytest.raises(FormatError):
        read_csv(path)


# -- plots ------------------------------------------------------------------------

def _row(est="omp", alpha=0.2, snr=0.0, d=0, val=-3.0, se=2.0, ms=1.0):
    return ResultRow(est, alpha, snr, d, val, val, se, ms, 5, 0)


def test_single_row_plot_is_valid_svg(tmp_path):
    svg, csv_path = emit_plots(ResultTable((_row(),)), "nmse_vs_snr", str(tmp_path))
    root = ET.parse(svg).getroot()
    assert len(root.findall(f"{SVG}polyline")) == 1
    assert os.path.isfile(csv_path)


def test_series_count_matches_table(tmp_path):
    rows = tuple(_row(e, a, s) for e in ("omp", "gamp", "gce") for a in (0.2, 0.4) for s in (-10.0, 0.0, 10.0))
    svg, _ = emit_plots(ResultTable(rows), "nmse_vs_snr", str(tmp_path))
    lines = ET.parse(svg).getroot().findall(f"{SVG}polyline")
    assert len(lines) == len({(r.estimator, r.alpha) for r in rows})
    svg, _ = emit_plots(ResultTable(rows), "nmse_vs_alpha", str(tmp_path))
    assert len(ET.parse(svg).getroot().findall(f"{SVG}polyline")) == 9


def test_plots_are_deterministic(tmp_path):
    rows = tuple(_row(e, 0.2, s, val=s / 10) for e in ("omp", "gce") for s in (0.0, 10.0))
    a, _ = emit_plots(ResultTable(rows), "se_vs_snr", str(tmp_path / "a"))
    b, _ = emit_plots(ResultTable(rows), "se_vs_snr", str(tmp_path / "b"))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_plot_missing_column(tmp_path):
    with pytest.raises(PlotError, match="spectral_efficiency"):
        emit_plots(ResultTable((_row(se=float("nan")),)), "se_vs_snr", str(tmp_path))
    with pytest.raises(PlotError, match="nmse_db"):
        emit_plots(ResultTable(()), "nmse_vs_snr", str(tmp_path))
    with pytest.raises(PlotError):
        emit_plots(ResultTable((_row(),)), "histogram", str(tmp_path))


# -- CLI ----------------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    d = str(tmp_path)
    assert cli.main(["gen-data", "--n-r", "4", "--n-t", "8", "--count", "60", "-o", f"{d}/d.gch"]) == 0
    assert cli.main(["train", f"{d}/d.gch", "-o", f"{d}/w.ggw", "--latent-dim", "3", "--channels", "4",
                     "--epochs", "2", "--batch-size", "20"]) == 0
    assert os.path.isfile(f"{d}/w.ggw.log.csv")
    assert cli.main(["inspect-weights", f"{d}/w.ggw", "--json"]) == 0
    assert cli.main(["simulate", "--n-r", "4", "--n-t", "8", "--alpha", "0.5", "-o", f"{d}/m"]) == 0
    capsys.readouterr()
    assert cli.main(["estimate", f"{d}/m.gms", "--pilots", f"{d}/m.pilots.npy", "--weights", f"{d}/w.ggw",
                     "--iterations", "5", "--truth", f"{d}/m.h.npy"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["estimator"] == "gce" and len(rec["loss_trace"]) == 5 and "nmse_db" in rec
    assert cli.main(["estimate", f"{d}/m.gms", "--pilots", f"{d}/m.pilots.npy", "--estimator", "omp"]) == 0


def test_cli_sweep_and_bench(tmp_path):
    out = str(tmp_path / "out")
    args = ["--set", "experiment.estimators=omp,gamp", "--set", "experiment.trials=1",
            "--set", "experiment.alphas=0.5,1.0", "--set", "experiment.snr_db=0,10", "--output-dir", out]
    assert cli.main(["sweep"] + args) == 0
    assert {"results.csv", "nmse_vs_snr.svg", "nmse_vs_alpha.svg"} <= set(os.listdir(out))
    assert cli.main(["bench"] + args) == 0
    assert os.path.isfile(os.path.join(out, "timing.svg"))


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["estimate"]) == 1
    assert cli.main(["sweep", "--set", "experiment.trials=0"]) == 1
    assert cli.main(["inspect-weights", str(tmp_path / "none.ggw")]) == 2
    (tmp_path / "bad.ggw").write_bytes(b"junk")
    assert cli.main(["inspect-weights", str(tmp_path / "bad.ggw")]) == 2
    assert cli.main(["gen-data", "--count", "0", "-o", str(tmp_path / "x.gch")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_numerical_failure_exit_code(tmp_path):
    d = str(tmp_path)
    cli.main(["gen-data", "--n-r", "4", "--n-t", "8", "--count", "30", "-o", f"{d}/d.gch"])
    cli.main(["train", f"{d}/d.gch", "-o", f"{d}/w.ggw", "--latent-dim", "3", "--channels", "4",
              "--epochs", "1", "--batch-size", "10"])
    cli.main(["simulate", "--n-r", "4", "--n-t", "8", "-o", f"{d}/m"])
    code = cli.main(["estimate", f"{d}/m.gms", "--pilots", f"{d}/m.pilots.npy", "--weights", f"{d}/w.ggw",
                     "--iterations", "3", "--lr", "inf"])
    assert code == 3


def test_cli_help_documents_every_flag(capsys):
    parser = cli.build_parser()
    for action in parser._subparsers._group_actions[0].choices.values():
        for a in action._actions:
            assert a.help, f"{action.prog} {a.option_strings} lacks help"
