"""Experiment orchestration: metrics, configs, sweeps, plots and the CLI."""
from .config import ExperimentConfig, load_config, preset
from .metrics import nmse, nmse_db, scaled_nmse, to_db
from .plots import emit_plots
from .sweep import ResultRow, ResultTable, read_csv, run_sweep, timing_benchmark, write_csv
