"""Experiment configuration from INI files, with named presets.

Example::

    [experiment]
    preset = smoke
    mode = fullres
    alphas = 0.2, 0.4
    snr_db = -10, 0, 10
    estimators = gce, omp, lasso, gamp
    trials = 20

    [weights]
    8 = generator_d8.ggw

Weight paths are resolved relative to the INI file.
"""
import configparser
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..channel import ChannelConfig
from ..errors import ConfigError
from ..gce import GceConfig

ESTIMATORS = ("perfect", "gce", "omp", "lasso", "gamp")
MODES = ("fullres", "onebit")


@dataclass(frozen=True)
class TrainingSettings:
    epochs: int = 3000
    lr: float = 5e-5
    batch_size: int = 200
    n_critic: int = 5
    clip: float = 0.01
    channels: int = 128
    dataset_size: int = 3654
    seed: int = 0


@dataclass(frozen=True)
class PrecodingSettings:
    """``None`` sizes default to ``n_s = min(N_r, N_t)``, ``n_rf = n_s``, ``n_cand = 2 N_t``."""

    enabled: bool = True
    n_s: int = None
    n_rf: int = None
    n_cand: int = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "smoke"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    alphas: tuple = (0.2, 0.4, 0.75, 1.0)
    snrs_db: tuple = (-10.0, 0.0, 10.0)
    latent_dims: tuple = (35,)
    mode: str = "fullres"
    estimators: tuple = ("gce", "omp", "lasso", "gamp")
    trials: int = 5
    seed: int = 0
    output_dir: str = "results"
    weights: dict = field(default_factory=dict)
    gce: GceConfig = field(default_factory=GceConfig)
    precoding: PrecodingSettings = field(default_factory=PrecodingSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    workers: int = 1

    def validate(self, check_files=True):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.alphas or any(not 0.0 < a <= 1.0 for a in self.alphas):
            raise ConfigError("every alpha must lie in (0, 1]")
        if not self.snrs_db or any(math.isnan(s) for s in self.snrs_db):
            raise ConfigError("snr_db must be a non-empty list of numbers")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        if not self.latent_dims or any(d < 1 for d in self.latent_dims):
            raise ConfigError("latent dims must be >= 1")
        if "gce" in self.estimators and check_files:
            for d in self.latent_dims:
                path = self.weights.get(d)
                if path is None:
                    raise ConfigError(f"no generator weights configured for d={d}")
                if not os.path.isfile(path):
                    raise ConfigError(f"weight file for d={d} not found: {path}")
        return self


def preset(name):
    """``"smoke"`` (4x16 arrays, d=8, 200 epochs, 5 trials) or ``"full"`` (16x64, d=35)."""
    if name == "smoke":
        return ExperimentConfig(
            scenario="smoke",
            channel=ChannelConfig(n_r=4, n_t=16),
            alphas=(0.2, 0.4, 0.75, 1.0),
            snrs_db=(-10.0, 0.0, 10.0, 20.0, 30.0, 40.0),
            latent_dims=(8,),
            trials=5,
            training=TrainingSettings(epochs=200, channels=64),
        )
    if name == "full":
        return ExperimentConfig(
            scenario="full",
            channel=ChannelConfig(n_r=16, n_t=64),
            alphas=(0.2, 0.4, 0.75, 1.0),
            snrs_db=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0),
            latent_dims=(35,),
            trials=100,
            training=TrainingSettings(),
        )
    raise ConfigError(f"unknown preset {name!r}; choose 'smoke' or 'full'")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _names(text):
    return tuple(v.strip() for v in text.replace(",", " ").split())


def _coerce(value, text, key):
    """Parse ``text`` to the type of the existing ``value``."""
    try:
        if isinstance(value, bool):
            low = text.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if isinstance(value, int):
            return int(text)
        if isinstance(value, float):
            return float(text)
        if value is None:
            low = text.strip().lower()
            if low in ("", "none"):
                return None
            try:
                return int(text)
            except ValueError:
                try:
                    return float(text)
                except ValueError:
                    return text.strip()
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def _update(obj, section, items):
    known = {f: getattr(obj, f) for f in asdict(obj)}
    changes = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        changes[key] = _coerce(known[key], text, f"[{section}] {key}")
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


_LISTS = {"alphas": _floats, "snr_db": _floats, "latent_dims": _ints, "estimators": _names}


def parse_config(parser, base_dir="."):
    """Build an :class:`ExperimentConfig` from a populated ``ConfigParser``."""
    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    cfg = preset(exp.pop("preset", "smoke"))
    changes = {}
    for key, text in exp.items():
        if key in _LISTS:
            try:
                changes["snrs_db" if key == "snr_db" else key] = _LISTS[key](text)
            except ValueError as exc:
                raise ConfigError(f"bad list for [experiment] {key}: {text!r}") from exc
        elif key in ("scenario", "mode", "output_dir"):
            changes[key] = text.strip()
        elif key in ("trials", "seed", "workers"):
            changes[key] = _coerce(0, text, f"[experiment] {key}")
        else:
            raise ConfigError(f"unknown key [experiment] {key}")
    cfg = replace(cfg, **changes)
    if parser.has_section("channel"):
        items = dict(parser.items("channel"))
        if "angular_spread_deg" in items:
            items["angular_spread"] = str(np.deg2rad(float(items.pop("angular_spread_deg"))))
        cfg = replace(cfg, channel=_update(cfg.channel, "channel", items.items()))
    if parser.has_section("gce"):
        items = dict(parser.items("gce"))
        lam = items.pop("lambda_reg", None)
        g = _update(cfg.gce, "gce", items.items())
        if lam is not None:
            lam = lam.strip().lower()
            if lam not in ("noise", "none"):
                lam = _coerce(0.0, lam, "[gce] lambda_reg")
            try:
                g = replace(g, lambda_reg=None if lam == "none" else lam)
            except ValueError as exc:
                raise ConfigError(f"[gce] lambda_reg: {exc}") from exc
        cfg = replace(cfg, gce=g)
    for name in ("precoding", "training"):
        if parser.has_section(name):
            cfg = replace(cfg, **{name: _update(getattr(cfg, name), name, parser.items(name))})
    if parser.has_section("weights"):
        weights = {}
        for key, path in parser.items("weights"):
            try:
                d = int(key)
            except ValueError as exc:
                raise ConfigError(f"[weights] keys must be latent dims, got {key!r}") from exc
            weights[d] = os.path.normpath(os.path.join(base_dir, path.strip()))
        cfg = replace(cfg, weights=weights)
    return cfg


def load_config(path, overrides=(), check_files=True):
    """Read an INI file; ``overrides`` are ``"section.key=value"`` strings applied on top."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)
    base = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    return parse_config(parser, base).validate(check_files=check_files)
