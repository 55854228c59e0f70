"""Scenario configuration: nested YAML sections merged over built-in defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from .detector import ConfigurationError, DetectorModel, noise_rms_for_integral_variance
from .model import DetectionChain, FopaParams, ParameterError, power_to_photons

ENV_VAR = "TWINBEAM_CONFIG"

# 1 uW seed at 1533 nm, 50 MHz repetition rate
SEED_PHOTONS = power_to_photons(1e-6, 1533e-9, 50e6)

DEFAULTS = {
    "fopa": {
        "gain_g": 64.0,
        "seed_photons_n0": SEED_PHOTONS,
        "seed_excess_noise_xi": 1.0,
        "raman_photons_s": 0.0,
        "raman_photons_i": 0.0,
    },
    "detection": {
        "eta_s": 0.70,
        "eta_i": 0.68,
        "gain_ratio_r": 1.0,
        "volts_per_photon_kappa": 4.27e-6,
        "balance": True,
    },
    "detector": {
        "bandwidth_hz": 80e6,
        "kernel_shape": "second_order_lowpass",
        "en_variance": 3.86e-4,
        "cmrr_db": 50.0,
        "transimpedance_v_per_a": 2000.0,
        "amp_gain_v_per_v": 21.0,
        "adc_bits": 12,
        "adc_full_scale_v": 0.25,
        "sample_rate_hz": 5e9,
        "pulse_period_s": 20e-9,
    },
    "daq": {
        "n_t": 250,
        "records": 1000,
        "runs": 1,
        "drift_tolerance": 0.1,
        "hist_bins": 100,
    },
    "calibration": {
        "powers": None,          # per-diode detected photons; None: 0..2x operating power
        "n_points": 9,
        "reps": 100,
        "classical_noise_frac": 0.1,
    },
    "measure": {
        "gains": [64.0],
    },
    "sweep": {
        "gains": [10.0, 20.0, 30.0, 40.0, 50.0, 64.0, 80.0],
        "records": 200,
        "curve_points": 80,
    },
    "frequency": {
        "f0_hz": 2.5e6,
        "bandwidth_hz": 1e6,
        "eta_s": 0.91,
        "eta_i": 0.89,
        "gains": [5.0, 10.0, 20.0, 40.0, 60.0],
        "records": 200,
        "detector": {
            "bandwidth_hz": 20e6,
            "sample_rate_hz": 500e6,
            "en_variance": 2.5e-5,
        },
        "n_samples": 25000,
    },
    "seeds": {"master": 20211},
    "outputs": {"directory": "twinbeam_out", "workers": 1},
}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-5``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.?[0-9_]*|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$
                  |^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$""", re.X),
    list("-+0123456789."))


def _load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> dict:
    """``section.key=value`` -> nested dict; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    value = _load_yaml(raw)
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def build_detector(section: dict) -> DetectorModel:
    section = dict(section)
    en_var = section.pop("en_variance", None)
    if "user_kernel" in section and section["user_kernel"] is not None:
        section["user_kernel"] = tuple(section["user_kernel"])
    known = {f.name for f in fields(DetectorModel)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(f"unknown detector keys: {sorted(unknown)}")
    m = DetectorModel(**section)
    if "electronic_noise_rms_v" not in section and en_var is not None:
        m = replace(m, electronic_noise_rms_v=noise_rms_for_integral_variance(m, en_var))
    return m


@dataclass
class ScenarioConfig:
    raw: dict

    def __post_init__(self):
        try:
            self.fopa = FopaParams(**self.raw["fopa"])
            det = dict(self.raw["detection"])
            self.balance = bool(det.pop("balance", True))
            self.detection = DetectionChain(**det)
            self.detector = build_detector(self.raw["detector"])
            freq = self.raw["frequency"]
            self.freq_detector = build_detector(deep_merge(self.raw["detector"],
                                                           freq["detector"]))
        except (TypeError, ParameterError) as exc:
            raise ConfigurationError(str(exc)) from exc
        daq = self.raw["daq"]
        if daq["n_t"] < 3 or daq["records"] < 1:
            raise ConfigurationError("daq.n_t must be >= 3 and daq.records >= 1")

    @property
    def master_seed(self) -> int:
        return int(self.raw["seeds"]["master"])

    @property
    def workers(self) -> int:
        return int(self.raw["outputs"].get("workers", 1))

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["outputs"]["directory"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **sections) -> "ScenarioConfig":
        return ScenarioConfig(deep_merge(self.raw, sections))


def load_config(path=None, overrides=()) -> ScenarioConfig:
    raw = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(ENV_VAR)
    if path:
        try:
            loaded = _load_yaml(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("configuration root must be a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown sections: {sorted(unknown)}")
        raw = deep_merge(raw, loaded)
    for item in overrides:
        raw = deep_merge(raw, parse_override(item))
    return ScenarioConfig(raw)
