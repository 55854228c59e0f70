"""End-to-end simulated measurements built from a ``ScenarioConfig``.

Records are synthesized and reduced one at a time; every record draws from
its own derived seed, so results do not depend on worker count or order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .calibration import (CalibrationFit, CalibrationSim, equivalent_power,
                          run_snl_calibration, snl_at_power)
from .config import ScenarioConfig
from .daq import PsdEstimate, PulseEstimates, analyze_trace, ensemble_psd
from .detector import (DetectorModel, VoltageTrace, synthesize_snl_calibration_pair,
                       synthesize_trace)
from .metrics import SpectralRatio, SqueezingResult, compute_Rt, spectral_ratio
from .model import DetectionChain, FopaParams
from .seeds import derive_seed


def map_ordered(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def detection_for(cfg: ScenarioConfig, p: FopaParams,
                  base: DetectionChain | None = None) -> DetectionChain:
    d = base or cfg.detection
    if not cfg.balance or model.detected_stats(p, d).mean_i <= 0:
        # nothing to balance against without an idler
        return d
    return model.balance_attenuation(p, d)


def fopa_at(cfg: ScenarioConfig, gain: float) -> FopaParams:
    return replace(cfg.fopa, gain_g=float(gain))


def operating_power(cfg: ScenarioConfig) -> float:
    """Equivalent per-diode detected photons at the configured operating point."""
    d = detection_for(cfg, cfg.fopa)
    st = model.detected_stats(cfg.fopa, d)
    return equivalent_power(st.mean_s, st.mean_i, d.gain_ratio_r)


def calibration_powers(cfg: ScenarioConfig) -> list[float]:
    sec = cfg.section("calibration")
    if sec["powers"] is not None:
        return [float(x) for x in sec["powers"]]
    return list(np.linspace(0.0, 2.0 * operating_power(cfg), int(sec["n_points"])))


def calibration_sim(cfg: ScenarioConfig) -> CalibrationSim:
    sec = cfg.section("calibration")
    daq = cfg.section("daq")
    return CalibrationSim(detector=cfg.detector, detection=cfg.detection, n_t=daq["n_t"],
                          classical_noise_frac=sec["classical_noise_frac"],
                          drift_tolerance=daq["drift_tolerance"])


def calibrate(cfg: ScenarioConfig, powers=None, reps: int | None = None) -> CalibrationFit:
    sec = cfg.section("calibration")
    powers = calibration_powers(cfg) if powers is None else powers
    reps = sec["reps"] if reps is None else reps
    sim = calibration_sim(cfg)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            return run_snl_calibration(powers, reps, sim, cfg.master_seed, executor=ex)
    return run_snl_calibration(powers, reps, sim, cfg.master_seed)


# --- single records -------------------------------------------------------

def signal_trace(p: FopaParams, d: DetectionChain, m: DetectorModel, n_t: int,
                 master: int, key: int, rec: int, *, n_samples=None,
                 freq: bool = False) -> tuple[VoltageTrace, float]:
    s_pulses, s_noise = ("freq_pulses", "freq_electronic") if freq else \
        ("pulses", "electronic")
    series = model.sample_pulse_pairs(p, d, n_t, derive_seed(master, s_pulses, key, rec))
    tr = synthesize_trace(series.differences(d.gain_ratio_r), d, m,
                          derive_seed(master, s_noise, key, rec), n_samples=n_samples)
    return tr, series.clamp_fraction


def dark_trace(m: DetectorModel, d: DetectionChain, n_t: int, master: int, rec: int, *,
               n_samples=None, freq: bool = False) -> VoltageTrace:
    stream = "freq_dark" if freq else "dark"
    return synthesize_trace(np.zeros(n_t), d, m, derive_seed(master, stream, 0, rec),
                            n_samples=n_samples)


def snl_trace(power: float, frac: float, m: DetectorModel, d: DetectionChain, n_t: int,
              master: int, key: int, rec: int, *, n_samples=None,
              freq: bool = False) -> VoltageTrace:
    stream = "freq_snl" if freq else "snl_traces"
    return synthesize_snl_calibration_pair(power, frac, m, d, n_t,
                                           derive_seed(master, stream, key, rec),
                                           n_samples=n_samples)


# --- time domain ----------------------------------------------------------

@dataclass
class TimeDomainMeasurement:
    gain: float
    detection: DetectionChain
    predicted_R: float
    result: SqueezingResult
    signal: PulseEstimates
    per_record: list
    clamp_fraction: float


def dark_estimates(cfg: ScenarioConfig, records: int | None = None) -> PulseEstimates:
    daq = cfg.section("daq")
    records = daq["records"] if records is None else records
    ests = map_ordered(
        lambda rec: analyze_trace(dark_trace(cfg.detector, cfg.detection, daq["n_t"],
                                             cfg.master_seed, rec), daq["drift_tolerance"]),
        range(records), cfg.workers)
    return PulseEstimates.pooled(ests)


def measure_time_domain(cfg: ScenarioConfig, fit: CalibrationFit, gain: float, key: int,
                        dark: PulseEstimates, records: int | None = None
                        ) -> TimeDomainMeasurement:
    """Simulate twin-beam records at one gain and reduce them to a ratio."""
    daq = cfg.section("daq")
    records = daq["records"] if records is None else records
    p = fopa_at(cfg, gain)
    d = detection_for(cfg, p)

    def one(rec):
        tr, clamp = signal_trace(p, d, cfg.detector, daq["n_t"], cfg.master_seed, key, rec)
        return analyze_trace(tr, daq["drift_tolerance"]), clamp

    out = map_ordered(one, range(records), cfg.workers)
    per_record = [est for est, _ in out]
    sig = PulseEstimates.pooled(per_record)
    st = model.detected_stats(p, d)
    var_snl = snl_at_power(fit, equivalent_power(st.mean_s, st.mean_i, d.gain_ratio_r))
    eta_bar = 0.5 * (cfg.detection.eta_s + cfg.detection.eta_i)
    res = compute_Rt(sig.var_e, var_snl, dark.var_e, eta_bar=eta_bar)
    return TimeDomainMeasurement(gain=float(gain), detection=d,
                                 predicted_R=model.predict_R(p, d), result=res, signal=sig,
                                 per_record=per_record,
                                 clamp_fraction=float(np.mean([c for _, c in out])))


def snl_estimates(cfg: ScenarioConfig, power: float, records: int, key: int = 0,
                  classical_noise_frac: float | None = None) -> list[PulseEstimates]:
    daq = cfg.section("daq")
    frac = cfg.section("calibration")["classical_noise_frac"] \
        if classical_noise_frac is None else classical_noise_frac
    return map_ordered(
        lambda rec: analyze_trace(snl_trace(power, frac, cfg.detector, cfg.detection,
                                            daq["n_t"], cfg.master_seed, key, rec),
                                  daq["drift_tolerance"]),
        range(records), cfg.workers)


def snl_psd(cfg: ScenarioConfig, power: float, records: int, key: int = 0,
            classical_noise_frac: float | None = None,
            detector: DetectorModel | None = None) -> PsdEstimate:
    daq = cfg.section("daq")
    m = detector or cfg.detector
    frac = cfg.section("calibration")["classical_noise_frac"] \
        if classical_noise_frac is None else classical_noise_frac
    return ensemble_psd(snl_trace(power, frac, m, cfg.detection, daq["n_t"],
                                  cfg.master_seed, key, rec) for rec in range(records))


# --- frequency domain -----------------------------------------------------

@dataclass
class FrequencyDomainMeasurement:
    gain: float
    detection: DetectionChain
    predicted_R: float
    spectral: SpectralRatio


def _freq_geometry(cfg: ScenarioConfig):
    fsec = cfg.section("frequency")
    m = cfg.freq_detector
    n_samples = int(fsec["n_samples"])
    n_t = n_samples // m.samples_per_period
    return fsec, m, n_samples, n_t


def freq_dark_psd(cfg: ScenarioConfig, records: int | None = None) -> PsdEstimate:
    fsec, m, n_samples, n_t = _freq_geometry(cfg)
    records = fsec["records"] if records is None else records
    return ensemble_psd(dark_trace(m, cfg.detection, n_t, cfg.master_seed, rec,
                                   n_samples=n_samples, freq=True) for rec in range(records))


def measure_frequency_domain(cfg: ScenarioConfig, gain: float, key: int,
                             dark: PsdEstimate, records: int | None = None
                             ) -> FrequencyDomainMeasurement:
    """Spectral ratio around ``frequency.f0_hz`` with the high-efficiency detector."""
    fsec, m, n_samples, n_t = _freq_geometry(cfg)
    records = fsec["records"] if records is None else records
    p = fopa_at(cfg, gain)
    base = DetectionChain(fsec["eta_s"], fsec["eta_i"], cfg.detection.gain_ratio_r,
                          cfg.detection.volts_per_photon_kappa)
    d = detection_for(cfg, p, base)
    st = model.detected_stats(p, d)
    power = equivalent_power(st.mean_s, st.mean_i, d.gain_ratio_r)
    sig = ensemble_psd(signal_trace(p, d, m, n_t, cfg.master_seed, key, rec,
                                    n_samples=n_samples, freq=True)[0]
                       for rec in range(records))
    snl = ensemble_psd(snl_trace(power, 0.0, m, d, n_t, cfg.master_seed, key, rec,
                                 n_samples=n_samples, freq=True) for rec in range(records))
    ratio = spectral_ratio(sig, snl, dark, f0=fsec["f0_hz"], bandwidth=fsec["bandwidth_hz"])
    return FrequencyDomainMeasurement(gain=float(gain), detection=d,
                                      predicted_R=model.predict_R(p, d), spectral=ratio)
