"""Balanced-detector trace synthesis.

Each detected pulse pair produces one copy of the detector response kernel,
scaled by the weighted photon-number difference, on a fixed pulse grid. Band
limited electronic noise and ADC quantization are added on top.

Units: the kernel is dimensionless with area ``-(transimpedance * amp_gain) /
(REF_TRANSIMPEDANCE * REF_AMP_GAIN)``, i.e. ``-1`` for the reference chain
(2 kOhm load, 21 V/V). ``DetectionChain.volts_per_photon_kappa`` converts one
detected photon to integrated pulse area in V*sample for that reference chain.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .model import DetectionChain, ParameterError
from .seeds import make_rng

REF_TRANSIMPEDANCE = 2000.0
REF_AMP_GAIN = 21.0
KERNEL_SHAPES = ("second_order_lowpass", "gaussian", "user_sampled")
TRUNCATION = 1e-6
# windowed-integral variance of the electronic noise at the operating point, V^2
REFERENCE_EN_VARIANCE = 3.86e-4


class ConfigurationError(ValueError):
    pass


class SaturationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DetectorModel:
    bandwidth_hz: float = 80e6
    kernel_shape: str = "second_order_lowpass"
    electronic_noise_rms_v: float = 0.0
    cmrr_db: float = 50.0
    transimpedance_v_per_a: float = REF_TRANSIMPEDANCE
    amp_gain_v_per_v: float = REF_AMP_GAIN
    adc_bits: int = 12
    adc_full_scale_v: float = 0.25
    sample_rate_hz: float = 5e9
    pulse_period_s: float = 20e-9
    user_kernel: tuple | None = None

    def __post_init__(self):
        if self.kernel_shape not in KERNEL_SHAPES:
            raise ConfigurationError(f"unsupported kernel shape {self.kernel_shape!r}")
        if self.kernel_shape == "user_sampled" and not self.user_kernel:
            raise ConfigurationError("user_sampled kernel requires user_kernel samples")
        if not self.sample_rate_hz > 2.0 * self.bandwidth_hz:
            raise ConfigurationError("sample rate must exceed twice the analog bandwidth")
        spp = self.pulse_period_s * self.sample_rate_hz
        if abs(spp - round(spp)) > 1e-6 or round(spp) < 4:
            raise ConfigurationError(
                f"pulse period must span an integer number (>= 4) of samples, got {spp}")
        if not 8 <= self.adc_bits <= 16:
            raise ConfigurationError("adc_bits must be within [8, 16]")
        if self.cmrr_db < 0:
            raise ConfigurationError("cmrr_db must be >= 0")
        if self.electronic_noise_rms_v < 0 or self.adc_full_scale_v <= 0:
            raise ConfigurationError("noise RMS must be >= 0 and full scale > 0")

    @property
    def samples_per_period(self) -> int:
        return int(round(self.pulse_period_s * self.sample_rate_hz))

    @property
    def lsb_v(self) -> float:
        return 2.0 * self.adc_full_scale_v / 2 ** self.adc_bits

    @property
    def gain_scale(self) -> float:
        return (self.transimpedance_v_per_a * self.amp_gain_v_per_v
                / (REF_TRANSIMPEDANCE * REF_AMP_GAIN))

    @property
    def common_mode_leak(self) -> float:
        """Amplitude fraction of the common-mode signal reaching the output."""
        return 10.0 ** (-self.cmrr_db / 20.0)


@dataclass
class VoltageTrace:
    samples: np.ndarray
    sample_rate_hz: float
    pulse_period_s: float
    first_pulse_offset_s: float
    saturated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def samples_per_period(self) -> int:
        return int(round(self.pulse_period_s * self.sample_rate_hz))

    @property
    def first_pulse_index(self) -> int:
        return int(round(self.first_pulse_offset_s * self.sample_rate_hz))

    def __len__(self):
        return len(self.samples)


def _second_order(tau: float) -> np.ndarray:
    # critically damped: t/tau^2 exp(-t/tau); cut where below TRUNCATION * peak
    x_end = tau * 1.0
    while (x_end / tau) * math.exp(1.0 - x_end / tau) >= TRUNCATION:
        x_end *= 1.25
    t = np.arange(0, int(math.ceil(x_end)) + 1, dtype=float)
    h = t / tau ** 2 * np.exp(-t / tau)
    return h[: np.nonzero(h >= TRUNCATION * h.max())[0][-1] + 1]


def _gaussian(sigma: float) -> np.ndarray:
    half = int(math.ceil(sigma * math.sqrt(2.0 * math.log(1.0 / TRUNCATION))))
    t = np.arange(-half, half + 1, dtype=float)
    h = np.exp(-0.5 * (t / max(sigma, 1e-12)) ** 2)
    keep = np.nonzero(h >= TRUNCATION)[0]
    return h[keep[0]: keep[-1] + 1]


def corner_frequency(kernel: np.ndarray, sample_rate_hz: float) -> float:
    """-3 dB frequency of a sampled kernel's magnitude response."""
    j = np.arange(len(kernel))
    h0 = abs(kernel.sum())

    def excess(f):
        return abs(np.sum(kernel * np.exp(-2j * np.pi * f * j / sample_rate_hz))) / h0 \
            - 1.0 / math.sqrt(2.0)

    nyq = sample_rate_hz / 2.0
    grid = np.linspace(0.0, nyq, 513)
    vals = np.array([excess(f) for f in grid])
    below = np.nonzero(vals < 0)[0]
    if len(below) == 0:
        return math.inf
    k = below[0]
    return brentq(excess, grid[k - 1], grid[k], xtol=1e-3)


@functools.lru_cache(maxsize=64)
def _unit_shape(shape: str, bandwidth_hz: float, sample_rate_hz: float,
                user_kernel: tuple | None) -> np.ndarray:
    """Positive unit-area response shape with its -3 dB point tuned to bandwidth."""
    if shape == "user_sampled":
        h = np.abs(np.asarray(user_kernel, dtype=float))
        return h / h.sum()
    w = 2.0 * math.pi * bandwidth_hz / sample_rate_hz   # rad/sample
    if shape == "second_order_lowpass":
        build, guess = _second_order, math.sqrt(math.sqrt(2.0) - 1.0) / w
    else:
        build, guess = _gaussian, math.sqrt(math.log(2.0)) / w

    def mismatch(log_width):
        return corner_frequency(build(math.exp(log_width)), sample_rate_hz) - bandwidth_hz

    try:
        width = math.exp(brentq(mismatch, math.log(guess) - 1.0, math.log(guess) + 1.0,
                                xtol=1e-6))
    except ValueError:
        # extreme bandwidths: corner not resolvable on the grid
        width = guess
    h = build(width)
    return h / h.sum()


def unit_shape(m: DetectorModel) -> np.ndarray:
    return _unit_shape(m.kernel_shape, m.bandwidth_hz, m.sample_rate_hz, m.user_kernel)


def response_kernel(m: DetectorModel) -> np.ndarray:
    """Sampled, negative-going detector response (see module docstring for units)."""
    return -m.gain_scale * unit_shape(m)


def kernel_area(m: DetectorModel) -> float:
    return float(response_kernel(m).sum())


def peak_lag(m: DetectorModel) -> int:
    return int(np.argmax(unit_shape(m)))


def clean_trace(diffs, d: DetectionChain, m: DetectorModel, *,
                first_pulse_offset_s: float | None = None,
                n_samples: int | None = None) -> np.ndarray:
    """Noise-free sum of kernels; pulse n peaks at ``offset + n * period``."""
    diffs = np.asarray(diffs, dtype=float)
    spp = m.samples_per_period
    if first_pulse_offset_s is None:
        first_pulse_offset_s = m.pulse_period_s / 2.0
    off = int(round(first_pulse_offset_s * m.sample_rate_hz))
    if n_samples is None:
        n_samples = len(diffs) * spp
    k = response_kernel(m)
    lag = peak_lag(m)
    pos = off + spp * np.arange(len(diffs))
    inside = pos < n_samples
    impulses = np.zeros(n_samples)
    impulses[pos[inside]] = d.volts_per_photon_kappa * diffs[inside]
    full = np.convolve(impulses, k)
    out = np.zeros(n_samples)
    seg = full[lag: lag + n_samples]
    out[: len(seg)] = seg
    return out


def electronic_noise(m: DetectorModel, n_samples: int, rng) -> np.ndarray:
    """White Gaussian noise shaped by the detector response, RMS as configured."""
    if m.electronic_noise_rms_v == 0.0:
        return np.zeros(n_samples)
    h = unit_shape(m)
    h = h / np.linalg.norm(h)
    w = make_rng(rng).standard_normal(n_samples + len(h) - 1)
    return m.electronic_noise_rms_v * np.convolve(w, h, mode="valid")


def quantize(v: np.ndarray, m: DetectorModel) -> np.ndarray:
    lsb = m.lsb_v
    half = 2 ** (m.adc_bits - 1)
    codes = np.clip(np.rint(v / lsb), -half, half - 1)
    return codes * lsb


def synthesize_trace(diffs, d: DetectionChain, m: DetectorModel, rng_seed=None, *,
                     first_pulse_offset_s: float | None = None,
                     n_samples: int | None = None,
                     noise: bool = True, quantization: bool = True) -> VoltageTrace:
    """Oscilloscope record for per-pulse photon differences ``I_s - r I_i``."""
    if first_pulse_offset_s is None:
        first_pulse_offset_s = m.pulse_period_s / 2.0
    v = clean_trace(diffs, d, m, first_pulse_offset_s=first_pulse_offset_s,
                    n_samples=n_samples)
    if noise:
        v = v + electronic_noise(m, len(v), rng_seed)
    saturated = bool(np.any(np.abs(v) > m.adc_full_scale_v))
    if saturated:
        warnings.warn("trace exceeds ADC full scale before quantization",
                      SaturationWarning, stacklevel=2)
    if quantization:
        v = quantize(v, m)
    return VoltageTrace(samples=v, sample_rate_hz=m.sample_rate_hz,
                        pulse_period_s=m.pulse_period_s,
                        first_pulse_offset_s=first_pulse_offset_s, saturated=saturated,
                        meta={"kappa": d.volts_per_photon_kappa,
                              "kernel_area": kernel_area(m)})


def calibration_differences(power_per_pd: float, classical_noise_frac: float,
                            m: DetectorModel, d: DetectionChain, n_t: int, rng) -> np.ndarray:
    """Per-pulse output photon difference for a split classical beam.

    ``power_per_pd`` is the mean detected photon number per pulse on each
    diode. The common excess noise has variance ``classical_noise_frac *
    power_per_pd`` (a Fano-type excess shared by both diodes); it cancels
    in the difference except for the finite-CMRR leak.
    """
    if power_per_pd < 0 or classical_noise_frac < 0:
        raise ParameterError("power and classical noise fraction must be >= 0")
    rng = make_rng(rng)
    z = rng.standard_normal((3, n_t))
    p = float(power_per_pd)
    common = math.sqrt(classical_noise_frac * p) * z[0]
    n1 = p + common + math.sqrt(p) * z[1]
    n2 = p + common + math.sqrt(p) * z[2]
    r = d.gain_ratio_r
    return (n1 - r * n2) + m.common_mode_leak * 0.5 * (n1 + r * n2)


def synthesize_snl_calibration_pair(power_per_pd: float, classical_noise_frac: float,
                                    m: DetectorModel, d: DetectionChain, n_t: int,
                                    rng_seed=None, **kw) -> VoltageTrace:
    rng = make_rng(rng_seed)
    diffs = calibration_differences(power_per_pd, classical_noise_frac, m, d, n_t, rng)
    return synthesize_trace(diffs, d, m, rng, **kw)


def window_noise_gain(m: DetectorModel) -> float:
    """Ratio of windowed-integral variance to per-sample variance for the noise."""
    h = unit_shape(m)
    h = h / np.linalg.norm(h)
    c = np.convolve(np.ones(m.samples_per_period), h)
    return float(c @ c)


def noise_rms_for_integral_variance(m: DetectorModel, variance: float) -> float:
    return math.sqrt(variance / window_noise_gain(m))


def expected_en_variance(m: DetectorModel) -> float:
    """Windowed-integral variance from electronic noise plus quantization."""
    return (m.electronic_noise_rms_v ** 2 * window_noise_gain(m)
            + m.samples_per_period * m.lsb_v ** 2 / 12.0)


def reference_detector(en_variance: float = REFERENCE_EN_VARIANCE, **overrides) -> DetectorModel:
    """Fast detector defaults with noise set to a target windowed-integral variance."""
    m = DetectorModel(**overrides)
    return replace(m, electronic_noise_rms_v=noise_rms_for_integral_variance(m, en_variance))
