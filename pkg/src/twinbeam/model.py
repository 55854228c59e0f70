"""Linearized photon-number statistics of a seeded fiber parametric amplifier.

The amplifier acts on a (possibly super-Poissonian) seed of ``N0`` photons per
pulse and emits signal/idler pulse pairs whose photon-number fluctuations are
treated as small Gaussian perturbations around large means. Loss is modeled as
an independent Bernoulli partition per channel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.optimize import minimize_scalar

from .seeds import make_rng

LINEARIZATION_MIN_PHOTONS = 100.0


class ParameterError(ValueError):
    """Raised for parameter sets that violate a type invariant."""


class DegenerateInputError(ValueError):
    """Raised when a ratio is undefined (no light, no idler)."""


class LinearizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FopaParams:
    gain_g: float
    seed_photons_n0: float
    seed_excess_noise_xi: float = 1.0
    raman_photons_s: float = 0.0
    raman_photons_i: float = 0.0

    def __post_init__(self):
        if not self.gain_g >= 1.0:
            raise ParameterError(f"gain_g must be >= 1, got {self.gain_g}")
        if not self.seed_photons_n0 > 0.0:
            raise ParameterError(f"seed_photons_n0 must be > 0, got {self.seed_photons_n0}")
        if not self.seed_excess_noise_xi >= 1.0:
            raise ParameterError(
                f"seed_excess_noise_xi must be >= 1, got {self.seed_excess_noise_xi}")
        if self.raman_photons_s < 0 or self.raman_photons_i < 0:
            raise ParameterError("Raman photon numbers must be >= 0")

    @property
    def reliable(self) -> bool:
        """False when the seed is too weak for the linearized treatment."""
        return self.seed_photons_n0 >= LINEARIZATION_MIN_PHOTONS


@dataclass(frozen=True)
class DetectionChain:
    eta_s: float
    eta_i: float
    gain_ratio_r: float = 1.0
    volts_per_photon_kappa: float = 4.27e-6

    def __post_init__(self):
        for name in ("eta_s", "eta_i"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")
        if not self.gain_ratio_r > 0:
            raise ParameterError(f"gain_ratio_r must be > 0, got {self.gain_ratio_r}")
        if not self.volts_per_photon_kappa > 0:
            raise ParameterError("volts_per_photon_kappa must be > 0")


@dataclass(frozen=True)
class TwinBeamStats:
    mean_s: float
    mean_i: float
    var_s: float
    var_i: float
    cov_si: float
    reliable: bool = True

    def __post_init__(self):
        # tolerance absorbs rounding in nearly singular (ideal, lossless) cases
        tol = 1e-9 * max(self.var_s * self.var_i, 1.0)
        if self.var_s < 0 or self.var_i < 0 or self.cov_si ** 2 > self.var_s * self.var_i + tol:
            raise ParameterError("invalid covariance matrix")

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.var_s, self.cov_si], [self.cov_si, self.var_i]])


@dataclass
class PulsePairSeries:
    i_s: np.ndarray
    i_i: np.ndarray
    n_t: int
    clamp_fraction: float = 0.0

    def __post_init__(self):
        if len(self.i_s) != self.n_t or len(self.i_i) != self.n_t:
            raise ParameterError("series length does not match n_t")

    def differences(self, r: float = 1.0) -> np.ndarray:
        """Per-pulse intensity difference ``I_s - r * I_i``."""
        return self.i_s - r * self.i_i


def covariance_linearized(p: FopaParams) -> TwinBeamStats:
    """Pre-detection moments of the amplified signal and generated idler.

    For a shot-limited seed and no Raman background the photon-number
    difference keeps the seed variance exactly: ``var_s + var_i - 2 cov = N0``.
    """
    if not p.reliable:
        warnings.warn(
            f"seed_photons_n0={p.seed_photons_n0} is below the linearization threshold",
            LinearizationWarning, stacklevel=2)
    g, n0, xi = p.gain_g, p.seed_photons_n0, p.seed_excess_noise_xi
    return TwinBeamStats(
        mean_s=g * n0 + p.raman_photons_s,
        mean_i=(g - 1.0) * n0 + p.raman_photons_i,
        var_s=xi * g * (2.0 * g - 1.0) * n0 + p.raman_photons_s,
        var_i=xi * (g - 1.0) * (2.0 * g - 1.0) * n0 + p.raman_photons_i,
        cov_si=xi * 2.0 * g * (g - 1.0) * n0,
        reliable=p.reliable,
    )


def apply_detection(s: TwinBeamStats, d: DetectionChain) -> TwinBeamStats:
    es, ei = d.eta_s, d.eta_i
    return TwinBeamStats(
        mean_s=es * s.mean_s,
        mean_i=ei * s.mean_i,
        var_s=es * es * s.var_s + es * (1.0 - es) * s.mean_s,
        var_i=ei * ei * s.var_i + ei * (1.0 - ei) * s.mean_i,
        cov_si=es * ei * s.cov_si,
        reliable=s.reliable,
    )


def detected_stats(p: FopaParams, d: DetectionChain) -> TwinBeamStats:
    return apply_detection(covariance_linearized(p), d)


def _ratio_terms(s: TwinBeamStats):
    # R(r) = (A + B r^2 - 2 C r) / (D + E r^2)
    return s.var_s, s.var_i, s.cov_si, s.mean_s, s.mean_i


def ratio_from_stats(s: TwinBeamStats, r: float) -> float:
    a, b, c, dd, e = _ratio_terms(s)
    den = dd + r * r * e
    if den <= 0:
        raise DegenerateInputError("no detected light: shot-noise denominator is zero")
    return (a + r * r * b - 2.0 * r * c) / den


def predict_R(p: FopaParams, d: DetectionChain) -> float:
    """Noise ratio of the weighted difference relative to the shot-noise limit."""
    return ratio_from_stats(detected_stats(p, d), d.gain_ratio_r)


def optimal_r(p: FopaParams, eta_s: float, eta_i: float) -> tuple[float, float]:
    """Electronic gain ratio minimizing the predicted noise ratio.

    The stationary condition of ``(A + B r^2 - 2 C r) / (D + E r^2)`` is the
    quadratic ``C E r^2 + (B D - A E) r - C D = 0``; its positive roots are
    compared and the smallest ratio wins (smaller r on ties).
    """
    s = detected_stats(p, DetectionChain(eta_s, eta_i))
    a, b, c, dd, e = _ratio_terms(s)
    if e <= 0:
        raise DegenerateInputError("no detected idler: gain ratio is undefined")
    qa, qb, qc = c * e, b * dd - a * e, -c * dd
    if qa != 0.0:
        roots = np.roots([qa, qb, qc])
    elif qb != 0.0:
        roots = np.array([-qc / qb])
    else:
        roots = np.array([])
    roots = sorted(float(x.real) for x in np.atleast_1d(roots)
                   if abs(x.imag) <= 1e-12 * max(1.0, abs(x.real)) and x.real > 0)
    best = None
    for r in roots:
        val = ratio_from_stats(s, r)
        if best is None or val < best[1]:
            best = (r, val)
    if best is None:
        best = _bracketed_r_search(s)
    return best


def _bracketed_r_search(s: TwinBeamStats, r_max: float = 1e3) -> tuple[float, float]:
    res = minimize_scalar(lambda r: ratio_from_stats(s, r), bounds=(1e-9, r_max),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def sample_pulse_pairs(p: FopaParams, d: DetectionChain, n_t: int, rng_seed) -> PulsePairSeries:
    """Draw ``n_t`` independent detected pulse pairs from the linearized Gaussian."""
    if n_t < 1:
        raise ParameterError("n_t must be >= 1")
    s = detected_stats(p, d)
    rng = make_rng(rng_seed)
    z = rng.standard_normal((2, n_t))
    # explicit 2x2 Cholesky; nearly singular in the lossless ideal case
    l11 = math.sqrt(s.var_s)
    if l11 > 0:
        l21 = s.cov_si / l11
        schur = s.var_i - l21 * l21
    else:
        l21, schur = 0.0, s.var_i
    if schur < -1e-9 * max(s.var_i, 1.0):
        raise ArithmeticError("detected covariance is not positive semidefinite")
    l22 = math.sqrt(max(schur, 0.0))
    i_s = s.mean_s + l11 * z[0]
    i_i = s.mean_i + l21 * z[0] + l22 * z[1]
    neg = (i_s < 0) | (i_i < 0)
    clamp_fraction = float(neg.mean())
    if clamp_fraction:
        np.maximum(i_s, 0.0, out=i_s)
        np.maximum(i_i, 0.0, out=i_i)
    return PulsePairSeries(i_s=i_s, i_i=i_i, n_t=n_t, clamp_fraction=clamp_fraction)


def empirical_R(series: PulsePairSeries, r: float = 1.0) -> float:
    diff = series.differences(r)
    return float(diff.var(ddof=1) / (series.i_s.mean() + r * r * series.i_i.mean()))


def balance_attenuation(p: FopaParams, d: DetectionChain) -> DetectionChain:
    """Attenuate the brighter channel until ``mean_s = r * mean_i`` after detection."""
    s = detected_stats(p, d)
    if s.mean_s <= 0 or s.mean_i <= 0:
        raise DegenerateInputError("both detected means must be positive to balance")
    target_i = d.gain_ratio_r * s.mean_i
    if s.mean_s > target_i:
        return replace(d, eta_s=d.eta_s * target_i / s.mean_s)
    if s.mean_s < target_i:
        return replace(d, eta_i=d.eta_i * s.mean_s / target_i)
    return d


def fit_excess_noise(p: FopaParams, d: DetectionChain, target_R: float) -> float:
    """Seed excess-noise factor that makes ``predict_R`` hit ``target_R``.

    The detected ratio is affine in the excess-noise factor, so the solve is
    exact. Raises if the target is below the shot-limited-seed value.
    """
    base = replace(p, seed_excess_noise_xi=1.0)
    r0 = predict_R(base, d)
    slope = predict_R(replace(base, seed_excess_noise_xi=2.0), d) - r0
    if slope <= 0:
        raise DegenerateInputError("ratio does not depend on seed excess noise here")
    xi = 1.0 + (target_R - r0) / slope
    if xi < 1.0:
        raise ParameterError(f"target ratio {target_R} is below the shot-limited value {r0}")
    return xi


def gain_from_pump(pump_power, c: float):
    """Parametric gain map ``g(P) = 1 + sinh^2(c P)`` used for axis labels."""
    return 1.0 + np.sinh(c * np.asarray(pump_power, dtype=float)) ** 2


def power_to_photons(power_w: float, wavelength_m: float, rep_rate_hz: float = 50e6) -> float:
    """Mean photons per pulse for an average optical power."""
    return power_w / rep_rate_hz / (constants.h * constants.c / wavelength_m)


def to_db(ratio):
    return 10.0 * np.log10(ratio)
