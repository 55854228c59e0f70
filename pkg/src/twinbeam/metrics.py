"""Squeezing figures of merit from measured variances or spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .daq import PsdEstimate, ensemble_psd
from .detector import VoltageTrace


class InvalidCalibrationError(ValueError):
    pass


def _db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class LossCorrection:
    ratio: float | None
    db: float | None
    unphysical: bool = False


def loss_correct(ratio_rt: float, eta_bar: float) -> LossCorrection:
    """Invert ``R_meas = eta R_true + (1 - eta)`` for a single loss channel."""
    if not 0.0 < eta_bar <= 1.0:
        raise ValueError("eta_bar must lie in (0, 1]")
    corrected = (ratio_rt - (1.0 - eta_bar)) / eta_bar
    if corrected <= 0.0:
        return LossCorrection(None, None, unphysical=True)
    return LossCorrection(corrected, _db(corrected))


@dataclass(frozen=True)
class SqueezingResult:
    var_id: float
    var_snl: float
    var_en: float
    ratio_rt: float | None
    rt_db: float | None
    rt_corrected_db: float | None = None
    eta_bar: float | None = None
    flags: tuple = ()

    def as_row(self) -> dict:
        return {"var_id": self.var_id, "var_snl": self.var_snl, "var_en": self.var_en,
                "ratio_rt": self.ratio_rt, "rt_db": self.rt_db,
                "rt_corrected_db": self.rt_corrected_db, "eta_bar": self.eta_bar,
                "flags": ";".join(self.flags)}


def compute_Rt(var_id: float, var_snl: float, var_en: float,
               eta_bar: float | None = None) -> SqueezingResult:
    """Intensity-difference noise relative to the shot-noise limit, with the
    electronic-noise variance removed from both."""
    if var_snl <= var_en:
        raise InvalidCalibrationError("shot-noise variance does not exceed electronic noise")
    if var_id <= var_en:
        return SqueezingResult(var_id, var_snl, var_en, None, None, None, eta_bar,
                               ("unphysical_subtraction",))
    ratio = (var_id - var_en) / (var_snl - var_en)
    flags = ()
    corrected_db = None
    if eta_bar is not None:
        lc = loss_correct(ratio, eta_bar)
        corrected_db = lc.db
        if lc.unphysical:
            flags = ("unphysical_correction",)
    return SqueezingResult(var_id, var_snl, var_en, ratio, _db(ratio), corrected_db,
                           eta_bar, flags)


@dataclass(frozen=True)
class SpectralRatio:
    ratio: float | None
    p_signal: float
    p_snl: float
    p_electronic: float
    unphysical: bool = False

    @property
    def db(self) -> float | None:
        return None if self.ratio is None else _db(self.ratio)


def freq_domain_R(signal: Iterable[VoltageTrace], snl: Iterable[VoltageTrace],
                  electronic: Iterable[VoltageTrace], f0: float = 2.5e6,
                  bandwidth: float = 1e6,
                  detector_bandwidth_hz: float | None = None) -> SpectralRatio:
    """Band-integrated PSD ratio ``(P_sig - P_el) / (P_snl - P_el)`` around ``f0``.

    Each argument is a collection (or iterator) of records; they are reduced
    one at a time so large ensembles need not be held in memory.
    """
    f_lo, f_hi = f0 - bandwidth / 2.0, f0 + bandwidth / 2.0
    if f_lo < 0 or bandwidth <= 0:
        raise ValueError("analysis band must lie above 0 Hz")
    if detector_bandwidth_hz is not None and f_hi >= detector_bandwidth_hz:
        raise ValueError("analysis band extends beyond the detector bandwidth")
    psds = [ensemble_psd(x) for x in (signal, snl, electronic)]
    if any(f_hi > est.freqs[-1] for est in psds):
        raise ValueError("analysis band extends beyond Nyquist")
    return spectral_ratio(*psds, f0=f0, bandwidth=bandwidth)


def spectral_ratio(signal: PsdEstimate, snl: PsdEstimate, electronic: PsdEstimate,
                   f0: float = 2.5e6, bandwidth: float = 1e6) -> SpectralRatio:
    f_lo, f_hi = f0 - bandwidth / 2.0, f0 + bandwidth / 2.0
    ps, pn, pe = (est.band_power(f_lo, f_hi) for est in (signal, snl, electronic))
    if pn <= pe:
        raise InvalidCalibrationError("shot-noise band power does not exceed electronic noise")
    num = ps - pe
    if num <= 0:
        return SpectralRatio(None, ps, pn, pe, unphysical=True)
    return SpectralRatio(num / (pn - pe), ps, pn, pe)
