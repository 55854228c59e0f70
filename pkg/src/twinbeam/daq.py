"""Per-pulse analysis of balanced-detector records.

The repetition grid is known a priori: slot ``n`` is centered at
``first_pulse_offset + n * period``. Within each slot the negative peak is
searched over a drift tolerance, and the samples within half a period either
side of the peak are summed into ``e_n``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .detector import VoltageTrace


class TraceTooShortError(ValueError):
    pass


class WindowOverlapError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass


class LowConfidenceWarning(UserWarning):
    pass


@dataclass
class PulseEstimates:
    e: np.ndarray
    mean_e: float
    var_e: float
    n_pulses: int

    @classmethod
    def from_values(cls, e) -> "PulseEstimates":
        e = np.asarray(e, dtype=float)
        var = float(e.var(ddof=1)) if len(e) > 1 else 0.0
        return cls(e=e, mean_e=float(e.mean()) if len(e) else float("nan"),
                   var_e=var, n_pulses=len(e))

    @classmethod
    def pooled(cls, parts: Sequence["PulseEstimates"]) -> "PulseEstimates":
        return cls.from_values(np.concatenate([p.e for p in parts]))


@dataclass
class PsdEstimate:
    freqs: np.ndarray
    psd: np.ndarray
    n_averages: int

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def band_power(self, f_lo: float, f_hi: float) -> float:
        sel = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return float(self.psd[sel].sum() * self.df)


def slot_centers(trace: VoltageTrace) -> np.ndarray:
    spp = trace.samples_per_period
    if len(trace) < spp:
        raise TraceTooShortError("trace is shorter than one pulse period")
    n_slots = len(trace) // spp
    return trace.first_pulse_index + spp * np.arange(n_slots)


def find_pulse_peaks(trace: VoltageTrace, drift_tolerance: float = 0.1,
                     discard_edges: bool = True) -> np.ndarray:
    """Index of the most negative sample near each grid slot.

    Ties resolve to the sample closest to the slot center, so a flat record
    returns the centers themselves (flagged with ``LowConfidenceWarning``).
    """
    centers = slot_centers(trace)
    if discard_edges:
        centers = centers[1:-1]
    tol = int(np.floor(drift_tolerance * trace.samples_per_period))
    x = trace.samples
    centers = centers[(centers - tol >= 0) & (centers + tol < len(x))]
    offsets = np.arange(-tol, tol + 1)
    # stable argmin over offsets ordered by distance from the center
    order = np.argsort(np.abs(offsets), kind="stable")
    offsets = offsets[order]
    block = x[centers[:, None] + offsets[None, :]]
    peaks = centers + offsets[np.argmin(block, axis=1)]
    if len(block) and np.all(block.max(axis=1) == block.min(axis=1)):
        warnings.warn("flat record: peaks default to slot centers", LowConfidenceWarning,
                      stacklevel=2)
    return peaks


def lock_to_grid(trace: VoltageTrace, peaks: np.ndarray) -> np.ndarray:
    """Replace per-pulse peaks by the grid shifted by their most common offset.

    Per-pulse argmin positions jitter with noise, which would make adjacent
    full-period windows overlap; a single record-level offset cannot.
    """
    if len(peaks) == 0:
        return peaks
    spp = trace.samples_per_period
    rel = (peaks - trace.first_pulse_index) % spp
    rel = np.where(rel >= spp // 2 + spp % 2, rel - spp, rel)
    values, counts = np.unique(rel, return_counts=True)
    best = values[counts == counts.max()]
    shift = int(best[np.argmin(np.abs(best))])
    return peaks - rel + shift


def integrate_windows(trace: VoltageTrace, peaks: np.ndarray) -> PulseEstimates:
    """Sum samples in ``[peak - P/2, peak + P/2)`` for each peak."""
    spp = trace.samples_per_period
    half = spp // 2
    peaks = np.asarray(peaks, dtype=int)
    if len(peaks) > 1 and np.any(np.diff(peaks) < spp):
        raise WindowOverlapError("integration windows overlap; peak finding failed")
    starts = peaks - half
    if len(peaks) and (starts[0] < 0 or starts[-1] + spp > len(trace)):
        raise WindowOverlapError("integration window extends beyond the record")
    csum = np.concatenate([[0.0], np.cumsum(trace.samples)])
    return PulseEstimates.from_values(csum[starts + spp] - csum[starts])


def analyze_trace(trace: VoltageTrace, drift_tolerance: float = 0.1) -> PulseEstimates:
    peaks = find_pulse_peaks(trace, drift_tolerance)
    return integrate_windows(trace, lock_to_grid(trace, peaks))


def correlation_coefficient(est: PulseEstimates, n_shift: int) -> float:
    """Normalized correlation between ``e_n`` and ``e_{n-N}``.

    Uses one mean and one (population) variance for the whole series, which
    makes the zero-shift value exactly one.
    """
    e = est.e
    n_t = len(e)
    if not 0 <= n_shift < n_t:
        raise ValueError(f"shift must satisfy 0 <= N < {n_t}")
    d = e - e.mean()
    var = float(d @ d) / n_t
    if var == 0.0:
        raise UndefinedCorrelationError("zero variance: correlation is undefined")
    if n_shift == 0:
        return 1.0
    return float(d[n_shift:] @ d[:-n_shift]) / ((n_t - n_shift) * var)


def ensemble_correlation(estimates: Sequence[PulseEstimates], shifts) -> np.ndarray:
    """Correlation coefficients averaged over records, one value per shift."""
    return np.array([[correlation_coefficient(est, n) for n in shifts]
                     for est in estimates]).mean(axis=0)


def periodogram(samples: np.ndarray, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram; ``sum(psd) * df`` equals the mean square."""
    n = len(samples)
    power = np.abs(np.fft.rfft(samples)) ** 2 / (sample_rate_hz * n)
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    return np.fft.rfftfreq(n, 1.0 / sample_rate_hz), power


def ensemble_psd(traces: Iterable[VoltageTrace]) -> PsdEstimate:
    """Average periodogram over records, accumulated in iteration order."""
    acc = freqs = None
    count = 0
    for t in traces:
        if acc is None:
            n, fs = len(t), t.sample_rate_hz
        elif len(t) != n or t.sample_rate_hz != fs:
            raise ValueError("traces differ in length or sample rate")
        freqs, p = periodogram(t.samples, fs)
        acc = p if acc is None else acc + p
        count += 1
    if count == 0:
        raise ValueError("no traces supplied")
    return PsdEstimate(freqs=freqs, psd=acc / count, n_averages=count)


def line_mask(freqs: np.ndarray, fundamental: float, halfwidth: float) -> np.ndarray:
    """True for bins within ``halfwidth`` of a nonzero harmonic of ``fundamental``."""
    k = np.round(freqs / fundamental)
    return (k >= 1) & (np.abs(freqs - k * fundamental) <= halfwidth)


def psd_corner(est: PsdEstimate, reference_band=(1e6, 20e6), rep_rate_hz: float | None = None,
               smooth_bins: int = 9) -> float:
    """First frequency where the (line-free, smoothed) PSD falls 3 dB below its
    low-frequency reference level."""
    f, p = est.freqs, est.psd.copy()
    keep = f > 0
    if rep_rate_hz:
        keep &= ~line_mask(f, rep_rate_hz, halfwidth=2 * est.df)
    f, p = f[keep], p[keep]
    ref = np.median(p[(f >= reference_band[0]) & (f <= reference_band[1])])
    sm = np.convolve(p, np.ones(smooth_bins) / smooth_bins, mode="same")
    above = f > reference_band[1]
    idx = np.nonzero(above & (sm < 0.5 * ref))[0]
    if len(idx) == 0:
        return float("inf")
    i = idx[0]
    # linear interpolation between the straddling bins
    f0, f1, s0, s1 = f[i - 1], f[i], sm[i - 1], sm[i]
    return float(f0 + (0.5 * ref - s0) * (f1 - f0) / (s1 - s0))


def line_strength(est: PsdEstimate, freq: float, neighbors: int = 20) -> float:
    """PSD at ``freq`` relative to the median of nearby bins."""
    i = int(np.argmin(np.abs(est.freqs - freq)))
    lo, hi = max(i - neighbors, 1), min(i + neighbors + 1, len(est.psd))
    around = np.r_[est.psd[lo:i - 1], est.psd[i + 2:hi]]
    return float(est.psd[i] / np.median(around))


def histogram(est: PulseEstimates, n_bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bins over ``[min, max]``; returns ``(edges, counts)``."""
    if est.n_pulses < 1:
        raise ValueError("cannot histogram an empty series")
    lo, hi = float(est.e.min()), float(est.e.max())
    if lo == hi:
        edges = np.array([lo - 0.5, lo + 0.5]) if n_bins == 1 else \
            np.linspace(lo - 0.5, hi + 0.5, n_bins + 1)
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    counts, edges = np.histogram(est.e, bins=edges)
    return edges, counts


def histogram_moments(edges: np.ndarray, counts: np.ndarray) -> tuple[float, float]:
    centers = 0.5 * (edges[1:] + edges[:-1])
    n = counts.sum()
    mean = float(counts @ centers / n)
    var = float(counts @ (centers - mean) ** 2 / (n - 1))
    return mean, var


def write_estimates_csv(path, est: PulseEstimates, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["pulse_index", "e_n_v"])
        for i, v in enumerate(est.e):
            w.writerow([i, repr(float(v))])


def write_psd_csv(path, est: PsdEstimate, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["freq_hz", "psd_v2_per_hz"])
        for f, p in zip(est.freqs, est.psd):
            w.writerow([repr(float(f)), repr(float(p))])
