"""Shot-noise-limit calibration: variance of windowed integrals versus power."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .daq import PulseEstimates, analyze_trace
from .detector import DetectorModel, synthesize_snl_calibration_pair
from .model import DetectionChain, ParameterError
from .seeds import derive_seed

SCHEMA_VERSION = 1


class FitError(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


@dataclass
class CalibrationFit:
    slope: float
    intercept: float
    r_squared: float
    points: list
    slope_stderr: float = 0.0
    intercept_stderr: float = 0.0
    power_unit: str = "detected photons per pulse per diode"
    variance_unit: str = "V^2"

    @property
    def power_range(self) -> tuple[float, float]:
        p = [pt[0] for pt in self.points]
        return min(p), max(p)

    def intercept_interval(self, confidence: float = 0.95) -> tuple[float, float]:
        dof = max(len(self.points) - 2, 1)
        half = stats.t.ppf(0.5 + confidence / 2.0, dof) * self.intercept_stderr
        return self.intercept - half, self.intercept + half


@dataclass
class CalibrationSim:
    """What the calibration sweep feeds to the detector."""
    detector: DetectorModel
    detection: DetectionChain
    n_t: int = 250
    classical_noise_frac: float = 0.0
    drift_tolerance: float = 0.1
    quantization: bool = True   # off only for idealized (undithered) sweeps


def fit_line(powers, variances) -> CalibrationFit:
    """Ordinary least-squares line through ``(power, variance)`` points."""
    x = np.asarray(powers, dtype=float)
    y = np.asarray(variances, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise FitError("need at least two distinct powers for a line fit")
    res = stats.linregress(x, y)
    if len(x) > 2:
        slope_se, icpt_se = float(res.stderr), float(res.intercept_stderr)
    else:
        slope_se = icpt_se = 0.0
    r2 = float(res.rvalue ** 2) if np.ptp(y) > 0 else 1.0
    return CalibrationFit(slope=float(res.slope), intercept=float(res.intercept),
                          r_squared=r2, points=[(float(a), float(b)) for a, b in zip(x, y)],
                          slope_stderr=slope_se, intercept_stderr=icpt_se)


def calibration_point(power: float, sim: CalibrationSim, n_reps: int, master_seed: int,
                      point_index: int) -> PulseEstimates:
    ests = []
    for rep in range(n_reps):
        tr = synthesize_snl_calibration_pair(
            power, sim.classical_noise_frac, sim.detector, sim.detection, sim.n_t,
            derive_seed(master_seed, "calibration", point_index, rep),
            quantization=sim.quantization)
        ests.append(analyze_trace(tr, sim.drift_tolerance))
    return PulseEstimates.pooled(ests)


def run_snl_calibration(powers, n_reps: int, sim: CalibrationSim, rng_seed: int,
                        executor=None) -> CalibrationFit:
    """Sweep the split-beam power, pool ``e_n`` per point, fit variance vs power."""
    powers = [float(p) for p in powers]
    if len(set(powers)) < 3:
        raise FitError("calibration needs at least three distinct powers")
    if n_reps < 1:
        raise ParameterError("n_reps must be >= 1")
    jobs = [(p, sim, n_reps, rng_seed, i) for i, p in enumerate(powers)]
    if executor is None:
        pooled = [calibration_point(*job) for job in jobs]
    else:
        pooled = list(executor.map(lambda job: calibration_point(*job), jobs))
    return fit_line(powers, [est.var_e for est in pooled])


def snl_at_power(fit: CalibrationFit, power: float) -> float:
    if power < 0:
        raise ParameterError("power must be >= 0")
    lo, hi = fit.power_range
    if power > 2.0 * hi:
        warnings.warn(f"power {power:g} is beyond twice the calibrated range",
                      ExtrapolationWarning, stacklevel=2)
    return fit.slope * power + fit.intercept


def equivalent_power(mean_s: float, mean_i: float, r: float = 1.0) -> float:
    """Per-diode calibration power with the same shot noise as a twin-beam pair.

    A split beam of ``P`` per diode gives shot variance ``(1 + r^2) P``; a pair
    with means ``mean_s``, ``mean_i`` gives ``mean_s + r^2 mean_i``.
    """
    return (mean_s + r * r * mean_i) / (1.0 + r * r)


def save_fit(path, fit: CalibrationFit, *, inputs: dict, master_seed: int,
             timestamp: str | None = None) -> None:
    record = {
        "schema_version": SCHEMA_VERSION,
        "inputs": inputs,
        "master_seed": master_seed,
        "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "fit": {k: v for k, v in asdict(fit).items()},
    }
    record["fit"]["points"] = [list(p) for p in fit.points]
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def load_fit(path) -> tuple[CalibrationFit, dict]:
    record = json.loads(Path(path).read_text())
    if record.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported calibration schema {record.get('schema_version')!r}")
    f = dict(record["fit"])
    f["points"] = [tuple(p) for p in f["points"]]
    return CalibrationFit(**f), record


def write_points_csv(path, fit: CalibrationFit, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["power_per_pd_photons", "variance_v2", "fit_v2"])
        for p, v in fit.points:
            w.writerow([repr(p), repr(v), repr(fit.slope * p + fit.intercept)])
