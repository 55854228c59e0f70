"""Data bundles behind each reproduced figure (tables only, no rendering)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model, pipeline as pl
from .calibration import equivalent_power
from .daq import PulseEstimates, ensemble_correlation, line_strength, psd_corner
from .config import ScenarioConfig

FIGURES = ("fig2b", "fig2c", "fig2d", "fig3a", "fig3c", "fig4")


class UnknownFigureError(KeyError):
    pass


@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class Bundle:
    figure: str
    tables: list
    summary: dict = field(default_factory=dict)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, table: Table, comment: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def write_bundle(bundle: Bundle, out_dir, cfg: ScenarioConfig) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comment = (f"figure={bundle.figure} config_hash={cfg.config_hash()} "
               f"master_seed={cfg.master_seed}")
    paths = []
    for t in bundle.tables:
        p = out_dir / f"{bundle.figure}_{t.name}.csv"
        write_table(p, t, comment)
        paths.append(p)
    p = out_dir / f"{bundle.figure}_summary.json"
    p.write_text(json.dumps({"figure": bundle.figure, "config_hash": cfg.config_hash(),
                             "master_seed": cfg.master_seed, **bundle.summary},
                            indent=2, sort_keys=True, default=float) + "\n")
    paths.append(p)
    return paths


def fig2b(cfg: ScenarioConfig) -> Bundle:
    """Shot-noise PSDs at several powers plus the dark record."""
    records = cfg.section("daq")["records"]
    p_op = pl.operating_power(cfg)
    levels = [0.0, 0.5, 1.0, 2.0]
    psds = [pl.snl_psd(cfg, f * p_op, records, key=i) for i, f in enumerate(levels)]
    header = ["freq_hz"] + [f"psd_{f:g}x_v2_per_hz" for f in levels]
    rows = [[f, *vals] for f, *vals in zip(psds[0].freqs, *(e.psd for e in psds))]
    rep = 1.0 / cfg.detector.pulse_period_s
    summary = {
        "operating_power_per_pd": p_op,
        "corner_hz": psd_corner(psds[2], rep_rate_hz=rep),
        "line_strength_at_rep_rate": line_strength(psds[2], rep),
        "configured_bandwidth_hz": cfg.detector.bandwidth_hz,
    }
    return Bundle("fig2b", [Table("psd", header, rows)], summary)


def fig2c(cfg: ScenarioConfig, max_shift: int = 10) -> Bundle:
    records = cfg.section("daq")["records"]
    ests = pl.snl_estimates(cfg, pl.operating_power(cfg), records)
    shifts = list(range(max_shift + 1))
    c = ensemble_correlation(ests, shifts)
    return Bundle("fig2c", [Table("c_id", ["shift_n", "c_id"], [[n, v] for n, v in
                                                               zip(shifts, c)])],
                  {"records": records})


def fig2d(cfg: ScenarioConfig, fit=None) -> Bundle:
    fit = fit or pl.calibrate(cfg)
    rows = [[p, v, fit.slope * p + fit.intercept] for p, v in fit.points]
    lo, hi = fit.intercept_interval()
    return Bundle("fig2d", [Table("calibration", ["power_per_pd_photons", "variance_v2",
                                                   "fit_v2"], rows)],
                  {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
                   "intercept_ci95": [lo, hi]})


def _shared_hist(series: list[PulseEstimates], n_bins: int):
    lo = min(float(s.e.min()) for s in series)
    hi = max(float(s.e.max()) for s in series)
    edges = np.linspace(lo, hi, n_bins + 1)
    return edges, [np.histogram(s.e, bins=edges)[0] for s in series]


def fig3a(cfg: ScenarioConfig, fit=None) -> Bundle:
    """Histograms of e_n: twin beams and shot noise (shared bins); dark record."""
    daq = cfg.section("daq")
    fit = fit or pl.calibrate(cfg)
    dark = pl.dark_estimates(cfg)
    meas = pl.measure_time_domain(cfg, fit, cfg.fopa.gain_g, 0, dark)
    st = model.detected_stats(cfg.fopa, meas.detection)
    snl = PulseEstimates.pooled(pl.snl_estimates(
        cfg, equivalent_power(st.mean_s, st.mean_i, meas.detection.gain_ratio_r),
        daq["records"], classical_noise_frac=0.0))
    edges, (c_id, c_snl) = _shared_hist([meas.signal, snl], daq["hist_bins"])
    hist = Table("hist_id_snl", ["bin_left_v", "bin_right_v", "count_id", "count_snl"],
                 [[a, b, int(x), int(y)] for a, b, x, y in
                  zip(edges[:-1], edges[1:], c_id, c_snl)])
    e_edges, (c_en,) = _shared_hist([dark], daq["hist_bins"])
    en = Table("hist_en", ["bin_left_v", "bin_right_v", "count_en"],
               [[a, b, int(x)] for a, b, x in zip(e_edges[:-1], e_edges[1:], c_en)])
    r = meas.result
    return Bundle("fig3a", [hist, en], {
        "var_id": r.var_id, "var_snl_fit": r.var_snl, "var_snl_direct": snl.var_e,
        "var_en": r.var_en, "rt_db": r.rt_db, "rt_corrected_db": r.rt_corrected_db,
        "predicted_db": float(model.to_db(meas.predicted_R)), "n_pulses": meas.signal.n_pulses})


def fig3c(cfg: ScenarioConfig, fit=None) -> Bundle:
    sweep = cfg.section("sweep")
    fit = fit or pl.calibrate(cfg)
    dark = pl.dark_estimates(cfg)
    rows = []
    for k, g in enumerate(sweep["gains"]):
        m = pl.measure_time_domain(cfg, fit, g, k, dark, records=sweep["records"])
        r = m.result
        rows.append([float(g), r.ratio_rt, r.rt_db, float(model.to_db(m.predicted_R)),
                     ";".join(r.flags)])
    measured = Table("measured", ["gain", "ratio_rt", "rt_db", "predicted_db", "flags"], rows)
    gains = np.linspace(1.0, max(sweep["gains"]) * 1.25, sweep["curve_points"])
    curve = []
    for g in gains:
        p = pl.fopa_at(cfg, g)
        curve.append([g, float(model.to_db(model.predict_R(p, pl.detection_for(cfg, p))))])
    return Bundle("fig3c", [measured, Table("predicted", ["gain", "predicted_db"], curve)],
                  {"xi": cfg.fopa.seed_excess_noise_xi, "balanced": cfg.balance})


def fig4(cfg: ScenarioConfig) -> Bundle:
    """Frequency-domain ratio vs gain for two seed powers, plus the optimized-r inset."""
    fsec = cfg.section("frequency")
    dark = pl.freq_dark_psd(cfg)
    rows = []
    for s, seed_scale in enumerate((1.0, 0.2)):
        sub = cfg.with_overrides(fopa={"seed_photons_n0": cfg.fopa.seed_photons_n0 * seed_scale})
        for k, g in enumerate(fsec["gains"]):
            m = pl.measure_frequency_domain(sub, g, 100 * s + k, dark)
            sp = m.spectral
            rows.append([seed_scale, float(g), sp.ratio, sp.db,
                         float(model.to_db(m.predicted_R)), "unphysical" if sp.unphysical
                         else ""])
    measured = Table("measured", ["seed_uw", "gain", "ratio", "ratio_db", "predicted_db",
                                  "flags"], rows)
    inset = []
    for g in np.geomspace(1.5, 400.0, 60):
        p = pl.fopa_at(cfg, g)
        r_opt, r_min = model.optimal_r(p, fsec["eta_s"], fsec["eta_i"])
        r1 = model.predict_R(p, model.DetectionChain(fsec["eta_s"], fsec["eta_i"]))
        inset.append([float(g), r_opt, float(model.to_db(r_min)), float(model.to_db(r1))])
    return Bundle("fig4", [measured, Table("inset_optimal_r", ["gain", "r_opt", "r_min_db",
                                                               "r1_db"], inset)],
                  {"f0_hz": fsec["f0_hz"], "bandwidth_hz": fsec["bandwidth_hz"]})


def reproduce(figure: str, cfg: ScenarioConfig) -> Bundle:
    builders = {"fig2b": fig2b, "fig2c": fig2c, "fig2d": fig2d, "fig3a": fig3a,
                "fig3c": fig3c, "fig4": fig4}
    if figure not in builders:
        raise UnknownFigureError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    return builders[figure](cfg)
