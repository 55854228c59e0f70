"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 precondition failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import figures, model, pipeline as pl
from .calibration import FitError, load_fit, save_fit, write_points_csv
from .config import ENV_VAR, ScenarioConfig, load_config
from .daq import (PulseEstimates, analyze_trace, ensemble_correlation, ensemble_psd,
                  histogram, write_psd_csv)
from .detector import ConfigurationError
from .metrics import InvalidCalibrationError, compute_Rt
from .traceio import TraceFormatError, read_trace, write_trace

log = logging.getLogger("twinbeam")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_IO = 0, 2, 3, 4

RESULT_COLUMNS = ["g", "eta_s", "eta_i", "r", "ratio_rt", "rt_db", "rt_corrected_db",
                  "predicted_db", "flags"]


class MissingCalibrationError(FileNotFoundError):
    pass


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _comment(cfg: ScenarioConfig, what: str) -> str:
    return f"{what} config_hash={cfg.config_hash()} master_seed={cfg.master_seed}"


def _out_dir(cfg: ScenarioConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(cfg: ScenarioConfig, args) -> int:
    powers = pl.calibration_powers(cfg)
    fit = pl.calibrate(cfg, powers=powers)
    out = _out_dir(cfg, args)
    rec = out / "calibration.json"
    save_fit(rec, fit, master_seed=cfg.master_seed,
             inputs={"powers_per_pd": powers, "config_hash": cfg.config_hash(),
                     "reps": cfg.section("calibration")["reps"],
                     "classical_noise_frac": cfg.section("calibration")["classical_noise_frac"]})
    write_points_csv(out / "calibration_points.csv", fit, _comment(cfg, "calibration"))
    log.info("slope=%.6g intercept=%.6g r_squared=%.6f -> %s", fit.slope, fit.intercept,
             fit.r_squared, rec)
    print(rec)
    return EXIT_OK


def cmd_measure(cfg: ScenarioConfig, args) -> int:
    cal_path = Path(args.calibration)
    if not cal_path.exists():
        raise MissingCalibrationError(f"calibration file {cal_path} not found; run calibrate")
    fit, _ = load_fit(cal_path)
    out = _out_dir(cfg, args)
    dark = pl.dark_estimates(cfg)
    gains = args.gains or cfg.section("measure")["gains"]
    records = args.records or cfg.section("daq")["records"]
    rows = []
    for k, g in enumerate(gains):
        m = pl.measure_time_domain(cfg, fit, g, k, dark, records=records)
        r = m.result
        rows.append([float(g), m.detection.eta_s, m.detection.eta_i,
                     m.detection.gain_ratio_r, r.ratio_rt, r.rt_db, r.rt_corrected_db,
                     float(model.to_db(m.predicted_R)), ";".join(r.flags)])
        edges, counts = histogram(m.signal, cfg.section("daq")["hist_bins"])
        with open(out / f"histogram_g{g:g}.csv", "w", newline="") as fh:
            fh.write(f"# {_comment(cfg, f'histogram g={g:g}')}\n")
            w = csv.writer(fh)
            w.writerow(["bin_left_v", "bin_right_v", "count"])
            for a, b, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([_fmt(a), _fmt(b), int(c)])
        log.info("g=%g R_t=%s dB (predicted %.3f dB)", g, r.rt_db, model.to_db(m.predicted_R))
    path = out / "measure.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_comment(cfg, 'measure')}\n")
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    (out / "measure.json").write_text(json.dumps(
        [dict(zip(RESULT_COLUMNS, row)) for row in rows], indent=2) + "\n")
    print(path)
    return EXIT_OK


def cmd_predict(cfg: ScenarioConfig, args) -> int:
    gains = args.gains or cfg.section("sweep")["gains"]
    d = cfg.detection
    out = _out_dir(cfg, args)
    path = out / "predict.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_comment(cfg, 'predict')}\n")
        w = csv.writer(fh)
        w.writerow(["g", "eta_s", "eta_i", "r", "predicted_R", "predicted_db", "r_opt",
                    "r_min", "r_min_db"])
        for g in gains:
            p = pl.fopa_at(cfg, g)
            dd = pl.detection_for(cfg, p)
            rr = model.predict_R(p, dd)
            try:
                r_opt, r_min = model.optimal_r(p, d.eta_s, d.eta_i)
                r_min_db = float(model.to_db(r_min))
            except model.DegenerateInputError:
                r_opt = r_min = r_min_db = None     # no idler: gain ratio undefined
            w.writerow([_fmt(float(g)), _fmt(dd.eta_s), _fmt(dd.eta_i), _fmt(dd.gain_ratio_r),
                        _fmt(rr), _fmt(float(model.to_db(rr))), _fmt(r_opt), _fmt(r_min),
                        _fmt(r_min_db)])
    print(path)
    return EXIT_OK


def cmd_simulate_traces(cfg: ScenarioConfig, args) -> int:
    out = _out_dir(cfg, args)
    n_t = cfg.section("daq")["n_t"]
    p = cfg.fopa
    d = pl.detection_for(cfg, p)
    st = model.detected_stats(p, d)
    power = (st.mean_s + d.gain_ratio_r ** 2 * st.mean_i) / (1 + d.gain_ratio_r ** 2)
    for rec in range(args.count):
        if args.kind == "signal":
            tr, _ = pl.signal_trace(p, d, cfg.detector, n_t, cfg.master_seed, 0, rec)
        elif args.kind == "dark":
            tr = pl.dark_trace(cfg.detector, d, n_t, cfg.master_seed, rec)
        else:
            tr = pl.snl_trace(power, cfg.section("calibration")["classical_noise_frac"],
                              cfg.detector, d, n_t, cfg.master_seed, 0, rec)
        write_trace(out / f"{args.kind}_{rec:05d}.tbt", tr)
    print(out)
    return EXIT_OK


def cmd_analyze(cfg: ScenarioConfig, args) -> int:
    out = _out_dir(cfg, args)
    tol = cfg.section("daq")["drift_tolerance"]
    traces = [read_trace(p) for p in args.traces]
    ests = [analyze_trace(t, tol) for t in traces]
    pooled = PulseEstimates.pooled(ests)
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "pulse_index", "e_n_v"])
        for rec, est in enumerate(ests):
            for i, v in enumerate(est.e):
                w.writerow([rec, i, _fmt(v)])
    write_psd_csv(out / "psd.csv", ensemble_psd(traces))
    shifts = list(range(11))
    summary = {"records": len(ests), "n_pulses": pooled.n_pulses, "mean_e": pooled.mean_e,
               "var_e": pooled.var_e,
               "c_id": dict(zip(shifts, map(float, ensemble_correlation(ests, shifts))))}
    if args.dark:
        dark = PulseEstimates.pooled([analyze_trace(read_trace(p), tol) for p in args.dark])
        summary["var_en"] = dark.var_e
        if args.calibration and args.power is not None:
            fit, _ = load_fit(args.calibration)
            var_snl = fit.slope * args.power + fit.intercept
            res = compute_Rt(pooled.var_e, var_snl, dark.var_e)
            summary.update(var_snl=var_snl, ratio_rt=res.ratio_rt, rt_db=res.rt_db,
                           flags=list(res.flags))
    (out / "analysis.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(out / "analysis.json")
    return EXIT_OK


def cmd_reproduce_figure(cfg: ScenarioConfig, args) -> int:
    bundle = figures.reproduce(args.figure, cfg)
    out = _out_dir(cfg, args)
    for p in figures.write_bundle(bundle, out, cfg):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="twinbeam",
        description="Simulate and analyze pulsed twin-beam intensity-difference measurements.")
    ap.add_argument("--config", help=f"YAML scenario file (default: ${ENV_VAR})")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE", help="override one config value")
    ap.add_argument("--seed", type=int, help="master seed (overrides seeds.master)")
    ap.add_argument("--workers", type=int, help="parallel records (overrides outputs.workers)")
    ap.add_argument("--out", help="output directory (overrides outputs.directory)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("calibrate", help="shot-noise calibration sweep and linear fit")

    p = sub.add_parser("measure", help="time-domain ratio at one or more gains")
    p.add_argument("--calibration", required=True, help="calibration record (JSON)")
    p.add_argument("--gains", type=float, nargs="+")
    p.add_argument("--records", type=int)

    p = sub.add_parser("predict", help="analytic ratio and optimal gain-ratio table")
    p.add_argument("--gains", type=float, nargs="+")

    p = sub.add_parser("simulate-traces", help="write TBT1 trace files")
    p.add_argument("--kind", choices=["signal", "dark", "snl"], default="signal")
    p.add_argument("--count", type=int, default=10)

    p = sub.add_parser("analyze", help="analyze external TBT1 trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--dark", nargs="+", help="electronic-noise-only traces")
    p.add_argument("--calibration", help="calibration record for the SNL variance")
    p.add_argument("--power", type=float, help="per-diode power in calibration units")

    p = sub.add_parser("reproduce-figure", help="emit the data behind a figure")
    p.add_argument("figure", help=", ".join(figures.FIGURES))
    return ap


COMMANDS = {
    "calibrate": cmd_calibrate,
    "measure": cmd_measure,
    "predict": cmd_predict,
    "simulate-traces": cmd_simulate_traces,
    "analyze": cmd_analyze,
    "reproduce-figure": cmd_reproduce_figure,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seeds.master={args.seed}")
    if args.workers is not None:
        overrides.append(f"outputs.workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, model.ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, TraceFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, InvalidCalibrationError, model.DegenerateInputError,
            figures.UnknownFigureError, ValueError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
