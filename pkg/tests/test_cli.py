import csv
import json

import pytest

from twinbeam.cli import main
from twinbeam.config import ENV_VAR, load_config

FAST = ["--set", "daq.records=10", "--set", "calibration.reps=3"]
LOW_NOISE = ["--set", "detector.en_variance=3e-5"]


def run(tmp_path, *args):
    return main(["--out", str(tmp_path), *args])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def body(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


class TestPredict:
    def test_table(self, tmp_path):
        assert run(tmp_path, "predict", "--gains", "1", "10", "64") == 0
        table = rows(tmp_path / "predict.csv")
        assert [float(r["g"]) for r in table] == [1.0, 10.0, 64.0]
        assert float(table[0]["predicted_R"]) == pytest.approx(1.0)
        assert table[0]["r_opt"] == ""
        assert float(table[2]["predicted_db"]) == pytest.approx(-4.81, abs=0.01)
        assert float(table[2]["r_min"]) <= float(table[2]["predicted_R"])
        assert float(table[2]["eta_s"]) == pytest.approx(0.68 * 63 / 64)


class TestCalibrate:
    def test_default_is_linear(self, tmp_path):
        assert run(tmp_path, "calibrate") == 0
        record = json.loads((tmp_path / "calibration.json").read_text())
        assert record["fit"]["r_squared"] > 0.99
        assert record["master_seed"] == 20211
        assert len(rows(tmp_path / "calibration_points.csv")) == 9

    def test_deterministic_except_timestamp(self, tmp_path):
        for sub in ("a", "b"):
            assert run(tmp_path / sub, *FAST, "calibrate") == 0
        a, b = (json.loads((tmp_path / s / "calibration.json").read_text()) for s in "ab")
        a.pop("timestamp"), b.pop("timestamp")
        assert a == b
        assert body(tmp_path / "a" / "calibration_points.csv") == \
            body(tmp_path / "b" / "calibration_points.csv")

    def test_single_power_fails(self, tmp_path, capsys):
        assert run(tmp_path, *FAST, "--set", "calibration.powers=[1.0e6]", "calibrate") == 3
        assert "three distinct powers" in capsys.readouterr().err


class TestMeasure:
    def test_missing_calibration(self, tmp_path, capsys):
        rc = run(tmp_path, *FAST, "measure", "--calibration", str(tmp_path / "nope.json"))
        assert rc == 4
        assert "not found" in capsys.readouterr().err
        assert not (tmp_path / "calibration.json").exists()

    def test_no_gain_sits_at_shot_noise(self, tmp_path):
        common = [*LOW_NOISE, "--set", "daq.records=200"]
        assert run(tmp_path, *common, "--set", "calibration.powers=[0, 5.0e4, 1.0e5, 1.5e5]",
                   "--set", "calibration.reps=50", "calibrate") == 0
        assert run(tmp_path, *common, "measure", "--calibration",
                   str(tmp_path / "calibration.json"), "--gains", "1") == 0
        (row,) = rows(tmp_path / "measure.csv")
        assert float(row["predicted_db"]) == 0.0
        assert float(row["ratio_rt"]) == pytest.approx(1.0, abs=0.15)
        hist = rows(tmp_path / "histogram_g1.csv")
        assert sum(int(h["count"]) for h in hist) == 200 * 248

    def test_excess_noise_degrades_with_gain(self, tmp_path):
        common = [*LOW_NOISE, "--set", "detection.balance=false",
                  "--set", "fopa.seed_excess_noise_xi=5", "--set", "daq.records=200",
                  "--set", "calibration.reps=20"]
        assert run(tmp_path, *common, "calibrate") == 0
        assert run(tmp_path, *common, "measure", "--calibration",
                   str(tmp_path / "calibration.json"),
                   "--gains", "30", "40", "50", "64", "80") == 0
        table = rows(tmp_path / "measure.csv")
        measured = [float(r["rt_db"]) for r in table]
        assert all(b > a for a, b in zip(measured, measured[1:]))
        for r in table:
            assert float(r["rt_db"]) == pytest.approx(float(r["predicted_db"]), abs=0.3)

    def test_bit_identical_and_worker_independent(self, tmp_path):
        assert run(tmp_path, *FAST, "calibrate") == 0
        cal = str(tmp_path / "calibration.json")
        outs = []
        for sub, workers in (("a", "1"), ("b", "1"), ("c", "3")):
            assert run(tmp_path / sub, *FAST, "--workers", workers, "measure",
                       "--calibration", cal, "--gains", "20", "64") == 0
            outs.append(tmp_path / sub)
        for name in ("measure.csv", "histogram_g64.csv"):
            ref = body(outs[0] / name)
            assert all(body(o / name) == ref for o in outs[1:])

    def test_seed_changes_output(self, tmp_path):
        assert run(tmp_path, *FAST, "calibrate") == 0
        cal = str(tmp_path / "calibration.json")
        for sub, seed in (("a", "1"), ("b", "2")):
            assert run(tmp_path / sub, *FAST, "--seed", seed, "measure", "--calibration", cal) == 0
        assert body(tmp_path / "a" / "measure.csv") != body(tmp_path / "b" / "measure.csv")


class TestFigures:
    def test_unknown(self, tmp_path, capsys):
        assert run(tmp_path, "reproduce-figure", "fig9") == 3
        assert "unknown figure" in capsys.readouterr().err

    def test_fig2c(self, tmp_path):
        assert run(tmp_path, *FAST, "reproduce-figure", "fig2c") == 0
        table = rows(tmp_path / "fig2c_c_id.csv")
        assert [int(r["shift_n"]) for r in table] == list(range(11))
        assert float(table[0]["c_id"]) == 1.0

    def test_fig3c_has_measured_and_predicted(self, tmp_path):
        assert run(tmp_path, *FAST, "--set", "sweep.records=5", "--set", "sweep.curve_points=7",
                   "reproduce-figure", "fig3c") == 0
        measured = rows(tmp_path / "fig3c_measured.csv")
        predicted = rows(tmp_path / "fig3c_predicted.csv")
        assert {"rt_db", "predicted_db"} <= set(measured[0])
        assert len(measured) == 7 and len(predicted) == 7
        assert float(predicted[0]["predicted_db"]) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("fig", ["fig2b", "fig2d", "fig3a", "fig4"])
    def test_other_bundles(self, tmp_path, fig):
        args = [*FAST, "--set", "frequency.records=3", "--set", "frequency.gains=[5, 20]"]
        assert run(tmp_path, *args, "reproduce-figure", fig) == 0
        summary = json.loads((tmp_path / f"{fig}_summary.json").read_text())
        assert summary["figure"] == fig and summary["master_seed"] == 20211
        assert summary["config_hash"] == load_config(
            overrides=[a for a in args if a != "--set"]).config_hash()

    def test_fig4_inset(self, tmp_path):
        args = ["--set", "frequency.records=3", "--set", "frequency.gains=[20]"]
        assert run(tmp_path, *args, "reproduce-figure", "fig4") == 0
        inset = rows(tmp_path / "fig4_inset_optimal_r.csv")
        assert all(float(r["r_min_db"]) <= float(r["r1_db"]) + 1e-12 for r in inset)
        assert len(rows(tmp_path / "fig4_measured.csv")) == 2

    def test_figure_determinism(self, tmp_path):
        for sub in ("a", "b"):
            assert run(tmp_path / sub, *FAST, "reproduce-figure", "fig2c") == 0
        assert body(tmp_path / "a" / "fig2c_c_id.csv") == body(tmp_path / "b" / "fig2c_c_id.csv")


class TestTraces:
    def test_simulate_then_analyze(self, tmp_path):
        assert run(tmp_path, *FAST, "calibrate") == 0
        assert run(tmp_path / "sig", "simulate-traces", "--kind", "signal", "--count", "3") == 0
        assert run(tmp_path / "dark", "simulate-traces", "--kind", "dark", "--count", "3") == 0
        sig = sorted(str(p) for p in (tmp_path / "sig").glob("*.tbt"))
        dark = sorted(str(p) for p in (tmp_path / "dark").glob("*.tbt"))
        assert len(sig) == 3
        assert run(tmp_path / "an", "analyze", *sig, "--dark", *dark, "--calibration",
                   str(tmp_path / "calibration.json"), "--power", "6.6e6") == 0
        summary = json.loads((tmp_path / "an" / "analysis.json").read_text())
        assert summary["n_pulses"] == 3 * 248
        assert summary["c_id"]["0"] == 1.0
        assert summary["ratio_rt"] > 0
        assert rows(tmp_path / "an" / "psd.csv")[0].keys() == {"freq_hz", "psd_v2_per_hz"}

    def test_bad_trace_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.tbt"
        bad.write_bytes(b"NOPE" + bytes(40))
        assert run(tmp_path, "analyze", str(bad)) == 4
        assert "magic" in capsys.readouterr().err


class TestConfig:
    def test_env_var(self, tmp_path, monkeypatch):
        cfg = tmp_path / "scenario.yaml"
        cfg.write_text("fopa:\n  gain_g: 10\ndetection:\n  balance: false\n")
        monkeypatch.setenv(ENV_VAR, str(cfg))
        assert run(tmp_path, "predict", "--gains", "10") == 0
        (row,) = rows(tmp_path / "predict.csv")
        assert float(row["eta_s"]) == 0.70

    def test_config_flag_and_hash(self, tmp_path):
        cfg = tmp_path / "scenario.yaml"
        cfg.write_text("seeds:\n  master: 7\n")
        assert run(tmp_path, "--config", str(cfg), "predict") == 0
        first = (tmp_path / "predict.csv").read_text().splitlines()[0]
        assert "master_seed=7" in first
        assert f"config_hash={load_config(cfg).config_hash()}" in first

    @pytest.mark.parametrize("text", ["nonsense: {}\n", "fopa:\n  gain_g: 0.5\n",
                                      "detector:\n  adc_bits: 4\n", "[1, 2]\n"])
    def test_bad_config(self, tmp_path, text):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(text)
        assert run(tmp_path, "--config", str(cfg), "predict") == 2

    def test_bad_override(self, tmp_path):
        assert run(tmp_path, "--set", "no_equals_sign", "predict") == 2

    def test_exponent_literals(self):
        cfg = load_config(overrides=["detector.en_variance=1e-5"])
        assert cfg.section("detector")["en_variance"] == 1e-5

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("calibrate", "measure", "predict", "simulate-traces", "analyze",
                    "reproduce-figure"):
            assert cmd in out
