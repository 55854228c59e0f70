import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twinbeam import detector as det, metrics, model
from twinbeam.detector import VoltageTrace
from twinbeam.metrics import InvalidCalibrationError


class TestComputeRt:
    def test_reported_variances(self):
        res = metrics.compute_Rt(4.80e-4, 6.11e-4, 3.86e-4)
        assert res.ratio_rt == pytest.approx(0.418, abs=0.001)
        assert res.rt_db == pytest.approx(-3.79, abs=0.02)
        assert res.flags == ()

    def test_equal_to_snl(self):
        assert metrics.compute_Rt(5.0, 5.0, 1.0).ratio_rt == 1.0
        assert metrics.compute_Rt(5.0, 5.0, 1.0).rt_db == 0.0

    def test_half(self):
        res = metrics.compute_Rt(0.5, 1.0, 0.0)
        assert res.ratio_rt == 0.5
        assert res.rt_db == pytest.approx(-3.0103, abs=1e-4)

    def test_invalid_calibration(self):
        with pytest.raises(InvalidCalibrationError):
            metrics.compute_Rt(1.0, 1.0, 1.0)

    def test_unphysical_subtraction_is_flagged(self):
        res = metrics.compute_Rt(0.9, 2.0, 1.0)
        assert res.ratio_rt is None and res.rt_db is None
        assert "unphysical_subtraction" in res.flags

    def test_correction_attached(self):
        res = metrics.compute_Rt(4.80e-4, 6.11e-4, 3.86e-4, eta_bar=0.69)
        assert res.rt_corrected_db == pytest.approx(-8.1, abs=0.15)
        assert res.as_row()["eta_bar"] == 0.69

    def test_unphysical_correction_is_flagged(self):
        res = metrics.compute_Rt(1.1, 2.0, 1.0, eta_bar=0.5)
        assert res.ratio_rt == pytest.approx(0.1)
        assert res.rt_corrected_db is None and res.flags == ("unphysical_correction",)

    @given(a=st.floats(1e-6, 1.0), b=st.floats(1e-6, 1.0), en=st.floats(0.0, 1.0),
           snl=st.floats(1e-3, 2.0))
    def test_monotone_in_var_id(self, a, b, en, snl):
        lo, hi = sorted((a, b))
        if lo == hi:
            return
        var_snl = en + snl
        r_lo = metrics.compute_Rt(en + lo, var_snl, en).ratio_rt
        r_hi = metrics.compute_Rt(en + hi, var_snl, en).ratio_rt
        assert r_hi > r_lo

    @given(ratio=st.floats(1e-6, 1e3))
    def test_db_exact(self, ratio):
        res = metrics.compute_Rt(ratio, 1.0, 0.0)
        assert res.rt_db == 10 * math.log10(res.ratio_rt)


class TestLossCorrection:
    def test_time_domain_figure(self):
        lc = metrics.loss_correct(10 ** -0.38, 0.69)
        assert lc.ratio == pytest.approx(0.155, abs=0.001)
        assert lc.db == pytest.approx(-8.1, abs=0.1)

    def test_frequency_domain_figure(self):
        lc = metrics.loss_correct(10 ** -0.72, 0.90)
        assert lc.db == pytest.approx(-10.1, abs=0.3)

    def test_identity(self):
        assert metrics.loss_correct(0.37, 1.0).ratio == 0.37

    def test_unphysical(self):
        lc = metrics.loss_correct(0.05, 0.9)
        assert lc.unphysical and lc.ratio is None and lc.db is None

    @pytest.mark.parametrize("eta", [0.0, 1.2])
    def test_bad_eta(self, eta):
        with pytest.raises(ValueError):
            metrics.loss_correct(0.5, eta)

    @given(r=st.floats(1e-6, 1.0), eta=st.floats(0.01, 1.0))
    def test_round_trip(self, r, eta):
        back = metrics.loss_correct(eta * r + (1 - eta), eta).ratio
        assert back == pytest.approx(r, rel=1e-9, abs=1e-12)


def _noise_traces(seed, n, sigma, fs=500e6, samples=25_000):
    rng = np.random.default_rng(seed)
    return [VoltageTrace(rng.normal(0, sigma, samples), fs, 20e-9, 10e-9) for _ in range(n)]


class TestFrequencyDomain:
    def test_same_ensemble(self):
        sig = _noise_traces(0, 5, 1.0)
        el = _noise_traces(1, 5, 0.1)
        res = metrics.freq_domain_R(sig, sig, el)
        assert res.ratio == pytest.approx(1.0, rel=1e-12)
        assert res.db == pytest.approx(0.0, abs=1e-9)

    def test_electronic_only_signal(self):
        el = _noise_traces(1, 5, 0.1)
        res = metrics.freq_domain_R(el, _noise_traces(2, 5, 1.0), el)
        assert res.ratio is None and res.unphysical

    def test_electronic_only_independent_draws(self):
        res = metrics.freq_domain_R(_noise_traces(3, 40, 0.1), _noise_traces(4, 40, 1.0),
                                    _noise_traces(5, 40, 0.1))
        if res.ratio is None:
            assert res.unphysical
        else:
            assert not res.unphysical and res.ratio < 0.01

    def test_band_beyond_nyquist(self):
        tr = _noise_traces(0, 1, 1.0, fs=5e6, samples=1000)
        with pytest.raises(ValueError):
            metrics.freq_domain_R(tr, tr, tr)

    def test_band_beyond_detector(self):
        tr = _noise_traces(0, 1, 1.0)
        with pytest.raises(ValueError):
            metrics.freq_domain_R(tr, tr, tr, f0=2.5e6, bandwidth=1e6,
                                  detector_bandwidth_hz=2.8e6)

    def test_snl_below_electronic(self):
        a = _noise_traces(0, 2, 1.0)
        with pytest.raises(InvalidCalibrationError):
            metrics.freq_domain_R(a, _noise_traces(1, 2, 0.1), a)

    def test_twin_beam_consistency(self):
        """Spectral estimate at 2.5 MHz against the analytic ratio."""
        m = det.reference_detector(en_variance=2.5e-5, bandwidth_hz=20e6, sample_rate_hz=500e6)
        p = model.FopaParams(gain_g=20.0, seed_photons_n0=1.5e5)
        d = model.balance_attenuation(p, model.DetectionChain(0.91, 0.89))
        s = model.detected_stats(p, d)
        power = (s.mean_s + s.mean_i) / 2
        n_rec, n_t = 300, 2500

        def sig():
            for k in range(n_rec):
                diffs = model.sample_pulse_pairs(p, d, n_t, (1, k)).differences()
                yield det.synthesize_trace(diffs, d, m, (2, k))

        def snl():
            for k in range(n_rec):
                yield det.synthesize_snl_calibration_pair(power, 0.0, m, d, n_t, (3, k))

        def dark():
            for k in range(n_rec):
                yield det.synthesize_trace(np.zeros(n_t), d, m, (4, k))

        res = metrics.freq_domain_R(sig(), snl(), dark(), detector_bandwidth_hz=20e6)
        assert res.db == pytest.approx(model.to_db(model.predict_R(p, d)), abs=0.3)
