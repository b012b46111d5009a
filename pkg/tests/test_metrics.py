import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowalign import metrics
from flowalign.metrics import MetricError, auc_at_threshold, compute_report


def riemann_auc(errors, tau, n_sub=10_000):
    """Brute-force oracle: Riemann sum of the empirical CDF over [0, tau]."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    ts = (np.arange(n_sub) + 0.5) * tau / n_sub
    cdf = np.searchsorted(e, ts, side="right") / len(e)
    return cdf.mean() * 100.0


class TestAucAtThreshold:
    def test_all_zero_errors_full_area(self):
        for tau in (3.0, 5.0, 10.0, 20.0):
            assert auc_at_threshold([0.0] * 5, tau) == 100.0

    def test_all_errors_beyond_tau_zero_area(self):
        assert auc_at_threshold([7.0, 8.0, 100.0], 5.0) == 0.0

    def test_single_error_half_tau(self):
        tau = 6.0
        assert auc_at_threshold([tau / 2], tau) == pytest.approx(50.0)

    def test_matches_riemann_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            errors = rng.gamma(2.0, 3.0, size=rng.integers(1, 40))
            tau = float(rng.uniform(0.5, 25.0))
            assert auc_at_threshold(errors, tau) == pytest.approx(
                riemann_auc(errors, tau), abs=0.01)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.0, 50.0), min_size=1, max_size=30),
           st.floats(0.5, 20.0), st.floats(0.0, 10.0))
    def test_monotone_in_tau(self, errors, tau, dt):
        assert auc_at_threshold(errors, tau + dt) >= auc_at_threshold(errors, tau) - 1e-9

    def test_empty_list_rejected(self):
        with pytest.raises(MetricError):
            auc_at_threshold([], 3.0)

    def test_negative_error_rejected(self):
        with pytest.raises(MetricError):
            auc_at_threshold([-1.0], 3.0)

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(MetricError):
            auc_at_threshold([1.0], 0.0)


class TestReport:
    def test_mace_is_mean_and_nesting(self):
        rng = np.random.default_rng(1)
        ace = rng.gamma(2.0, 2.0, 50)
        rep = compute_report(ace)
        assert rep.mace == pytest.approx(float(np.mean(ace)))
        assert rep.auc[3.0] <= rep.auc[5.0] <= rep.auc[10.0] <= rep.auc[20.0]
        assert rep.count == 50

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            compute_report([])

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        rep = compute_report(rng.gamma(2.0, 2.0, 12), config_echo="shift=invert")
        path = tmp_path / "report.txt"
        metrics.write_report(path, rep)
        back = metrics.read_report(path)
        assert back.count == rep.count
        assert back.mace == pytest.approx(rep.mace, abs=1e-6)
        assert back.config_echo == rep.config_echo
        for tau in rep.auc:
            assert back.auc[tau] == pytest.approx(rep.auc[tau], abs=1e-4)
        np.testing.assert_allclose(back.ace, rep.ace, atol=1e-6)

    def test_report_text_has_per_sample_table(self, tmp_path):
        rep = compute_report([1.0, 2.0])
        path = tmp_path / "report.txt"
        metrics.write_report(path, rep)
        text = path.read_text()
        assert "sample\tace_px" in text
        assert "mace_px: 1.5" in text
