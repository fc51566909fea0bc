import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensemat.baselines import gaussian_matrix
from sensemat.dataset import ChannelGenConfig, build_dataset
from sensemat.metrics import (
    ExperimentReport,
    ReportRow,
    accurate_pct,
    add_measurement_noise,
    effective_rate,
    evaluate,
    nmse,
)
from sensemat.recon import MeasurementMatrix, SolverOptions


class TestNmse:
    def test_perfect(self):
        assert nmse([np.ones(3)], [np.ones(3)]) == 0.0

    def test_unit_error(self):
        assert nmse([np.array([1.0, 0.0])], [np.zeros(2)]) == 1.0

    def test_mean_of_ratios(self):
        truths = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
        ests = [truths[0] * (1 - np.sqrt(0.02)), truths[1] * (1 - np.sqrt(0.18))]
        assert nmse(truths, ests) == pytest.approx(0.10)

    def test_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            nmse([np.zeros(2)], [np.ones(2)])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nmse([], [])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        truths = [rng.standard_normal(4) + 1e-3 for _ in range(6)]
        ests = [t + 0.1 * rng.standard_normal(4) for t in truths]
        perm = rng.permutation(6)
        a = nmse(truths, ests)
        b = nmse([truths[i] for i in perm], [ests[i] for i in perm])
        assert a == pytest.approx(b, rel=1e-12)


class TestAccuratePct:
    def test_all_perfect(self):
        truths = [np.ones(2)] * 4
        assert accurate_pct(truths, truths) == 100.0

    def test_none_within(self):
        truths = [np.ones(2)] * 4
        ests = [np.zeros(2)] * 4
        assert accurate_pct(truths, ests) == 0.0

    def test_907_of_1000(self):
        rng = np.random.default_rng(0)
        truths = [np.array([1.0, 0.0]) for _ in range(1000)]
        ests = []
        for i in range(1000):
            err = 0.0 if i < 907 else 1e-3
            ests.append(truths[i] + np.array([0.0, err]))
        assert accurate_pct(truths, ests) == pytest.approx(90.7)


class TestEffectiveRate:
    def test_exact_table_value(self):
        assert effective_rate(10, 40, 100, 0.907) == 5.442

    def test_zero_probability(self):
        assert effective_rate(10, 40, 100, 0.0) == 0.0

    def test_full_occupation(self):
        assert effective_rate(10, 100, 100, 1.0) == 0.0

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            effective_rate(10, 101, 100, 0.5)
        with pytest.raises(ValueError):
            effective_rate(10, 10, 100, 1.5)


class TestMeasurementNoise:
    def test_empirical_snr_calibration(self):
        # over 1e4 draws the realized SNR must sit within +-0.2 dB
        rng = np.random.default_rng(1)
        y = rng.standard_normal((16, 2))
        target_db = 10.0
        sig_power = np.sum(y**2)
        noise_power = 0.0
        draws = 10_000
        for _ in range(draws):
            noisy = add_measurement_noise(y, target_db, rng)
            noise_power += np.sum((noisy - y) ** 2)
        realized = 10 * np.log10(sig_power / (noise_power / draws))
        assert abs(realized - target_db) <= 0.2

    def test_high_snr_limit(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((8, 2))
        noisy = add_measurement_noise(y, 300.0, rng)
        np.testing.assert_allclose(noisy, y, atol=1e-12)

    def test_deterministic_under_seed(self):
        y = np.ones((4, 2))
        a = add_measurement_noise(y, 10.0, np.random.default_rng(3))
        b = add_measurement_noise(y, 10.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            add_measurement_noise(np.array([[np.inf, 0.0]]), 10.0,
                                  np.random.default_rng(0))


def small_dataset(n=16, n_channels=40, seed=5, sparsity=2):
    cfg = ChannelGenConfig(n_antennas=n, n_paths=2, rice_k_db=13.2,
                           n_channels=n_channels, sparsity=sparsity,
                           split_ratios=(0.5, 0.0, 0.5), seed=seed)
    return build_dataset(cfg)


class TestEvaluate:
    def test_square_orthonormal_is_exact(self):
        data = small_dataset()
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((16, 16)))
        matrix = MeasurementMatrix(q, kind="gaussian", normalized=True)
        row = evaluate(matrix, data, "bp_exact",
                       opts=SolverOptions(tol=1e-10, max_iters=20_000))
        assert row.nmse < 1e-12
        assert row.accurate_pct == 100.0
        assert row.n_samples == 2 * len(data.split.test)

    def test_phase_transition_interior(self):
        # a regime straddling the recovery transition: strictly between
        # 0 and 100 percent (pilot-chosen M)
        data = small_dataset(n=64, n_channels=60, seed=6, sparsity=4)
        matrix = gaussian_matrix(12, 64, seed=3)
        row = evaluate(matrix, data, "bp_exact",
                       opts=SolverOptions(tol=1e-8, max_iters=30_000))
        assert 0.0 < row.accurate_pct < 100.0

    def test_rate_uses_accuracy_fraction(self):
        data = small_dataset()
        matrix = gaussian_matrix(8, 16, seed=1)
        row = evaluate(matrix, data, "bp_exact")
        expected = effective_rate(10.0, 8, 100, row.accurate_pct / 100.0)
        assert row.effective_rate == expected

    def test_noise_seed_determinism(self):
        data = small_dataset()
        matrix = gaussian_matrix(8, 16, seed=1)
        r1 = evaluate(matrix, data, "gpsr", snr_db=10.0, noise_seed=7)
        r2 = evaluate(matrix, data, "gpsr", snr_db=10.0, noise_seed=7)
        assert r1 == r2

    def test_threads_do_not_change_result(self):
        data = small_dataset()
        matrix = gaussian_matrix(8, 16, seed=2)
        r1 = evaluate(matrix, data, "gpsr", snr_db=5.0, noise_seed=3, threads=1)
        r4 = evaluate(matrix, data, "gpsr", snr_db=5.0, noise_seed=3, threads=4)
        assert r1 == r4


class TestReportSerialization:
    def rows(self):
        return [
            ReportRow("gaussian", 16, 8, "bp_exact", None, 0.1, 50.0, 4.6, 20),
            ReportRow("learned_gae", 16, 8, "bp_exact", 10.0, 0.01, 90.0, 8.3, 20),
        ]

    def test_csv_layout(self):
        report = ExperimentReport(rows=self.rows())
        text = report.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "schema_version,1"
        assert lines[1].startswith("matrix_kind,k,m,solver,snr_db")
        assert len(lines) == 4

    def test_json_round_trip(self):
        report = ExperimentReport(rows=self.rows())
        back = ExperimentReport.from_json(report.to_json())
        assert sorted(back.rows, key=str) == sorted(report.rows, key=str)

    def test_json_nested_by_kind(self):
        import json

        obj = json.loads(ExperimentReport(rows=self.rows()).to_json())
        assert set(obj["by_matrix"]) == {"gaussian", "learned_gae"}
        assert obj["schema_version"] == 1

    def test_rejects_unknown_schema(self):
        with pytest.raises(ValueError):
            ExperimentReport.from_json('{"schema_version": 99, "by_matrix": {}}')
