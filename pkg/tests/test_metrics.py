import math

import numpy as np
import pytest

from plslab import dataset, metrics, nn
from conftest import blob_split
from plslab.metrics import MetricsRecord
from plslab.util import one_hot


def zero_params(d=2, c=4):
    return nn.ModelParams([(np.zeros((d, c)), np.zeros(c))],
                          [(np.zeros((d + c, c)), np.zeros(c))])


def constant_class_params(cls, d=2, c=4):
    b = np.zeros(c)
    b[cls] = 50.0
    return nn.ModelParams([(np.zeros((d, c)), b)], [(np.zeros((d + c, c)), np.zeros(c))])


class TestTestAccuracy:
    def test_uniform_classifier_on_balanced_set(self):
        # ties break to class 0, which holds a quarter of a balanced test set
        ds = dataset.gen_gaussian_blobs(10_000, 4, 2, 3.0, seed=1)
        acc = metrics.test_accuracy(zero_params(), ds)
        assert abs(acc - 0.25) < 0.02

    def test_tie_breaks_to_lowest_index(self):
        ds = dataset.gen_gaussian_blobs(2, 2, 2, 3.0, seed=1)
        params = zero_params(d=2, c=2)
        probs = nn.classifier_probs(params, ds.x)
        np.testing.assert_allclose(probs, 0.5)
        acc = metrics.test_accuracy(params, ds)
        assert acc == (ds.y_clean == 0).mean()

    def test_constant_predictor_matches_frequency(self):
        ds = dataset.gen_gaussian_blobs(999, 4, 2, 3.0, seed=2)
        acc = metrics.test_accuracy(constant_class_params(1), ds)
        assert acc == (ds.y_clean == 1).mean()

    def test_perfect_classifier(self):
        ds = dataset.gen_gaussian_blobs(100, 2, 2, 8.0, seed=3)
        w = 50.0 * np.array([[1.0, -1.0], [0.0, 0.0]])  # blob centers at +-x
        params = nn.ModelParams([(w, np.zeros(2))], [(np.zeros((4, 2)), np.zeros(2))])
        assert metrics.test_accuracy(params, ds) == 1.0

    def test_empty_rejected(self):
        ds = dataset.gen_gaussian_blobs(4, 2, 2, 3.0, seed=1)
        ds.x = ds.x[:0]
        ds.y_clean = ds.y_clean[:0]
        with pytest.raises(ValueError):
            metrics.test_accuracy(zero_params(c=2), ds)


class TestTransitionMse:
    def test_uniform_head_vs_one_hot_rows(self):
        ds = dataset.gen_gaussian_blobs(50, 4, 2, 3.0, seed=4)
        # uniform prediction against one-hot truth: ((0.75)^2 + 3*(0.25)^2) / 4
        assert metrics.transition_mse(zero_params(), ds) == pytest.approx(0.1875)

    def test_exact_match_gives_zero(self):
        ds = dataset.gen_gaussian_blobs(50, 4, 2, 3.0, seed=5)
        # symmetric noise at rate 0.75 over 4 classes has uniform true rows,
        # matching the zero-parameter (uniform) head exactly
        noisy = dataset.inject_symmetric(ds, 0.75, seed=6)
        assert metrics.transition_mse(zero_params(), noisy) == pytest.approx(0.0, abs=1e-12)

    def test_missing_metadata_rejected(self):
        ds = dataset.gen_gaussian_blobs(10, 4, 2, 3.0, seed=7)
        ds.noise_meta = None
        with pytest.raises(ValueError):
            metrics.transition_mse(zero_params(), ds)


class TestSplitUncertainty:
    def test_all_one_hot(self):
        train_ds, _ = blob_split(1, 0.4, n=200)
        priors = one_hot(train_ds.y_noisy, 4)
        assert metrics.split_uncertainty(priors, train_ds) == (1.0, 1.0)

    def test_clean_one_hot_noisy_uniform(self):
        ds = dataset.gen_gaussian_blobs(100, 10, 2, 3.0, seed=8)
        noisy = dataset.inject_symmetric(ds, 0.5, seed=9)
        clean_mask = noisy.y_noisy == noisy.y_clean
        priors = np.where(clean_mask[:, None], one_hot(noisy.y_noisy, 10), np.full((100, 10), 0.1))
        unc_clean, unc_noisy = metrics.split_uncertainty(priors, noisy)
        assert unc_clean == 1.0 and unc_noisy == 10.0

    def test_empty_split_reports_nan(self):
        ds = dataset.gen_gaussian_blobs(10, 4, 2, 3.0, seed=10)  # no noise
        unc_clean, unc_noisy = metrics.split_uncertainty(one_hot(ds.y_noisy, 4), ds)
        assert unc_clean == 1.0 and math.isnan(unc_noisy)

    def test_support_threshold_ignores_dust(self):
        ds = dataset.gen_gaussian_blobs(4, 2, 2, 3.0, seed=11)
        priors = np.array([[1.0 - 1e-9, 1e-9]] * 4)
        unc_clean, _ = metrics.split_uncertainty(priors, ds)
        assert unc_clean == 1.0


class TestCoverageMonotonicity:
    def test_coverage_non_decreasing_under_support_growth(self):
        # blending any prior toward uniform only adds support classes, so
        # coverage cannot drop and never exceeds 1
        from plslab import pls
        rng = np.random.default_rng(12)
        clean = rng.integers(0, 4, 50)
        priors = one_hot(rng.integers(0, 4, 50), 4)
        previous, _ = pls.coverage_uncertainty(priors, clean)
        for blend in (0.1, 0.5, 0.9):
            grown = (1 - blend) * priors + blend * 0.25
            cov, _ = pls.coverage_uncertainty(grown, clean)
            assert previous <= cov <= 1.0
            previous = cov


class TestExportCsv:
    def _records(self):
        return [MetricsRecord(e, 0.5 + e / 10, 0.9, 1.0, 2.5, 0.01, 1.1, 0.2, 0.3)
                for e in range(3)]

    def test_line_count_and_header(self, tmp_path):
        path = tmp_path / "metrics.csv"
        metrics.export_csv(self._records(), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0] == metrics.CSV_HEADER

    def test_round_trip_six_decimals(self, tmp_path):
        path = tmp_path / "metrics.csv"
        records = self._records()
        metrics.export_csv(records, path)
        lines = path.read_text().splitlines()[1:]
        for rec, line in zip(records, lines):
            values = line.split(",")
            assert int(values[0]) == rec.epoch
            assert float(values[1]) == pytest.approx(rec.test_acc, abs=5e-7)
            assert float(values[5]) == pytest.approx(rec.transition_mse, abs=5e-7)

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        metrics.export_csv(self._records(), a)
        metrics.export_csv(self._records(), b)
        assert a.read_bytes() == b.read_bytes()
