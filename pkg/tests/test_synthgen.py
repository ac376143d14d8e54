import json

import numpy as np
import pytest

from conftest import make_flow

from crossflow import synthgen as sg
from crossflow.errors import ConfigurationError, DataError


def small_config(**kw):
    base = dict(days=7, interval_minutes=15, source_stations=4, target_stations=8, seed=0)
    base.update(kw)
    return sg.SynthConfig(**base)


class TestConfig:
    def test_invalid_coupling(self):
        with pytest.raises(ConfigurationError):
            small_config(coupling=1.5)

    def test_invalid_interval(self):
        with pytest.raises(ConfigurationError):
            small_config(interval_minutes=20)

    def test_invalid_rate(self):
        with pytest.raises(ConfigurationError):
            small_config(base_rate=0.0)


class TestGeneration:
    def test_shapes_and_modes(self):
        src, tgt, truth = sg.generate_multimodal(small_config())
        bins = 7 * 96
        assert src.values.shape == (bins, 4)
        assert tgt.values.shape == (bins, 8)
        assert src.mode == "metro" and tgt.mode == "bike"
        assert truth.source_intensity.shape == (bins, 4)
        assert list(truth.linkage) == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_deterministic(self):
        a = sg.generate_multimodal(small_config(seed=5))
        b = sg.generate_multimodal(small_config(seed=5))
        assert np.array_equal(a[0].values, b[0].values)
        assert np.array_equal(a[1].values, b[1].values)
        assert np.array_equal(a[2].target_intensity, b[2].target_intensity)

    def test_seed_changes_counts(self):
        a, _, _ = sg.generate_multimodal(small_config(seed=1))
        b, _, _ = sg.generate_multimodal(small_config(seed=2))
        assert not np.array_equal(a.values, b.values)

    def test_counts_nonnegative_integers(self):
        src, tgt, _ = sg.generate_multimodal(small_config())
        for flow in (src, tgt):
            assert flow.values.dtype == np.int64
            assert flow.values.min() >= 0

    def test_mean_count_near_base_rate(self):
        # Poisson mean over 28 days x 96 bins x 20 stations; intensity
        # profiles are mean-one so the grand mean should sit near base_rate
        cfg = sg.SynthConfig(days=28, source_stations=20, target_stations=20, base_rate=5.0, seed=3)
        src, _, truth = sg.generate_multimodal(cfg)
        n = src.values.size
        tol = 3.0 * np.sqrt(5.0 / n) + abs(truth.source_intensity.mean() - 5.0)
        assert abs(src.values.mean() - 5.0) <= tol + 0.35  # station scale jitter

    def test_counts_track_intensity(self):
        src, _, truth = sg.generate_multimodal(small_config(days=28))
        per_station_err = np.abs(src.values.mean(axis=0) - truth.source_intensity.mean(axis=0))
        assert per_station_err.max() < 0.5

    def test_intensity_floor(self):
        _, _, truth = sg.generate_multimodal(small_config(coupling=-1.0))
        assert truth.target_intensity.min() >= sg.INTENSITY_FLOOR * 0.0  # nonneg
        assert truth.target_intensity.min() > 0.0


class TestCoupling:
    @staticmethod
    def linked_correlations(rho, seed):
        cfg = small_config(days=14, coupling=rho, seed=seed)
        src, tgt, truth = sg.generate_multimodal(cfg)
        corr = sg.correlation_matrix(src, tgt)
        n_src = cfg.source_stations
        return np.array([corr[truth.linkage[j], n_src + j] for j in range(cfg.target_stations)])

    def test_high_coupling_gives_high_correlation(self):
        cc = self.linked_correlations(0.9, seed=0)
        assert np.median(cc) > 0.5

    def test_coupling_monotone_in_rho(self):
        wins = 0
        for seed in range(5):
            meds = [np.median(self.linked_correlations(rho, seed)) for rho in (0.0, 0.4, 0.8)]
            if meds[0] < meds[1] < meds[2]:
                wins += 1
        assert wins >= 4

    def test_negative_coupling_anticorrelates(self):
        cc = self.linked_correlations(-0.9, seed=1)
        assert np.median(cc) < 0.0


class TestCorrelationMatrix:
    def test_symmetric_unit_diagonal(self, rng):
        a = make_flow(rng.poisson(4, size=(50, 3)))
        b = make_flow(rng.poisson(4, size=(50, 2)), mode="metro")
        corr = sg.correlation_matrix(a, b)
        assert corr.shape == (5, 5)
        np.testing.assert_allclose(corr, corr.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(corr), 1.0, atol=1e-12)

    def test_constant_series_is_nan(self, rng):
        vals = rng.poisson(4, size=(50, 2))
        vals[:, 1] = 3
        a = make_flow(vals)
        b = make_flow(rng.poisson(4, size=(50, 1)), mode="metro")
        corr = sg.correlation_matrix(a, b)
        assert np.isnan(corr[1]).all()
        assert not np.isnan(corr[0, 2])

    def test_misaligned_rejected(self, rng):
        a = make_flow(rng.poisson(4, size=(50, 2)))
        b = make_flow(rng.poisson(4, size=(40, 2)), mode="metro")
        with pytest.raises(DataError):
            sg.correlation_matrix(a, b)


def test_truth_json_round_trip(tmp_path):
    _, _, truth = sg.generate_multimodal(small_config())
    path = tmp_path / "truth.json"
    sg.write_truth_json(truth, path)
    doc = json.loads(path.read_text())
    assert doc["coupling"] == truth.coupling
    assert doc["linkage"] == truth.linkage.tolist()
    assert len(doc["target_intensity_mean"]) == 8
