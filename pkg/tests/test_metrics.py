import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossflow import metrics as mx
from crossflow.errors import ConfigurationError, DataError


def pset(observed, predicted, producer="Base", horizon=15):
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    predicted = np.atleast_2d(np.asarray(predicted, dtype=float))
    bins = np.arange(observed.shape[0])
    return mx.PredictionSet(
        target_bins=bins, observed=observed, predicted=predicted,
        producer=producer, horizon_minutes=horizon,
    )


class TestComputeMetrics:
    def test_worked_example(self):
        mae, rmse, r2 = mx.compute_metrics(pset([[1.0], [3.0]], [[2.0], [5.0]]))
        assert mae == 1.5
        assert rmse == pytest.approx(np.sqrt(2.5), abs=1e-15)
        assert r2 == pytest.approx(-1.5, abs=1e-15)

    def test_perfect_prediction(self, rng):
        y = rng.poisson(4, size=(10, 3)).astype(float)
        y[0, 0] += 1  # make sure SS_tot > 0
        mae, rmse, r2 = mx.compute_metrics(pset(y, y.copy()))
        assert mae == 0.0 and rmse == 0.0 and r2 == 1.0

    def test_constant_observations_have_no_r2(self):
        mae, rmse, r2 = mx.compute_metrics(pset([[2.0], [2.0]], [[2.0], [3.0]]))
        assert r2 is None
        assert mae == 0.5

    def test_grand_mean_r2(self):
        # R² centers on the grand mean across all stations and bins, not
        # per-station means
        y = np.array([[0.0, 10.0], [0.0, 10.0]])
        yhat = np.full((2, 2), 5.0)
        _, _, r2 = mx.compute_metrics(pset(y, yhat))
        assert r2 == 0.0

    def test_permutation_invariant(self, rng):
        y = rng.normal(size=(20, 2))
        yhat = rng.normal(size=(20, 2))
        perm = rng.permutation(20)
        a = mx.compute_metrics(pset(y, yhat))
        b = mx.compute_metrics(pset(y[perm], yhat[perm]))
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mx.compute_metrics(pset(np.zeros((0, 1)), np.zeros((0, 1))))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            pset(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_mae_bounded_by_rmse(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(8, 3))
        yhat = rng.normal(size=(8, 3))
        mae, rmse, _ = mx.compute_metrics(pset(y, yhat))
        assert mae <= rmse + 1e-12


class TestImprovingRate:
    def test_definition(self):
        assert mx.improving_rate(2.0, 1.5) == 25.0
        assert mx.improving_rate(1.0, 1.2) == pytest.approx(-20.0)
        assert mx.improving_rate(3.0, 3.0) == 0.0

    def test_published_pairs(self):
        # spot checks against known (base, variant, rate%) triples
        for base, variant, rate in [
            (0.322, 0.300, 6.9),
            (0.680, 0.648, 4.7),
            (1.029, 1.000, 2.8),
            (1.448, 1.416, 2.2),
        ]:
            assert abs(mx.improving_rate(base, variant) - rate) < 0.1

    def test_zero_base_rejected(self):
        with pytest.raises(DataError):
            mx.improving_rate(0.0, 1.0)


def sample_rows():
    rows = []
    for mode, base in (("bike", 0.5), ("taxi", 1.0)):
        for hz in (15, 30):
            rows.append(mx.MetricRow(mode, hz, "Base", base, base * 1.3, 0.5, 20, 100))
            rows.append(
                mx.MetricRow(mode, hz, "FT", base * 0.9, base * 1.2, 0.6, 20, 100,
                             improving_rate_vs="Base", improving_rate_pct=10.0)
            )
            rows.append(mx.MetricRow(mode, hz, "HA", base * 1.5, base * 2.0, 0.1, 20, 100))
    return rows


class TestRendering:
    def test_report_has_all_formats(self):
        report = mx.render_report(sample_rows(), seed=7, config_hash="abc")
        assert set(report) == {"text", "json", "csv"}
        doc = json.loads(report["json"])
        assert len(doc) == len(sample_rows())
        assert all(r["seed"] == 7 and r["config_hash"] == "abc" for r in doc)

    def test_json_rows_sorted(self):
        report = mx.render_report(sample_rows())
        doc = json.loads(report["json"])
        keys = [(r["mode"], r["horizon_minutes"], r["producer"]) for r in doc]
        assert keys == sorted(keys)

    def test_json_matches_rows(self):
        rows = sample_rows()
        doc = json.loads(mx.render_report(rows)["json"])
        by_key = {(r["mode"], r["horizon_minutes"], r["producer"]): r for r in doc}
        for row in rows:
            jr = by_key[(row.mode, row.horizon_minutes, row.producer)]
            assert jr["mae"] == row.mae
            assert jr["r2"] == row.r2

    def test_deterministic(self):
        a = mx.render_report(sample_rows(), seed=1, config_hash="x")
        b = mx.render_report(sample_rows(), seed=1, config_hash="x")
        assert a == b

    def test_transfer_table_mentions_rates(self):
        text = mx.render_transfer_table(sample_rows())
        assert "10.0%" in text
        assert "15min" in text and "30min" in text
        assert "-- bike --" in text and "-- taxi --" in text

    def test_baseline_table_includes_all_producers(self):
        text = mx.render_baseline_table(sample_rows())
        for producer in ("Base", "FT", "HA"):
            assert producer in text

    def test_none_r2_rendered_as_na(self):
        rows = [mx.MetricRow("bike", 15, "HA", 1.0, 1.5, None, 5, 10)]
        assert "n/a" in mx.render_baseline_table(rows)

    def test_empty_report_rejected(self):
        with pytest.raises(DataError):
            mx.render_report([])

    def test_csv_header_sorted(self):
        report = mx.render_report(sample_rows())
        header = report["csv"].splitlines()[0].split(",")
        assert header == sorted(header)
