import math

import numpy as np
import pytest

from streamfill.data import (
    ParseError,
    SeriesData,
    SplitSpec,
    apply_split,
    load_csv,
    save_csv,
    synth_factors,
    synth_generate,
    synth_truth,
)


class TestSeriesData:
    def test_rejects_unsorted_timestamps(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            SeriesData(
                timestamps=[0.0, 0.0],
                values=np.zeros((1, 2)),
                mask=np.ones((1, 2)),
            )

    def test_rejects_nonbinary_mask(self):
        with pytest.raises(ValueError, match="0 or 1"):
            SeriesData(
                timestamps=[0.0, 1.0],
                values=np.zeros((1, 2)),
                mask=np.array([[1, 2]]),
            )

    def test_rejects_nonfinite_observed_cells(self):
        with pytest.raises(ValueError, match="finite"):
            SeriesData(
                timestamps=[0.0],
                values=np.array([[math.nan]]),
                mask=np.array([[1]]),
            )

    def test_masked_cells_may_hold_anything(self):
        data = SeriesData(
            timestamps=[0.0],
            values=np.array([[math.nan]]),
            mask=np.array([[0]]),
        )
        assert data.n_observed == 0


class TestCsvRoundTrip:
    def test_minimal_file(self, tmp_path):
        p = tmp_path / "tiny.csv"
        p.write_text("t,c1\n0.5,1.25\n")
        data = load_csv(p)
        assert data.n_timestamps == 1 and data.n_channels == 1
        assert data.mask[0, 0] == 1
        assert data.values[0, 0] == 1.25

    def test_empty_cell_means_missing(self, tmp_path):
        p = tmp_path / "gap.csv"
        p.write_text("t,c1,c2\n0.0,,3.0\n1.0,2.0,\n")
        data = load_csv(p)
        np.testing.assert_array_equal(data.mask, [[0, 1], [1, 0]])
        assert math.isnan(data.values[0, 0])

    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        n = 1000
        data = SeriesData(
            timestamps=np.sort(rng.uniform(0, 100, n)),
            values=rng.standard_normal((3, n)) * 10 ** rng.integers(-8, 8, (3, n)),
            mask=(rng.random((3, n)) < 0.8).astype(np.uint8),
        )
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(data, first)
        save_csv(load_csv(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_nonincreasing_timestamp_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,c1\n1.0,1\n0.5,2\n")
        with pytest.raises(ParseError, match=r":3:"):
            load_csv(p)

    def test_ragged_row_reports_line(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("t,c1,c2\n0.0,1.0,2.0\n1.0,3.0\n")
        with pytest.raises(ParseError, match=r":3:"):
            load_csv(p)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        p = tmp_path / "text.csv"
        p.write_text("t,c1\n0.0,1.0\n1.0,oops\n")
        with pytest.raises(ParseError, match=r":3:.*oops"):
            load_csv(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(ParseError, match="empty"):
            load_csv(p)


def observed_series(n=40, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return SeriesData(
        timestamps=np.sort(rng.uniform(0, 1, n)),
        values=rng.standard_normal((d, n)),
        mask=np.ones((d, n), dtype=np.uint8),
    )


class TestApplySplit:
    def test_full_ratio_keeps_everything(self):
        data = observed_series()
        train, test_idx = apply_split(data, SplitSpec(observed_ratio=1.0, seed=1))
        assert test_idx.shape[0] == 0
        np.testing.assert_array_equal(train.mask, data.mask)

    def test_deterministic_per_seed(self):
        data = observed_series()
        spec = SplitSpec(observed_ratio=0.6, seed=42)
        train_a, idx_a = apply_split(data, spec)
        train_b, idx_b = apply_split(data, spec)
        np.testing.assert_array_equal(train_a.mask, train_b.mask)
        np.testing.assert_array_equal(idx_a, idx_b)

    def test_pointwise_fraction_concentrates(self):
        data = observed_series(n=2500, d=4, seed=2)  # 10^4 observed cells
        train, _ = apply_split(data, SplitSpec(observed_ratio=0.5, seed=3))
        frac = train.n_observed / data.n_observed
        assert 0.48 <= frac <= 0.52

    def test_test_set_is_the_complement(self):
        data = observed_series(n=200, d=2, seed=4)
        train, test_idx = apply_split(data, SplitSpec(observed_ratio=0.7, seed=5))
        assert train.n_observed + test_idx.shape[0] == data.n_observed
        for d, n in test_idx:
            assert train.mask[d, n] == 0 and data.mask[d, n] == 1

    def test_timestamp_holdout_strips_whole_columns(self):
        data = observed_series(n=100, d=3, seed=6)
        train, test_idx = apply_split(
            data, SplitSpec(observed_ratio=0.7, mode="timestamp-holdout", seed=7)
        )
        column_has_obs = train.mask.sum(axis=0) > 0
        assert column_has_obs.sum() == 70
        # held-out timestamps stay on the grid with zero observations
        assert train.n_timestamps == data.n_timestamps
        held = np.unique(test_idx[:, 1])
        assert not column_has_obs[held].any()

    def test_degenerate_split_rejected(self):
        data = observed_series(n=5, d=1, seed=8)
        with pytest.raises(ValueError, match="zero training points"):
            apply_split(data, SplitSpec(observed_ratio=1e-9, seed=9))

    def test_bad_ratio_rejected(self):
        with pytest.raises(ValueError, match="observed_ratio"):
            SplitSpec(observed_ratio=0.0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            SplitSpec(observed_ratio=0.5, mode="nope")


class TestSynthGenerate:
    def test_truth_closed_form_examples(self):
        # channel 1 at t = 0.1: 1*(10*0.1) + 1*sin(2 pi) - 2*cos(4 pi) - 2*sin(6 pi)
        truth = synth_truth(np.array([0.1]))
        assert truth[0, 0] == pytest.approx(-1.0, abs=1e-12)
        # channel 3 at t = 0: -0.3*0 + 2*0 + 1*1 - 1*0
        truth0 = synth_truth(np.array([0.0]))
        assert truth0[2, 0] == pytest.approx(1.0, abs=1e-12)

    def test_factor_rows_are_the_documented_functions(self):
        ts = np.array([0.0, 0.025, 0.3])
        f = synth_factors(ts)
        np.testing.assert_allclose(f[0], 10 * ts)
        np.testing.assert_allclose(f[1], np.sin(20 * np.pi * ts))
        np.testing.assert_allclose(f[2], np.cos(40 * np.pi * ts))
        np.testing.assert_allclose(f[3], np.sin(60 * np.pi * ts))

    def test_observed_count_is_exact(self):
        data = synth_generate(500, seed=0, observed_count=400)
        assert data.n_observed == 400
        assert data.values.shape == (4, 500)

    def test_full_observation(self):
        data = synth_generate(500, seed=0, observed_count=2000)
        assert data.mask.all()

    def test_noise_standard_deviation(self):
        data = synth_generate(500, seed=1, observed_count=2000)
        noise = data.values - data.ground_truth
        assert 0.095 <= noise.std() <= 0.105

    def test_deterministic_per_seed(self):
        a = synth_generate(100, seed=11)
        b = synth_generate(100, seed=11)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)

    def test_ground_truth_is_noiseless(self):
        data = synth_generate(50, seed=2)
        np.testing.assert_allclose(
            data.ground_truth, synth_truth(data.timestamps), atol=0
        )

    def test_too_small_grid_rejected(self):
        with pytest.raises(ValueError, match="n_points"):
            synth_generate(3, seed=0)

    def test_observed_count_bounds(self):
        with pytest.raises(ValueError, match="observed_count"):
            synth_generate(10, seed=0, observed_count=41)
