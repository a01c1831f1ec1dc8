import numpy as np
import pytest
import scipy.linalg

from sonarsynth.errors import NumericError, ValidationError
from sonarsynth.evaluation import (FrechetStats, RandomConvEmbedder, drift_check,
                                   embed_and_fit, estimate_shear_rate,
                                   fit_features, frechet_distance, ks_statistic,
                                   load_feature_file, save_feature_file,
                                   seam_discontinuity, throughput,
                                   viewpoint_consistency)
from sonarsynth.mission import ScanTile, SemanticTile
from sonarsynth.sequence import MissionScan


def stats_from(mu, sigma, n=100):
    return FrechetStats(mu=np.asarray(mu, dtype=float),
                        sigma=np.asarray(sigma, dtype=float), n=n)


def const_scan(values, tile_rows=32, w=16):
    tiles = [ScanTile(intensity=np.full((tile_rows, w), v, dtype=np.float32),
                      tile_index=i) for i, v in enumerate(values)]
    return MissionScan(tiles=tiles, mode="markov",
                       total_pings=tile_rows * len(values), tile_rows=tile_rows,
                       seam_row_indices=[tile_rows * i
                                         for i in range(1, len(values))])


class TestEmbedAndFit:
    def test_identical_images_zero_covariance(self):
        emb = RandomConvEmbedder(seed=0, output_dim=8)
        images = np.tile(np.random.default_rng(0).random((1, 64, 64)), (5, 1, 1))
        stats = embed_and_fit(images.astype(np.float32), emb)
        assert np.allclose(stats.sigma, 0.0, atol=1e-10)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(1)
        images = rng.random((4, 64, 64)).astype(np.float32)
        a = embed_and_fit(images, RandomConvEmbedder(seed=3, output_dim=8))
        b = embed_and_fit(images, RandomConvEmbedder(seed=3, output_dim=8))
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)

    def test_duplication_idempotent(self):
        rng = np.random.default_rng(2)
        feats = rng.random((20, 6))
        a = fit_features(feats)
        b = fit_features(np.concatenate([feats, feats]))
        assert np.allclose(a.mu, b.mu, atol=1e-12)
        assert np.allclose(a.sigma, b.sigma, atol=1e-12)

    def test_range_enforced(self):
        emb = RandomConvEmbedder(seed=0, output_dim=4)
        with pytest.raises(ValidationError):
            embed_and_fit(np.full((3, 32, 32), 1.5, dtype=np.float32), emb)

    def test_needs_two_images(self):
        emb = RandomConvEmbedder(seed=0, output_dim=4)
        with pytest.raises(ValidationError):
            embed_and_fit(np.zeros((1, 32, 32), dtype=np.float32), emb)

    def test_small_sample_warns(self):
        feats = np.random.default_rng(0).random((4, 16))
        with pytest.warns(UserWarning):
            fit_features(feats)


class TestFrechetDistance:
    def test_identical_stats_exactly_zero(self):
        rng = np.random.default_rng(0)
        a = rng.random((40, 5))
        s = fit_features(a)
        t = fit_features(a.copy())
        assert frechet_distance(s, t) == 0.0

    def test_one_dimensional_closed_form(self):
        a = stats_from([0.0], [[1.0]])
        b = stats_from([1.0], [[1.0]])
        assert abs(frechet_distance(a, b) - 1.0) < 1e-12

    def test_matches_scipy_sqrtm_oracle(self):
        # Dual-route check: eigendecomposition implementation against the
        # independent Schur-based matrix square root.
        rng = np.random.default_rng(3)
        for _ in range(20):
            xa = rng.normal(size=(60, 2)) @ rng.normal(size=(2, 2)) + rng.normal(size=2)
            xb = rng.normal(size=(60, 2)) @ rng.normal(size=(2, 2)) + rng.normal(size=2)
            a, b = fit_features(xa), fit_features(xb)
            covmean = scipy.linalg.sqrtm(a.sigma @ b.sigma)
            expected = (np.sum((a.mu - b.mu) ** 2)
                        + np.trace(a.sigma + b.sigma - 2.0 * covmean.real))
            assert abs(frechet_distance(a, b) - expected) < 1e-8

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(4)
        a = fit_features(rng.normal(size=(50, 3)))
        b = fit_features(rng.normal(size=(50, 3)) * 2 + 1)
        dab, dba = frechet_distance(a, b), frechet_distance(b, a)
        assert dab >= 0.0
        assert abs(dab - dba) < 1e-8

    def test_dim_mismatch(self):
        a = stats_from([0.0], [[1.0]])
        b = stats_from([0.0, 0.0], np.eye(2))
        with pytest.raises(ValidationError):
            frechet_distance(a, b)


class TestSeamDiscontinuity:
    def test_constant_step_gives_inf(self):
        report = seam_discontinuity(const_scan([0.0, 1.0]))
        assert report.seam_values[0] == pytest.approx(1.0)
        assert report.baseline == 0.0
        assert report.ratio == float("inf")

    def test_repeated_constant_tile_gives_one(self):
        report = seam_discontinuity(const_scan([0.5, 0.5, 0.5]))
        assert report.ratio == 1.0

    def test_needs_two_tiles(self):
        with pytest.raises(ValidationError):
            seam_discontinuity(const_scan([0.5]))

    def test_oracle_scan_near_unity(self):
        from sonarsynth.corpus import make_demo_corpus
        corpus = make_demo_corpus(n_tiles=24, seed=5)
        tiles = [corpus.scan_tile(i) for i in range(len(corpus))]
        scan = MissionScan(tiles=tiles, mode="markov",
                           total_pings=24 * corpus.tile_rows,
                           tile_rows=corpus.tile_rows,
                           seam_row_indices=[corpus.tile_rows * i
                                             for i in range(1, 24)])
        assert 0.8 <= seam_discontinuity(scan).ratio <= 1.25


class TestViewpoint:
    def test_same_scan_zero_ks(self):
        rng = np.random.default_rng(0)
        tiles = [ScanTile(intensity=rng.random((16, 8)).astype(np.float32),
                          tile_index=i) for i in range(4)]
        scan = MissionScan(tiles=tiles, mode="markov", total_pings=64,
                           tile_rows=16, seam_row_indices=[16, 32, 48])
        rev_tiles = [ScanTile(intensity=t.intensity[::-1].copy(), tile_index=i)
                     for i, t in enumerate(reversed(tiles))]
        rev = MissionScan(tiles=rev_tiles, mode="markov", total_pings=64,
                          tile_rows=16, seam_row_indices=[16, 32, 48])
        maps = [SemanticTile(labels=np.zeros((16, 8), dtype=np.uint8),
                             tile_index=i, valid_rows=16) for i in range(4)]
        ks = viewpoint_consistency(scan, rev, maps)
        assert ks["flat"] == 0.0
        assert ks["rocks"] is None

    def test_ks_statistic_bounds(self):
        assert ks_statistic(np.zeros(50), np.zeros(50)) == 0.0
        assert ks_statistic(np.zeros(50), np.ones(50)) == 1.0


class TestShearEstimator:
    def test_detects_synthetic_shift(self):
        rng = np.random.default_rng(0)
        base = np.repeat(rng.random(256)[None, :], 40, axis=0)
        sheared = np.stack([np.roll(base[i], i // 4) for i in range(40)])
        assert estimate_shear_rate(sheared) > 0.1
        sheared_neg = np.stack([np.roll(base[i], -(i // 4)) for i in range(40)])
        assert estimate_shear_rate(sheared_neg) < -0.1

    def test_needs_two_rows(self):
        with pytest.raises(ValidationError):
            estimate_shear_rate(np.zeros((1, 32)))


class TestThroughputAndDrift:
    def test_throughput_fields_and_ratio_formula(self):
        result = throughput(lambda i: None, (100, 100), n_tiles=5, warmup=1)
        assert result["pixels_per_second"] > 0
        assert result["realtime_ratio"] == pytest.approx(
            result["pixels_per_second"] / 17_100.0)
        assert 307_800.0 / 17_100.0 == pytest.approx(18.0)

    def test_throughput_rejects_zero_tiles(self):
        with pytest.raises(ValidationError):
            throughput(lambda i: None, (10, 10), n_tiles=0)

    def test_drift_flat_series_passes(self):
        scan = const_scan([0.4] * 120)
        result = drift_check(scan)
        assert result["pass"] and abs(result["slope_per_tile"]) < 1e-12

    def test_drift_injected_slope_fails(self):
        scan = const_scan([0.1 + 0.005 * i for i in range(110)])
        result = drift_check(scan)
        assert not result["pass"]
        assert result["slope_per_tile"] == pytest.approx(0.005, rel=1e-5)

    def test_drift_needs_100_tiles(self):
        with pytest.raises(ValidationError):
            drift_check(const_scan([0.5] * 40))


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        feats = rng.random((12, 7)).astype(np.float32)
        save_feature_file(feats, tmp_path / "f.bin")
        back = load_feature_file(tmp_path / "f.bin")
        assert np.allclose(back, feats, atol=1e-7)

    def test_size_mismatch(self, tmp_path):
        save_feature_file(np.zeros((3, 4), dtype=np.float32), tmp_path / "f.bin")
        (tmp_path / "f.json").write_text('{"n": 5, "d": 4}')
        from sonarsynth.errors import FormatError
        with pytest.raises(FormatError):
            load_feature_file(tmp_path / "f.bin")
