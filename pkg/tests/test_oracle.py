import json

import numpy as np
import pytest

from sonarsynth import corpus as corpus_mod
from sonarsynth import oracle
from sonarsynth.errors import FormatError, ValidationError
from sonarsynth.evaluation import estimate_shear_rate, ks_statistic
from sonarsynth.mission import SemanticTile, TerrainLabel


def flat_tile(h=116, w=128, code=0, index=0):
    return SemanticTile(labels=np.full((h, w), code, dtype=np.uint8),
                        tile_index=index, valid_rows=h)


def straight(h=116):
    return np.full(h, 5.0), np.zeros(h, dtype=np.int8)


@pytest.fixture(scope="module")
def demo_corpus():
    return corpus_mod.make_demo_corpus(n_tiles=120, seed=7)


class TestSynthTile:
    def test_deterministic(self):
        theta, signs = straight()
        a = oracle.synth_tile(flat_tile(), theta, signs, seed=5)
        b = oracle.synth_tile(flat_tile(), theta, signs, seed=5)
        assert np.array_equal(a.intensity, b.intensity)
        c = oracle.synth_tile(flat_tile(), theta, signs, seed=6)
        assert not np.array_equal(a.intensity, c.intensity)

    def test_rocks_brighter_than_flat(self):
        # Derived acceptance bound on the chosen texture parameters.
        theta, signs = straight()
        rocks = oracle.synth_tile(flat_tile(code=2), theta, signs, seed=5)
        flat = oracle.synth_tile(flat_tile(code=0), theta, signs, seed=5)
        assert rocks.intensity.mean() - flat.intensity.mean() > 0.1

    def test_floor_theta_means_zero_shear(self):
        theta, signs = straight()
        base = oracle.synth_tile(flat_tile(), theta, signs, seed=5)
        offs = oracle.shear_offsets(theta, signs, gain=2.5)
        assert not offs.any()
        again = oracle.synth_tile(flat_tile(), theta, signs, seed=5,
                                  initial_offset=0.0)
        assert np.array_equal(base.intensity, again.intensity)

    def test_quantized_to_16_bits(self):
        theta, signs = straight()
        tile = oracle.synth_tile(flat_tile(), theta, signs, seed=5)
        scaled = tile.intensity.astype(np.float64) * 65535.0
        assert np.allclose(scaled, np.rint(scaled), atol=1e-3)

    def test_shear_sign_recovery(self):
        # Derived bound: cross-correlation recovers the applied shear sense
        # >= 95% of the time once |normalized theta| > 0.2.
        rng = np.random.default_rng(1)
        ok = total = 0
        for trial in range(40):
            label = [0, 1, 2, 3][trial % 4]
            tn = 0.21 + 0.7 * rng.random()
            sgn = 1 if trial % 2 == 0 else -1
            theta = np.full(116, tn * 450.0)
            signs = np.full(116, sgn)
            scan = oracle.synth_tile(flat_tile(code=label, index=trial),
                                     theta, signs, seed=50 + trial)
            est = estimate_shear_rate(scan.intensity)
            ok += (est > 0) == (sgn > 0) and est != 0
            total += 1
        assert ok / total >= 0.95


class TestCorpus:
    def test_label_separability(self, demo_corpus):
        # Derived bound: pairwise KS > 0.2 keeps the translation task
        # non-degenerate.
        rng = np.random.default_rng(0)
        samples = {}
        for label in TerrainLabel:
            mask = demo_corpus.maps == int(label)
            if mask.sum() > 500:
                v = demo_corpus.images[mask]
                samples[label] = rng.choice(v, size=min(30000, v.size), replace=False)
        assert len(samples) >= 4
        labels = list(samples)
        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                assert ks_statistic(samples[a], samples[b]) > 0.2, (a, b)

    def test_seam_continuity_matches_interior(self, demo_corpus):
        im = demo_corpus.images
        seam = np.abs(im[:-1, -1, :] - im[1:, 0, :]).mean()
        within = np.abs(np.diff(im, axis=1)).mean()
        assert 0.8 <= seam / within <= 1.25

    def test_snippets_are_true_predecessors(self, demo_corpus):
        s = demo_corpus.snippet_rows
        snip = demo_corpus.snippet(5)
        assert np.array_equal(snip, demo_corpus.images[4, -s:])
        assert not demo_corpus.snippet(0).any()

    def test_route_too_short(self):
        world = corpus_mod.make_demo_world(seed=1)
        mission = corpus_mod.make_survey_mission(world, n_tiles=4, tile_rows=116,
                                                 swath_px=128)
        with pytest.raises(ValidationError):
            corpus_mod.make_corpus(world, mission, n_tiles=4000, seed=0,
                                   tile_rows=116)

    def test_zero_tiles_rejected(self):
        world = corpus_mod.make_demo_world(seed=1)
        mission = corpus_mod.make_survey_mission(world, n_tiles=4, tile_rows=116,
                                                 swath_px=128)
        with pytest.raises(ValidationError):
            corpus_mod.make_corpus(world, mission, n_tiles=0, seed=0, tile_rows=116)


class TestCorpusIO:
    @pytest.fixture(scope="class")
    def small_corpus(self):
        return corpus_mod.make_demo_corpus(n_tiles=6, seed=9, tile_rows=32,
                                           swath_px=32)

    def test_round_trip_bitwise(self, small_corpus, tmp_path):
        corpus_mod.save_corpus(small_corpus, tmp_path / "c")
        back = corpus_mod.load_corpus(tmp_path / "c")
        assert np.array_equal(back.images, small_corpus.images)
        assert np.array_equal(back.maps, small_corpus.maps)
        assert np.array_equal(back.sign, small_corpus.sign)
        assert back.meta["oracle_params"] == small_corpus.meta["oracle_params"]

    def test_version_mismatch(self, small_corpus, tmp_path):
        corpus_mod.save_corpus(small_corpus, tmp_path / "c")
        meta = json.loads((tmp_path / "c" / "meta.json").read_text())
        meta["format_version"] = 99
        (tmp_path / "c" / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(FormatError):
            corpus_mod.load_corpus(tmp_path / "c")

    def test_missing_attitude_names_example(self, small_corpus, tmp_path):
        corpus_mod.save_corpus(small_corpus, tmp_path / "c")
        (tmp_path / "c" / "tiles" / "00003" / "att.json").unlink()
        with pytest.raises(FormatError, match="example 3"):
            corpus_mod.load_corpus(tmp_path / "c")
