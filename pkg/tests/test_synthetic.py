import numpy as np
import pytest

from oya.grid import GridSpec, collocate, rasterize_swath
from oya.synthetic import RainLaw, SynthConfig, channel_set, generate_dense_noisy, generate_pair


def law_oracle(x, law: RainLaw):
    """Independent per-cell reimplementation of the channel-to-rain lookup."""
    rows, cols, c = x.shape
    out = np.zeros((rows, cols))
    p = min(law.primary_channel, c - 1)
    s = min(law.secondary_channel, c - 1)
    for i in range(rows):
        for j in range(cols):
            b = law.primary_weight * float(x[i, j, p]) + law.secondary_weight * float(x[i, j, s])
            e = max(0.0, law.temp_threshold - b)
            out[i, j] = law.scale * e**law.shape
    return out


class TestRainLaw:
    def test_support(self):
        law = RainLaw()
        x = np.full((2, 2, 2), 300.0, dtype=np.float32)  # warm: blend above threshold
        assert not law.rate_from_channels(x).any()

    def test_lookup_oracle_small(self, rng):
        law = RainLaw()
        x = rng.normal(250, 25, (6, 6, 4)).astype(np.float32)
        got = law.rate_from_channels(x)
        assert np.allclose(got, law_oracle(x, law), atol=1e-12)

    def test_single_channel_blend(self):
        law = RainLaw()
        x = np.full((1, 1, 1), 200.0, dtype=np.float32)
        b = law.blend(x)
        assert b[0, 0] == pytest.approx(200.0)


class TestGeneratePair:
    def test_same_seed_identical(self):
        cfg = SynthConfig(seed=5)
        s1, w1, d1 = generate_pair(cfg)
        s2, w2, d2 = generate_pair(cfg)
        assert np.array_equal(s1.data, s2.data)
        assert np.array_equal(w1.rate, w2.rate)
        assert np.array_equal(w1.time, w2.time)
        assert np.array_equal(d1, d2)

    def test_dense_truth_matches_lookup_oracle(self):
        cfg = SynthConfig(seed=2, grid=GridSpec.from_origin(1.0, -1.0, 16, 16), channels=3)
        scene, _, dense = generate_pair(cfg)
        assert np.allclose(dense, law_oracle(scene.data, cfg.rain_law), atol=1e-12)

    def test_rain_law_support_in_scene(self):
        cfg = SynthConfig(seed=3)
        scene, _, dense = generate_pair(cfg)
        b = cfg.rain_law.blend(scene.data)
        assert not dense[b >= cfg.rain_law.temp_threshold].any()
        assert (dense >= 0).all()

    def test_swath_rasterizes_back_to_dense_truth(self):
        cfg = SynthConfig(seed=4)
        scene, swath, dense = generate_pair(cfg)
        pair = collocate(scene, swath)
        assert pair.m.any()
        assert np.array_equal(pair.y[pair.m], dense[pair.m])

    def test_swath_is_strict_subset(self):
        cfg = SynthConfig(seed=6)
        scene, swath, _ = generate_pair(cfg)
        pair = collocate(scene, swath)
        frac = pair.m.mean()
        rows, cols = cfg.grid.shape
        diag = np.hypot(rows, cols)
        assert 0 < frac < 1
        assert frac <= cfg.swath_width * diag / (rows * cols)

    def test_sample_times_inside_window(self):
        cfg = SynthConfig(seed=8)
        scene, swath, _ = generate_pair(cfg)
        assert (swath.time >= np.datetime64(scene.t_start, "us")).all()
        assert (swath.time <= np.datetime64(scene.t_end, "us")).all()

    def test_channel_set_names(self):
        channels = channel_set(8)
        assert channels[0].name == "longwave_window"
        assert len({c.name for c in channels}) == 8

    def test_imbalance_no_rain_dominates(self):
        fracs = [(generate_pair(SynthConfig(seed=s))[2] >= 0.2).mean() for s in range(10)]
        assert np.mean(fracs) < 0.25


class TestGenerateDenseNoisy:
    def test_mask_all_valid(self):
        pair = generate_dense_noisy(SynthConfig(seed=1, noise_level=0.3))
        assert pair.m.all()

    def test_zero_noise_equals_dense_truth(self):
        cfg = SynthConfig(seed=1, noise_level=0.0)
        _, _, dense = generate_pair(cfg)
        pair = generate_dense_noisy(cfg)
        assert np.array_equal(pair.y, dense)

    def test_deviation_grows_with_noise(self):
        mads = []
        for level in (0.1, 0.2, 0.4):
            cfg = SynthConfig(seed=9, noise_level=level)
            _, _, dense = generate_pair(SynthConfig(seed=9))
            noisy = generate_dense_noisy(cfg)
            mads.append(np.abs(noisy.y - dense).mean())
        assert mads[0] < mads[1] < mads[2]

    def test_speckle_adds_false_rain(self):
        cfg = SynthConfig(seed=12, noise_level=0.5)
        _, _, dense = generate_pair(SynthConfig(seed=12))
        noisy = generate_dense_noisy(cfg)
        false_rain = (dense == 0) & (noisy.y > 0)
        assert false_rain.any()


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        SynthConfig(channels=0)
    with pytest.raises(ValueError):
        SynthConfig(noise_level=1.0)
    with pytest.raises(ValueError):
        SynthConfig(swath_width=0)
