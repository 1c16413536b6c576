import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepkriging.deep_kriging import (
    NetworkConfig,
    apply_weights,
    build_network,
    normalize_weights,
    predict,
    repeat_input,
    super_resolve,
)
from deepkriging.gradcheck import check_network
from deepkriging.uncertainty import random_params

from oracles import box_filter_replicate

SMALL = NetworkConfig(K=1, feature_depth=8, units=2)


class TestConfig:
    def test_taps_and_layers(self):
        cfg = NetworkConfig()
        assert cfg.taps == 49
        assert cfg.conv_layers == 20
        assert cfg.center == 24

    def test_head_channels(self):
        p = build_network(NetworkConfig(K=3, feature_depth=4, units=1))
        assert p["head.conv.weight"].shape[0] == 49

    def test_seed_determinism(self):
        a, b = build_network(SMALL, seed=5), build_network(SMALL, seed=5)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a.tensors)
        c = build_network(SMALL, seed=6)
        assert not np.array_equal(a["entry.weight"].data, c["entry.weight"].data)


class TestRepeatInput:
    def test_constant(self):
        out = repeat_input(np.full((4, 5), 3.0), 2)
        assert out.shape == (25, 4, 5) and np.all(out == 3.0)

    def test_center_channel(self, rng):
        img = rng.normal(size=(6, 6))
        assert np.array_equal(repeat_input(img, 3)[24], img)

    def test_corner_by_hand(self):
        ramp = np.arange(25.0).reshape(5, 5)
        # top-left pixel, offsets (dy, dx) in row-major order; out of range -> clamped
        want = [0, 0, 1, 0, 0, 1, 5, 5, 6]
        assert repeat_input(ramp, 1)[:, 0, 0].tolist() == want


class TestWeights:
    def test_equal_raw(self):
        w = normalize_weights(np.full((9, 2, 2), 0.4))
        assert np.allclose(w, 1 / 9, rtol=1e-7)

    def test_one_hot(self):
        raw = np.zeros((9, 1, 1))
        raw[4] = 1
        assert np.allclose(normalize_weights(raw), raw, atol=1e-7)

    def test_center_one_hot_is_identity(self, textured):
        w = np.zeros((9,) + textured.shape)
        w[4] = 1
        assert np.array_equal(apply_weights(w, repeat_input(textured, 1)), textured)

    def test_uniform_is_box_filter(self, rng):
        img = rng.uniform(0, 255, (7, 9))
        w = np.full((25, 7, 9), 1 / 25)
        assert np.allclose(apply_weights(w, repeat_input(img, 2)), box_filter_replicate(img, 2), atol=1e-10)

    @given(c=st.floats(0, 255), seed=st.integers(0, 1000))
    def test_constant_image_any_weights(self, c, seed):
        raw = np.random.default_rng(seed).uniform(-1, 2, (9, 4, 4))
        raw[4] += 20  # keep the pixel sums away from zero
        out = apply_weights(normalize_weights(raw), repeat_input(np.full((4, 4), c), 1))
        assert np.allclose(out, c, rtol=1e-9, atol=1e-9)


class TestSuperResolve:
    def test_init_is_near_identity(self, textured):
        out = super_resolve(textured, build_network(SMALL)).sr
        assert np.max(np.abs(out - textured)) < 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_constant_any_params(self, seed):
        params = random_params(SMALL, np.random.default_rng(seed))
        c = 17.0 * seed + 3
        out = super_resolve(np.full((10, 10), c), params).sr
        assert np.max(np.abs(out - c)) < 1e-4

    def test_weights_normalized(self, textured):
        res = super_resolve(textured, build_network(SMALL))
        assert np.allclose(res.weights.sum(axis=0), 1.0, atol=1e-6)
        assert res.weights.shape == (9,) + textured.shape

    def test_reproducible_hash(self):
        ramp = np.add.outer(np.arange(16.0), np.arange(16.0)) * 7
        out1 = super_resolve(ramp, build_network(SMALL, seed=0)).sr
        out2 = super_resolve(ramp, build_network(SMALL, seed=0)).sr
        assert hashlib.sha256(out1.tobytes()).hexdigest() == hashlib.sha256(out2.tobytes()).hexdigest()

    def test_config_mismatch(self):
        with pytest.raises(ValueError):
            super_resolve(np.zeros((4, 4)), build_network(SMALL), NetworkConfig(K=2, feature_depth=8, units=2))

    def test_predict_batch_shape(self, rng):
        out = predict(build_network(SMALL), rng.uniform(0, 255, (3, 8, 8)))
        assert out.shape == (3, 1, 8, 8)


def test_end_to_end_gradient():
    errs = check_network(seed=0)
    assert max(errs.values()) < 1e-3
