import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from antispoof.errors import (
    CropLongerThanShortestUtterance,
    DimensionMismatch,
    MalformedArchive,
    SingleClassDataset,
    UtteranceTooShort,
)
from antispoof.features import FeatureMatrix
from antispoof.xvector import (
    CONTEXT1,
    PARAM_NAMES,
    RECEPTIVE_FIELD,
    FocalLossParams,
    TdnnLayer,
    TrainConfig,
    XVectorModel,
    backward,
    extract_embedding,
    focal_loss,
    focal_loss_grad,
    forward,
    load_checkpoint,
    save_checkpoint,
    stats_pooling,
    tdnn_forward,
    train,
    xvector_score,
)


def tiny(seed=0, focal=FocalLossParams()):
    return XVectorModel.create(4, 6, 6, 4, seed=seed, focal=focal)


def separable_dataset(n=40, t=30, d=4, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        y = int(i % 4 == 0)
        x = rng.standard_normal((t + rng.integers(0, 10), d)) + (1.5 if y else -1.5)
        data.append((FeatureMatrix(x, "MFCC"), y))
    return data


class TestTdnn:
    def test_valid_frame_count(self):
        layer = TdnnLayer(np.ones((5 * 3, 2)), np.zeros(2), CONTEXT1)
        assert tdnn_forward(layer, np.ones((100, 3))).shape == (96, 2)

    def test_locality(self):
        rng = np.random.default_rng(0)
        layer = TdnnLayer(rng.standard_normal((15, 4)), rng.standard_normal(4), CONTEXT1)
        x = rng.standard_normal((40, 3))
        y0 = tdnn_forward(layer, x)
        x2 = x.copy()
        x2[20] += 5.0
        changed = np.flatnonzero(np.any(tdnn_forward(layer, x2) != y0, axis=1)) + 2  # back to input index
        assert np.all(np.abs(changed - 20) <= 2)

    def test_centre_identity(self):
        d = 3
        w = np.zeros((5 * d, d))
        w[2 * d : 3 * d] = np.eye(d)
        x = np.abs(np.random.default_rng(1).standard_normal((12, d)))
        np.testing.assert_array_equal(tdnn_forward(TdnnLayer(w, np.zeros(d), CONTEXT1), x), x[2:-2])

    def test_too_short(self):
        with pytest.raises(UtteranceTooShort):
            tdnn_forward(TdnnLayer(np.ones((5, 1)), np.zeros(1), CONTEXT1), np.ones((4, 1)))


class TestPooling:
    def test_constant_floors(self):
        out = stats_pooling(np.full((7, 256), 3.0))
        assert out.shape == (512,)
        np.testing.assert_array_equal(out[:256], 3.0)
        np.testing.assert_array_equal(out[256:], 1e-5)

    def test_single_frame(self):
        np.testing.assert_array_equal(stats_pooling(np.ones((1, 4)))[4:], 1e-5)

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 50))
    def test_permutation_invariant(self, seed, t):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((t, 6))
        np.testing.assert_allclose(stats_pooling(x[rng.permutation(t)]), stats_pooling(x),
                                   rtol=1e-12, atol=1e-15)

    def test_population_std(self):
        x = np.random.default_rng(2).standard_normal((30, 3))
        np.testing.assert_allclose(stats_pooling(x)[3:], np.sqrt(x.var(axis=0) + 1e-10), rtol=1e-14)


class TestFocalLoss:
    def test_cross_entropy_at_half(self):
        assert focal_loss(0.5, 1, FocalLossParams(1.0, 0.0)) == pytest.approx(math.log(2), abs=1e-15)

    def test_known_value(self):
        expected = 0.01 * -math.log(0.9)
        assert focal_loss(0.9, 1, FocalLossParams(1.0, 2.0)) == pytest.approx(expected, rel=1e-12)
        assert focal_loss(0.9, 1) == pytest.approx(0.0010536, abs=1e-7)

    def test_perfect_prediction(self):
        assert focal_loss(1.0, 1) < 1e-20
        assert focal_loss(0.0, 0) < 1e-20

    def test_negative_term_uses_log_one_minus_p(self):
        # confident wrong answer on a spoof trial must be expensive
        assert focal_loss(0.99, 0, FocalLossParams(1.0, 0.0)) == pytest.approx(-math.log(0.01), rel=1e-12)

    @settings(max_examples=300)
    @given(st.floats(1e-6, 1 - 1e-6), st.integers(0, 1), st.floats(0.1, 5.0))
    def test_bounded_by_cross_entropy(self, p, y, gamma):
        fl = focal_loss(p, y, FocalLossParams(1.0, gamma))
        ce = focal_loss(p, y, FocalLossParams(1.0, 0.0))
        assert 0.0 <= fl <= ce

    def test_gradient_matches_difference(self):
        p = np.linspace(0.01, 0.99, 50)
        h = 1e-6
        for y in (0, 1):
            for params in (FocalLossParams(1.0, 0.0), FocalLossParams(0.25, 2.0), FocalLossParams(1.0, 0.5)):
                fd = (focal_loss(p + h, y, params) - focal_loss(p - h, y, params)) / (2 * h)
                np.testing.assert_allclose(focal_loss_grad(p, y, params), fd, rtol=1e-6)

    def test_clamped_region_has_zero_gradient(self):
        assert focal_loss_grad(0.0, 1) == 0.0
        assert np.isfinite(focal_loss(0.0, 1))

    @pytest.mark.parametrize("bad", [dict(alpha=0.0), dict(gamma=-1.0)])
    def test_param_validation(self, bad):
        with pytest.raises(ValueError):
            FocalLossParams(**bad)


def _finite_difference(model, x, y, h=1e-5):
    grads = {}
    for name in PARAM_NAMES:
        p = model.params[name]
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = model.loss_and_grads(x, y)[0]
            p[idx] = old - h
            down = model.loss_and_grads(x, y)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


class TestBackward:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        m = tiny(seed)
        for name in PARAM_NAMES:
            if name.startswith("b"):
                m.params[name] = 0.1 * rng.standard_normal(m.params[name].shape)
        x = rng.standard_normal((2, 12, 4))
        y = np.array([1, 0])
        _, g = m.loss_and_grads(x, y)
        fd = _finite_difference(m, x, y)
        for name in PARAM_NAMES:
            err = np.abs(g[name] - fd[name]) / np.maximum(np.maximum(np.abs(g[name]), np.abs(fd[name])), 1e-8)
            assert err.max() < 1e-4, name

    def test_gamma_zero_equals_cross_entropy_gradient(self):
        m = tiny(3, FocalLossParams(1.0, 0.0))
        x = np.random.default_rng(3).standard_normal((12, 4))
        g = backward(m, x, 1)
        # cross-entropy gradient of the output bias is (p - y, y - p) for the bonafide/spoof logits
        p_b, _ = forward(m, x)
        np.testing.assert_allclose(g["bo"], [p_b - 1, 1 - p_b], atol=1e-10)

    def test_saddle_symmetry(self):
        m = tiny()
        for name in PARAM_NAMES:
            m.params[name] = np.zeros_like(m.params[name])
        x = np.random.default_rng(4).standard_normal((12, 4))
        assert forward(m, x) == (0.5, 0.5)
        g1, g0 = backward(m, x, 1)["bo"], backward(m, x, 0)["bo"]
        assert np.all(np.isfinite(g1))
        np.testing.assert_allclose(g1, -g0, atol=1e-15)
        assert g1[0] == -g1[1] and g1[0] < 0


class TestForward:
    def test_probabilities(self):
        m = tiny()
        rng = np.random.default_rng(5)
        for t in (RECEPTIVE_FIELD, 150, 300):
            p_b, p_s = forward(m, rng.standard_normal((t, 4)))
            assert p_b > 0 and p_s > 0
            assert abs(p_b + p_s - 1) <= 1e-9

    def test_too_short(self):
        with pytest.raises(UtteranceTooShort):
            forward(tiny(), np.zeros((8, 4)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            forward(tiny(), np.zeros((20, 5)))

    def test_receptive_field_locality(self):
        m = XVectorModel.create(4, 6, 6, 4, seed=6)
        x = np.random.default_rng(6).standard_normal((40, 4))
        _, c = m._forward(x)
        x2 = x.copy()
        x2[20] += 3.0
        _, c2 = m._forward(x2)
        assert c["a2"].shape[0] == 40 - (RECEPTIVE_FIELD - 1)
        changed = np.flatnonzero(np.any(c2["a2"] != c["a2"], axis=1)) + 4  # back to input index
        assert changed.size and np.all(np.abs(changed - 20) <= 4)

    def test_pooling_input_permutation(self):
        m = tiny(7)
        x = np.random.default_rng(7).standard_normal((30, 4))
        _, c = m._forward(x)
        h2 = np.maximum(c["a2"], 0)
        perm = np.random.default_rng(8).permutation(h2.shape[0])

        def head(h):
            pooled = stats_pooling(h)
            emb = np.maximum(pooled @ m.params["We"] + m.params["be"], 0)
            return emb @ m.params["Wo"] + m.params["bo"]

        np.testing.assert_allclose(head(h2[perm]), head(h2), rtol=1e-12)


class TestScore:
    def test_log_ratio(self):
        m = tiny()
        m.params["Wo"][:] = 0
        m.params["bo"][:] = [math.log(0.9), math.log(0.1)]
        x = np.zeros((12, 4))
        assert xvector_score(m, x).score == pytest.approx(math.log(9), rel=1e-12)
        assert xvector_score(m, x).score == pytest.approx(2.1972, abs=1e-4)
        m.params["bo"][:] = 0
        assert xvector_score(m, x).score == 0.0

    def test_monotone_in_posterior(self):
        m = tiny()
        m.params["Wo"][:] = 0
        scores = []
        for p in np.linspace(0.05, 0.95, 19):
            m.params["bo"][:] = [math.log(p), math.log(1 - p)]
            scores.append(xvector_score(m, np.zeros((12, 4))).score)
        assert np.all(np.diff(scores) > 0)

    def test_embedding(self):
        m = XVectorModel.create(4, 8, 8, 128, seed=1)
        x = np.random.default_rng(9).standard_normal((50, 4))
        e = extract_embedding(m, x)
        assert e.shape == (128,)
        assert np.all(e >= 0)
        np.testing.assert_array_equal(e, extract_embedding(m, x.copy()))


class TestTrain:
    cfg = TrainConfig(lr=0.01, epochs=5, batch=8, crop_frames=20, hidden1=8, hidden2=8, embed=4, seed=3)

    def test_loss_decreases_on_separable_data(self):
        state = train(separable_dataset(), self.cfg)
        assert len(state.train_loss) == len(state.val_loss) == 5
        assert np.all(np.diff(state.train_loss) < 0)

    def test_deterministic(self):
        a = train(separable_dataset(), self.cfg).model
        b = train(separable_dataset(), self.cfg).model
        for name in PARAM_NAMES:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_single_class(self):
        data = [(f, 0) for f, _ in separable_dataset()]
        with pytest.raises(SingleClassDataset):
            train(data, self.cfg)

    def test_crop_too_long(self):
        with pytest.raises(CropLongerThanShortestUtterance):
            train(separable_dataset(), TrainConfig(crop_frames=100))

    def test_variable_length_after_training(self):
        m = train(separable_dataset(), self.cfg).model
        rng = np.random.default_rng(10)
        for t in (9, 150, 1000):
            p_b, p_s = forward(m, rng.standard_normal((t, 4)))
            assert abs(p_b + p_s - 1) <= 1e-9


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = tiny(2, FocalLossParams(0.5, 1.5))
        m.input_mean = np.arange(4.0)
        save_checkpoint(tmp_path / "m.xv", m, "abc123")
        back, digest = load_checkpoint(tmp_path / "m.xv")
        assert digest == "abc123"
        assert back.focal == m.focal
        assert back.dims == m.dims
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(back.params[name], m.params[name].astype(np.float32))
        np.testing.assert_array_equal(back.input_mean, m.input_mean)

    def test_resave_is_byte_identical(self, tmp_path):
        save_checkpoint(tmp_path / "a.xv", tiny(1))
        back, _ = load_checkpoint(tmp_path / "a.xv")
        save_checkpoint(tmp_path / "b.xv", back)
        assert (tmp_path / "a.xv").read_bytes() == (tmp_path / "b.xv").read_bytes()

    def test_bad_file(self, tmp_path):
        (tmp_path / "x.xv").write_bytes(b"SPXV\x01\x00")
        with pytest.raises(MalformedArchive):
            load_checkpoint(tmp_path / "x.xv")
