import math

import numpy as np
import pytest

from patchsense.nn import (
    GRU,
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    LayerGraph,
    MaxPooling1D,
    ShapeError,
    available_backends,
    backend_name,
    bce_grad,
    bce_loss,
    dumps_checkpoint,
    graph_from_dict,
    load_checkpoint,
    save_checkpoint,
    set_backend,
    sgd_step,
    use_backend,
)
from patchsense.nn import _pykernels

from helpers import gradient_check

BACKENDS = ["numpy", "cython"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    if request.param not in available_backends():
        pytest.skip("compiled kernels not built")
    with use_backend(request.param):
        yield request.param


class TestConv1D:
    def test_shift_select(self, backend):
        g = LayerGraph([Conv1D(1, 2, activation="none")], (3, 1))
        g.layers[0].params["kernel"][:, 0, 0] = [1.0, 0.0]
        out = g.forward(np.array([[[1.0], [2.0], [3.0]]]))
        assert out[0, :, 0].tolist() == [1.0, 2.0]

    def test_table_shape(self):
        g = LayerGraph([Conv1D(64, 2)], (199, 64))
        assert g.output_shape == (198, 64) and g.param_count() == 8256

    def test_gradient(self, backend):
        errs = gradient_check(Conv1D(3, 2), (8, 4), seed=1)
        assert max(errs.values()) < 1e-5, errs

    def test_too_short(self):
        with pytest.raises(ShapeError):
            LayerGraph([Conv1D(2, 2)], (1, 4))


class TestMaxPool:
    def test_shapes(self):
        assert LayerGraph([MaxPooling1D(2)], (198, 64)).output_shape == (99, 64)
        assert LayerGraph([MaxPooling1D(2)], (21, 64)).output_shape == (10, 64)

    def test_column(self, backend):
        g = LayerGraph([MaxPooling1D(2)], (4, 1))
        assert g.forward(np.array([[[1.0], [3.0], [2.0], [5.0]]]))[0, :, 0].tolist() == [3.0, 5.0]

    def test_tie_goes_to_first(self, backend):
        g = LayerGraph([MaxPooling1D(2)], (2, 1))
        g.forward(np.array([[[2.0], [2.0]]]))
        dx = g.backward(np.array([[[1.0]]]))
        assert dx[0, :, 0].tolist() == [1.0, 0.0]

    def test_odd_length_tail_gets_no_gradient(self, backend):
        g = LayerGraph([MaxPooling1D(2)], (5, 2))
        x = np.arange(10, dtype=float).reshape(1, 5, 2)
        g.forward(x)
        dx = g.backward(np.ones((1, 2, 2)))
        assert np.all(dx[0, 4] == 0) and dx.sum() == 4


class TestDense:
    def test_param_counts(self):
        assert LayerGraph([Dense(256)], (6336,)).param_count() == 1_622_272
        assert LayerGraph([Dense(1, "sigmoid")], (12,)).param_count() == 13

    def test_identity(self):
        g = LayerGraph([Dense(4, "none")], (4,))
        g.layers[0].params["kernel"][...] = np.eye(4)
        x = np.random.default_rng(0).normal(size=(3, 4))
        assert np.array_equal(g.forward(x), x)

    @pytest.mark.parametrize("act", ["relu", "sigmoid", "none"])
    def test_gradient(self, act):
        errs = gradient_check(Dense(3, act), (5,), seed=2)
        assert max(errs.values()) < 1e-6, errs


class TestDropout:
    def test_rate_zero_identity(self):
        g = LayerGraph([Dropout(0.0)], (10,))
        x = np.ones((2, 10))
        assert np.array_equal(g.forward(x, training=True, rng=np.random.default_rng(0)), x)

    def test_inference_identity(self):
        g = LayerGraph([Dropout(0.9)], (10,))
        x = np.ones((2, 10))
        assert np.array_equal(g.forward(x), x)

    def test_mean_preserved(self):
        g = LayerGraph([Dropout(0.5)], (1000,))
        out = g.forward(np.ones((100, 1000)), training=True, rng=np.random.default_rng(7))
        assert abs(out.mean() - 1.0) < 0.05
        assert set(np.unique(out).tolist()) == {0.0, 2.0}

    def test_gradient_uses_mask(self):
        errs = gradient_check(Dropout(0.3), (6,), seed=3, training=True)
        assert errs["input"] < 1e-8

    def test_needs_rng_in_training(self):
        with pytest.raises(ValueError):
            LayerGraph([Dropout(0.5)], (3,)).forward(np.ones((1, 3)), training=True)

    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestRecurrent:
    @pytest.mark.parametrize("f,h,n", [(64, 100, 66_000), (100, 50, 30_200), (50, 25, 7_600), (25, 12, 1_824)])
    def test_lstm_params(self, f, h, n):
        assert LayerGraph([LSTM(h)], (7, f)).param_count() == n

    @pytest.mark.parametrize("f,h,n", [(64, 100, 49_800), (100, 50, 22_800), (50, 25, 5_775), (25, 12, 1_404)])
    def test_gru_params(self, f, h, n):
        assert LayerGraph([GRU(h)], (7, f)).param_count() == n

    @pytest.mark.parametrize("cell", [LSTM, GRU])
    def test_zero_params_zero_output(self, cell, backend):
        g = LayerGraph([cell(5, return_sequences=True)], (6, 3))
        x = np.random.default_rng(0).normal(size=(2, 6, 3)) * 10
        assert np.all(g.forward(x) == 0.0)

    @pytest.mark.parametrize("cell", [LSTM, GRU])
    @pytest.mark.parametrize("seq", [True, False])
    def test_gradient(self, cell, seq, backend):
        errs = gradient_check(cell(4, return_sequences=seq), (5, 3), seed=4)
        assert max(errs.values()) < 1e-6, errs

    def test_single_step(self, backend):
        g = LayerGraph([LSTM(3)], (1, 2)).initialize(0)
        assert g.forward(np.ones((4, 1, 2))).shape == (4, 3)

    def test_lstm_matches_reference_step(self):
        # one step by hand with gate order i, f, g, o
        g = LayerGraph([LSTM(2)], (1, 3)).initialize(5)
        p = g.layers[0].params
        p["bias"][...] = np.random.default_rng(1).normal(size=8)
        x = np.random.default_rng(2).normal(size=(1, 1, 3))
        z = x[0, 0] @ p["kernel"] + p["bias"]
        sig = lambda v: 1 / (1 + np.exp(-v))
        i, f, gg, o = sig(z[:2]), sig(z[2:4]), np.tanh(z[4:6]), sig(z[6:])
        c = i * gg
        assert np.allclose(g.forward(x)[0], o * np.tanh(c), atol=1e-14)

    def test_gru_matches_reference_steps(self):
        # reset-after formulation, gate order z, r, n; h = z*h_prev + (1-z)*n
        g = LayerGraph([GRU(2, return_sequences=True)], (2, 3)).initialize(5)
        p = g.layers[0].params
        rng = np.random.default_rng(1)
        p["input_bias"][...] = rng.normal(size=6)
        p["recurrent_bias"][...] = rng.normal(size=6)
        x = rng.normal(size=(1, 2, 3))
        sig = lambda v: 1 / (1 + np.exp(-v))
        h = np.zeros(2)
        expect = []
        for t in range(2):
            xi = x[0, t] @ p["kernel"] + p["input_bias"]
            hr = h @ p["recurrent_kernel"] + p["recurrent_bias"]
            z, r = sig(xi[:2] + hr[:2]), sig(xi[2:4] + hr[2:4])
            n = np.tanh(xi[4:] + r * hr[4:])
            h = z * h + (1 - z) * n
            expect.append(h)
        assert np.allclose(g.forward(x)[0], np.array(expect), atol=1e-14)


class TestFlatten:
    def test_round_trip(self):
        errs = gradient_check(Flatten(), (3, 4))
        assert errs["input"] < 1e-8


class TestLoss:
    def test_half(self):
        assert bce_loss(np.array(0.5), 1.0) == pytest.approx(math.log(2))

    def test_perfect(self):
        assert bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])).max() <= -math.log(1 - 1e-7) + 1e-15

    @pytest.mark.parametrize("p,y", [(0.3, 1.0), (0.8, 0.0), (0.55, 1.0)])
    def test_gradient(self, p, y):
        h = 1e-6
        numeric = (bce_loss(p + h, y) - bce_loss(p - h, y)) / (2 * h)
        assert abs(bce_grad(p, y) - numeric) / abs(numeric) < 1e-6

    def test_fused_logit_gradient(self):
        g = LayerGraph([Dense(1, "sigmoid")], (4,)).initialize(0)
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(6, 4)), (rng.random(6) > 0.5).astype(float)
        g.loss_and_grad(x, y, training=False)
        analytic = g.layers[0].grads["kernel"].copy()
        w = g.layers[0].params["kernel"]
        numeric = np.zeros_like(w)
        for i in range(4):
            for sign in (1, -1):
                w[i, 0] += sign * 1e-6
                numeric[i, 0] += sign * bce_loss(g.forward(x).ravel(), y).mean() / 2e-6
                w[i, 0] -= sign * 1e-6
        assert np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)) < 1e-6


class TestSgd:
    def test_arithmetic(self):
        p = np.array([1.0])
        sgd_step([p], [np.array([2.0])], 0.1)
        assert p[0] == pytest.approx(0.8)

    def test_zero_grad(self):
        p = np.array([1.5, -2.0])
        sgd_step([p], [np.zeros(2)], 0.3)
        assert p.tolist() == [1.5, -2.0]

    def test_quadratic_monotone(self):
        # f(w) = a/2 (w - 3)^2 has curvature a; any lr < 2/a contracts
        a, w, lr = 4.0, np.array([10.0]), 0.2
        losses = []
        for _ in range(15):
            losses.append(0.5 * a * (w[0] - 3) ** 2)
            sgd_step([w], [a * (w - 3)], lr)
        assert all(b < c for b, c in zip(losses[1:], losses[:-1]))

    def test_negative_lr(self):
        with pytest.raises(ValueError):
            sgd_step([np.zeros(1)], [np.zeros(1)], -0.1)


class TestCheckpoint:
    def _graph(self):
        return LayerGraph(
            [Conv1D(4), MaxPooling1D(2), Flatten(), Dense(3), Dropout(0.5), Dense(1, "sigmoid")], (7, 5), "tiny"
        ).initialize(11)

    def test_round_trip_bit_exact(self, tmp_path):
        g = self._graph()
        save_checkpoint(tmp_path / "m.json", g, seed=11, training_config={"lr": 0.01})
        g2, doc = load_checkpoint(tmp_path / "m.json")
        assert doc["seed"] == 11 and g2.name == "tiny"
        for a, b in zip(g.parameters(), g2.parameters()):
            assert np.array_equal(a.astype(np.float32), b)
        assert dumps_checkpoint(g2, seed=11, training_config={"lr": 0.01}) == (tmp_path / "m.json").read_text()

    def test_recurrent_round_trip(self):
        g = LayerGraph([GRU(3, True), LSTM(2), Dense(1, "sigmoid")], (4, 2)).initialize(1)
        g2 = graph_from_dict(__import__("json").loads(dumps_checkpoint(g)))
        x = np.random.default_rng(0).normal(size=(2, 4, 2))
        assert np.allclose(g.forward(x), g2.forward(x), atol=1e-6)

    def test_rejects_bad_format(self):
        with pytest.raises(ValueError):
            graph_from_dict({"format": "other"})


class TestBackends:
    def test_numpy_always_available(self):
        assert "numpy" in available_backends()

    def test_switch(self):
        before = backend_name()
        with use_backend("numpy"):
            assert backend_name() == "numpy"
        assert backend_name() == before

    def test_unknown(self):
        with pytest.raises(ValueError):
            set_backend("fortran")

    @pytest.mark.skipif("cython" not in available_backends(), reason="compiled kernels not built")
    def test_parity(self):
        ck = available_backends()["cython"]
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 9, 5))
        w, b = rng.normal(size=(2, 5, 4)), rng.normal(size=4)
        assert np.allclose(ck.conv1d_forward(x, w, b), _pykernels.conv1d_forward(x, w, b), atol=1e-12)
        dy = rng.normal(size=(3, 8, 4))
        for a, c in zip(ck.conv1d_backward(x, w, dy), _pykernels.conv1d_backward(x, w, dy)):
            assert np.allclose(a, c, atol=1e-12)
        wx, wh, bb = rng.normal(size=(5, 12)), rng.normal(size=(3, 12)), rng.normal(size=12)
        fa, fb = ck.lstm_forward(x, wx, wh, bb), _pykernels.lstm_forward(x, wx, wh, bb)
        for a, c in zip(fa, fb):
            assert np.allclose(a, c, atol=1e-12)
        dhs = rng.normal(size=(3, 9, 3))
        for a, c in zip(ck.lstm_backward(x, wx, wh, *fa, dhs), _pykernels.lstm_backward(x, wx, wh, *fb, dhs)):
            assert np.allclose(a, c, atol=1e-12)
        wx, wh, bi, br = rng.normal(size=(5, 9)), rng.normal(size=(3, 9)), rng.normal(size=9), rng.normal(size=9)
        ga, gb = ck.gru_forward(x, wx, wh, bi, br), _pykernels.gru_forward(x, wx, wh, bi, br)
        for a, c in zip(ga, gb):
            assert np.allclose(a, c, atol=1e-12)
        for a, c in zip(ck.gru_backward(x, wx, wh, *ga, dhs), _pykernels.gru_backward(x, wx, wh, *gb, dhs)):
            assert np.allclose(a, c, atol=1e-12)
        ya, ia = ck.maxpool1d_forward(x, 2)
        yb, ib = _pykernels.maxpool1d_forward(x, 2)
        assert np.array_equal(ya, yb) and np.array_equal(ia, ib)
