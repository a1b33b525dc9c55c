import numpy as np
import pytest

from patchsense.models import BUILDERS, build_conv1d, build_gru, build_lstm, build_model
from patchsense.nn import ShapeError, param_count


def test_conv1d_at_window_ten():
    g = build_conv1d(21)
    kinds = [(layer.kind, layer.output_shape) for layer in g.layers]
    assert kinds[2] == ("Flatten", (640,))
    assert g.layers[3].param_count() == 164_096
    assert param_count(g) == 8256 + 164_096 + 16_448 + 4160 + 65


@pytest.mark.parametrize("length", [1, 7, 21, 199])
def test_recurrent_counts_independent_of_length(length):
    assert param_count(build_lstm(length)) == 105_637
    assert param_count(build_gru(length)) == 79_792


def test_lstm_single_step_runs():
    g = build_lstm(1)
    out = g.forward(np.random.default_rng(0).random((3, 1, 64)))
    assert out.shape == (3, 1)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_output_is_probability(name):
    g = build_model(name, 9, seed=4)
    out = g.predict(np.random.default_rng(1).random((5, 9, 64)))
    assert out.shape == (5,) and np.all((out > 0) & (out < 1))


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_zero_model_outputs_half(name):
    g = build_model(name, 9, seed=None)
    out = g.predict(np.random.default_rng(1).random((4, 9, 64)))
    assert np.all(out == 0.5)


def test_seeded_init_is_deterministic():
    a, b = build_conv1d(21, seed=3), build_conv1d(21, seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    c = build_conv1d(21, seed=4)
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])


def test_glorot_bounds_and_zero_bias():
    g = build_conv1d(21, seed=0)
    conv = g.layers[0].params
    limit = np.sqrt(6 / (2 * 64 + 2 * 64))
    assert np.abs(conv["kernel"]).max() <= limit
    assert np.all(conv["bias"] == 0)


def test_errors():
    with pytest.raises(ShapeError):
        build_conv1d(3)
    with pytest.raises(ValueError):
        build_model("transformer", 21)
