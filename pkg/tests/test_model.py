import numpy as np
import pytest

from adapose.diffcore import DiffTensor, Tape, check_gradients, concat, sum_
from adapose.errors import ConfigurationError, DimensionError
from adapose.model import (
    PRESETS,
    ModelScale,
    extract_features,
    get_preset,
    init_params,
    load_params,
    predict,
    read_records,
    regress_pose,
    save_params,
    write_records,
)

TINY = PRESETS["tiny"]
DESK = PRESETS["desk"]


def batch(scale, n, seed=0):
    return np.random.default_rng(seed).uniform(0, 2, size=(n,) + scale.input_shape)


def test_paper_preset_feature_shape():
    scale = get_preset("paper")
    assert scale.feature_shape() == (512, 17, 17)
    params = init_params(scale, seed=0, dtype=np.float32)
    f = extract_features(DiffTensor(batch(scale, 1), dtype=np.float32), params)
    assert f.shape == (1, 512, 17, 17)


def test_desk_shapes():
    params = init_params(DESK, seed=0)
    f = extract_features(batch(DESK, 3), params)
    assert f.shape == (3, 32, 4, 4) == (3,) + DESK.feature_shape()
    assert regress_pose(f, params).shape == (3, 17, 2)
    assert params["head.w"].shape[1] == 34


def test_shape_errors():
    params = init_params(TINY, seed=0)
    with pytest.raises(ConfigurationError):
        extract_features(np.zeros((2, 3, 12, 15)), params)
    with pytest.raises(ConfigurationError):
        regress_pose(DiffTensor(np.zeros((2, 5, 3, 3))), params)
    with pytest.raises(ConfigurationError):
        get_preset("huge")
    with pytest.raises(ConfigurationError):
        ModelScale(block_widths=(8, 16), block_strides=(2,))


def test_zero_input_gives_zero_features():
    params = init_params(TINY, seed=0)
    f = extract_features(np.zeros((2,) + TINY.input_shape), params)
    assert np.all(f.data == 0)


def test_zero_weights_give_bias():
    params = init_params(TINY, seed=0)
    for name, t in params.trainable().items():
        t.data[...] = 0
    b = np.arange(34, dtype=np.float64)
    params["head.b"].data[...] = b
    out = regress_pose(extract_features(batch(TINY, 3), params), params)
    for i in range(3):
        np.testing.assert_array_equal(out.data[i], b.reshape(17, 2))


def test_init_statistics():
    params = init_params(get_preset("paper"), seed=0)
    checked = 0
    for name, t in params.trainable().items():
        if name.endswith(".w") and name != "head.w" and np.prod(t.shape[1:]) >= 256:
            fan_in = np.prod(t.shape[1:])
            assert abs(t.data.std() / np.sqrt(2 / fan_in) - 1) < 0.2, name
            checked += 1
    assert checked >= 5


def test_init_determinism():
    a, b, c = init_params(TINY, 3), init_params(TINY, 3), init_params(TINY, 4)
    for name in a.tensors:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a.trainable())


def test_batch_concatenation_is_rowwise():
    params = init_params(TINY, seed=1)
    x1, x2 = batch(TINY, 2, seed=1), batch(TINY, 3, seed=2)
    both = predict(params, np.concatenate([x1, x2]))
    np.testing.assert_allclose(both, np.concatenate([predict(params, x1), predict(params, x2)]),
                               rtol=1e-12, atol=1e-9)


def test_end_to_end_gradient_fd():
    params = init_params(DESK, seed=2)
    params.set_normalization(np.full(34, 200.0), 30.0)
    x = batch(DESK, 2, seed=3)
    trainable = list(params.trainable().values())
    err = check_gradients(lambda: sum_(regress_pose(extract_features(x, params), params)), trainable,
                          max_entries=5, rng=np.random.default_rng(0), floor=1e-6)
    assert err < 1e-4


def test_parameters_receive_gradient():
    params = init_params(TINY, seed=0)
    x = DiffTensor(batch(TINY, 4))
    with Tape() as tape:
        out = sum_(regress_pose(extract_features(concat([x, x]), params), params))
    tape.backward(out)
    for name, t in params.trainable().items():
        assert t.grad is not None and np.all(np.isfinite(t.grad)), name


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(DESK, seed=5, dtype=np.float32)
    params.set_normalization(np.linspace(0, 300, 34), 12.5)
    path = tmp_path / "m.apck"
    save_params(path, params, extra={"meta.epoch": np.array([7.0])})
    back = load_params(path)
    assert back.scale == DESK
    for name, t in params.tensors.items():
        np.testing.assert_array_equal(back[name].data, t.data)
    assert read_records(path)["meta.epoch"][0] == 7.0
    x = batch(DESK, 2)
    np.testing.assert_array_equal(predict(back, x), predict(params, x))


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.apck"
    bad.write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(ConfigurationError):
        read_records(bad)
    path = tmp_path / "m.apck"
    save_params(path, init_params(TINY, 0, dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(ConfigurationError):
        read_records(path)
    recs = {"meta.arch": TINY.to_vector(), "stem.w": np.zeros((1, 1, 1, 1))}
    write_records(path, recs)
    with pytest.raises((ConfigurationError, DimensionError)):
        load_params(path)
