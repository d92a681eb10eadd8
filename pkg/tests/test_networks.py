import numpy as np
import pytest

from mfggan import networks
from mfggan.autodiff import Tape, grad
from mfggan.errors import BadMagicError, PreconditionError, ShapeError, SpecError, SpecMismatchError, TruncatedError
from mfggan.networks import MlpSpec


def test_xavier_bound_128():
    spec = MlpSpec(127, (128, 128), 1)  # 127 + time = 128 inputs
    params = networks.init_params(spec, 3)
    w = params[2]
    assert w.shape == (128, 128)
    assert np.abs(w).max() <= 0.2165
    # sqrt(6 / (128 + 128)) is the actual Xavier bound, nearly attained with 16k draws
    assert 0.15 < np.abs(w).max() <= np.sqrt(6.0 / 256.0)


def test_init_deterministic_and_zero_biases():
    spec = MlpSpec(2, (16, 8), 2)
    a = networks.init_params(spec, 11)
    b = networks.init_params(spec, 11)
    assert networks.params_equal(a, b)
    assert not networks.params_equal(a, networks.init_params(spec, 12))
    for bias in a[1::2]:
        assert np.all(bias == 0.0)


def test_param_count_and_shapes():
    spec = MlpSpec(2, (4, 3), 1)
    assert spec.dims == (3, 4, 3, 1)
    assert spec.param_count == 3 * 4 + 4 + 4 * 3 + 3 + 3 * 1 + 1
    assert [p.shape for p in networks.init_params(spec, 0)] == spec.shapes


def test_zero_params_zero_output():
    spec = MlpSpec(3, (5,), 2)
    rng = np.random.default_rng(0)
    out = networks.evaluate(spec, networks.zero_params(spec), rng.standard_normal((7, 3)), rng.uniform(size=(7, 1)))
    assert out.shape == (7, 2)
    assert np.all(out == 0.0)


def test_empty_hidden_rejected():
    with pytest.raises(SpecError):
        MlpSpec(2, (), 1)
    with pytest.raises(SpecError):
        MlpSpec(2, (4,), 1, head="relu")


def test_hand_set_single_unit():
    spec = MlpSpec(1, (1,), 1, time_augmented=False)
    params = (np.ones((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
    out = networks.evaluate(spec, params, np.array([[0.5]]))
    assert out[0, 0] == pytest.approx(0.462117, abs=1e-6)


def test_sigmoid_head_range():
    spec = MlpSpec(2, (4,), 3, head="sigmoid")
    params = tuple(10 * p for p in networks.init_params(spec, 0))
    out = networks.evaluate(spec, params, np.random.default_rng(1).standard_normal((50, 2)) * 5, np.full((50, 1), 0.3))
    assert np.all((out >= 0) & (out <= 1))
    zero = networks.evaluate(spec, networks.zero_params(spec), np.zeros((1, 2)), np.zeros((1, 1)))
    assert np.allclose(zero, 0.5)


def test_time_checks():
    spec = MlpSpec(2, (4,), 1)
    params = networks.init_params(spec, 0)
    x = np.zeros((3, 2))
    with pytest.raises(PreconditionError):
        networks.evaluate(spec, params, x, np.full((3, 1), 1.5))
    with pytest.raises(PreconditionError):
        networks.evaluate(spec, params, x)
    with pytest.raises(ShapeError):
        networks.evaluate(spec, params, x, np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        networks.evaluate(spec, params, np.zeros((3, 3)), np.zeros((3, 1)))


def test_forward_deterministic():
    spec = MlpSpec(2, (8, 8), 1)
    params = networks.init_params(spec, 5)
    rng = np.random.default_rng(2)
    x, t = rng.standard_normal((20, 2)), rng.uniform(size=(20, 1))
    assert networks.evaluate(spec, params, x, t).tobytes() == networks.evaluate(spec, params, x, t).tobytes()


def test_time_derivative_through_forward():
    spec = MlpSpec(2, (6,), 1)
    params = networks.init_params(spec, 4)
    rng = np.random.default_rng(3)
    x, t0 = rng.standard_normal((4, 2)), rng.uniform(0.1, 0.9, size=(4, 1))
    tape = Tape()
    t = tape.leaf(t0)
    (dt,) = grad(networks.forward(spec, params, x, t, tape=tape).sum(), [t])
    h = 1e-6
    fd = (networks.evaluate(spec, params, x, t0 + h) - networks.evaluate(spec, params, x, t0 - h)) / (2 * h)
    assert np.allclose(dt.value, fd, atol=1e-8)


def test_flatten_roundtrip():
    spec = MlpSpec(3, (4, 2), 2)
    params = networks.init_params(spec, 9)
    assert networks.params_equal(networks.unflatten(spec, networks.flatten(params)), params)
    with pytest.raises(SpecMismatchError):
        networks.unflatten(spec, np.zeros(spec.param_count + 1))


def test_checkpoint_roundtrip(tmp_path):
    spec = MlpSpec(2, (7, 5), 2)
    params = networks.init_params(spec, 1)
    path = networks.save_checkpoint(spec, params, tmp_path / "g.ckpt")
    loaded_spec, loaded = networks.load_checkpoint(path)
    assert loaded_spec == spec
    assert networks.params_equal(loaded, params)
    _, again = networks.load_checkpoint(path, spec)
    assert networks.params_equal(again, params)
    assert path.read_bytes().startswith(networks.pack_header(spec))


def test_checkpoint_bad_magic(tmp_path):
    spec = MlpSpec(2, (3,), 1)
    path = networks.save_checkpoint(spec, networks.init_params(spec, 0), tmp_path / "d.ckpt")
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        networks.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    spec = MlpSpec(2, (3,), 1)
    path = networks.save_checkpoint(spec, networks.init_params(spec, 0), tmp_path / "d.ckpt")
    data = path.read_bytes()
    path.write_bytes(data[:-12])
    with pytest.raises(TruncatedError):
        networks.load_checkpoint(path)
    path.write_bytes(b"")
    with pytest.raises(TruncatedError):
        networks.load_checkpoint(path)


def test_checkpoint_spec_mismatch(tmp_path):
    spec = MlpSpec(2, (3,), 1)
    path = networks.save_checkpoint(spec, networks.init_params(spec, 0), tmp_path / "d.ckpt")
    with pytest.raises(SpecMismatchError):
        networks.load_checkpoint(path, MlpSpec(2, (4,), 1))
    with pytest.raises(SpecMismatchError):
        networks.load_checkpoint(path, MlpSpec(2, (3,), 1, time_augmented=False))
