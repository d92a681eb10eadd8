import numpy as np
import pytest

from mfggan import networks
from mfggan.data import GaussianTarget, make_rng
from mfggan.errors import ConfigError, NonFiniteGradientError, NonFiniteLossError, PreconditionError
from mfggan.networks import MlpSpec
from mfggan.objective import HamiltonianSpec
from mfggan.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    hjb_residual_diagnostic,
    load_state,
    train,
)
from mfggan.verify import scalar_adam

GEN = MlpSpec(2, (8, 8), 2)
DISC = MlpSpec(2, (8, 8), 1)
TARGET = GaussianTarget.isotropic(2)


def small_config(**kw):
    base = dict(outer_steps=6, inner_steps=2, batch_size=16, lr_gen=1e-3, lr_disc=1e-3, eval_every=2,
                checkpoint_every=3, eval_samples=200, hjb_samples=50, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_adam_unit_gradient_step():
    p = (np.zeros((2, 3)), np.ones((1, 3)))
    g = (np.ones((2, 3)), np.ones((1, 3)))
    new, state = adam_step(p, g, AdamState.zeros_like(p), 1e-4, 0.9, 0.999, 1e-8)
    for a, b in zip(new, p):
        assert np.allclose(a - b, -1e-4, rtol=1e-6)
    assert state.step_count == 1


def test_adam_zero_gradient():
    p = (np.arange(6.0).reshape(2, 3),)
    new, _ = adam_step(p, (np.zeros((2, 3)),), AdamState.zeros_like(p), 1e-4)
    assert np.array_equal(new[0], p[0])


def test_adam_two_steps_not_doubled_lr():
    p = (np.zeros((1, 1)),)
    g = (np.array([[0.3]]),)
    once, s1 = adam_step(p, g, AdamState.zeros_like(p), 1e-3)
    twice, _ = adam_step(once, g, s1, 1e-3)
    doubled, _ = adam_step(p, g, AdamState.zeros_like(p), 2e-3)
    assert twice[0][0, 0] != doubled[0][0, 0]


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p, g = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        m, v = rng.standard_normal((2, 2)) * 0.1, rng.uniform(size=(2, 2))
        (new,), st = adam_step((p,), (g,), AdamState((m,), (v,), 4), 1e-3, 0.8, 0.99, 1e-8)
        for idx in np.ndindex(2, 2):
            ref, rm, rv = scalar_adam(p[idx], g[idx], m[idx], v[idx], 5, 1e-3, 0.8, 0.99, 1e-8)
            assert abs(new[idx] - ref) <= 1e-12
            assert abs(st.first_moment[0][idx] - rm) <= 1e-12
            assert abs(st.second_moment[0][idx] - rv) <= 1e-12


def test_adam_non_finite_gradient_names_layer():
    p = (np.zeros(2), np.zeros(3))
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(p, (np.zeros(2), np.array([0.0, np.nan, 1.0])), AdamState.zeros_like(p), 1e-3)
    assert info.value.layer == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(inner_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(q=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(adam_beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_half_life=-1)


def test_lr_scale():
    assert TrainConfig(lr_half_life=0).lr_scale(1000) == 1.0
    cfg = TrainConfig(lr_half_life=100)
    assert cfg.lr_scale(1) == 1.0
    assert cfg.lr_scale(101) == pytest.approx(0.5)


def test_zero_steps(tmp_path):
    result = train(small_config(outer_steps=0), GEN, DISC, TARGET, out_dir=tmp_path)
    assert result.metrics == []
    assert [p.name for p in result.checkpoints] == ["gen_0000000.ckpt"]
    assert (tmp_path / "metrics.csv").read_text().count("\n") == 1
    assert (tmp_path / "gen_final.ckpt").exists()


def test_eval_and_checkpoint_cadence(tmp_path):
    result = train(small_config(outer_steps=7), GEN, DISC, TARGET, out_dir=tmp_path)
    assert [r.step for r in result.metrics] == [2, 4, 6, 7]
    assert sorted(p.name for p in tmp_path.glob("gen_0*.ckpt")) == [
        "gen_0000000.ckpt", "gen_0000003.ckpt", "gen_0000006.ckpt", "gen_0000007.ckpt"]


def test_metrics_csv_byte_identical(tmp_path):
    train(small_config(), GEN, DISC, TARGET, out_dir=tmp_path / "a")
    train(small_config(), GEN, DISC, TARGET, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    other = tmp_path / "c"
    train(small_config(seed=4), GEN, DISC, TARGET, out_dir=other)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (other / "metrics.csv").read_bytes()


def test_resume_equals_uninterrupted(tmp_path):
    full = train(small_config(outer_steps=6), GEN, DISC, TARGET, out_dir=tmp_path / "full")
    # split at a multiple of eval_every so the logged evaluation points align
    train(small_config(outer_steps=4), GEN, DISC, TARGET, out_dir=tmp_path / "part")
    resumed = train(small_config(outer_steps=6), GEN, DISC, TARGET, out_dir=tmp_path / "part", resume=True)
    assert networks.params_equal(full.gen_params, resumed.gen_params)
    assert networks.params_equal(full.disc_params, resumed.disc_params)
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()


def test_resume_with_decay(tmp_path):
    cfg = dict(lr_half_life=2)
    full = train(small_config(outer_steps=6, **cfg), GEN, DISC, TARGET)
    train(small_config(outer_steps=3, **cfg), GEN, DISC, TARGET, out_dir=tmp_path)
    resumed = train(small_config(outer_steps=6, **cfg), GEN, DISC, TARGET, out_dir=tmp_path, resume=True)
    assert networks.params_equal(full.gen_params, resumed.gen_params)


def test_load_state_roundtrip(tmp_path):
    result = train(small_config(outer_steps=3), GEN, DISC, TARGET, out_dir=tmp_path)
    state = load_state(tmp_path, GEN, DISC)
    assert state.step == 3
    assert networks.params_equal(state.gen_params, result.state.gen_params)
    assert state.disc_adam.step_count == result.state.disc_adam.step_count == 6
    with pytest.raises(PreconditionError):
        load_state(tmp_path / "empty", GEN, DISC)


def test_dimension_mismatch():
    with pytest.raises(PreconditionError):
        train(small_config(), GEN, DISC, GaussianTarget.isotropic(3))


class PoisonedTarget:
    """Gaussian target that starts returning NaN from a given call onward."""

    def __init__(self, bad_from):
        self.inner = GaussianTarget.isotropic(2)
        self.dim = 2
        self.calls = 0
        self.bad_from = bad_from

    def sample(self, n, rng):
        self.calls += 1
        x = self.inner.sample(n, rng)
        if self.calls >= self.bad_from:
            x[0, 0] = np.nan
        return x

    def moments(self):
        return self.inner.moments()


def test_non_finite_loss_reports_last_checkpoint(tmp_path):
    with pytest.raises(NonFiniteLossError) as info:
        train(small_config(outer_steps=6), GEN, DISC, PoisonedTarget(5), out_dir=tmp_path)
    assert info.value.checkpoint is not None
    assert info.value.checkpoint.name == "gen_0000003.ckpt"
    assert info.value.checkpoint.exists()


def test_hjb_diagnostic_examples():
    gen = networks.init_params(GEN, 0)
    spec = HamiltonianSpec(2)
    zero = hjb_residual_diagnostic(DISC, networks.zero_params(DISC), GEN, gen, spec, 100, make_rng(0))
    assert zero < 1e-12
    small = MlpSpec(2, (1,), 1)
    a, eps = 2.3, 1e-4
    disc = (np.array([[0.0], [0.0], [a * eps]]), np.zeros((1, 1)), np.array([[1 / eps]]), np.zeros((1, 1)))
    value = hjb_residual_diagnostic(small, disc, GEN, gen, spec, 100, make_rng(1))
    assert value == pytest.approx(a, abs=1e-6)
    with pytest.raises(PreconditionError):
        hjb_residual_diagnostic(small, disc, GEN, gen, spec, 0, make_rng(1))


def test_inner_ascent_mostly_non_decreasing():
    cfg = small_config(outer_steps=40, inner_steps=4, batch_size=64, lr_disc=1e-3, eval_every=40)
    result = train(cfg, GEN, DISC, TARGET, record_inner=True)
    ok = sum(all(b >= a for a, b in zip(tot, tot[1:])) for tot in result.inner_totals)
    assert ok >= 0.9 * len(result.inner_totals)
