"""Alternating training: discriminator ascent, then one generator descent.

Each outer step draws one batch (data, noise, times, initial noise), runs
``inner_steps`` Adam ascents on the discriminator with the generator frozen,
then one Adam descent on the generator, all on that batch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import networks
from .autodiff import grad
from .data import STREAM_EVAL, STREAM_TRAIN, make_rng, sample_noise, sample_time
from .errors import ConfigError, NonFiniteGradientError, NonFiniteLossError, PreconditionError
from .metrics import MetricsRecord, generate, moment_errors, read_metrics_csv, write_metrics_csv
from .objective import HamiltonianSpec, build_loss, generator_outputs, hjb_residuals, spec_callback

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    outer_steps: int = 6000
    inner_steps: int = 5
    batch_size: int = 256
    lr_gen: float = 1e-4
    lr_disc: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    q: float = 2.0
    lr_half_life: int = 1500
    seed: int = 0
    eval_every: int = 500
    checkpoint_every: int = 5000
    eval_samples: int = 10000
    hjb_samples: int = 2000
    wall_clock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("inner_steps", "batch_size", "eval_every", "checkpoint_every", "eval_samples", "hjb_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_half_life < 0:
            raise ConfigError("lr_half_life must be >= 0 (0 disables decay)")
        if self.outer_steps < 0:
            raise ConfigError("outer_steps must be >= 0")
        if not (self.lr_gen > 0 and self.lr_disc > 0):
            raise ConfigError("learning rates must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")
        if not self.q > 1:
            raise ConfigError("q must be > 1")

    def lr_scale(self, step):
        """Learning-rate multiplier at outer step ``step`` (1-based)."""
        if self.lr_half_life == 0:
            return 1.0
        return 0.5 ** ((step - 1) / self.lr_half_life)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    first_moment: tuple
    second_moment: tuple
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(tuple(np.zeros_like(p) for p in params), tuple(np.zeros_like(p) for p in params), 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise PreconditionError("params, grads and Adam state must have the same layout")
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise PreconditionError(f"gradient {k} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(k)
    step = state.step_count + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return tuple(new_p), AdamState(tuple(new_m), tuple(new_v), step)


@dataclass
class TrainState:
    step: int
    gen_params: tuple
    disc_params: tuple
    gen_adam: AdamState
    disc_adam: AdamState


@dataclass
class TrainResult:
    gen_params: tuple
    disc_params: tuple
    metrics: list
    checkpoints: list = field(default_factory=list)
    inner_totals: list = field(default_factory=list)
    state: TrainState | None = None


def derived_seed(seed, purpose):
    return int(np.random.SeedSequence([int(seed), int(purpose)]).generate_state(1)[0])


def initial_state(config, gen_spec, disc_spec):
    gen = networks.init_params(gen_spec, derived_seed(config.seed, 101))
    disc = networks.init_params(disc_spec, derived_seed(config.seed, 202))
    return TrainState(0, gen, disc, AdamState.zeros_like(gen), AdamState.zeros_like(disc))


# ---------------------------------------------------------------------------
# checkpoint files in a run directory


def _stem(step):
    return f"{step:07d}"


def save_state(out_dir, state, gen_spec, disc_spec):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = _stem(state.step)
    gen_path = networks.save_checkpoint(gen_spec, state.gen_params, out / f"gen_{stem}.ckpt")
    networks.save_checkpoint(disc_spec, state.disc_params, out / f"disc_{stem}.ckpt")
    arrays = {"step": np.array(state.step), "gen_count": np.array(state.gen_adam.step_count),
              "disc_count": np.array(state.disc_adam.step_count)}
    for tag, adam in (("gen", state.gen_adam), ("disc", state.disc_adam)):
        for k, (m, v) in enumerate(zip(adam.first_moment, adam.second_moment)):
            arrays[f"{tag}_m{k}"] = m
            arrays[f"{tag}_v{k}"] = v
    np.savez(out / f"adam_{stem}.npz", **arrays)
    return gen_path


def load_state(out_dir, gen_spec, disc_spec, step=None):
    """Load the training state saved at ``step`` (default: the latest)."""
    out = Path(out_dir)
    if step is None:
        saved = sorted(out.glob("adam_*.npz"))
        if not saved:
            raise PreconditionError(f"no resumable state in {out}")
        step = int(saved[-1].stem.split("_")[1])
    stem = _stem(step)
    _, gen = networks.load_checkpoint(out / f"gen_{stem}.ckpt", gen_spec)
    _, disc = networks.load_checkpoint(out / f"disc_{stem}.ckpt", disc_spec)
    with np.load(out / f"adam_{stem}.npz") as z:
        def adam(tag, count):
            n = len(gen if tag == "gen" else disc)
            return AdamState(tuple(z[f"{tag}_m{k}"] for k in range(n)),
                             tuple(z[f"{tag}_v{k}"] for k in range(n)), int(z[count]))
        return TrainState(int(z["step"]), gen, disc, adam("gen", "gen_count"), adam("disc", "disc_count"))


# ---------------------------------------------------------------------------
# evaluation


def hjb_residual_diagnostic(disc_spec, disc_params, gen_spec, gen_params, spec, n, rng):
    """Mean ``|d_t phi + H(grad_x phi)|`` along generated paths."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    z = sample_noise(n, gen_spec.input_dim, rng)
    t = sample_time(n, rng)
    return float(np.mean(hjb_residuals(gen_spec, gen_params, disc_spec, disc_params, z, t, spec)))


def evaluate(state, config, gen_spec, disc_spec, data_source, breakdown, wall_ms=0):
    rng = make_rng(config.seed, STREAM_EVAL, state.step)
    samples = generate(gen_spec, state.gen_params, 1.0, config.eval_samples, rng)
    mean, cov = data_source.moments()
    mean_err, cov_err, w2 = moment_errors(samples, mean, cov)
    hjb = hjb_residual_diagnostic(disc_spec, state.disc_params, gen_spec, state.gen_params,
                                  HamiltonianSpec(config.q), config.hjb_samples, rng)
    return MetricsRecord(state.step, breakdown.total, breakdown.interior_term, breakdown.terminal_term,
                         breakdown.initial_term, mean_err, cov_err, w2, hjb, wall_ms)


# ---------------------------------------------------------------------------
# training loop


def draw_batch(config, data_source, noise_dim, step):
    rng = make_rng(config.seed, STREAM_TRAIN, step)
    n = config.batch_size
    x = data_source.sample(n, rng)
    z = sample_noise(n, noise_dim, rng)
    t = sample_time(n, rng)
    z0 = sample_noise(n, noise_dim, rng)
    return x, z, t, z0


def train_step(state, config, gen_spec, disc_spec, data_source, h_spec=None):
    """One outer step.  Returns ``(new_state, breakdown, inner_totals)``."""
    h_spec = h_spec or HamiltonianSpec(config.q)
    h = spec_callback(h_spec)
    step = state.step + 1
    x, z, t, z0 = draw_batch(config, data_source, gen_spec.input_dim, step)
    scale = config.lr_scale(step)

    disc, disc_adam = state.disc_params, state.disc_adam
    frozen = generator_outputs(gen_spec, state.gen_params, z, t, z0)
    totals = []
    for _ in range(config.inner_steps):
        graph = build_loss(gen_spec, state.gen_params, disc_spec, disc, z, t, x, z0, h, frozen=frozen)
        totals.append(graph.breakdown.total)
        g = [-a for a in _grads(graph.total, graph.disc_nodes)]
        disc, disc_adam = adam_step(disc, g, disc_adam, scale * config.lr_disc,
                                    config.adam_beta1, config.adam_beta2, config.adam_eps)

    graph = build_loss(gen_spec, state.gen_params, disc_spec, disc, z, t, x, z0, h)
    g = _grads(graph.total, graph.gen_nodes)
    gen, gen_adam = adam_step(state.gen_params, g, state.gen_adam, scale * config.lr_gen,
                              config.adam_beta1, config.adam_beta2, config.adam_eps)
    return TrainState(step, gen, disc, gen_adam, disc_adam), graph.breakdown, totals


def _grads(total, nodes):
    return [n.value for n in grad(total, nodes)]


def train(config, gen_spec, disc_spec, data_source, out_dir=None, resume=False,
          record_inner=False, state=None, progress=None):
    """Run training up to ``config.outer_steps`` total outer steps.

    With ``resume`` the latest state in ``out_dir`` is loaded and training
    continues from its step; the metrics log is truncated to that step and
    extended.  Checkpoints go to ``out_dir`` when given.
    """
    if gen_spec.output_dim != data_source.dim or disc_spec.input_dim != data_source.dim:
        raise PreconditionError(
            f"data dimension {data_source.dim} does not match generator output {gen_spec.output_dim} "
            f"/ discriminator input {disc_spec.input_dim}"
        )
    out = Path(out_dir) if out_dir is not None else None
    metrics = []
    if resume:
        if out is None:
            raise PreconditionError("resume needs an output directory")
        state = load_state(out, gen_spec, disc_spec)
        if (out / "metrics.csv").exists():
            metrics = [r for r in read_metrics_csv(out / "metrics.csv") if r.step <= state.step]
    elif state is None:
        state = initial_state(config, gen_spec, disc_spec)

    checkpoints = []
    last_good = None
    if out is not None:
        last_good = save_state(out, state, gen_spec, disc_spec)
        checkpoints.append(last_good)

    h_spec = HamiltonianSpec(config.q)
    inner_log = []
    start = time.perf_counter()
    while state.step < config.outer_steps:
        try:
            new_state, breakdown, totals = train_step(state, config, gen_spec, disc_spec, data_source, h_spec)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(exc.breakdown, last_good) from None
        state = new_state
        if record_inner:
            inner_log.append(totals)
        if state.step % config.eval_every == 0 or state.step == config.outer_steps:
            wall = int((time.perf_counter() - start) * 1000) if config.wall_clock else 0
            rec = evaluate(state, config, gen_spec, disc_spec, data_source, breakdown, wall)
            metrics.append(rec)
            log.info("step %d total %.4f mean_err %.4f w2 %.4f", rec.step, rec.total, rec.mean_err, rec.w2)
            if progress is not None:
                progress(rec)
            if out is not None:
                write_metrics_csv(metrics, out / "metrics.csv")
        if out is not None and (state.step % config.checkpoint_every == 0 or state.step == config.outer_steps):
            last_good = save_state(out, state, gen_spec, disc_spec)
            checkpoints.append(last_good)

    if out is not None:
        write_metrics_csv(metrics, out / "metrics.csv")
        networks.save_checkpoint(gen_spec, state.gen_params, out / "gen_final.ckpt")
        networks.save_checkpoint(disc_spec, state.disc_params, out / "disc_final.ckpt")
    return TrainResult(state.gen_params, state.disc_params, metrics, checkpoints, inner_log, state)


def is_finite_record(rec):
    return all(math.isfinite(getattr(rec, k)) for k in ("total", "mean_err", "cov_err", "w2", "hjb_residual"))
