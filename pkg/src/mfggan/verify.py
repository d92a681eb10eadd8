"""Property suites behind ``mfggan verify``.

Each suite returns a :class:`SuiteResult`; none of them trains a model.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import networks
from .autodiff import Tape, finite_diff_check, grad
from .metrics import gaussian_w2
from .objective import HamiltonianSpec, build_loss, hamiltonian_values, legendre_oracle, spec_callback
from .trainer import AdamState, adam_step

LEGENDRE_QS = (1.5, 2.0, 3.0, 10.0)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name, fn):
    start = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing suite is a failing suite
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return SuiteResult(name, passed, detail, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# gradient checks

def op_cases():
    """``(name, f, sampler)`` triples exercising every op kind."""
    def pos(rng, shape):
        return rng.uniform(0.5, 2.0, size=shape)

    def gauss(rng, shape):
        return rng.standard_normal(shape)

    w = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
    c = np.linspace(0.3, 1.4, 6).reshape(2, 3)
    return [
        ("add", lambda x: (x + x * x).sum(), lambda r: gauss(r, (2, 3))),
        ("sub", lambda x: (x - x.tanh()).sqnorm().sum(), lambda r: gauss(r, (2, 3))),
        ("mul", lambda x: (x * x.tanh()).sum(), lambda r: gauss(r, (2, 3))),
        ("scale", lambda x: (2.5 * x).tanh().sum(), lambda r: gauss(r, (2, 3))),
        ("matmul", lambda x: (x @ w).tanh().sum(), lambda r: gauss(r, (2, 3))),
        ("transpose", lambda x: (x.T @ x.tanh()).sum(), lambda r: gauss(r, (2, 3))),
        ("concat", lambda x: x.tape.record("concat", (x, x * x)).tanh().sum(), lambda r: gauss(r, (2, 3))),
        ("slice", lambda x: (x.cols(1, 3) * x.cols(0, 2)).sum(), lambda r: gauss(r, (2, 3))),
        ("sum", lambda x: x.sum() * x.sum(), lambda r: gauss(r, (2, 3))),
        ("mean", lambda x: (x * x).mean(), lambda r: gauss(r, (2, 3))),
        ("tanh", lambda x: x.tanh().sum(), lambda r: gauss(r, (2, 3))),
        ("pow", lambda x: (x ** 2.7).sum() + (x ** 0.5).sum(), lambda r: pos(r, (2, 3))),
        ("log", lambda x: (x * c).log().sum(), lambda r: pos(r, (2, 3))),
        ("exp", lambda x: (0.5 * x).exp().sum(), lambda r: gauss(r, (2, 3))),
        ("sqnorm", lambda x: (x.sqnorm() ** 1.5).sum(), lambda r: gauss(r, (2, 3))),
    ]


def tiny_problem(seed=0, q=2.0):
    """A 2-hidden-unit problem in d=2 with n=m=4 samples."""
    rng = np.random.default_rng(seed)
    gen_spec = networks.MlpSpec(2, (2,), 2)
    disc_spec = networks.MlpSpec(2, (2,), 1)
    gen = tuple(p + 0.1 * rng.standard_normal(p.shape) for p in networks.init_params(gen_spec, seed))
    disc = tuple(p + 0.1 * rng.standard_normal(p.shape) for p in networks.init_params(disc_spec, seed + 1))
    batch = (rng.standard_normal((4, 2)), rng.uniform(size=(4, 1)),
             rng.standard_normal((4, 2)) + 1.0, rng.standard_normal((4, 2)))
    return gen_spec, gen, disc_spec, disc, batch, HamiltonianSpec(q)


def loss_param_gradcheck(which, seed=0, q=2.0, step=1e-5):
    """Max relative error of d(total)/d(params) for ``which`` in {gen, disc}."""
    gen_spec, gen, disc_spec, disc, batch, h_spec = tiny_problem(seed, q)
    spec = gen_spec if which == "gen" else disc_spec
    base = gen if which == "gen" else disc
    flat0 = networks.flatten(base)

    def total_for(flat):
        params = networks.unflatten(spec, flat)
        g, d = (params, disc) if which == "gen" else (gen, params)
        return build_loss(gen_spec, g, disc_spec, d, *batch, spec_callback(h_spec))

    graph = total_for(flat0)
    nodes = graph.gen_nodes if which == "gen" else graph.disc_nodes
    analytic = networks.flatten([n.value for n in grad(graph.total, nodes)])
    numeric = np.empty_like(flat0)
    for k in range(flat0.size):
        plus, minus = flat0.copy(), flat0.copy()
        plus[k] += step
        minus[k] -= step
        numeric[k] = (total_for(plus).breakdown.total - total_for(minus).breakdown.total) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def second_order_check(seed=0, step=1e-5):
    """d/dw |grad_x phi_w(x,t)|^2 against central differences over w."""
    rng = np.random.default_rng(seed)
    spec = networks.MlpSpec(2, (5, 5), 1)
    flat0 = networks.flatten(networks.init_params(spec, seed))
    x = rng.standard_normal((3, 2))
    t = rng.uniform(size=(3, 1))

    def build(flat):
        tape = Tape()
        params = [tape.leaf(p) for p in networks.unflatten(spec, flat)]
        xn = tape.leaf(x)
        phi = networks.forward(spec, params, xn, t, tape=tape)
        (gx,) = grad(phi.sum(), [xn], create_graph=True)
        return gx.sqnorm().sum(), params

    out, params = build(flat0)
    analytic = networks.flatten([n.value for n in grad(out, params)])
    numeric = np.empty_like(flat0)
    for k in range(flat0.size):
        plus, minus = flat0.copy(), flat0.copy()
        plus[k] += step
        minus[k] -= step
        numeric[k] = (build(plus)[0].item() - build(minus)[0].item()) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def gradcheck_suite(points=10, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = ""
    for name, f, sampler in op_cases():
        for _ in range(points):
            err = finite_diff_check(f, sampler(rng), 1e-5)
            if err > worst:
                worst, worst_name = err, name
    first = max(loss_param_gradcheck("gen"), loss_param_gradcheck("disc"))
    second = second_order_check()
    passed = worst < 1e-5 and first < 1e-5 and second < 1e-4
    return passed, (f"ops max rel err {worst:.2e} ({worst_name}); loss params {first:.2e}; "
                    f"grad-of-grad {second:.2e}")


# ---------------------------------------------------------------------------
# Legendre conjugacy


def legendre_half_width(p_vec, q):
    """A box that contains the maximizer, whose norm is |p|^(q-1)."""
    return 1.5 * max(1.0, float(np.linalg.norm(p_vec))) ** (q - 1.0) + 1.0


def legendre_suite(count=50, seed=0, corrupt=False):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for q in LEGENDRE_QS:
        spec = HamiltonianSpec(q)
        h_spec = HamiltonianSpec(q + 0.5) if corrupt else spec
        for _ in range(count):
            p_vec = rng.uniform(-2.0, 2.0, size=2)
            half = legendre_half_width(p_vec, q)
            oracle = legendre_oracle(p_vec, spec, half, 1e-3)
            value = float(hamiltonian_values(p_vec[None, :], h_spec)[0])
            worst = max(worst, abs(value - oracle) / max(1.0, abs(oracle)))
    return worst < 1e-2, f"max rel err {worst:.2e} over q in {LEGENDRE_QS}, {count} covectors each"


# ---------------------------------------------------------------------------
# Adam


def scalar_adam(theta, g, m, v, k, lr, b1, b2, eps):
    """Adam on one scalar coordinate, written directly from the update rule."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** k)
    v_hat = v / (1 - b2 ** k)
    return theta - lr * m_hat / (math.sqrt(v_hat) + eps), m, v


def adam_suite(trials=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        p = rng.standard_normal(shape)
        g = rng.standard_normal(shape) * 10.0 ** rng.uniform(-3, 1)
        m = rng.standard_normal(shape) * 0.1
        v = rng.uniform(0.0, 1.0, shape)
        count = int(rng.integers(0, 50))
        lr = 10.0 ** rng.uniform(-5, -1)
        b1, b2 = rng.uniform(0.5, 0.99), rng.uniform(0.9, 0.9999)
        (new_p,), state = adam_step((p,), (g,), AdamState((m,), (v,), count), lr, b1, b2, 1e-8)
        for idx in np.ndindex(shape):
            ref, rm, rv = scalar_adam(p[idx], g[idx], m[idx], v[idx], count + 1, lr, b1, b2, 1e-8)
            worst = max(worst, abs(new_p[idx] - ref), abs(state.first_moment[0][idx] - rm),
                        abs(state.second_moment[0][idx] - rv))
    return worst < 1e-12, f"max abs deviation {worst:.2e} over {trials} random inputs"


# ---------------------------------------------------------------------------
# Bures-Wasserstein


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


def w2_suite(trials=100, seed=0):
    rng = np.random.default_rng(seed)
    worst_sym = worst_tri = worst_id = worst_eq = 0.0
    negative = False
    for _ in range(trials):
        d = int(rng.integers(1, 5))
        ms = [rng.standard_normal(d) * 2 for _ in range(3)]
        cs = [random_spd(rng, d) for _ in range(3)]
        ab = gaussian_w2(ms[0], cs[0], ms[1], cs[1])
        ba = gaussian_w2(ms[1], cs[1], ms[0], cs[0])
        bc = gaussian_w2(ms[1], cs[1], ms[2], cs[2])
        ac = gaussian_w2(ms[0], cs[0], ms[2], cs[2])
        worst_sym = max(worst_sym, abs(ab - ba))
        worst_tri = max(worst_tri, ac - (ab + bc))
        worst_id = max(worst_id, gaussian_w2(ms[0], cs[0], ms[0], cs[0]))
        negative |= min(ab, bc, ac) < 0
        eq = gaussian_w2(ms[0], cs[0], ms[1], cs[0])
        worst_eq = max(worst_eq, abs(eq - np.linalg.norm(ms[0] - ms[1])))
    passed = worst_sym <= 1e-9 and worst_tri <= 1e-9 and not negative and worst_id <= 1e-6 and worst_eq <= 1e-6
    return passed, (f"symmetry {worst_sym:.1e}, triangle excess {worst_tri:.1e}, "
                    f"self-distance {worst_id:.1e}, equal-cov |W2-|dm|| {worst_eq:.1e}")


def run_all(corrupt_hamiltonian=False):
    return [
        _timed("gradcheck", gradcheck_suite),
        _timed("legendre", lambda: legendre_suite(corrupt=corrupt_hamiltonian)),
        _timed("adam", adam_suite),
        _timed("w2", w2_suite),
    ]
