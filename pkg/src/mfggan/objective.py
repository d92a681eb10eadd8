"""Hamiltonian, exponent bookkeeping and the saddle loss.

The loss for generator ``rho`` and potential ``phi`` is::

    total = -E_{z, t~U[0,1]}[ d_t phi(rho(z,t), t) + H(grad_x phi(rho(z,t), t)) ]
            + E_{x~data}[ phi(x, 1) ] - E_z[ phi(rho(z,0), 0) ]

with ``H(g) = |g|_{s'}^q / q``.  The discriminator ascends it, the
generator descends it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import networks
from .autodiff import Node, Tape, grad
from .errors import (
    DomainError,
    NonFiniteLossError,
    PreconditionError,
    ShapeError,
    UnsupportedConfigurationError,
    WidenGridError,
)

DEFAULT_EPSILON = 1e-12


def conjugate_exponent(r):
    """Hölder conjugate ``r / (r - 1)`` of an exponent ``r > 1``."""
    r = float(r)
    if not r > 1.0:
        raise DomainError(f"conjugate exponent needs r > 1, got {r}")
    return r / (r - 1.0)


def _dual_index(s):
    if s == 1.0:
        return math.inf
    return conjugate_exponent(s)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Exponents of ``H(g) = |g|_{s'}^q / q``.

    ``p`` and ``s_prime`` are always derived, never given.
    """

    q: float = 2.0
    s: float = 2.0
    epsilon: float = DEFAULT_EPSILON
    p: float = field(init=False)
    s_prime: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "s", float(self.s))
        if not self.s >= 1.0:
            raise DomainError(f"norm index s must be >= 1, got {self.s}")
        if self.epsilon < 0:
            raise DomainError("epsilon must be non-negative")
        object.__setattr__(self, "p", conjugate_exponent(self.q))
        object.__setattr__(self, "s_prime", _dual_index(self.s))


@dataclass(frozen=True)
class LossBreakdown:
    interior_term: float
    terminal_term: float
    initial_term: float
    total: float

    def is_finite(self):
        return all(math.isfinite(v) for v in (self.interior_term, self.terminal_term,
                                               self.initial_term, self.total))


def hamiltonian(grad_phi, spec):
    """Per-row ``(sum_j g_j^2 + eps)^(q/2) / q`` for an (n, d) node."""
    if spec.s_prime != 2.0:
        raise UnsupportedConfigurationError(
            f"hamiltonian supports s' = 2 only (got s' = {spec.s_prime}); general norms are an extension point"
        )
    sq = grad_phi.sqnorm() + spec.epsilon
    return (1.0 / spec.q) * (sq ** (spec.q / 2.0))


def hamiltonian_values(g, spec):
    """Array version of :func:`hamiltonian` for (n, d) inputs."""
    tape = Tape()
    return hamiltonian(tape.constant(np.atleast_2d(g)), spec).value[:, 0]


def spec_callback(spec):
    """The built-in Hamiltonian in the ``(x, phi, grad_phi) -> node`` form."""

    def h(x, phi, grad_phi):
        return hamiltonian(grad_phi, spec)

    return h


def ot_callback(x, phi, grad_phi):
    """``|grad phi|^2 / 2``: the kinetic-energy Hamiltonian of dynamic OT."""
    return 0.5 * (grad_phi.sqnorm() + DEFAULT_EPSILON)


def zero_callback(x, phi, grad_phi):
    return 0.0 * phi


def _lp_norm(v, s):
    if math.isinf(s):
        return np.max(np.abs(v), axis=-1)
    if s == 2.0:
        return np.sqrt(np.sum(v * v, axis=-1))
    return np.sum(np.abs(v) ** s, axis=-1) ** (1.0 / s)


def legendre_oracle(p_vec, spec, grid_half_width, grid_step, zoom=200):
    """Brute-force ``sup_v <v, p_vec> - |v|_s^p / p`` over a grid.

    A full grid at ``grid_step`` resolution is far too large in 2-D and
    3-D, so the search runs coarse-to-fine: a grid of about ``zoom`` points
    per axis over the whole box, then repeated re-gridding around the best
    point until the spacing reaches ``grid_step``.  The objective is concave,
    so the zoom cannot lose the maximizer once it is bracketed.  A maximizer
    on the outer boundary raises :class:`WidenGridError`.
    """
    p_vec = np.asarray(p_vec, dtype=np.float64).reshape(-1)
    d = p_vec.size
    if not 1 <= d <= 3:
        raise PreconditionError("legendre_oracle supports dimension 1 to 3")
    if grid_half_width <= 0 or grid_step <= 0:
        raise DomainError("grid width and step must be positive")
    power = spec.p

    def objective(points):
        return points @ p_vec - _lp_norm(points, spec.s) ** power / power

    center = np.zeros(d)
    half = float(grid_half_width)
    step = max(grid_step, 2.0 * half / zoom)
    outer = True
    while True:
        count = int(round(2.0 * half / step)) + 1
        axis = np.linspace(-half, half, count)
        mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        points = center + mesh
        values = objective(points)
        best = int(np.argmax(values))
        if outer:
            idx = np.unravel_index(best, (count,) * d)
            if any(i in (0, count - 1) for i in idx):
                raise WidenGridError(
                    f"maximizer on the grid boundary (half width {grid_half_width}); widen the grid"
                )
            outer = False
        center = points[best]
        if step <= grid_step:
            return float(values[best])
        half = 2.0 * step
        step = max(grid_step, step / (zoom / 8.0))


def _check_time(t):
    t = np.asarray(t)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise PreconditionError("t must lie in [0, 1]")


@dataclass
class LossGraph:
    """Nodes of one loss evaluation, kept for differentiation."""

    tape: Tape
    total: Node
    breakdown: LossBreakdown
    gen_nodes: list
    disc_nodes: list


def generator_outputs(gen_spec, gen_params, z_interior, t_interior, z_initial):
    """Generated points ``(rho(z, t), rho(z0, 0))`` as plain arrays."""
    x_path = networks.evaluate(gen_spec, gen_params, z_interior, t_interior)
    x_start = networks.evaluate(gen_spec, gen_params, z_initial, np.zeros((len(z_initial), 1)))
    return x_path, x_start


def build_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior, t_interior,
               x_data, z_initial, h_callback, tape=None, check_finite=True, frozen=None):
    """Record the saddle loss with an arbitrary Hamiltonian callback.

    Parameters are recorded as leaves so the caller can differentiate the
    total with respect to either network.  ``frozen`` may carry the output
    of :func:`generator_outputs` for the same batch; the generator is then
    treated as constant (discriminator updates) and not re-evaluated.
    Returns a :class:`LossGraph`.
    """
    z_interior = np.asarray(z_interior, dtype=np.float64)
    t_interior = np.asarray(t_interior, dtype=np.float64)
    x_data = np.asarray(x_data, dtype=np.float64)
    z_initial = np.asarray(z_initial, dtype=np.float64)
    if min(z_interior.shape[0], x_data.shape[0], z_initial.shape[0]) < 1:
        raise PreconditionError("all batches must be non-empty")
    if t_interior.shape != (z_interior.shape[0], 1):
        raise ShapeError("loss", t_interior.shape, (z_interior.shape[0], 1), detail="t batch")
    _check_time(t_interior)
    if disc_spec.output_dim != 1:
        raise ShapeError("loss", (disc_spec.output_dim,), (1,), detail="discriminator must be scalar")

    tape = tape or Tape()
    disc = [tape.leaf(p, name=f"disc{k}") if not isinstance(p, Node) else p for k, p in enumerate(disc_params)]
    if frozen is None:
        gen = [tape.leaf(p, name=f"gen{k}") if not isinstance(p, Node) else p for k, p in enumerate(gen_params)]
        x_path = networks.forward(gen_spec, gen, z_interior, t_interior, tape=tape)
    else:
        gen = []
        x_path = tape.leaf(frozen[0], name="x_path")

    # interior: input-gradients of phi along generated paths
    t_node = tape.leaf(t_interior, name="t", requires_grad=False)
    phi_path = networks.forward(disc_spec, disc, x_path, t_node, tape=tape)
    grad_x, grad_t = grad(phi_path.sum(), [x_path, t_node], create_graph=True)
    h = h_callback(x_path, phi_path, grad_x)
    if not isinstance(h, Node) or h.value.shape != phi_path.value.shape:
        got = h.value.shape if isinstance(h, Node) else type(h).__name__
        raise ShapeError("hamiltonian callback", got, phi_path.value.shape,
                         detail="callback must return an (n, 1) node")
    interior = -(grad_t + h).mean()

    m = x_data.shape[0]
    ones_t = np.ones((m, 1))
    terminal = networks.forward(disc_spec, disc, x_data, ones_t, tape=tape).mean()
    if frozen is None:
        x_start = networks.forward(gen_spec, gen, z_initial, np.zeros((z_initial.shape[0], 1)), tape=tape)
    else:
        x_start = tape.constant(frozen[1])
    initial = networks.forward(disc_spec, disc, x_start, np.zeros((z_initial.shape[0], 1)), tape=tape).mean()

    total = interior + terminal - initial
    breakdown = LossBreakdown(interior.item(), terminal.item(), initial.item(), total.item())
    if check_finite and not breakdown.is_finite():
        raise NonFiniteLossError(breakdown)
    return LossGraph(tape, total, breakdown, gen, disc)


def general_hamiltonian_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior, t_interior,
                             x_data, z_initial, h_callback, tape=None):
    """Loss with ``H`` supplied as a callback ``(x, phi, grad_phi) -> (n, 1) node``."""
    graph = build_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior, t_interior,
                       x_data, z_initial, h_callback, tape=tape)
    return graph.total, graph.breakdown


def mfg_gan_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior, t_interior,
                 x_data, z_initial, spec, tape=None):
    """Loss with the built-in Hamiltonian ``|g|^q / q``."""
    return general_hamiltonian_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior,
                                    t_interior, x_data, z_initial, spec_callback(spec), tape=tape)


def ot_gan_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior, t_interior, x_data,
                z_initial, tape=None):
    """The dynamic-OT form: kinetic Hamiltonian ``|g|^2 / 2``."""
    return general_hamiltonian_loss(gen_spec, gen_params, disc_spec, disc_params, z_interior,
                                    t_interior, x_data, z_initial, ot_callback, tape=tape)


def hjb_residuals(gen_spec, gen_params, disc_spec, disc_params, z, t, spec):
    """Per-sample ``|d_t phi + H(grad_x phi)|`` at generated points."""
    _check_time(t)
    tape = Tape()
    x_path = tape.leaf(networks.evaluate(gen_spec, gen_params, z, t), name="x")
    t_node = tape.leaf(t, name="t")
    phi = networks.forward(disc_spec, disc_params, x_path, t_node, tape=tape)
    grad_x, grad_t = grad(phi.sum(), [x_path, t_node], create_graph=True)
    res = grad_t + hamiltonian(grad_x, spec)
    return np.abs(res.value[:, 0])
