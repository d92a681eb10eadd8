"""Fully connected networks with a concatenated time input.

The same MLP builds both the generator ``rho(z, t)`` (output dimension d)
and the discriminator ``phi(x, t)`` (scalar output).  Hidden layers use tanh
so that input-gradients of the discriminator stay smooth in the weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Node, Tape
from .errors import (
    BadMagicError,
    CheckpointError,
    PreconditionError,
    ShapeError,
    SpecError,
    SpecMismatchError,
    TruncatedError,
)

MAGIC = b"MFGGAN1\0"
HEADS = ("linear", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    time_augmented: bool = True
    head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise SpecError("hidden_dims must be non-empty")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_dims) < 1:
            raise SpecError(f"all layer sizes must be positive: {self.dims}")
        if self.head not in HEADS:
            raise SpecError(f"unknown output head {self.head!r}; expected one of {HEADS}")

    @property
    def dims(self):
        """Layer widths including the (time-augmented) input."""
        first = self.input_dim + (1 if self.time_augmented else 0)
        return (first, *self.hidden_dims, self.output_dim)

    @property
    def shapes(self):
        out = []
        dims = self.dims
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            out.append((fan_in, fan_out))
            out.append((1, fan_out))
        return out

    @property
    def param_count(self):
        dims = self.dims
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


# A ParamSet is a tuple of float64 arrays: W0, b0, W1, b1, ...  Weights are
# (fan_in, fan_out) and biases are (1, fan_out).


def init_params(spec, seed):
    """Xavier-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = []
    for fan_in, fan_out in zip(spec.dims[:-1], spec.dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros((1, fan_out)))
    return tuple(params)


def zero_params(spec):
    return tuple(np.zeros(s) for s in spec.shapes)


def flatten(params):
    return np.concatenate([p.reshape(-1) for p in params]) if params else np.zeros(0)


def unflatten(spec, flat):
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (spec.param_count,):
        raise SpecMismatchError(f"expected {spec.param_count} values, got {flat.size}")
    params = []
    offset = 0
    for shape in spec.shapes:
        size = shape[0] * shape[1]
        params.append(flat[offset:offset + size].reshape(shape).copy())
        offset += size
    return tuple(params)


def _check_params(spec, params):
    if len(params) != len(spec.shapes):
        raise SpecMismatchError(f"expected {len(spec.shapes)} parameter tensors, got {len(params)}")
    for k, (p, s) in enumerate(zip(params, spec.shapes)):
        if tuple(p.shape) != s:
            raise SpecMismatchError(f"parameter tensor {k}: shape {tuple(p.shape)} != {s}")


def _as_node(tape, value):
    if isinstance(value, Node):
        return value
    return tape.constant(value)


def forward(spec, params, x, t=None, tape=None):
    """Record the network on ``tape`` and return the (n, output_dim) node.

    ``params`` entries may be arrays (treated as constants) or leaf nodes.
    ``x`` and ``t`` may be arrays or nodes; ``t`` is required iff the spec is
    time-augmented.
    """
    if tape is None:
        tape = next((v.tape for v in (x, t, *params) if isinstance(v, Node)), None) or Tape()
    _check_params(spec, params)
    x = _as_node(tape, x)
    if x.value.ndim != 2 or x.value.shape[1] != spec.input_dim:
        raise ShapeError("forward", x.value.shape, (x.value.shape[0] if x.value.ndim else 0, spec.input_dim),
                         detail="input batch must be (n, input_dim)")
    n = x.value.shape[0]
    if spec.time_augmented:
        if t is None:
            raise PreconditionError("time-augmented network needs t")
        t = _as_node(tape, t)
        if t.value.shape != (n, 1):
            raise ShapeError("forward", t.value.shape, (n, 1), detail="time batch must be (n, 1)")
        tv = t.value
        if np.any(tv < 0.0) or np.any(tv > 1.0):
            raise PreconditionError("time inputs must lie in [0, 1]")
        h = tape.record("concat", (x, t))
    else:
        h = x
    ones = tape.constant(np.ones((n, 1)))
    nodes = [_as_node(tape, p) for p in params]
    layers = len(nodes) // 2
    for k in range(layers):
        w, b = nodes[2 * k], nodes[2 * k + 1]
        h = h @ w + ones @ b
        if k < layers - 1:
            h = h.tanh()
    if spec.head == "sigmoid":
        # sigmoid(a) = (1 + tanh(a/2)) / 2 keeps the op set tanh-only
        h = 0.5 * ((0.5 * h).tanh() + 1.0)
    return h


def evaluate(spec, params, x, t=None):
    """Forward pass returning a plain array (on a throwaway tape)."""
    return forward(spec, params, x, t, tape=Tape()).value


# ---------------------------------------------------------------------------
# checkpoints


def _header(spec, count):
    dims = ",".join(str(d) for d in (spec.input_dim, *spec.hidden_dims, spec.output_dim))
    return f"dims={dims};time={1 if spec.time_augmented else 0};count={count}\n".encode("utf-8")


def save_checkpoint(spec, params, path):
    _check_params(spec, params)
    flat = flatten(params)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_header(spec, flat.size))
        fh.write(flat.astype("<f8").tobytes())
    return path


def read_checkpoint(path):
    """Parse a checkpoint file into ``(dims, time_augmented, flat_values)``."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC):
        raise TruncatedError(f"{path}: file shorter than the magic bytes")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise TruncatedError(f"{path}: header line not terminated")
    try:
        fields = dict(item.split("=", 1) for item in data[len(MAGIC):end].decode("utf-8").split(";"))
        dims = tuple(int(v) for v in fields["dims"].split(","))
        time_flag = fields["time"]
        count = int(fields["count"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None
    if time_flag not in ("0", "1") or len(dims) < 3:
        raise CheckpointError(f"{path}: malformed header")
    payload = data[end + 1:]
    if len(payload) < 8 * count:
        raise TruncatedError(f"{path}: expected {count} values, file holds {len(payload) // 8}")
    if len(payload) > 8 * count:
        raise CheckpointError(f"{path}: {len(payload) - 8 * count} trailing bytes")
    flat = np.frombuffer(payload, dtype="<f8", count=count).astype(np.float64)
    return dims, time_flag == "1", flat


def load_checkpoint(path, spec=None, head="linear"):
    """Load ``(spec, params)``.  If ``spec`` is given it must match the file."""
    dims, time_aug, flat = read_checkpoint(path)
    file_spec = MlpSpec(dims[0], dims[1:-1], dims[-1], time_aug, head if spec is None else spec.head)
    if spec is not None and (spec.dims != file_spec.dims or spec.time_augmented != time_aug):
        raise SpecMismatchError(
            f"{path}: checkpoint dims {file_spec.dims} time={int(time_aug)} "
            f"do not match expected {spec.dims} time={int(spec.time_augmented)}"
        )
    if flat.size != file_spec.param_count:
        raise SpecMismatchError(f"{path}: count {flat.size} != {file_spec.param_count} implied by dims")
    return file_spec, unflatten(file_spec, flat)


def pack_header(spec):
    """Header bytes for ``spec`` (exposed for tests of the file layout)."""
    return MAGIC + _header(spec, spec.param_count)


def params_equal(a, b):
    return len(a) == len(b) and all(x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b))

