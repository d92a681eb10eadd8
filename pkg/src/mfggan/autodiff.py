"""Tape-based reverse-mode differentiation over dense float64 arrays.

Values are plain ``numpy.ndarray`` objects (float64, row-major).  Every
operation is evaluated eagerly and appended to a :class:`Tape`.  The
backward pass can itself be recorded (``create_graph=True``), which gives
gradients of gradients: the loss contains input-derivatives of the
discriminator, and training needs their parameter derivatives.

Broadcasting is restricted to scalar-with-tensor and equal shapes.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, GradientError, NonFiniteError, ShapeError

_EMPTY = {}


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    # ascontiguousarray would promote 0-d arrays to 1-d
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


# ---------------------------------------------------------------------------
# backends used by the vector-Jacobian products
#
# Each VJP is written once against a small namespace ``B``.  With the array
# backend the products are computed with numpy and nothing is recorded; with
# the graph backend every product becomes a new tape node.


class _ArrayBackend:
    @staticmethod
    def shape(x):
        return x.shape

    @staticmethod
    def scalar(c):
        return np.float64(c)

    @staticmethod
    def zeros(shape):
        return np.zeros(shape)

    @staticmethod
    def ones(shape):
        return np.ones(shape)

    add = staticmethod(np.add)
    sub = staticmethod(np.subtract)
    mul = staticmethod(np.multiply)
    matmul = staticmethod(np.matmul)

    @staticmethod
    def scale(x, c):
        return x * c

    @staticmethod
    def transpose(x):
        return x.T

    @staticmethod
    def sum(x):
        return np.sum(x)

    @staticmethod
    def power(x, c):
        return np.power(x, c)

    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)

    @staticmethod
    def concat(parts):
        return np.concatenate(parts, axis=-1)

    @staticmethod
    def slice(x, start, stop):
        return np.ascontiguousarray(x[..., start:stop])


class _GraphBackend:
    def __init__(self, tape):
        self.tape = tape

    @staticmethod
    def shape(x):
        return x.value.shape

    def scalar(self, c):
        return self.tape.constant(np.float64(c))

    def zeros(self, shape):
        return self.tape.constant(np.zeros(shape))

    def ones(self, shape):
        return self.tape.constant(np.ones(shape))

    def add(self, a, b):
        return self.tape.record("add", (a, b))

    def sub(self, a, b):
        return self.tape.record("sub", (a, b))

    def mul(self, a, b):
        return self.tape.record("mul", (a, b))

    def matmul(self, a, b):
        return self.tape.record("matmul", (a, b))

    def scale(self, x, c):
        return self.tape.record("scale", (x,), c=float(c))

    def transpose(self, x):
        return self.tape.record("transpose", (x,))

    def sum(self, x):
        return self.tape.record("sum", (x,))

    def power(self, x, c):
        return self.tape.record("pow", (x,), c=float(c))

    def sin(self, x):
        return self.tape.record("sin", (x,))

    def cos(self, x):
        return self.tape.record("cos", (x,))

    def concat(self, parts):
        return self.tape.record("concat", tuple(parts))

    def slice(self, x, start, stop):
        return self.tape.record("slice", (x,), start=start, stop=stop)


ARRAY = _ArrayBackend()


# ---------------------------------------------------------------------------
# op table


def _elementwise_shape(op, a, b):
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    raise ShapeError(op, a, b, detail="only equal shapes or scalar-with-tensor")


def _unbroadcast(B, g, shape):
    # the only broadcast allowed is scalar-with-tensor
    if shape == () and B.shape(g) != ():
        return B.sum(g)
    return g


class _Op:
    name = ""

    def shape(self, shapes, attrs):
        raise NotImplementedError

    def forward(self, vals, attrs):
        raise NotImplementedError

    def vjp(self, B, g, ins, out, attrs, need):
        raise NotImplementedError


class _Add(_Op):
    name = "add"

    def shape(self, shapes, attrs):
        return _elementwise_shape("add", *shapes)

    def forward(self, vals, attrs):
        return vals[0] + vals[1]

    def vjp(self, B, g, ins, out, attrs, need):
        a, b = ins
        return (
            _unbroadcast(B, g, B.shape(a)) if need[0] else None,
            _unbroadcast(B, g, B.shape(b)) if need[1] else None,
        )


class _Sub(_Op):
    name = "sub"

    def shape(self, shapes, attrs):
        return _elementwise_shape("sub", *shapes)

    def forward(self, vals, attrs):
        return vals[0] - vals[1]

    def vjp(self, B, g, ins, out, attrs, need):
        a, b = ins
        return (
            _unbroadcast(B, g, B.shape(a)) if need[0] else None,
            _unbroadcast(B, B.scale(g, -1.0), B.shape(b)) if need[1] else None,
        )


class _Mul(_Op):
    name = "mul"

    def shape(self, shapes, attrs):
        return _elementwise_shape("mul", *shapes)

    def forward(self, vals, attrs):
        return vals[0] * vals[1]

    def vjp(self, B, g, ins, out, attrs, need):
        a, b = ins
        return (
            _unbroadcast(B, B.mul(g, b), B.shape(a)) if need[0] else None,
            _unbroadcast(B, B.mul(g, a), B.shape(b)) if need[1] else None,
        )


class _Scale(_Op):
    name = "scale"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        return vals[0] * attrs["c"]

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.scale(g, attrs["c"]),)


class _Matmul(_Op):
    name = "matmul"

    def shape(self, shapes, attrs):
        a, b = shapes
        if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
            raise ShapeError("matmul", a, b, detail="inner dimensions differ")
        return (a[0], b[1])

    def forward(self, vals, attrs):
        return vals[0] @ vals[1]

    def vjp(self, B, g, ins, out, attrs, need):
        a, b = ins
        return (
            B.matmul(g, B.transpose(b)) if need[0] else None,
            B.matmul(B.transpose(a), g) if need[1] else None,
        )


class _Transpose(_Op):
    name = "transpose"

    def shape(self, shapes, attrs):
        (a,) = shapes
        if len(a) != 2:
            raise ShapeError("transpose", a, detail="needs a matrix")
        return (a[1], a[0])

    def forward(self, vals, attrs):
        # a transposed view; BLAS consumes it without a copy
        return vals[0].T

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.transpose(g),)


class _Concat(_Op):
    name = "concat"

    def shape(self, shapes, attrs):
        first = shapes[0]
        if not first:
            raise ShapeError("concat", *shapes, detail="scalars cannot be concatenated")
        for s in shapes[1:]:
            if len(s) != len(first) or s[:-1] != first[:-1]:
                raise ShapeError("concat", *shapes, detail="leading dimensions differ")
        return first[:-1] + (sum(s[-1] for s in shapes),)

    def forward(self, vals, attrs):
        return np.concatenate(vals, axis=-1)

    def vjp(self, B, g, ins, out, attrs, need):
        grads = []
        start = 0
        for x, wanted in zip(ins, need):
            width = B.shape(x)[-1]
            grads.append(B.slice(g, start, start + width) if wanted else None)
            start += width
        return tuple(grads)


class _Slice(_Op):
    name = "slice"

    def shape(self, shapes, attrs):
        (a,) = shapes
        start, stop = attrs["start"], attrs["stop"]
        if not a or not (0 <= start < stop <= a[-1]):
            raise ShapeError("slice", a, detail=f"bad range [{start}:{stop}]")
        return a[:-1] + (stop - start,)

    def forward(self, vals, attrs):
        return np.ascontiguousarray(vals[0][..., attrs["start"]:attrs["stop"]])

    def vjp(self, B, g, ins, out, attrs, need):
        full = B.shape(ins[0])
        start, stop = attrs["start"], attrs["stop"]
        parts = []
        if start > 0:
            parts.append(B.zeros(full[:-1] + (start,)))
        parts.append(g)
        if stop < full[-1]:
            parts.append(B.zeros(full[:-1] + (full[-1] - stop,)))
        return (B.concat(parts) if len(parts) > 1 else g,)


class _Sum(_Op):
    name = "sum"

    def shape(self, shapes, attrs):
        return ()

    def forward(self, vals, attrs):
        return np.sum(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        shape = B.shape(ins[0])
        if shape == ():
            return (g,)
        return (B.mul(g, B.ones(shape)),)


class _Mean(_Op):
    name = "mean"

    def shape(self, shapes, attrs):
        if 0 in shapes[0]:
            raise ShapeError("mean", shapes[0], detail="empty tensor")
        return ()

    def forward(self, vals, attrs):
        return np.mean(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        shape = B.shape(ins[0])
        if shape == ():
            return (g,)
        size = int(np.prod(shape))
        return (B.mul(B.scale(g, 1.0 / size), B.ones(shape)),)


class _Tanh(_Op):
    name = "tanh"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        return np.tanh(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.mul(g, B.sub(B.scalar(1.0), B.mul(out, out))),)


class _Pow(_Op):
    name = "pow"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        x = vals[0]
        if np.any(x < 0):
            raise DomainError(f"pow: negative base (min {x.min():.3g}) with exponent {attrs['c']}")
        return np.power(x, attrs["c"])

    def vjp(self, B, g, ins, out, attrs, need):
        c = attrs["c"]
        if c == 0.0:
            return (B.scale(g, 0.0),)
        if c == 1.0:
            return (g,)
        return (B.mul(g, B.scale(B.power(ins[0], c - 1.0), c)),)


class _Log(_Op):
    name = "log"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        if np.any(vals[0] <= 0):
            raise DomainError("log: non-positive argument")
        return np.log(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.mul(g, B.power(ins[0], -1.0)),)


class _Exp(_Op):
    name = "exp"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        return np.exp(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.mul(g, out),)


class _Sin(_Op):
    name = "sin"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        return np.sin(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.mul(g, B.cos(ins[0])),)


class _Cos(_Op):
    name = "cos"

    def shape(self, shapes, attrs):
        return shapes[0]

    def forward(self, vals, attrs):
        return np.cos(vals[0])

    def vjp(self, B, g, ins, out, attrs, need):
        return (B.scale(B.mul(g, B.sin(ins[0])), -1.0),)


class _SqNorm(_Op):
    """Squared Euclidean norm over the last axis; keeps that axis as size 1.

    A 1-D input reduces to a scalar.
    """

    name = "sqnorm"

    def shape(self, shapes, attrs):
        (a,) = shapes
        if len(a) == 0:
            raise ShapeError("sqnorm", a, detail="needs at least one axis")
        if len(a) == 1:
            return ()
        return a[:-1] + (1,)

    def forward(self, vals, attrs):
        x = vals[0]
        if x.ndim == 1:
            return np.dot(x, x)
        return np.einsum("...j,...j->...", x, x)[..., None]

    def vjp(self, B, g, ins, out, attrs, need):
        x = ins[0]
        shape = B.shape(x)
        twice = B.scale(x, 2.0)
        if len(shape) == 1:
            return (B.mul(g, twice),)
        if len(shape) != 2:
            raise ShapeError("sqnorm", shape, detail="backward supports 1-D and 2-D inputs")
        spread = B.matmul(g, B.ones((1, shape[1])))
        return (B.mul(spread, twice),)


OPS = {
    op.name: op
    for op in (
        _Add(), _Sub(), _Mul(), _Scale(), _Matmul(), _Transpose(), _Concat(),
        _Slice(), _Sum(), _Mean(), _Tanh(), _Pow(), _Log(), _Exp(), _Sin(), _Cos(), _SqNorm(),
    )
}


# ---------------------------------------------------------------------------
# nodes and tapes


class Node:
    """One recorded value.  ``op`` is ``"leaf"`` for inputs and constants."""

    __slots__ = ("id", "op", "parents", "value", "attrs", "tape", "name")

    def __init__(self, tape, id, op, parents, value, attrs, name=None):
        self.tape = tape
        self.id = id
        self.op = op
        self.parents = parents
        self.value = value
        self.attrs = attrs
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.value)))

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node(#{self.id} {self.op}{label} shape={self.value.shape})"

    def _lift(self, other):
        if isinstance(other, Node):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", (self, self._lift(other)))

    def __radd__(self, other):
        return self.tape.record("add", (self._lift(other), self))

    def __sub__(self, other):
        return self.tape.record("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.tape.record("sub", (self._lift(other), self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", (self,), c=float(other))
        return self.tape.record("mul", (self, self._lift(other)))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", (self,), c=float(other))
        return self.tape.record("mul", (self._lift(other), self))

    def __neg__(self):
        return self.tape.record("scale", (self,), c=-1.0)

    def __matmul__(self, other):
        return self.tape.record("matmul", (self, self._lift(other)))

    def __pow__(self, c):
        return self.tape.record("pow", (self,), c=float(c))

    @property
    def T(self):
        return self.tape.record("transpose", (self,))

    def sum(self):
        return self.tape.record("sum", (self,))

    def mean(self):
        return self.tape.record("mean", (self,))

    def tanh(self):
        return self.tape.record("tanh", (self,))

    def exp(self):
        return self.tape.record("exp", (self,))

    def log(self):
        return self.tape.record("log", (self,))

    def sin(self):
        return self.tape.record("sin", (self,))

    def cos(self):
        return self.tape.record("cos", (self,))

    def sqnorm(self):
        return self.tape.record("sqnorm", (self,))

    def cols(self, start, stop):
        return self.tape.record("slice", (self,), start=start, stop=stop)


class Tape:
    """Append-only record of nodes.  Single owner; not thread-safe."""

    def __init__(self):
        self.nodes = []
        self.grad_marks = set()

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, parents, value, attrs, name=None):
        node = Node(self, len(self.nodes), op, parents, value, attrs, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None, requires_grad=True):
        node = self._append("leaf", (), _as_array(value), _EMPTY, name)
        if requires_grad:
            self.grad_marks.add(node.id)
        return node

    def constant(self, value, name=None):
        return self._append("leaf", (), _as_array(value), _EMPTY, name)

    def record(self, op_kind, inputs, **attrs):
        try:
            op = OPS[op_kind]
        except KeyError:
            raise ValueError(f"unknown op kind {op_kind!r}") from None
        for node in inputs:
            if node.tape is not self:
                raise GradientError(f"{op_kind}: input {node!r} belongs to another tape")
        shape = op.shape(tuple(n.value.shape for n in inputs), attrs)
        value = op.forward(tuple(n.value for n in inputs), attrs)
        value = np.asarray(value, dtype=np.float64)
        assert value.shape == shape, (op_kind, value.shape, shape)
        return self._append(op_kind, tuple(inputs), value, attrs or _EMPTY)

    def check_finite(self):
        """Raise :class:`NonFiniteError` naming the first NaN/Inf node."""
        for node in self.nodes:
            if not node.is_finite():
                raise NonFiniteError(f"non-finite value at {node!r}")

    def replay(self):
        """Recompute every non-leaf node from its parents.

        Returns the list of ids whose recomputed value is not bit-identical
        to the recorded one (empty for a healthy tape).
        """
        bad = []
        for node in self.nodes:
            if node.op == "leaf":
                continue
            value = OPS[node.op].forward(tuple(p.value for p in node.parents), node.attrs)
            value = np.asarray(value, dtype=np.float64)
            if value.shape != node.value.shape or value.tobytes() != node.value.tobytes():
                bad.append(node.id)
        return bad


# ---------------------------------------------------------------------------
# gradients


def grad(output, wrt, create_graph=False):
    """Gradients of a scalar ``output`` with respect to each node in ``wrt``.

    With ``create_graph`` the returned nodes are part of the tape and can be
    differentiated again.  Otherwise they are constant leaves.  A ``wrt``
    node that ``output`` does not depend on gets a zero gradient.
    """
    tape = output.tape
    if output.value.size != 1:
        raise GradientError(f"grad needs a scalar output, got shape {output.value.shape}")
    for w in wrt:
        if w.tape is not tape:
            raise GradientError(f"{w!r} is not on the output's tape")

    nodes = tape.nodes
    last = output.id
    wrt_ids = {w.id for w in wrt}
    needed = bytearray(last + 1)
    for node in nodes[: last + 1]:
        if node.id in wrt_ids:
            needed[node.id] = 1
        else:
            for p in node.parents:
                if needed[p.id]:
                    needed[node.id] = 1
                    break

    B = _GraphBackend(tape) if create_graph else ARRAY
    if create_graph:
        seed = tape.constant(np.ones(output.value.shape))
    else:
        seed = np.ones(output.value.shape)

    results = {}
    grads = {}
    if needed[last]:
        grads[last] = seed
    for i in range(last, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        if i in wrt_ids:
            results[i] = g
        node = nodes[i]
        if not node.parents:
            continue
        need = tuple(bool(needed[p.id]) for p in node.parents)
        if not any(need):
            continue
        ins = node.parents if create_graph else tuple(p.value for p in node.parents)
        out = node if create_graph else node.value
        pgrads = OPS[node.op].vjp(B, g, ins, out, node.attrs, need)
        for p, pg, wanted in zip(node.parents, pgrads, need):
            if not wanted or pg is None:
                continue
            prev = grads.get(p.id)
            grads[p.id] = pg if prev is None else B.add(prev, pg)

    out_nodes = []
    for w in wrt:
        g = results.get(w.id)
        if create_graph:
            out_nodes.append(g if g is not None else tape.constant(np.zeros(w.value.shape)))
        else:
            value = g if g is not None else np.zeros(w.value.shape)
            out_nodes.append(tape.constant(np.asarray(value, dtype=np.float64)))
    return out_nodes


def grad_arrays(output, wrt):
    """Like :func:`grad` without graph creation, returning plain arrays."""
    return [n.value for n in grad(output, wrt, create_graph=False)]


def finite_diff_check(f, x, step=1e-5):
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a leaf node (on a fresh tape) to a scalar node.  The error per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise DomainError("finite_diff_check: step must be positive")
    x = _as_array(x)
    tape = Tape()
    leaf = tape.leaf(x)
    out = f(leaf)
    if not out.is_finite():
        raise NonFiniteError("finite_diff_check: f(x) is not finite")
    (analytic,) = grad_arrays(out, [leaf])

    def value_at(point):
        t = Tape()
        v = f(t.leaf(point)).value
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("finite_diff_check: f is not finite near x")
        return float(v)

    numeric = np.empty_like(x)
    flat = numeric.reshape(-1)
    for k in range(x.size):
        plus = x.copy().reshape(-1)
        minus = x.copy().reshape(-1)
        plus[k] += step
        minus[k] -= step
        flat[k] = (value_at(plus.reshape(x.shape)) - value_at(minus.reshape(x.shape))) / (2 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
