"""Reverse-mode automatic differentiation over small dense float64 tensors.

Operations are recorded on a :class:`Tape` whenever one of their inputs
requires a gradient. :func:`backward` sweeps the tape once in reverse and then
releases it, so a second sweep over the same tape raises
:class:`~cdnemil.errors.ContractError`.

Only the operations needed for attention MIL and the compaction losses are
provided; there is no general broadcasting.
"""
import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, DomainError, NumericError

__all__ = [
    "Tensor", "Tape", "tensor", "constant", "parameter", "no_grad",
    "current_tape", "backward", "grad_check", "GradCheckResult",
    "matmul", "add", "sub", "elementwise_mul", "scalar_mul", "relu", "tanh",
    "sigmoid", "softmax_rows", "log_softmax_rows", "mean_all", "sum_all",
    "sqrt_elementwise", "sum_axis", "broadcast_row", "transpose",
    "center_std", "forward_op", "OP_KINDS",
]


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``values`` must not be mutated once the tensor has been used in an
    operation. Only parameters (leaves) are updated in place, and only between
    tapes.
    """

    __slots__ = ("values", "requires_grad", "_grad", "_node", "name")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def is_leaf(self):
        return self._node is None

    @property
    def grad(self):
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        if self.requires_grad:
            self._grad = np.zeros_like(self.values)

    def item(self):
        if self.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self):
        return self.values.copy()

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


def tensor(values, requires_grad=False, name=None):
    return Tensor(values, requires_grad=requires_grad, name=name)


def constant(values):
    return Tensor(values, requires_grad=False)


def parameter(values, name=None):
    return Tensor(values, requires_grad=True, name=name)


@dataclass(eq=False)
class _Record:
    kind: str
    inputs: tuple
    out: Tensor
    backward_fn: object
    tape: "Tape"
    alive: bool = True


@dataclass(eq=False)
class Tape:
    """Ordered record of executed operations for a single reverse sweep.

    Use as a context manager to scope recording to one training step::

        with Tape():
            loss = ...
            backward(loss)
    """

    records: list = field(default_factory=list)
    sweeps: int = 0

    def record(self, kind, inputs, out, backward_fn):
        rec = _Record(kind, tuple(inputs), out, backward_fn, self)
        self.records.append(rec)
        out._node = rec
        return rec

    def release(self):
        for rec in self.records:
            rec.alive = False
            rec.backward_fn = None
        self.records = []

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        self.release()
        return False


class _Local(threading.local):
    def __init__(self):
        self.stack = []
        self.default = Tape()
        self.grad_enabled = True


_local = _Local()


def current_tape():
    """The innermost active tape, or the per-thread default."""
    return _local.stack[-1] if _local.stack else _local.default


@contextlib.contextmanager
def no_grad():
    """Disable recording; ops return constants."""
    prev = _local.grad_enabled
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def _check_finite(kind, values):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{kind}: non-finite output")


def _make(kind, values, inputs, backward_fn):
    _check_finite(kind, values)
    needs = _local.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = needs
    out._grad = None
    out._node = None
    out.name = None
    if needs:
        current_tape().record(kind, inputs, out, backward_fn)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _need_ndim(kind, t, ndim):
    if t.values.ndim != ndim:
        raise DimensionError(f"{kind}: expected {ndim}-D input, got shape {t.shape}")


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# operations

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _need_ndim("matmul", a, 2)
    _need_ndim("matmul", b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        return g @ bv.T, av.T @ g

    return _make("matmul", av @ bv, (a, b), back)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _make("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _make("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def elementwise_mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("elementwise_mul", a, b)
    av, bv = a.values, b.values
    return _make("elementwise_mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scalar_mul(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _make("scalar_mul", a.values * c, (a,), lambda g: (g * c,))


def relu(a):
    a = _as_tensor(a)
    mask = a.values > 0.0
    return _make("relu", np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.values)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.values
    # split form avoids exp overflow for large |x|
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax_rows(a):
    a = _as_tensor(a)
    _need_ndim("softmax_rows", a, 2)
    y = _kernels.softmax_rows(a.values)
    return _make("softmax_rows", y, (a,), lambda g: (_kernels.softmax_rows_backward(y, g),))


def log_softmax_rows(a):
    a = _as_tensor(a)
    _need_ndim("log_softmax_rows", a, 2)
    x = a.values
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make("log_softmax_rows", y, (a,), back)


def mean_all(a):
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise DimensionError("mean_all: empty tensor")
    shape = a.shape
    return _make("mean_all", np.array(a.values.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def sum_all(a):
    a = _as_tensor(a)
    shape = a.shape
    return _make("sum_all", np.array(a.values.sum()), (a,),
                 lambda g: (np.full(shape, float(g)),))


def sqrt_elementwise(a):
    a = _as_tensor(a)
    if np.any(a.values < 0.0):
        raise DomainError("sqrt_elementwise: negative input")
    y = np.sqrt(a.values)
    return _make("sqrt_elementwise", y, (a,), lambda g: (_sqrt_grad(y, g),))


def _sqrt_grad(y, g):
    # zero input: subgradient 0
    safe = np.where(y > 0.0, y, 1.0)
    return np.where(y > 0.0, g / (2.0 * safe), 0.0)


def sum_axis(a, axis):
    a = _as_tensor(a)
    _need_ndim("sum_axis", a, 2)
    if axis not in (0, 1):
        raise DimensionError(f"sum_axis: axis must be 0 or 1, got {axis}")
    shape = a.shape

    def back(g):
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum_axis", a.values.sum(axis=axis), (a,), back)


def broadcast_row(a, rows):
    """Repeat a length-N vector (or 1xN row) into a ``rows`` x N matrix."""
    a = _as_tensor(a)
    if a.values.ndim == 2 and a.shape[0] == 1:
        vec = a.values[0]
    elif a.values.ndim == 1:
        vec = a.values
    else:
        raise DimensionError(f"broadcast_row: expected vector or 1xN, got {a.shape}")
    rows = int(rows)
    if rows < 1:
        raise DimensionError("broadcast_row: rows must be >= 1")
    shape = a.shape
    out = np.tile(vec, (rows, 1))
    return _make("broadcast_row", out, (a,), lambda g: (g.sum(axis=0).reshape(shape),))


def transpose(a):
    a = _as_tensor(a)
    _need_ndim("transpose", a, 2)
    return _make("transpose", a.values.T.copy(), (a,), lambda g: (g.T,))


def center_std(z, mu):
    """Per-column deviation of the rows of ``z`` around ``mu``.

    Returns the length-M vector ``sqrt(sum_k (z[k] - mu)**2 / (K - 1))``.
    Fused equivalent of the sub/mul/sum_axis/scalar_mul/sqrt chain, with the
    same zero-deviation subgradient.
    """
    z, mu = _as_tensor(z), _as_tensor(mu)
    _need_ndim("center_std", z, 2)
    _need_ndim("center_std", mu, 1)
    if z.shape[1] != mu.shape[0]:
        raise DimensionError(f"center_std: {z.shape} rows vs center {mu.shape}")
    if z.shape[0] < 2:
        raise DimensionError("center_std: needs at least 2 rows")
    zv, mv = z.values, mu.values
    std = _kernels.center_std(zv, mv)
    return _make("center_std", std, (z, mu),
                 lambda g: _kernels.center_std_backward(zv, mv, std, g))


OP_KINDS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise_mul": elementwise_mul,
    "scalar_mul": scalar_mul,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax_rows": softmax_rows,
    "log_softmax_rows": log_softmax_rows,
    "mean_all": mean_all,
    "sum_all": sum_all,
    "sqrt_elementwise": sqrt_elementwise,
    "sum_axis": sum_axis,
    "broadcast_row": broadcast_row,
    "transpose": transpose,
    "center_std": center_std,
}


def forward_op(kind, inputs, *args):
    """Dispatch an operation by name; ``args`` carries non-tensor operands."""
    try:
        fn = OP_KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, *args)


# ---------------------------------------------------------------------------
# reverse sweep

def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    The tape that produced ``loss`` is released afterwards; calling this again
    on the same loss raises :class:`ContractError`.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward: loss must be a scalar tensor")
    node = loss._node
    if node is None:
        raise ContractError("backward: loss is detached (no recorded ops)")
    if not node.alive:
        raise ContractError("backward: tape already consumed")
    tape = node.tape
    records = tape.records
    try:
        start = len(records) - 1 - records[::-1].index(node)
    except ValueError:
        raise ContractError("backward: loss not on its tape") from None

    pending = {id(loss): np.ones_like(loss.values)}
    for rec in reversed(records[: start + 1]):
        g = pending.pop(id(rec.out), None)
        if g is None:
            continue
        rec.out._grad = g
        in_grads = rec.backward_fn(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is not None and t._node.alive:
                key = id(t)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            else:
                if t._grad is None:
                    t._grad = np.array(gi, dtype=np.float64).reshape(t.shape)
                else:
                    t._grad = t._grad + gi
    tape.sweeps += 1
    tape.release()


# ---------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    passed: bool


def _rel_error(analytic, numeric, floor):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f, params, h=1e-6, tol=1e-4, floor=1e-3):
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params``. The relative error of each entry is taken against
    ``max(|analytic|, |numeric|, floor)``, so entries smaller than ``floor``
    are effectively compared absolutely. Returns one result per parameter.
    """
    if h <= 0:
        raise ContractError("grad_check: h must be positive")
    with no_grad():
        v1 = f().item()
        v2 = f().item()
    if v1 != v2:
        raise ContractError("grad_check: f is not deterministic")

    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        backward(loss)
    analytic = [p.grad.copy() for p in params]

    results = []
    with no_grad():
        for i, p in enumerate(params):
            numeric = np.zeros_like(p.values)
            flat = p.values.reshape(-1)
            nflat = numeric.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = f().item()
                flat[j] = orig - h
                fm = f().item()
                flat[j] = orig
                nflat[j] = (fp - fm) / (2.0 * h)
            err = _rel_error(analytic[i], numeric, floor)
            worst = float(err.max()) if err.size else 0.0
            name = p.name or f"param{i}"
            results.append(GradCheckResult(name, worst, worst <= tol))
    return results
