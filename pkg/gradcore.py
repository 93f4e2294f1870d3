"""
Reverse-mode differentiation over dense numpy arrays.

Define-by-run: every operation executed while a ``Tape`` is active is recorded
in creation order, and ``backward`` replays the records in exact reverse order.
Outside a tape the same functions are plain forward computations, which is how
inference and dataset generation use them.

Shape rules are deliberately narrow: operands of elementwise ops must have the
same shape, except for rank-0 scalars and a rank-1 bias over the last axis.
"""

import contextlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import CONFIG

logger = logging.getLogger(__name__)

Number = Union[int, float]

_DTYPES = {'float32': np.float32, 'float64': np.float64}
_default_dtype = _DTYPES[CONFIG['runtime']['precision']]
_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's shape rule"""


class NumericalError(ArithmeticError):
    """An op produced NaN/Inf, or a gradient is not finite"""


def get_dtype():
    """Dtype for new tensors: the calling thread's override, else the process default"""
    return getattr(_local, 'dtype', None) or _default_dtype


def get_precision() -> str:
    return np.dtype(get_dtype()).name


def _check_precision(name: str):
    if name not in _DTYPES:
        raise ValueError(f"Unknown precision '{name}', expected one of {sorted(_DTYPES)}")


def set_precision(name: str):
    """Select 'float32' (training) or 'float64' (verification) for new tensors in every thread"""
    global _default_dtype
    _check_precision(name)
    _default_dtype = _DTYPES[name]
    logger.debug(f"gradcore precision set to {name}")


@contextlib.contextmanager
def precision(name: str):
    """Override the precision for the calling thread only"""
    _check_precision(name)
    previous = getattr(_local, 'dtype', None)
    _local.dtype = _DTYPES[name]
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """Dense array node; parameters are leaves with ``requires_grad=True``"""

    __slots__ = ('data', 'requires_grad', 'name', '__weakref__')

    def __init__(self, data, requires_grad: bool = False, name: str = ''):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str = '') -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(value)


# ============================================================================
# TAPE
# ============================================================================

@dataclass
class _Record:
    out: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


class Tape:
    """Single-writer record of primitive ops, usable as a context manager"""

    def __init__(self):
        self.records: List[_Record] = []

    def __enter__(self):
        stack = getattr(_local, 'tapes', None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _local.tapes.pop()
        return False

    def __len__(self):
        return len(self.records)


def current_tape() -> Optional[Tape]:
    stack = getattr(_local, 'tapes', None)
    return stack[-1] if stack else None


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        shapes = ', '.join(str(t.shape) for t in inputs)
        raise NumericalError(f"{op} produced non-finite values (input shapes: {shapes})")
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.records.append(_Record(out, tuple(inputs), vjp, op))
    return out


def backward(tape: Tape, loss: Tensor,
             params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """
    Propagate d(loss)/d(node) through the tape in reverse creation order

    Args:
        tape: Tape the loss was computed under
        loss: Scalar loss tensor
        params: Parameters to report; unreachable ones get a zero gradient.
            When omitted, every leaf that received a gradient is reported.

    Returns:
        Dictionary mapping parameter tensor to its gradient array
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(record.out) for record in tape.records}
    leaves: Dict[int, Tensor] = {}

    for record in reversed(tape.records):
        g = grads.pop(id(record.out), None)
        if g is None:
            continue
        input_grads = record.vjp(g)
        for tensor, tensor_grad in zip(record.inputs, input_grads):
            if tensor_grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + tensor_grad
            else:
                grads[key] = tensor_grad
            if key not in produced:
                leaves[key] = tensor

    if params is None:
        return {tensor: grads[key] for key, tensor in leaves.items()}
    return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; nothing flows back to ``x``"""
    return Tensor(x.data.copy(), requires_grad=False)


# ============================================================================
# SHAPE RULES
# ============================================================================

def _broadcast_rule(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if b.ndim == 0:
        return a.shape
    if a.ndim == 0:
        return b.shape
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return a.shape
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return b.shape
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape} "
                     "(only equal shapes, scalars and a last-axis bias broadcast)")


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g.reshape(-1, shape[0]).sum(axis=0)


# ============================================================================
# PRIMITIVES
# ============================================================================

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_rule('add', a, b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _emit('add', a.data + b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _emit('neg', -a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_rule('mul', a, b)

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _emit('mul', a.data * b.data, (a, b), vjp)


def div(a: Tensor, divisor: Number) -> Tensor:
    return mul(a, 1.0 / divisor)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., n, k) @ (k, m) weight, or batched (B..., n, k) @ (B..., k, m)"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] \
            or (b.ndim > 2 and b.shape[:-2] != a.shape[:-2]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return grad_a, grad_b

    return _emit('matmul', np.matmul(a.data, b.data), (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit('relu', np.where(mask, a.data, 0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit('sigmoid', s, (a,), lambda g: (g * s * (1 - s),))


def softplus(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit('softplus', np.logaddexp(0, a.data), (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over='ignore'):
        out = np.exp(a.data)
    return _emit('exp', out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.log(a.data)
    return _emit('log', out, (a,), lambda g: (g / a.data,))


def sin(a: Tensor) -> Tensor:
    return _emit('sin', np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _emit('cos', np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def absolute(a: Tensor) -> Tensor:
    return _emit('abs', np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit('sum', np.asarray(a.data.sum(axis=axis)), (a,), vjp)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis"""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit('softmax', s, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return _emit('concat', np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp)


def slice_axis(a: Tensor, start: int, stop: Optional[int], axis: int = -1) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _emit('slice', a.data[index], (a,), vjp)


def _along_axis(index: np.ndarray, axis: int) -> Tuple[np.ndarray, ...]:
    fancy = []
    for dim, n in enumerate(index.shape):
        if dim == axis:
            fancy.append(index)
        else:
            shape = [1] * index.ndim
            shape[dim] = n
            fancy.append(np.arange(n).reshape(shape))
    return tuple(fancy)


def gather(a: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """Take along ``axis``; ``index`` matches ``a`` on every other axis"""
    index = np.asarray(index, dtype=np.int64)
    ax = axis % a.ndim
    if index.ndim != a.ndim or index.shape[:ax] + index.shape[ax + 1:] != a.shape[:ax] + a.shape[ax + 1:]:
        raise ShapeError(f"gather: index shape {index.shape} does not match {a.shape} off axis {axis}")
    fancy = _along_axis(index, ax)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, fancy, g)
        return (grad,)

    return _emit('gather', a.data[fancy], (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit('reshape', a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes"""
    return _emit('transpose', np.swapaxes(a.data, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def expand(a: Tensor, leading: Sequence[int]) -> Tensor:
    """Repeat ``a`` over new leading axes"""
    leading = tuple(leading)
    out = np.broadcast_to(a.data, leading + a.shape).copy()

    def vjp(g):
        return (g.reshape((-1,) + a.shape).sum(axis=0),)

    return _emit('expand', out, (a,), vjp)


def standardize(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-token standardization over the last axis (zero mean, unit variance)"""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    n = a.shape[-1]

    def vjp(g):
        return (inv_std / n * (n * g - g.sum(axis=-1, keepdims=True)
                               - xhat * (g * xhat).sum(axis=-1, keepdims=True)),)

    return _emit('standardize', xhat, (a,), vjp)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


_PRIMITIVES: Dict[str, Callable[..., Tensor]] = {
    'matmul': matmul,
    'add': add,
    'mul': mul,
    'relu': relu,
    'sigmoid': sigmoid,
    'exp': exp,
    'sum': sum,
    'softmax': softmax,
    'mean': mean,
    'concat': lambda *tensors, axis=-1: concat(tensors, axis=axis),
    'slice': slice_axis,
    'sin': sin,
    'cos': cos,
    'log': log,
    'gather': gather,
    'softplus': softplus,
    'abs': absolute,
}


def forward_primitive(op: str, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by name (recorded on the active tape, if any)"""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"Unknown primitive '{op}', expected one of {sorted(_PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)


# ============================================================================
# FINITE-DIFFERENCE VERIFICATION
# ============================================================================

@dataclass
class GradientCheckReport:
    """Per-parameter agreement between analytic and central-difference gradients"""
    max_relative_error: float = 0.0
    max_absolute_error: float = 0.0
    checked_entries: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor,
                       indices: Optional[Sequence[Tuple[int, ...]]] = None,
                       h: float = 1e-5) -> Dict[Tuple[int, ...], float]:
    """Central differences of ``loss_fn()`` w.r.t. selected entries of ``param``"""
    if indices is None:
        indices = list(np.ndindex(*param.shape))
    result = {}
    for idx in indices:
        original = param.data[idx]
        param.data[idx] = original + h
        plus = loss_fn().item()
        param.data[idx] = original - h
        minus = loss_fn().item()
        param.data[idx] = original
        result[idx] = (plus - minus) / (2 * h)
    return result


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    rng: Optional[np.random.Generator] = None, points: int = 20,
                    h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7,
                    small: float = 1e-3) -> GradientCheckReport:
    """
    Compare tape gradients with central finite differences

    Args:
        loss_fn: Builds the scalar loss from scratch (must be deterministic)
        params: Parameters to check
        rng: Generator picking which entries to check
        points: Entries checked per parameter (all entries if the tensor is smaller)
        h: Finite-difference step
        rtol: Relative tolerance where the gradient magnitude is >= ``small``
        atol: Absolute tolerance where the gradient magnitude is < ``small``

    Returns:
        GradientCheckReport
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with Tape() as tape:
        loss = loss_fn()
    analytic = backward(tape, loss, params)

    report = GradientCheckReport()
    for p in params:
        flat = rng.choice(p.size, size=min(points, p.size), replace=False)
        indices = [np.unravel_index(int(i), p.shape) for i in flat]
        numeric = numerical_gradient(loss_fn, p, indices, h)
        for idx, value in numeric.items():
            a = float(analytic[p][idx])
            err = abs(a - value)
            scale = max(abs(a), abs(value))
            report.checked_entries += 1
            report.max_absolute_error = max(report.max_absolute_error, err)
            if scale < small:
                ok = err < atol
            else:
                rel = err / scale
                report.max_relative_error = max(report.max_relative_error, rel)
                ok = rel < rtol
            if not ok:
                report.failures.append(f"{p.name or p.shape}{idx}: analytic={a:.6e} numeric={value:.6e}")
    return report
