"""
Dense float64 tensor arithmetic with reverse-mode automatic differentiation.

Every network of this code base is composed from the checked operations below. Storage and the backward engine are
torch's; this module adds the contracts the networks rely on: 64-bit floats only, finite values at construction, no
implicit broadcasting beyond scalar-with-tensor, a zero subgradient for `clip_min` at its kink and an auditable,
per-thread computation tape that is freed after every backward pass.
"""
import operator
import threading
from typing import Any, Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor
from torch.autograd import Function

from utils.errors import DimensionError, FluxError, NonFiniteError

DTYPE = torch.float64
Number = Union[int, float]


def tensor(data: Any, requires_grad: bool = False) -> Tensor:
    """
    Construct a float64 tensor, rejecting NaN/Inf values.
    :param data: nested sequences, numpy array, number or tensor
    :param (bool) requires_grad: set to True to have the tensor act as a differentiable leaf
    :return: a new `torch.Tensor` of dtype float64
    """
    t = torch.as_tensor(data, dtype=DTYPE).clone()
    assert_finite(t, what='tensor data')
    return t.requires_grad_(requires_grad)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return torch.zeros(*shape, dtype=DTYPE, requires_grad=requires_grad)


def assert_finite(t: Tensor, what: str = 'tensor') -> None:
    if not bool(torch.isfinite(t).all()):
        raise NonFiniteError(f'{what} contains non-finite values (shape={list(t.shape)})')


#
# --------------
# Tape
# -------------
#

class TapeEntry(NamedTuple):
    op: str
    inputs: Tuple[Any, ...]
    output: Tensor


class ComputationTape:
    """
    ComputationTape Class:
    Ordered record of the operations executed (through this module) while the tape is active on the current thread.
    Entries are appended as operations run, hence inputs always precede the operations consuming them. The tape is
    confined to the thread that opened it; distinct threads may run independent tapes concurrently.
    Usage:
        with ComputationTape() as tape:
            loss = ...
            tape.backward(loss)
    """

    _local = threading.local()

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> 'ComputationTape':
        self._stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        stack = self._stack()
        assert stack and stack[-1] is self, 'tapes must be closed in the reverse order they were opened'
        stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def _stack(cls) -> List['ComputationTape']:
        if not hasattr(cls._local, 'stack'):
            cls._local.stack = []
        return cls._local.stack

    @classmethod
    def active(cls) -> Optional['ComputationTape']:
        """
        Get the innermost tape opened on the calling thread.
        :return: a `ComputationTape` instance or None
        """
        stack = cls._stack()
        return stack[-1] if stack else None

    def record(self, op: str, inputs: Sequence[Any], output: Tensor) -> None:
        self.entries.append(TapeEntry(op=op, inputs=tuple(inputs), output=output))

    def ops(self) -> List[str]:
        return [_e.op for _e in self.entries]

    def backward(self, loss: Tensor) -> None:
        """
        Back-propagate :attr:`loss` through the recorded operations and free the tape. Gradients accumulate into
        the `.grad` buffers of every `requires_grad` leaf.
        :param (Tensor) loss: a scalar tensor produced while this tape was active
        """
        if not self.entries:
            raise FluxError('cannot run backward on an empty tape')
        _backward(loss)
        self.entries.clear()


def _record(op: str, inputs: Sequence[Any], output: Tensor) -> Tensor:
    tape = ComputationTape.active()
    if tape is not None and torch.is_grad_enabled():
        tape.record(op, inputs, output)
    return output


#
# --------------
# Operations
# -------------
#

def _is_scalar(x: Any) -> bool:
    return isinstance(x, (int, float)) or (isinstance(x, Tensor) and x.dim() == 0)


def _check_binary(op: str, a: Any, b: Any) -> None:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise DimensionError(f'{op}: at least one operand must be a tensor')
    if _is_scalar(a) or _is_scalar(b):
        return
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionError(f'{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}')


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a [m×k] matrix with a [k×n] matrix (or with a [k] vector, giving a [m] vector).
    :param (Tensor) a: left operand, 2-D
    :param (Tensor) b: right operand, 2-D or 1-D
    :return: the product as a `torch.Tensor`
    """
    if a.dim() != 2 or b.dim() not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f'matmul: cannot multiply {list(a.shape)} by {list(b.shape)}')
    return _record('matmul', (a, b), a @ b)


class ClipMin(Function):
    """
    ClipMin Class:
    max(x, bound) with gradient 1 where x > bound and 0 elsewhere (the kink itself included).
    """

    # noinspection PyMethodOverriding
    @staticmethod
    def forward(ctx: Any, x: Tensor, bound: float) -> Tensor:
        ctx.passed = x > bound
        return torch.clamp(x, min=bound)

    # noinspection PyMethodOverriding
    @staticmethod
    def backward(ctx: Any, grad_output: Tensor):
        return grad_output * ctx.passed.to(grad_output.dtype), None


_BINARY_OPS = {
    'add': operator.add,
    'sub': operator.sub,
    'mul': operator.mul,
}
_UNARY_OPS = {
    'sigmoid': torch.sigmoid,
    'tanh': torch.tanh,
}


def elementwise(op: str, *args: Union[Tensor, Number]) -> Tensor:
    """
    Apply the elementwise operation named :attr:`op`.
        - 'add', 'sub', 'mul': two equal-shape tensors (or a scalar with a tensor)
        - 'sigmoid', 'tanh': one tensor
        - 'clip_min': a tensor and an optional numeric bound (defaults to 0)
    :param (str) op: operation tag
    :param args: operands
    :return: a `torch.Tensor` object
    """
    if op in _BINARY_OPS:
        if len(args) != 2:
            raise ValueError(f'{op} expects 2 operands, got {len(args)}')
        a, b = args
        _check_binary(op, a, b)
        return _record(op, args, _BINARY_OPS[op](a, b))
    if op in _UNARY_OPS:
        if len(args) != 1:
            raise ValueError(f'{op} expects 1 operand, got {len(args)}')
        return _record(op, args, _UNARY_OPS[op](args[0]))
    if op == 'clip_min':
        if len(args) not in (1, 2):
            raise ValueError(f'clip_min expects 1 or 2 operands, got {len(args)}')
        bound = float(args[1]) if len(args) == 2 else 0.0
        return _record(op, args, ClipMin.apply(args[0], bound))
    raise ValueError(f'unknown elementwise op "{op}"')


def add(a: Union[Tensor, Number], b: Union[Tensor, Number]) -> Tensor:
    return elementwise('add', a, b)


def sub(a: Union[Tensor, Number], b: Union[Tensor, Number]) -> Tensor:
    return elementwise('sub', a, b)


def mul(a: Union[Tensor, Number], b: Union[Tensor, Number]) -> Tensor:
    return elementwise('mul', a, b)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise('sigmoid', x)


def tanh(x: Tensor) -> Tensor:
    return elementwise('tanh', x)


def clip_min(x: Tensor, bound: float = 0.0) -> Tensor:
    return elementwise('clip_min', x, bound)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    """
    Join two tensors along :attr:`axis`; every other axis must agree.
    :param (Tensor) a: first tensor
    :param (Tensor) b: second tensor (same number of dimensions)
    :param (int) axis: the concatenation axis
    :return: a `torch.Tensor` object
    """
    if a.dim() != b.dim():
        raise DimensionError(f'concat: rank mismatch {list(a.shape)} vs {list(b.shape)}')
    if not 0 <= axis < a.dim():
        raise DimensionError(f'concat: axis {axis} out of range for rank {a.dim()}')
    for _ax in range(a.dim()):
        if _ax != axis and a.shape[_ax] != b.shape[_ax]:
            raise DimensionError(f'concat: cannot join {list(a.shape)} and {list(b.shape)} along axis {axis}')
    return _record('concat', (a, b), torch.cat((a, b), dim=axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a new leading (or given) axis."""
    if not tensors:
        raise DimensionError('stack: nothing to stack')
    shapes = {tuple(_t.shape) for _t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f'stack: shape mismatch {sorted(shapes)}')
    return _record('stack', tuple(tensors), torch.stack(tuple(tensors), dim=axis))


def sum_all(x: Tensor) -> Tensor:
    return _record('sum', (x,), x.sum())


def mean_all(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return _record('mean', (x,), x.mean() if axis is None else x.mean(dim=axis))


#
# --------------
# Differentiation
# -------------
#

def _backward(loss: Tensor) -> None:
    if loss.dim() != 0:
        raise DimensionError(f'backward: loss must be a scalar, got shape {list(loss.shape)}')
    if not loss.requires_grad:
        raise FluxError('backward: loss does not depend on any differentiable tensor')
    loss.backward()


def backward(loss: Tensor) -> None:
    """
    Back-propagate a scalar :attr:`loss`. Uses (and frees) the active tape of the calling thread, if any. Repeated
    calls without zeroing gradients accumulate.
    :param (Tensor) loss: the scalar loss tensor
    """
    tape = ComputationTape.active()
    if tape is not None:
        tape.backward(loss)
    else:
        _backward(loss)


def grad_check(f: Callable[[Tensor], Tensor], at: Tensor, eps: float = 1e-5) -> float:
    """
    Compare the analytic gradient of scalar function :attr:`f` with central finite differences
    (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.
    :param f: deterministic function mapping a tensor to a scalar tensor
    :param (Tensor) at: the point of evaluation
    :param (float) eps: finite-difference step
    :return: max relative error, the denominator of each coordinate being max(|analytic|, |numeric|, 1e-8)
    """
    assert eps > 0, 'eps must be positive'
    x = at.detach().to(DTYPE).clone().requires_grad_(True)
    y = f(x)
    if y.dim() != 0:
        raise DimensionError(f'grad_check: f must return a scalar, got shape {list(y.shape)}')
    analytic, = torch.autograd.grad(y, x, allow_unused=True)
    analytic = torch.zeros_like(x) if analytic is None else analytic.detach()

    base = x.detach().clone()
    numeric = torch.zeros_like(base)
    with torch.no_grad():
        for i in range(base.numel()):
            x_plus = base.clone()
            x_plus.view(-1)[i] += eps
            x_minus = base.clone()
            x_minus.view(-1)[i] -= eps
            numeric.view(-1)[i] = (f(x_plus) - f(x_minus)) / (2 * eps)

    denominator = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=1e-8)
    return float(((analytic - numeric).abs() / denominator).max())
