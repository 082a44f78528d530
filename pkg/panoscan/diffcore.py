"""Tape-based reverse-mode differentiation for the small policy and assessor
graphs, plus the parameter container, gradient clipping and Adam.

Usage::

    tape = Tape()
    y = tape.tanh(tape.matvec(params['W'], x))
    loss = tape.sum(tape.mul(y, y))
    backward(tape)          # accumulates into params grads
    adam_step(params, lr=3e-4, t=1)

A ``Tape(record=False)`` evaluates the same ops forward-only.
"""
from __future__ import annotations

from collections.abc import Callable
from collections.abc import Iterator
from collections.abc import Mapping
from collections.abc import Sequence
from typing import NamedTuple
from typing import Union

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from panoscan.errors import ArgumentError
from panoscan.errors import CheckpointIncompatibleError
from panoscan.errors import ContractViolationError
from panoscan.errors import DegenerateDistributionError
from panoscan.errors import DomainError

Array = npt.NDArray[np.float64]


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad')

    def __init__(self, data: npt.ArrayLike, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolationError(
                f'item() needs a single value, got shape {self.shape}',
            )
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad})'


Operand = Union[Tensor, float]
Backward = Callable[[Array], Sequence[Union[Array, None]]]


class _Record(NamedTuple):
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Backward


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    return np.asarray(np.sum(g), dtype=np.float64)


def _finite_max(z: Array) -> float:
    finite = z[np.isfinite(z)]
    if finite.size == 0:
        raise DegenerateDistributionError(
            'every logit is -inf: no action can be sampled',
        )
    return float(np.max(finite))


def softmax_array(z: Array) -> Array:
    """Max-shifted softmax; ``-inf`` entries map to exactly zero."""
    e = np.exp(z - _finite_max(z))
    return e / np.sum(e)


def log_sum_exp(z: Array) -> float:
    m = _finite_max(z)
    return m + float(np.log(np.sum(np.exp(z - m))))


class Tape:
    """Ordered record of primitive ops with what their backward rules need."""

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def const(self, x: npt.ArrayLike) -> Tensor:
        return Tensor(x)

    def _as_tensor(self, x: Operand) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(x)

    def _emit(
            self,
            data: npt.ArrayLike,
            inputs: tuple[Tensor, ...],
            backward: Backward,
    ) -> Tensor:
        requires = self.record and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=requires)
        if requires:
            self.records.append(_Record(out, inputs, backward))
        return out

    # linear algebra

    def matvec(self, w: Tensor, x: Tensor) -> Tensor:
        if w.data.ndim != 2 or x.data.ndim != 1 or w.shape[1] != x.shape[0]:
            raise ContractViolationError(
                f'matvec shapes do not conform: {w.shape} @ {x.shape}',
            )
        wd, xd = w.data, x.data
        return self._emit(
            wd @ xd, (w, x), lambda g: (np.outer(g, xd), wd.T @ g),
        )

    def matvec_rows(self, w: Tensor, f: Tensor) -> Tensor:
        """Applies ``w`` to every row of ``f``: returns ``f @ w.T``."""
        if w.data.ndim != 2 or f.data.ndim != 2 or w.shape[1] != f.shape[1]:
            raise ContractViolationError(
                f'matvec_rows shapes do not conform: {w.shape} vs {f.shape}',
            )
        wd, fd = w.data, f.data
        return self._emit(fd @ wd.T, (w, f), lambda g: (g.T @ fd, g @ wd))

    def weighted_rows(self, f: Tensor, a: Tensor) -> Tensor:
        """Returns ``sum_i a[i] * f[i]``."""
        if f.data.ndim != 2 or a.shape != (f.shape[0],):
            raise ContractViolationError(
                f'weighted_rows shapes do not conform: {f.shape} vs {a.shape}',
            )
        fd, ad = f.data, a.data
        return self._emit(fd.T @ ad, (f, a), lambda g: (np.outer(ad, g), fd @ g))

    def add_rows(self, m: Tensor, v: Tensor) -> Tensor:
        if m.data.ndim != 2 or v.shape != (m.shape[1],):
            raise ContractViolationError(
                f'add_rows shapes do not conform: {m.shape} + {v.shape}',
            )
        return self._emit(
            m.data + v.data, (m, v), lambda g: (g, np.sum(g, axis=0)),
        )

    def dot(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 1 or a.shape != b.shape:
            raise ContractViolationError(
                f'dot shapes do not conform: {a.shape} . {b.shape}',
            )
        ad, bd = a.data, b.data
        return self._emit(float(ad @ bd), (a, b), lambda g: (g * bd, g * ad))

    # elementwise

    def _check_binary(self, a: Tensor, b: Tensor, name: str) -> None:
        if a.shape != b.shape and a.data.ndim and b.data.ndim:
            raise ContractViolationError(
                f'{name} shapes do not conform: {a.shape} vs {b.shape}',
            )

    def add(self, a: Operand, b: Operand) -> Tensor:
        ta, tb = self._as_tensor(a), self._as_tensor(b)
        self._check_binary(ta, tb, 'add')
        sa, sb = ta.shape, tb.shape
        return self._emit(
            ta.data + tb.data, (ta, tb),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    def sub(self, a: Operand, b: Operand) -> Tensor:
        ta, tb = self._as_tensor(a), self._as_tensor(b)
        self._check_binary(ta, tb, 'sub')
        sa, sb = ta.shape, tb.shape
        return self._emit(
            ta.data - tb.data, (ta, tb),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def mul(self, a: Operand, b: Operand) -> Tensor:
        ta, tb = self._as_tensor(a), self._as_tensor(b)
        self._check_binary(ta, tb, 'mul')
        ad, bd = ta.data, tb.data
        return self._emit(
            ad * bd, (ta, tb),
            lambda g: (
                _unbroadcast(g * bd, ta.shape), _unbroadcast(g * ad, tb.shape),
            ),
        )

    def scale(self, x: Tensor, c: float) -> Tensor:
        return self._emit(c * x.data, (x,), lambda g: (c * g,))

    def square(self, x: Tensor) -> Tensor:
        xd = x.data
        return self._emit(xd * xd, (x,), lambda g: (2.0 * xd * g,))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        return self._emit(y, (x,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = expit(x.data)
        return self._emit(y, (x,), lambda g: (g * y * (1.0 - y),))

    def exp(self, x: Tensor) -> Tensor:
        y = np.exp(x.data)
        return self._emit(y, (x,), lambda g: (g * y,))

    def log1p(self, x: Tensor) -> Tensor:
        xd = x.data
        if np.any(xd <= -1.0):
            raise DomainError('log1p is undefined for arguments <= -1')
        return self._emit(np.log1p(xd), (x,), lambda g: (g / (1.0 + xd),))

    def softplus(self, x: Tensor) -> Tensor:
        """``log(1 + exp(x))`` without overflow."""
        xd = x.data
        return self._emit(
            np.logaddexp(0.0, xd), (x,), lambda g: (g * expit(xd),),
        )

    def relu(self, x: Tensor) -> Tensor:
        xd = x.data
        return self._emit(
            np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0.0),),
        )

    def clip(self, x: Tensor, lo: float, hi: float) -> Tensor:
        xd = x.data
        inside = (xd >= lo) & (xd <= hi)
        return self._emit(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))

    def minimum(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_binary(a, b, 'minimum')
        pick_a = a.data <= b.data
        return self._emit(
            np.where(pick_a, a.data, b.data), (a, b),
            lambda g: (
                _unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape),
            ),
        )

    def elementwise(self, op: str, *operands: Operand) -> Tensor:
        unary: dict[str, Callable[[Tensor], Tensor]] = {
            'tanh': self.tanh,
            'sigmoid': self.sigmoid,
            'exp': self.exp,
            'log1p': self.log1p,
        }
        binary: dict[str, Callable[[Operand, Operand], Tensor]] = {
            'add': self.add,
            'sub': self.sub,
            'mul': self.mul,
        }
        if op in unary and len(operands) == 1:
            return unary[op](self._as_tensor(operands[0]))
        elif op in binary and len(operands) == 2:
            return binary[op](*operands)
        else:
            raise ArgumentError(
                f'unknown elementwise op {op!r} for {len(operands)} operands',
            )

    # reductions and reshaping

    def sum(self, x: Tensor) -> Tensor:
        shape = x.shape
        return self._emit(
            float(np.sum(x.data)), (x,), lambda g: (np.full(shape, float(g)),),
        )

    def mean(self, x: Tensor) -> Tensor:
        shape, n = x.shape, x.data.size
        return self._emit(
            float(np.mean(x.data)), (x,),
            lambda g: (np.full(shape, float(g) / n),),
        )

    def concat(self, a: Tensor, b: Tensor) -> Tensor:
        n = a.shape[0]
        return self._emit(
            np.concatenate([a.data, b.data]), (a, b), lambda g: (g[:n], g[n:]),
        )

    def take(self, f: Tensor, i: int) -> Tensor:
        shape = f.shape

        def backward(g: Array) -> tuple[Array]:
            out = np.zeros(shape)
            out[i] = g
            return (out,)
        return self._emit(f.data[i], (f,), backward)

    def stack(self, xs: Sequence[Tensor]) -> Tensor:
        for x in xs:
            if x.data.size != 1:
                raise ContractViolationError('stack takes scalar tensors only')
        return self._emit(
            np.array([x.data.reshape(()) for x in xs]), tuple(xs),
            lambda g: tuple(np.asarray(gi) for gi in g),
        )

    # distributions

    def masked(self, z: Tensor, mask: npt.NDArray[np.bool_]) -> Tensor:
        """Sets entries where ``mask`` is true to ``-inf``."""
        keep = ~mask
        return self._emit(
            np.where(mask, -np.inf, z.data), (z,), lambda g: (g * keep,),
        )

    def softmax(self, z: Tensor) -> Tensor:
        p = softmax_array(z.data)
        return self._emit(
            p, (z,), lambda g: (p * (g - float(np.dot(g, p))),),
        )

    def log_softmax_at(self, z: Tensor, i: int) -> Tensor:
        p = softmax_array(z.data)
        value = float(z.data[i]) - log_sum_exp(z.data)

        def backward(g: Array) -> tuple[Array]:
            out = -p * float(g)
            out[i] += float(g)
            return (out,)
        return self._emit(value, (z,), backward)

    def entropy(self, z: Tensor) -> Tensor:
        """Categorical entropy of ``softmax(z)`` in nats."""
        p = softmax_array(z.data)
        live = p > 0.0
        log_p = np.zeros_like(p)
        log_p[live] = np.log(p[live])
        h = -float(np.sum(p[live] * log_p[live]))
        return self._emit(h, (z,), lambda g: (-float(g) * p * (log_p + h),))

    def backward(self, root: Tensor | None = None) -> None:
        if root is None:
            if not self.records:
                return
            root = self.records[-1].out
        if root.data.size != 1:
            raise ContractViolationError(
                f'backward needs a scalar loss, got shape {root.shape}',
            )
        if not root.requires_grad:
            return
        root.grad = np.ones_like(root.data)
        for rec in reversed(self.records):
            g = rec.out.grad
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(gi, dtype=np.float64).reshape(t.shape)
                else:
                    t.grad += np.reshape(gi, t.shape)


def no_grad() -> Tape:
    return Tape(record=False)


def backward(tape: Tape, root: Tensor | None = None) -> None:
    """Accumulates d(root)/d(parameter) into every parameter's grad."""
    tape.backward(root)


class ParameterSet:
    """Named learnable arrays, each paired with a gradient buffer and the
    Adam moment buffers."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def add(self, name: str, value: npt.ArrayLike) -> Tensor:
        if name in self._params:
            raise ContractViolationError(f'duplicate parameter name {name!r}')
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            assert t.grad is not None
            t.grad[...] = 0.0

    def grads(self) -> dict[str, Array]:
        ret = {}
        for name, t in self._params.items():
            assert t.grad is not None
            ret[name] = t.grad.copy()
        return ret

    def arrays(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, Array]) -> None:
        missing = sorted(set(self._params) - set(arrays))
        if missing:
            raise CheckpointIncompatibleError(
                f'checkpoint is missing parameter {missing[0]!r}',
            )
        for name, t in self._params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise CheckpointIncompatibleError(
                    'checkpoint entry {!r} has shape {}, expected {}'.format(
                        name, value.shape, t.shape,
                    ),
                )
            t.data[...] = value

    def copy(self) -> ParameterSet:
        ret = ParameterSet()
        for name, t in self._params.items():
            ret.add(name, t.data)
        return ret

    def moments(self, name: str) -> tuple[Array, Array]:
        return self._m[name], self._v[name]


def global_grad_norm(params: ParameterSet) -> float:
    total = 0.0
    for _, t in params.items():
        assert t.grad is not None
        total += float(np.sum(t.grad * t.grad))
    return float(np.sqrt(total))


def clip_global_norm(params: ParameterSet, max_norm: float) -> float:
    """Rescales all grads so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise ArgumentError(f'max_norm must be positive, got {max_norm}')
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for _, t in params.items():
            assert t.grad is not None
            t.grad *= factor
    return norm


def adam_step(
        params: ParameterSet,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        t: int = 1,
) -> None:
    if t < 1:
        raise ArgumentError(f'adam step counter starts at 1, got {t}')
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in params.items():
        assert p.grad is not None
        m, v = params.moments(name)
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad * p.grad
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def check_gradients(
        loss_fn: Callable[[Tape], Tensor],
        params: ParameterSet,
        h: float = 1e-5,
        floor: float = 1e-3,
        max_entries: int | None = None,
        rng: np.random.Generator | None = None,
) -> float:
    """Compares analytic grads with central finite differences.

    Returns the largest ``|a - n| / max(|a|, |n|, floor)`` over the checked
    entries; ``max_entries`` samples that many entries per parameter.
    """
    params.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    analytic = params.grads()
    params.zero_grad()

    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn(no_grad()).item()
            flat[i] = orig - h
            minus = loss_fn(no_grad()).item()
            flat[i] = orig
            numeric = (plus - minus) / (2 * h)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
