"""Differentiation substrate.

Two pieces live here:

* :class:`ParamTape` / :class:`Var` -- a small scalar reverse-mode tape. It is
  used for exact gradient checks on tiny networks and as a second gradient
  engine next to torch autograd.
* :class:`Jet` -- forward-propagated input derivatives. A jet carries a value,
  its first derivatives with respect to ``(xi1, xi2, t)`` and its spatial
  second derivatives ``(11, 12, 22)``. Jet components may be floats, numpy
  arrays, object arrays of :class:`Var`, or torch tensors, so parameter
  gradients flow through every derivative component of whatever backend holds
  them.

A derivative slot equal to ``None`` is identically zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .errors import ConfigurationError, TapeDomainError

# (alpha, beta) index pairs of the stored spatial second derivatives.
D2_PAIRS = ((0, 0), (0, 1), (1, 1))
_PAIR_INDEX = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}


def pair_index(a: int, b: int) -> int:
    return _PAIR_INDEX[(a, b)]


# ---------------------------------------------------------------------------
# scalar tape
# ---------------------------------------------------------------------------

class ParamTape:
    """Append-only record of scalar operations.

    Each node stores its forward value, the indices of its operands and the
    local partial derivative with respect to each operand.
    """

    def __init__(self):
        self.values: list[float] = []
        self.operands: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.kinds: list[str] = []
        self.adjoints: list[float] = []
        self.parameters: list[int] = []
        self.names: dict[int, str] = {}

    def __len__(self):
        return len(self.values)

    def _push(self, kind, value, operands=(), partials=()):
        self.values.append(float(value))
        self.operands.append(tuple(operands))
        self.partials.append(tuple(float(p) for p in partials))
        self.kinds.append(kind)
        return Var(self, len(self.values) - 1)

    def constant(self, value: float) -> "Var":
        return self._push("constant", value)

    def parameter(self, value: float, name: str | None = None) -> "Var":
        var = self._push("parameter", value)
        self.parameters.append(var.index)
        if name is not None:
            self.names[var.index] = name
        return var

    def parameter_array(self, values, prefix: str = "p") -> np.ndarray:
        values = np.asarray(values, dtype=float)
        flat = [self.parameter(v, f"{prefix}{i}") for i, v in enumerate(values.ravel())]
        out = np.empty(values.shape, dtype=object)
        out.ravel()[:] = flat
        return out

    def reset(self):
        """Drop every node; parameters must be re-registered afterwards."""
        self.__init__()

    def backward(self, root: "Var") -> dict[int, float]:
        """Sweep adjoints from ``root``; returns ``{parameter index: d root / d leaf}``."""
        if root.tape is not self:
            raise ValueError("root lives on a different tape")
        self.adjoints = [0.0] * len(self.values)
        self.adjoints[root.index] = 1.0
        for i in range(root.index, -1, -1):
            adj = self.adjoints[i]
            if adj == 0.0:
                continue
            for j, p in zip(self.operands[i], self.partials[i]):
                self.adjoints[j] += adj * p
        return {p: self.adjoints[p] for p in self.parameters}

    def grad(self, var: "Var") -> float:
        return self.adjoints[var.index] if self.adjoints else 0.0


def _lift(tape: ParamTape, x) -> "Var":
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.constant(float(x))


class Var:
    """Handle to one node of a :class:`ParamTape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: ParamTape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.values[self.index]

    def __float__(self):
        return self.value

    def __repr__(self):
        return f"Var({self.value!r}, node={self.index})"

    def __add__(self, other):
        return tape_primitive("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return tape_primitive("sub", self, other)

    def __rsub__(self, other):
        return tape_primitive("sub", other, self)

    def __mul__(self, other):
        return tape_primitive("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return tape_primitive("div", self, other)

    def __rtruediv__(self, other):
        return tape_primitive("div", other, self)

    def __neg__(self):
        return tape_primitive("neg", self)

    def sin(self):
        return tape_primitive("sin", self)

    def cos(self):
        return tape_primitive("cos", self)

    def exp(self):
        return tape_primitive("exp", self)


def tape_primitive(kind: str, *operands) -> Var:
    """Record one primitive operation and return its result node."""
    tape = next((o.tape for o in operands if isinstance(o, Var)), None)
    if tape is None:
        raise ValueError("at least one operand must be a tape scalar")
    ops = [_lift(tape, o) for o in operands]
    v = [o.value for o in ops]
    idx = [o.index for o in ops]
    if kind == "add":
        return tape._push(kind, v[0] + v[1], idx, (1.0, 1.0))
    if kind == "sub":
        return tape._push(kind, v[0] - v[1], idx, (1.0, -1.0))
    if kind == "mul":
        return tape._push(kind, v[0] * v[1], idx, (v[1], v[0]))
    if kind == "div":
        if v[1] == 0.0:
            raise TapeDomainError("division by zero", node=len(tape))
        return tape._push(kind, v[0] / v[1], idx, (1.0 / v[1], -v[0] / (v[1] * v[1])))
    if kind == "neg":
        return tape._push(kind, -v[0], idx, (-1.0,))
    if kind == "sin":
        return tape._push(kind, math.sin(v[0]), idx, (math.cos(v[0]),))
    if kind == "cos":
        return tape._push(kind, math.cos(v[0]), idx, (-math.sin(v[0]),))
    if kind == "exp":
        e = math.exp(v[0])
        return tape._push(kind, e, idx, (e,))
    raise ConfigurationError(f"unknown primitive {kind!r}")


def backward(root: Var) -> dict[int, float]:
    return root.tape.backward(root)


# ---------------------------------------------------------------------------
# backend dispatch
# ---------------------------------------------------------------------------

_obj_sin = np.frompyfunc(lambda v: v.sin() if isinstance(v, Var) else math.sin(v), 1, 1)
_obj_cos = np.frompyfunc(lambda v: v.cos() if isinstance(v, Var) else math.cos(v), 1, 1)
_obj_exp = np.frompyfunc(lambda v: v.exp() if isinstance(v, Var) else math.exp(v), 1, 1)


def _dispatch(x, torch_fn, np_fn, obj_fn, var_name):
    if isinstance(x, torch.Tensor):
        return torch_fn(x)
    if isinstance(x, Var):
        return getattr(x, var_name)()
    if isinstance(x, np.ndarray) and x.dtype == object:
        return obj_fn(x)
    return np_fn(x)


def sin_(x):
    return _dispatch(x, torch.sin, np.sin, _obj_sin, "sin")


def cos_(x):
    return _dispatch(x, torch.cos, np.cos, _obj_cos, "cos")


def exp_(x):
    return _dispatch(x, torch.exp, np.exp, _obj_exp, "exp")


def _ones_like(x):
    if isinstance(x, torch.Tensor):
        return torch.ones_like(x)
    if isinstance(x, np.ndarray):
        return np.ones(x.shape)
    return 1.0


# None-aware helpers: None means "identically zero".

def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _sub(a, b):
    if b is None:
        return a
    if a is None:
        return -b
    return a - b


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _neg(a):
    return None if a is None else -a


def _matmul_t(x, w):
    return None if x is None else x @ w.T


def _take(x, key):
    return None if x is None else x[key]


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------

class Jet:
    """Value with first derivatives in ``(xi1, xi2, t)`` and spatial second derivatives.

    ``d1 = (d/dxi1, d/dxi2, d/dt)``; ``d2 = (d2/dxi1^2, d2/dxi1dxi2, d2/dxi2^2)``.
    """

    __slots__ = ("value", "d1", "d2")
    __array_priority__ = 1000

    def __init__(self, value, d1=(None, None, None), d2=(None, None, None)):
        self.value = value
        self.d1 = tuple(d1)
        self.d2 = tuple(d2)

    @classmethod
    def constant(cls, value) -> "Jet":
        return cls(value)

    @classmethod
    def variable(cls, value, axis: int) -> "Jet":
        """Seed an input coordinate: ``d1[axis] = 1``, every other slot zero."""
        d1 = [None, None, None]
        d1[axis] = _ones_like(value)
        return cls(value, d1)

    def __repr__(self):
        return f"Jet(value={self.value!r}, d1={self.d1!r}, d2={self.d2!r})"

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, self.d1, self.d2)
        return Jet(self.value + other.value,
                   [_add(a, b) for a, b in zip(self.d1, other.d1)],
                   [_add(a, b) for a, b in zip(self.d2, other.d2)])

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, [_neg(a) for a in self.d1], [_neg(a) for a in self.d2])

    def __sub__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value - other, self.d1, self.d2)
        return Jet(self.value - other.value,
                   [_sub(a, b) for a, b in zip(self.d1, other.d1)],
                   [_sub(a, b) for a, b in zip(self.d2, other.d2)])

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value * other,
                       [_mul(a, other) for a in self.d1],
                       [_mul(a, other) for a in self.d2])
        f, g = self, other
        d1 = [_add(_mul(f.d1[k], g.value), _mul(f.value, g.d1[k])) for k in range(3)]
        d2 = []
        for k, (a, b) in enumerate(D2_PAIRS):
            term = _add(_mul(f.d2[k], g.value), _mul(f.value, g.d2[k]))
            term = _add(term, _mul(f.d1[a], g.d1[b]))
            term = _add(term, _mul(f.d1[b], g.d1[a]))
            d2.append(term)
        return Jet(f.value * g.value, d1, d2)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / other)
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __getitem__(self, key) -> "Jet":
        return Jet(self.value[key], [_take(a, key) for a in self.d1], [_take(a, key) for a in self.d2])

    @property
    def shape(self):
        return getattr(self.value, "shape", ())

    def linear(self, weight, bias=None) -> "Jet":
        """``x @ W.T + b`` along the last axis; derivative slots pass through ``W``."""
        value = self.value @ weight.T
        if bias is not None:
            value = value + bias
        return Jet(value, [_matmul_t(a, weight) for a in self.d1], [_matmul_t(a, weight) for a in self.d2])

    def second(self, a: int, b: int):
        return self.d2[pair_index(a, b)]

    def detach(self) -> "Jet":
        def _d(x):
            return x.detach() if isinstance(x, torch.Tensor) else x
        return Jet(_d(self.value), [_d(a) for a in self.d1], [_d(a) for a in self.d2])


def compose(f: Jet, g0, g1, g2) -> Jet:
    """Apply a scalar function given its value ``g0`` and derivatives ``g1, g2`` at ``f``."""
    d1 = [_mul(g1, a) for a in f.d1]
    d2 = []
    for k, (a, b) in enumerate(D2_PAIRS):
        term = _mul(g1, f.d2[k])
        cross = _mul(f.d1[a], f.d1[b])
        term = _add(term, _mul(g2, cross))
        d2.append(term)
    return Jet(g0, d1, d2)


def sin(f: Jet) -> Jet:
    s, c = sin_(f.value), cos_(f.value)
    return compose(f, s, c, -s)


def cos(f: Jet) -> Jet:
    s, c = sin_(f.value), cos_(f.value)
    return compose(f, c, -s, -c)


def exp(f: Jet) -> Jet:
    e = exp_(f.value)
    return compose(f, e, e, e)


def reciprocal(f: Jet) -> Jet:
    inv = 1.0 / f.value
    return compose(f, inv, -inv * inv, 2.0 * inv * inv * inv)


def square(f: Jet) -> Jet:
    return f * f


def _stack_slot(parts, axis, stack_fn):
    if all(p is None for p in parts):
        return None
    ref = next(p for p in parts if p is not None)
    filled = [p if p is not None else _zeros_like(ref) for p in parts]
    return stack_fn(filled, axis)


def _zeros_like(x):
    if isinstance(x, torch.Tensor):
        return torch.zeros_like(x)
    if isinstance(x, np.ndarray):
        return np.zeros(x.shape, dtype=x.dtype if x.dtype != object else float)
    return 0.0


def _stack_fn(values):
    if isinstance(values[0], torch.Tensor):
        return lambda xs, axis: torch.stack(
            [x if isinstance(x, torch.Tensor) else torch.full_like(values[0], x) for x in xs], dim=axis)
    return lambda xs, axis: np.stack(
        [np.broadcast_to(np.asarray(x, dtype=object if np.asarray(values[0]).dtype == object else float),
                         np.shape(values[0])) for x in xs], axis=axis)


def stack(jets: Sequence[Jet], axis: int = -1) -> Jet:
    """Stack jets of equal shape along a new axis."""
    stack_fn = _stack_fn([j.value for j in jets])
    value = stack_fn([j.value for j in jets], axis)
    d1 = [_stack_slot([j.d1[k] for j in jets], axis, stack_fn) for k in range(3)]
    d2 = [_stack_slot([j.d2[k] for j in jets], axis, stack_fn) for k in range(3)]
    return Jet(value, d1, d2)


def concat(jets: Sequence[Jet]) -> Jet:
    """Concatenate vector jets along their last axis."""
    vals = [j.value for j in jets]
    if isinstance(vals[0], torch.Tensor):
        def cat(xs):
            return torch.cat(xs, dim=-1)
    else:
        def cat(xs):
            return np.concatenate(xs, axis=-1)

    def slot(parts, refs):
        if all(p is None for p in parts):
            return None
        return cat([p if p is not None else _zeros_like(r) for p, r in zip(parts, refs)])

    return Jet(cat(vals),
               [slot([j.d1[k] for j in jets], vals) for k in range(3)],
               [slot([j.d2[k] for j in jets], vals) for k in range(3)])


def dot(a: Jet, b: Jet) -> Jet:
    """Inner product over the last axis of two vector jets (or a jet and a vector jet)."""
    p = a * b
    return Jet(_sum_last(p.value), [_sum_last(x) for x in p.d1], [_sum_last(x) for x in p.d2])


def _sum_last(x):
    if x is None:
        return None
    if isinstance(x, torch.Tensor):
        return x.sum(dim=-1)
    return np.sum(x, axis=-1)


def affine_sine(x: Jet, weight, bias, omega0: float) -> Jet:
    """``sin(omega0 * (W x + b))`` with chain-rule-correct derivative slots."""
    n_in = x.value.shape[-1]
    if weight.shape[-1] != n_in or (bias is not None and bias.shape[-1] != weight.shape[0]):
        raise ConfigurationError(
            f"layer expects input width {weight.shape[-1]}, got {n_in}")
    z = x.linear(weight, bias) * omega0
    return sin(z)


jet_affine_sine = affine_sine


# ---------------------------------------------------------------------------
# finite-difference checks
# ---------------------------------------------------------------------------

# 4th-order central stencils on offsets -2..2
_O = (-2, -1, 0, 1, 2)
_C1 = (1 / 12, -8 / 12, 0.0, 8 / 12, -1 / 12)
_C2 = (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12)


@dataclass
class DerivativeReport:
    d1: float
    d2: float
    params: float | None = None

    @property
    def worst(self) -> float:
        vals = [self.d1, self.d2] + ([self.params] if self.params is not None else [])
        return max(vals)


def _relerr(a, b, atol):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / (np.abs(b) + atol)))


def check_derivatives(fn: Callable[[Jet], Jet], point: Sequence[float], step: float = 1e-4,
                      params: Iterable[torch.Tensor] | None = None,
                      objective: Callable[[Jet], torch.Tensor] | None = None,
                      atol: float = 1e-8, param_step: float | None = None) -> DerivativeReport:
    """Compare jet derivatives of ``fn`` against 4th-order central differences.

    ``fn`` maps an input jet of shape ``(1, k)`` (k = 2 or 3 coordinates
    ``xi1, xi2[, t]``) to an output jet, and must also accept plain tensors
    wrapped as constant jets. Parameter gradients are checked for
    ``objective(fn(x))`` (default: sum of squares of every jet component) when
    ``params`` is given.
    """
    p = torch.as_tensor(np.asarray(point, dtype=float)).reshape(1, -1)
    k = p.shape[1]

    def seeded(pt):
        cols = [Jet.variable(pt[:, i], i) for i in range(k)]
        return stack(cols, -1)

    def plain(pt):
        with torch.no_grad():
            return fn(Jet.constant(pt)).value.detach().numpy().ravel()

    with torch.no_grad():
        out = fn(seeded(p))
    jd1 = [_np(out.d1[i], out.value) for i in range(k)]
    e = [torch.as_tensor(row).reshape(1, -1) for row in np.eye(k)]
    fd1 = [sum(c * plain(p + o * step * e[i]) for c, o in zip(_C1, _O) if c) / step for i in range(k)]
    err1 = max(_relerr(jd1[i], fd1[i], atol) for i in range(k))

    err2 = 0.0
    for idx, (a, b) in enumerate(D2_PAIRS):
        jd2 = _np(out.d2[idx], out.value)
        if a == b:
            fd = sum(c * plain(p + o * step * e[a]) for c, o in zip(_C2, _O)) / step**2
        else:
            fd = sum(ci * cj * plain(p + oi * step * e[a] + oj * step * e[b])
                     for ci, oi in zip(_C1, _O) if ci for cj, oj in zip(_C1, _O) if cj) / step**2
        err2 = max(err2, _relerr(jd2, fd, atol * max(1.0, 1.0 / step)))

    perr = None
    if params is not None:
        params = list(params)
        if objective is None:
            objective = _sum_squares
        for q in params:
            if q.grad is not None:
                q.grad = None
        obj = objective(fn(seeded(p)))
        grads = torch.autograd.grad(obj, params, allow_unused=True)
        hstep = param_step or 1e-6
        perr = 0.0
        for q, g in zip(params, grads):
            g = np.zeros(q.shape) if g is None else g.detach().numpy()
            flat = q.data.view(-1)
            fd = np.empty(flat.numel())
            for j in range(flat.numel()):
                old = flat[j].item()
                flat[j] = old + hstep
                with torch.no_grad():
                    up = objective(fn(seeded(p))).item()
                flat[j] = old - hstep
                with torch.no_grad():
                    dn = objective(fn(seeded(p))).item()
                flat[j] = old
                fd[j] = (up - dn) / (2 * hstep)
            scale = max(np.max(np.abs(fd)), 1e-30)
            perr = max(perr, _relerr(g.ravel(), fd, atol * scale + 1e-12))
    return DerivativeReport(err1, err2, perr)


def _np(x, ref):
    if x is None:
        return np.zeros(np.shape(ref.detach().numpy() if isinstance(ref, torch.Tensor) else ref)).ravel()
    if isinstance(x, torch.Tensor):
        return x.detach().numpy().ravel()
    return np.asarray(x, dtype=float).ravel()


def _sum_squares(out: Jet) -> torch.Tensor:
    total = (out.value ** 2).sum()
    for a in list(out.d1) + list(out.d2):
        if a is not None:
            total = total + (a ** 2).sum()
    return total
