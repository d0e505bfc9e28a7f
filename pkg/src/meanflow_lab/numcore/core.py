"""Tensor carriers, the primitive registry and the two differentiation modes.

Values are plain float64 numpy arrays. A primitive called on plain arrays just
computes; called with a :class:`Var` it is recorded on that variable's
:class:`Tape` for reverse mode; called with a :class:`DualTensor` it
propagates a tangent (forward mode). Mixing the two modes in one call is
rejected: nothing here needs derivatives of derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(ArithmeticError):
    """NaN or Inf appeared where a finite value was required."""


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericError(f"{where}: {bad} non-finite value(s) in array of shape {np.shape(x)}")
    return x


def tensor(x: Any) -> Tensor:
    """Convert to a finite float64 array (copying only when needed)."""
    arr = np.asarray(x, dtype=np.float64)
    return check_finite(arr, "tensor")


@dataclass(frozen=True)
class DualTensor:
    value: Tensor
    tangent: Tensor

    def __post_init__(self):
        if np.shape(self.value) != np.shape(self.tangent):
            raise ShapeError("DualTensor", np.shape(self.value), np.shape(self.tangent),
                             detail="value and tangent must match")

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)


class Var:
    """A node on a tape. ``value`` is the forward result."""

    __slots__ = ("tape", "index", "value", "name")

    def __init__(self, tape: "Tape", index: int, value: Tensor, name: str | None = None):
        self.tape = tape
        self.index = index
        self.value = value
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var#{self.index}{label} shape={self.shape}"


@dataclass
class _Record:
    prim: "Primitive"
    inputs: tuple[int | None, ...]  # node index, or None for a constant input
    values: tuple[Tensor, ...]
    out: int
    ctx: Any
    params: dict


class Tape:
    """Ordered record of primitive applications for one reverse pass.

    Records are appended in execution order, which is already a topological
    order of the graph; ``backward`` walks it once in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._n_nodes = 0
        self.params: dict[str, int] = {}
        self._shapes: dict[int, tuple[int, ...]] = {}

    def _new_node(self, value: Tensor, name: str | None = None) -> Var:
        v = Var(self, self._n_nodes, value, name)
        self._shapes[v.index] = value.shape
        self._n_nodes += 1
        return v

    def param(self, name: str, value: Any) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        v = self._new_node(tensor(value), name)
        self.params[name] = v.index
        return v

    def watch(self, params: dict[str, Tensor]) -> dict[str, Var]:
        return {k: self.param(k, v) for k, v in params.items()}

    def backward(self, loss: Var) -> dict[str, Tensor]:
        return backward(self, loss)


@dataclass(frozen=True)
class Primitive:
    """forward(*values, **params) -> (out, ctx)
    vjp(g, ctx, values, **params) -> tuple of input cotangents (None allowed)
    jvp(values, tangents, out, ctx, **params) -> output tangent; tangents may be None
    """

    name: str
    forward: Callable[..., tuple[Tensor, Any]]
    vjp: Callable[..., Sequence[Tensor | None]] | None = None
    jvp: Callable[..., Tensor] | None = None


PRIMITIVES: dict[str, Primitive] = {}


def register(prim: Primitive) -> Primitive:
    PRIMITIVES[prim.name] = prim
    return prim


def apply(name: str, *inputs: Any, **params: Any):
    prim = PRIMITIVES[name]
    tape = None
    has_dual = False
    for x in inputs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ValueError(f"{name}: inputs recorded on different tapes")
            tape = x.tape
        elif isinstance(x, DualTensor):
            has_dual = True
    if tape is not None and has_dual:
        raise TypeError(f"{name}: cannot mix tape variables and dual tensors")

    if tape is not None:
        values = tuple(x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64) for x in inputs)
        out, ctx = prim.forward(*values, **params)
        check_finite(out, name)
        node = tape._new_node(out)
        ids = tuple(x.index if isinstance(x, Var) else None for x in inputs)
        tape.records.append(_Record(prim, ids, values, node.index, ctx, params))
        return node

    if has_dual:
        if prim.jvp is None:
            raise NotImplementedError(f"primitive {name!r} has no forward-mode rule")
        values = tuple(x.value if isinstance(x, DualTensor) else np.asarray(x, dtype=np.float64) for x in inputs)
        tangents = tuple(x.tangent if isinstance(x, DualTensor) else None for x in inputs)
        out, ctx = prim.forward(*values, **params)
        check_finite(out, name)
        tan = prim.jvp(values, tangents, out, ctx, **params)
        return DualTensor(out, check_finite(np.asarray(tan, dtype=np.float64), name + " (tangent)"))

    values = tuple(np.asarray(x, dtype=np.float64) for x in inputs)
    out, _ = prim.forward(*values, **params)
    return check_finite(out, name)


def value_of(x: Any) -> Tensor:
    if isinstance(x, (Var, DualTensor)):
        return x.value
    return np.asarray(x, dtype=np.float64)


def backward(tape: Tape, loss: Var) -> dict[str, Tensor]:
    """Gradients of a scalar tape node with respect to every registered parameter.

    Parameters the loss does not depend on get a zero gradient of their shape.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ValueError("loss must be a variable recorded on this tape")
    if loss.value.size != 1:
        raise ShapeError("backward", loss.value.shape, (), detail="loss must be scalar")

    grads: dict[int, Tensor] = {loss.index: np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.out, None)
        if g is None:
            continue
        if rec.prim.vjp is None:
            raise NotImplementedError(f"primitive {rec.prim.name!r} has no reverse-mode rule")
        in_grads = rec.prim.vjp(g, rec.ctx, rec.values, **rec.params)
        for idx, ig in zip(rec.inputs, in_grads):
            if idx is None or ig is None:
                continue
            if idx in grads:
                grads[idx] = grads[idx] + ig
            else:
                grads[idx] = ig

    out = {}
    for name, idx in tape.params.items():
        g = grads.get(idx)
        out[name] = np.zeros(tape._shapes[idx]) if g is None else check_finite(g, f"grad[{name}]")
    return out


def jvp(f: Callable[..., Any], inputs: Sequence[Any], tangents: Sequence[Any]) -> tuple[Tensor, Tensor]:
    """Evaluate ``f`` and its directional derivative in a single dual pass.

    Nothing is recorded on any tape, so the result is a constant with respect
    to reverse mode.
    """
    if len(inputs) != len(tangents):
        raise ValueError(f"jvp: {len(inputs)} inputs but {len(tangents)} tangents")
    duals = []
    for x, s in zip(inputs, tangents):
        x = tensor(x)
        s = tensor(s)
        if x.shape != s.shape:
            raise ShapeError("jvp", x.shape, s.shape, detail="tangent must match input")
        duals.append(DualTensor(x, s))
    out = f(*duals)
    if isinstance(out, DualTensor):
        return out.value, out.tangent
    out = value_of(out)
    return out, np.zeros_like(out)
