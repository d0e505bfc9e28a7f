"""The primitive set: each op registers a forward, a reverse rule and a dual rule."""

from __future__ import annotations

import numpy as np

from .core import Primitive, ShapeError, apply, register


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _tan_or_zero(t, like_shape):
    return np.zeros(like_shape) if t is None else t


# add / sub ---------------------------------------------------------------

def _add_fwd(a, b):
    _broadcast_shape("add", a, b)
    return a + b, None


def _add_vjp(g, ctx, values):
    a, b = values
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _add_jvp(values, tangents, out, ctx):
    ta, tb = tangents
    if ta is None and tb is None:
        return np.zeros_like(out)
    return np.broadcast_to(_tan_or_zero(ta, values[0].shape) + _tan_or_zero(tb, values[1].shape), out.shape)


def _sub_fwd(a, b):
    _broadcast_shape("sub", a, b)
    return a - b, None


def _sub_vjp(g, ctx, values):
    a, b = values
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def _sub_jvp(values, tangents, out, ctx):
    ta, tb = tangents
    if ta is None and tb is None:
        return np.zeros_like(out)
    return np.broadcast_to(_tan_or_zero(ta, values[0].shape) - _tan_or_zero(tb, values[1].shape), out.shape)


# mul_scalar --------------------------------------------------------------

def _mul_scalar_fwd(a, *, c):
    return a * c, None


def _mul_scalar_vjp(g, ctx, values, *, c):
    return (g * c,)


def _mul_scalar_jvp(values, tangents, out, ctx, *, c):
    (t,) = tangents
    return np.zeros_like(out) if t is None else t * c


# matmul ------------------------------------------------------------------

def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="expected (m,k) @ (k,n)")
    return a @ b, None


def _matmul_vjp(g, ctx, values):
    a, b = values
    return g @ b.T, a.T @ g


def _matmul_jvp(values, tangents, out, ctx):
    a, b = values
    ta, tb = tangents
    res = np.zeros_like(out)
    if ta is not None:
        res = res + ta @ b
    if tb is not None:
        res = res + a @ tb
    return res


# concat_last_dim ---------------------------------------------------------

def _concat_fwd(*xs):
    if not xs:
        raise ShapeError("concat_last_dim", detail="no inputs")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or x.shape[:-1] != lead:
            raise ShapeError("concat_last_dim", xs[0].shape, x.shape, detail="leading dims differ")
    return np.concatenate(xs, axis=-1), np.cumsum([x.shape[-1] for x in xs])[:-1]


def _concat_vjp(g, splits, values):
    return tuple(np.split(g, splits, axis=-1))


def _concat_jvp(values, tangents, out, splits):
    return np.concatenate([_tan_or_zero(t, v.shape) for v, t in zip(values, tangents)], axis=-1)


# silu --------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu_fwd(x):
    s = _sigmoid(x)
    return x * s, s


def _silu_deriv(x, s):
    return s * (1.0 + x * (1.0 - s))


def _silu_vjp(g, s, values):
    (x,) = values
    return (g * _silu_deriv(x, s),)


def _silu_jvp(values, tangents, out, s):
    (x,) = values
    (t,) = tangents
    return np.zeros_like(out) if t is None else t * _silu_deriv(x, s)


# sin_cos_features --------------------------------------------------------

def _sincos_fwd(x, *, freqs):
    if x.ndim == 0 or x.shape[-1] != 1:
        raise ShapeError("sin_cos_features", x.shape, detail="last dim must be 1")
    arg = x * freqs
    s, c = np.sin(arg), np.cos(arg)
    return np.concatenate([s, c], axis=-1), (s, c)


def _sincos_vjp(g, ctx, values, *, freqs):
    s, c = ctx
    n = s.shape[-1]
    gs, gc = g[..., :n], g[..., n:]
    return (np.sum((gs * c - gc * s) * freqs, axis=-1, keepdims=True),)


def _sincos_jvp(values, tangents, out, ctx, *, freqs):
    (t,) = tangents
    if t is None:
        return np.zeros_like(out)
    s, c = ctx
    dt = t * freqs
    return np.concatenate([c * dt, -s * dt], axis=-1)


# reductions --------------------------------------------------------------

def _mean_fwd(x):
    return np.asarray(x.mean()), x.size


def _mean_vjp(g, n, values):
    (x,) = values
    return (np.full(x.shape, float(g) / n),)


def _mean_jvp(values, tangents, out, n):
    (t,) = tangents
    return np.zeros_like(out) if t is None else np.asarray(t.mean())


def _sum_sq_fwd(x):
    return np.asarray(np.sum(x * x)), None


def _sum_sq_vjp(g, ctx, values):
    (x,) = values
    return (2.0 * float(g) * x,)


def _sum_sq_jvp(values, tangents, out, ctx):
    (x,) = values
    (t,) = tangents
    return np.zeros_like(out) if t is None else np.asarray(2.0 * np.sum(x * t))


register(Primitive("add", _add_fwd, _add_vjp, _add_jvp))
register(Primitive("sub", _sub_fwd, _sub_vjp, _sub_jvp))
register(Primitive("mul_scalar", _mul_scalar_fwd, _mul_scalar_vjp, _mul_scalar_jvp))
register(Primitive("matmul", _matmul_fwd, _matmul_vjp, _matmul_jvp))
register(Primitive("concat_last_dim", _concat_fwd, _concat_vjp, _concat_jvp))
register(Primitive("silu", _silu_fwd, _silu_vjp, _silu_jvp))
register(Primitive("sin_cos_features", _sincos_fwd, _sincos_vjp, _sincos_jvp))
register(Primitive("mean", _mean_fwd, _mean_vjp, _mean_jvp))
register(Primitive("sum_sq", _sum_sq_fwd, _sum_sq_vjp, _sum_sq_jvp))


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul_scalar(a, c: float):
    return apply("mul_scalar", a, c=float(c))


def matmul(a, b):
    return apply("matmul", a, b)


def concat_last_dim(*xs):
    return apply("concat_last_dim", *xs)


def silu(x):
    return apply("silu", x)


def sin_cos_features(x, freqs):
    """[sin(x*f) | cos(x*f)] for a column of scalars ``x`` (last dim 1)."""
    return apply("sin_cos_features", x, freqs=np.asarray(freqs, dtype=np.float64))


def mean(x):
    return apply("mean", x)


def sum_sq(x):
    return apply("sum_sq", x)


def affine(x, w, b):
    return add(matmul(x, w), b)
