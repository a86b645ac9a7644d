"""Nodal, pooling and activation operator libraries for GOP neurons.

Every function here is elementwise/vectorized over numpy arrays, so the same
code path serves scalar checks and batched block evaluation.

Library
-------
nodal (x = input signal, w = synaptic weight)::

    mul       w*x
    exp       exp(clip(w*x, -10, 10)) - 1
    harmonic  sin(w*x)
    quad      w*x**2
    gauss     w*exp(-w**2 * x**2)
    dog       w*x*exp(-w**2 * x**2)

pooling over the K nodal outputs of one neuron::

    sum    sum_k y_k
    corr1  sum_k y_k*y_{k+1}
    corr2  sum_k y_k*y_{k+1}*y_{k+2}
    max    max_k y_k

activation: tanh, relu, lincut (clamp to [-1, 1]).
"""
from __future__ import annotations

import itertools
from enum import IntEnum
from typing import NamedTuple

import numpy as np

EXP_CLIP = 10.0


class OperatorError(ValueError):
    """Raised for an operator id or name outside the library."""


class Nodal(IntEnum):
    MUL = 0
    EXP = 1
    HARMONIC = 2
    QUAD = 3
    GAUSS = 4
    DOG = 5


class Pool(IntEnum):
    SUM = 0
    CORR1 = 1
    CORR2 = 2
    MAX = 3


class Act(IntEnum):
    TANH = 0
    RELU = 1
    LINCUT = 2


class OperatorSet(NamedTuple):
    nodal: Nodal
    pool: Pool
    act: Act

    @property
    def names(self) -> dict[str, str]:
        return {
            "nodal": self.nodal.name.lower(),
            "pool": self.pool.name.lower(),
            "act": self.act.name.lower(),
        }

    def __str__(self) -> str:
        return "/".join(self.names.values())

    @classmethod
    def from_names(cls, nodal: str, pool: str, act: str) -> "OperatorSet":
        return cls(_lookup(Nodal, nodal), _lookup(Pool, pool), _lookup(Act, act))


def _lookup(kind, op):
    """Coerce an enum member, integer id or lowercase name to ``kind``."""
    if isinstance(op, kind):
        return op
    if isinstance(op, str):
        try:
            return kind[op.upper()]
        except KeyError:
            raise OperatorError(f"unknown {kind.__name__.lower()} operator {op!r}") from None
    try:
        return kind(int(op))
    except (ValueError, TypeError):
        raise OperatorError(
            f"{kind.__name__.lower()} operator id {op!r} outside library of size {len(kind)}"
        ) from None


# ---------------------------------------------------------------------------
# nodal
# ---------------------------------------------------------------------------

def _exp_arg(x, w):
    return np.clip(w * x, -EXP_CLIP, EXP_CLIP)


def _gauss_core(x, w):
    return np.exp(-(w * w) * (x * x))


_NODAL_FORWARD = {
    Nodal.MUL: lambda x, w: w * x,
    Nodal.EXP: lambda x, w: np.expm1(_exp_arg(x, w)),
    Nodal.HARMONIC: lambda x, w: np.sin(w * x),
    Nodal.QUAD: lambda x, w: w * x * x,
    Nodal.GAUSS: lambda x, w: w * _gauss_core(x, w),
    Nodal.DOG: lambda x, w: w * x * _gauss_core(x, w),
}


def _exp_partials(x, w):
    e = np.exp(_exp_arg(x, w))
    return x * e, w * e


def _harmonic_partials(x, w):
    c = np.cos(w * x)
    return x * c, w * c


def _gauss_partials(x, w):
    g = _gauss_core(x, w)
    return g * (1.0 - 2.0 * w * w * x * x), -2.0 * w ** 3 * x * g


def _dog_partials(x, w):
    g = _gauss_core(x, w)
    common = g * (1.0 - 2.0 * w * w * x * x)
    return x * common, w * common


# each entry returns (d/dw, d/dx)
_NODAL_PARTIALS = {
    Nodal.MUL: lambda x, w: (x * np.ones_like(w), w * np.ones_like(x)),
    Nodal.EXP: _exp_partials,
    Nodal.HARMONIC: _harmonic_partials,
    Nodal.QUAD: lambda x, w: (x * x * np.ones_like(w), 2.0 * w * x),
    Nodal.GAUSS: _gauss_partials,
    Nodal.DOG: _dog_partials,
}


def nodal_forward(op, x, w):
    """Evaluate the nodal operator ``op`` on signal ``x`` with weight ``w``."""
    op = _lookup(Nodal, op)
    return _NODAL_FORWARD[op](np.asarray(x, dtype=float), np.asarray(w, dtype=float))


def nodal_partials(op, x, w):
    """Return ``(dy/dw, dy/dx)`` of the nodal operator.

    For ``exp`` both partials are those of ``exp(u) - 1`` evaluated at the
    clipped argument, so they stay bounded but nonzero outside the clip range.
    """
    op = _lookup(Nodal, op)
    return _NODAL_PARTIALS[op](np.asarray(x, dtype=float), np.asarray(w, dtype=float))


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def _check_pool_input(y, axis):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[axis] == 0:
        raise ValueError("pooling requires at least one nodal output")
    return np.moveaxis(y, axis, 0)


def pool_forward(op, y, axis: int = 0):
    """Reduce nodal outputs along ``axis``; the bias is added by the caller."""
    op = _lookup(Pool, op)
    y = _check_pool_input(y, axis)
    if op is Pool.SUM:
        return y.sum(axis=0)
    if op is Pool.CORR1:
        return (y[:-1] * y[1:]).sum(axis=0)
    if op is Pool.CORR2:
        return (y[:-2] * y[1:-1] * y[2:]).sum(axis=0)
    return y.max(axis=0)


def pool_partials(op, y, axis: int = 0):
    """Partial derivatives of the pooled value w.r.t. each nodal output.

    Missing neighbours at the sequence ends count as zero. ``max`` routes the
    full gradient to the lowest-index maximiser.
    """
    op = _lookup(Pool, op)
    y = _check_pool_input(y, axis)
    k = y.shape[0]
    if op is Pool.SUM:
        out = np.ones_like(y)
    elif op is Pool.CORR1:
        p = _zero_pad(y, 1)
        out = p[:k] + p[2:k + 2]
    elif op is Pool.CORR2:
        p = _zero_pad(y, 2)
        # index k of y sits at k + 2 of p
        out = (p[3:k + 3] * p[4:k + 4]      # y_k starts the triple
               + p[1:k + 1] * p[3:k + 3]    # y_k in the middle
               + p[:k] * p[1:k + 1])        # y_k ends the triple
    else:
        out = np.zeros_like(y)
        idx = np.expand_dims(np.argmax(y, axis=0), 0)
        np.put_along_axis(out, idx, 1.0, axis=0)
    return np.moveaxis(out, 0, axis)


def _zero_pad(y, n):
    pad = [(n, n)] + [(0, 0)] * (y.ndim - 1)
    return np.pad(y, pad)


# ---------------------------------------------------------------------------
# activation
# ---------------------------------------------------------------------------

def activate(op, z):
    op = _lookup(Act, op)
    z = np.asarray(z, dtype=float)
    if op is Act.TANH:
        return np.tanh(z)
    if op is Act.RELU:
        return np.maximum(z, 0.0)
    return np.clip(z, -1.0, 1.0)


def activate_partial(op, z):
    """Derivative of the activation; 0 at the relu and lincut kinks."""
    op = _lookup(Act, op)
    z = np.asarray(z, dtype=float)
    if op is Act.TANH:
        return 1.0 - np.tanh(z) ** 2
    if op is Act.RELU:
        return (z > 0.0).astype(float)
    return (np.abs(z) < 1.0).astype(float)


def enumerate_operator_sets() -> list[OperatorSet]:
    """All operator sets, nodal-major then pool then activation."""
    return [OperatorSet(n, p, a) for n, p, a in itertools.product(Nodal, Pool, Act)]


N_OPERATOR_SETS = len(Nodal) * len(Pool) * len(Act)
