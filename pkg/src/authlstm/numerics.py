"""Dense float64 kernels and activations shared by the neural layers.

Everything here works on numpy arrays.  Vectors may carry leading batch
dimensions; the activation functions are applied elementwise and
``softmax`` normalises over the last axis.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Build a row-major float64 matrix, optionally from a flat list."""
    m = np.array(data, dtype=DTYPE, order="C")
    if rows is not None and cols is not None:
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def as_vector(data) -> np.ndarray:
    v = np.array(data, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def matvec(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``y[i] = sum_j W[i, j] * x[j]``; ``x`` may be a batch of row vectors."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"matvec: matrix {W.shape} incompatible with vector {x.shape}")
    return x @ W.T


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function, evaluated so that large ``|z|`` never overflows."""
    z = np.asarray(z, dtype=DTYPE)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fast_sigmoid(z: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Logistic function as ``0.5 * (1 + tanh(z / 2))``.

    Agrees with :func:`sigmoid` to ~1e-16 absolute and is branch-free, which is
    why the recurrent loops use it.  ``out`` may alias ``z``.
    """
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def tanh_act(z: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(z, dtype=DTYPE))


def relu(z: np.ndarray) -> np.ndarray:
    # not used by the default model
    return np.maximum(np.asarray(z, dtype=DTYPE), 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(z, dtype=DTYPE)
    if z.shape[-1] < 1:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    e /= e.sum(axis=-1, keepdims=True)
    return e


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} differ")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``[a; b]`` along the last axis."""
    return np.concatenate([np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)], axis=-1)
