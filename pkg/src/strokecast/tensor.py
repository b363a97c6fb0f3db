"""Dense float64 tensors and the small arithmetic core the network stack rests on.

Everything downstream (layers, models, the data pipeline) moves data around as
row-major 64-bit float arrays.  The :class:`Tensor` wrapper pins down the
invariants those consumers rely on: rank >= 1, every dim >= 1, finite values,
C-contiguous layout.  Broadcasting is deliberately restricted to explicit
trailing-dimension rules so that shape bugs surface as errors instead of
silently fanning out.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}

_REDUCE_OPS = ("sum", "mean", "max")


def _validate(arr: np.ndarray) -> None:
    if arr.ndim < 1:
        raise ShapeError("tensor rank must be >= 1")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dims must be >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("tensor values must be finite (no NaN/Inf)")


class Tensor:
    """Immutable N-dimensional array: a shape plus flat row-major float64 data."""

    __slots__ = ("_data",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            arr = arr.reshape(tuple(shape))
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _validate(arr)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Take ownership of a freshly computed array without copying.

        Callers must hand over a C-contiguous float64 array they will not
        mutate afterwards.
        """
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _validate(arr)
        arr.setflags(write=False)
        t._data = arr
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls._wrap(np.zeros(tuple(shape)))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor":
        return cls._wrap(np.full(tuple(shape), float(value)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the data (row-major)."""
        return self._data

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def tolist(self):
        return self._data.tolist()

    def __array__(self, dtype=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and bool(np.array_equal(self._data, other._data))
        )

    __hash__ = None  # value semantics, not hashable

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_array(x) -> np.ndarray:
    """Unwrap a Tensor, or coerce array-likes, to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.array
    return np.asarray(x, dtype=np.float64)


def _broadcast_second(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> bool:
    """Trailing-dim broadcast check: b may be expanded to a, never the reverse."""
    if len(b_shape) > len(a_shape):
        return False
    for ad, bd in zip(reversed(a_shape), reversed(b_shape)):
        if bd != ad and bd != 1:
            return False
    return True


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise add/sub/mul; b may broadcast to a by trailing-dim rules."""
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE_OPS)}")
    aa, bb = as_array(a), as_array(b)
    if aa.shape != bb.shape and not _broadcast_second(aa.shape, bb.shape):
        raise ShapeError(
            f"shapes {aa.shape} and {bb.shape} are not compatible for elementwise {op} "
            "(second operand must match or broadcast along trailing dims)"
        )
    return Tensor._wrap(_ELEMENTWISE_OPS[op](aa, bb))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product (m x k) @ (k x n) -> (m x n)."""
    aa, bb = as_array(a), as_array(b)
    if aa.ndim != 2 or bb.ndim != 2:
        raise ShapeError(f"matmul requires rank-2 operands, got ranks {aa.ndim} and {bb.ndim}")
    if aa.shape[1] != bb.shape[0]:
        raise ShapeError(f"inner dims differ: {aa.shape} x {bb.shape}")
    return Tensor._wrap(aa @ bb)


def reduce(a: Tensor, axes: Iterable[int], op: str, keepdims: bool = False) -> Tensor:
    """Reduce over the given axes with sum/mean/max.

    Reducing over no axes returns an identity copy.  A full reduction yields a
    shape-(1,) tensor so the rank >= 1 invariant holds.
    """
    if op not in _REDUCE_OPS:
        raise ValueError(f"unknown reduce op {op!r}; expected one of {_REDUCE_OPS}")
    aa = as_array(a)
    axes = tuple(sorted(set(int(ax) for ax in axes)))
    for ax in axes:
        if ax < 0 or ax >= aa.ndim:
            raise IndexError(f"axis {ax} out of range for rank-{aa.ndim} tensor")
    if not axes:
        return Tensor._wrap(aa.copy())
    fn = {"sum": np.sum, "mean": np.mean, "max": np.max}[op]
    out = fn(aa, axis=axes, keepdims=keepdims)
    if op == "mean" and aa.min() == aa.max():
        # mean of a constant slab is that constant exactly; sum/count rounding
        # (e.g. (3*0.1)/3) would otherwise drift by an ulp
        out = np.full_like(np.asarray(out), aa.reshape(-1)[0])
    return Tensor._wrap(np.asarray(out))
