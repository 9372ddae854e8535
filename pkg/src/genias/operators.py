"""Matrix-free linear operators.

Every map in the package (forward operators, sparsifying transforms, stacked
least-squares systems) is wrapped in :class:`LinearOperator`, which only
knows how to apply itself and its adjoint to a vector.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "aslinearoperator",
    "identity",
    "diagonal",
    "from_matrix",
    "stack_scaled",
    "kron",
    "kron_apply",
    "to_dense",
    "apply",
    "apply_adjoint",
]

MAX_DENSE_ENTRIES = 4_000_000


class LinearOperator:
    """Immutable real linear map ``R^cols -> R^rows``.

    Parameters
    ----------
    rows, cols : int
        Shape of the operator.
    matvec : callable
        ``v -> A v`` for a vector of length ``cols``.
    rmatvec : callable
        ``v -> A^T v`` for a vector of length ``rows``.
    """

    __slots__ = ("_rows", "_cols", "_matvec", "_rmatvec", "name")

    def __init__(
        self,
        rows: int,
        cols: int,
        matvec: Callable[[np.ndarray], np.ndarray],
        rmatvec: Callable[[np.ndarray], np.ndarray],
        name: str = "",
    ):
        object.__setattr__(self, "_rows", int(rows))
        object.__setattr__(self, "_cols", int(cols))
        object.__setattr__(self, "_matvec", matvec)
        object.__setattr__(self, "_rmatvec", rmatvec)
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("LinearOperator is immutable")

    @property
    def rows(self) -> int:
        return self._rows

    @property
    def cols(self) -> int:
        return self._cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self._rows, self._cols)

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self._cols,):
            raise ValueError(
                f"dimension mismatch: operator {self.shape} applied to vector of shape {v.shape}"
            )
        return np.asarray(self._matvec(v), dtype=np.float64).reshape(self._rows)

    def apply_adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self._rows,):
            raise ValueError(
                f"dimension mismatch: adjoint of {self.shape} applied to vector of shape {v.shape}"
            )
        return np.asarray(self._rmatvec(v), dtype=np.float64).reshape(self._cols)

    __call__ = apply

    @property
    def T(self) -> "LinearOperator":
        return LinearOperator(self._cols, self._rows, self._rmatvec, self._matvec, name=f"{self.name}^T")

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            if self._cols != other.rows:
                raise ValueError(f"cannot compose {self.shape} with {other.shape}")
            a, b = self, other
            return LinearOperator(
                a.rows,
                b.cols,
                lambda v: a._matvec(b._matvec(v)),
                lambda v: b._rmatvec(a._rmatvec(v)),
            )
        return self.apply(other)

    def scaled(self, alpha: float) -> "LinearOperator":
        alpha = float(alpha)
        return LinearOperator(
            self._rows,
            self._cols,
            lambda v: alpha * self._matvec(v),
            lambda v: alpha * self._rmatvec(v),
        )

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<LinearOperator{label} {self._rows}x{self._cols}>"


def apply(op: LinearOperator, v) -> np.ndarray:
    return op.apply(v)


def apply_adjoint(op: LinearOperator, v) -> np.ndarray:
    return op.apply_adjoint(v)


def from_matrix(A, name: str = "") -> LinearOperator:
    """Wrap a dense array or scipy sparse matrix."""
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=np.float64)
        At = A.T.tocsr()
        return LinearOperator(A.shape[0], A.shape[1], A.dot, At.dot, name=name)
    A = np.array(A, dtype=np.float64, copy=True)
    if A.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    A.setflags(write=False)
    return LinearOperator(A.shape[0], A.shape[1], A.dot, A.T.dot, name=name)


def aslinearoperator(A) -> LinearOperator:
    if isinstance(A, LinearOperator):
        return A
    return from_matrix(A)


def identity(n: int) -> LinearOperator:
    return LinearOperator(n, n, lambda v: v.copy(), lambda v: v.copy(), name=f"I_{n}")


def diagonal(d) -> LinearOperator:
    d = np.array(d, dtype=np.float64, copy=True)
    d.setflags(write=False)
    return LinearOperator(d.size, d.size, lambda v: d * v, lambda v: d * v, name="diag")


def stack_scaled(
    top: LinearOperator, top_weight: float, bottom: LinearOperator, bottom_weight: float
) -> LinearOperator:
    """Vertical stack ``[top_weight * top; bottom_weight * bottom]``."""
    if top.cols != bottom.cols:
        raise ValueError(f"column mismatch: {top.shape} vs {bottom.shape}")
    a, b = float(top_weight), float(bottom_weight)
    m = top.rows

    def matvec(v):
        return np.concatenate([a * top.apply(v), b * bottom.apply(v)])

    def rmatvec(v):
        return a * top.apply_adjoint(v[:m]) + b * bottom.apply_adjoint(v[m:])

    return LinearOperator(top.rows + bottom.rows, top.cols, matvec, rmatvec, name="stack")


def _kron_matvec(A: LinearOperator, B: LinearOperator, v: np.ndarray, adjoint: bool) -> np.ndarray:
    fa = A.apply_adjoint if adjoint else A.apply
    fb = B.apply_adjoint if adjoint else B.apply
    a_in, a_out = (A.rows, A.cols) if adjoint else (A.cols, A.rows)
    b_in, b_out = (B.rows, B.cols) if adjoint else (B.cols, B.rows)
    V = v.reshape(a_in, b_in)
    # (A (x) B) vec(V) = vec(A V B^T) for row-major vec
    Y = np.empty((a_in, b_out))
    for i in range(a_in):
        Y[i] = fb(V[i])
    Z = np.empty((a_out, b_out))
    for j in range(b_out):
        Z[:, j] = fa(Y[:, j])
    return Z.ravel()


def kron_apply(A: LinearOperator, B: LinearOperator, v) -> np.ndarray:
    """``(A kron B) v`` without forming the Kronecker product."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (A.cols * B.cols,):
        raise ValueError(
            f"dimension mismatch: kron of {A.shape} and {B.shape} applied to {v.shape}"
        )
    return _kron_matvec(A, B, v, adjoint=False)


def kron(A: LinearOperator, B: LinearOperator) -> LinearOperator:
    return LinearOperator(
        A.rows * B.rows,
        A.cols * B.cols,
        lambda v: _kron_matvec(A, B, v, adjoint=False),
        lambda v: _kron_matvec(A, B, v, adjoint=True),
        name="kron",
    )


def to_dense(op: LinearOperator, max_entries: int = MAX_DENSE_ENTRIES) -> np.ndarray:
    """Assemble ``op`` column by column. For test oracles only."""
    if op.rows * op.cols > max_entries:
        raise ValueError(
            f"operator {op.shape} too large to densify (limit {max_entries} entries)"
        )
    out = np.empty(op.shape)
    e = np.zeros(op.cols)
    for j in range(op.cols):
        e[j] = 1.0
        out[:, j] = op.apply(e)
        e[j] = 0.0
    return out
