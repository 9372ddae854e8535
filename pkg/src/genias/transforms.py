"""Sparsifying transforms and their kernel bases.

Each transform carries the sparse matrix ``R``, an orthonormal basis ``W``
of ``ker(R)`` and, when ``R^T R`` is banded, its bandwidth. Grid spacing is
unit throughout so the stencils keep their integer entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operators import LinearOperator, aslinearoperator, from_matrix, to_dense, MAX_DENSE_ENTRIES

__all__ = [
    "SparsifyingTransform",
    "WeightedTransform",
    "derivative_operator",
    "neumann_gradient_1d",
    "neumann_gradient_2d",
    "identity_transform",
    "weight",
    "common_kernel_check",
]

_STENCILS = {
    1: np.array([-1.0, 1.0]),
    2: np.array([-1.0, 2.0, -1.0]),
    3: np.array([-1.0, 3.0, -3.0, 1.0]),
}


@dataclass(frozen=True, eq=False)
class SparsifyingTransform:
    """Sparse transform ``R`` (K x N) with orthonormal kernel basis ``W`` (N x P)."""

    matrix: sp.csr_matrix
    W: np.ndarray
    bandwidth: int | None = None
    name: str = ""
    grid: tuple[int, ...] | None = None
    R: LinearOperator = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "R", from_matrix(self.matrix, name=self.name))
        self.W.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def kernel_dim(self) -> int:
        return self.W.shape[1]

    def apply(self, v) -> np.ndarray:
        return self.R.apply(v)

    def apply_adjoint(self, v) -> np.ndarray:
        return self.R.apply_adjoint(v)


@dataclass(frozen=True, eq=False)
class WeightedTransform:
    """``R_theta = D_theta^{-1/2} R`` for a positive weight vector ``theta``."""

    base: SparsifyingTransform
    theta: np.ndarray
    R: LinearOperator = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True)
        if theta.shape != (self.base.rows,):
            raise ValueError(f"theta must have length {self.base.rows}, got {theta.shape}")
        if not np.all(theta > 0):
            raise ValueError("theta must be strictly positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        s = 1.0 / np.sqrt(theta)
        R = self.base.matrix
        Rt = R.T.tocsr()
        op = LinearOperator(R.shape[0], R.shape[1], lambda v: s * R.dot(v), lambda v: Rt.dot(s * v))
        object.__setattr__(self, "R", op)

    @property
    def W(self) -> np.ndarray:
        return self.base.W

    @property
    def rows(self) -> int:
        return self.base.rows

    @property
    def cols(self) -> int:
        return self.base.cols

    def apply(self, v) -> np.ndarray:
        return self.R.apply(v)

    def apply_adjoint(self, v) -> np.ndarray:
        return self.R.apply_adjoint(v)

    def matrix(self) -> sp.csr_matrix:
        return sp.diags(1.0 / np.sqrt(self.theta)) @ self.base.matrix

    def gram(self) -> sp.csr_matrix:
        """Sparse ``R_theta^T R_theta = R^T D_theta^{-1} R``."""
        R = self.base.matrix
        return (R.T @ sp.diags(1.0 / self.theta) @ R).tocsr()


def _orthonormal(cols: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(cols)
    return Q


def derivative_operator(order: int, N: int) -> SparsifyingTransform:
    """Finite-difference operator of ``order`` 1, 2 or 3 on ``N`` points.

    Rows are the stencils ``[-1, 1]``, ``[-1, 2, -1]`` and ``[-1, 3, -3, 1]``;
    the kernel consists of polynomials of degree below ``order``.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if N <= order + 1:
        raise ValueError(f"N must exceed order + 1 = {order + 1}, got {N}")
    stencil = _STENCILS[order]
    K = N - order
    R = sp.diags([np.full(K, c) for c in stencil], offsets=list(range(order + 1)), shape=(K, N))
    t = np.linspace(-1.0, 1.0, N)
    W = _orthonormal(np.vander(t, order, increasing=True))
    return SparsifyingTransform(sp.csr_matrix(R), W, bandwidth=order, name=f"d{order}", grid=(N,))


def _neumann_matrix(L: int) -> sp.csr_matrix:
    R1 = sp.diags([-np.ones(L - 1), np.ones(L - 1)], [0, 1], shape=(L - 1, L))
    return sp.vstack([R1, sp.csr_matrix((1, L))]).tocsr()


def neumann_gradient_1d(L: int) -> SparsifyingTransform:
    """Square first-difference matrix with a trailing zero row (reflexive boundary)."""
    if L < 2:
        raise ValueError(f"L must be at least 2, got {L}")
    W = np.full((L, 1), 1.0 / np.sqrt(L))
    return SparsifyingTransform(_neumann_matrix(L), W, bandwidth=1, name="neumann1d", grid=(L,))


def neumann_gradient_2d(N1: int, N2: int) -> SparsifyingTransform:
    """Anisotropic gradient ``[R_{N1} kron I_{N2}; I_{N1} kron R_{N2}]``.

    Pixels are ordered row-major on an ``N1 x N2`` grid. The kernel is the
    constant image and ``R^T R`` has bandwidth ``N2``.
    """
    if N1 < 2 or N2 < 2:
        raise ValueError(f"grid must be at least 2x2, got {N1}x{N2}")
    R = sp.vstack(
        [
            sp.kron(_neumann_matrix(N1), sp.identity(N2)),
            sp.kron(sp.identity(N1), _neumann_matrix(N2)),
        ]
    ).tocsr()
    N = N1 * N2
    W = np.full((N, 1), 1.0 / np.sqrt(N))
    return SparsifyingTransform(R, W, bandwidth=N2, name="neumann2d", grid=(N1, N2))


def identity_transform(N: int) -> SparsifyingTransform:
    """``R = I_N``; trivial kernel, diagonal Gram matrix."""
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    return SparsifyingTransform(sp.identity(N, format="csr"), np.zeros((N, 0)), bandwidth=0, name="identity", grid=(N,))


def weight(base: SparsifyingTransform, theta) -> WeightedTransform:
    return WeightedTransform(base, theta)


def _norm_estimate(op: LinearOperator, iters: int = 30, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.cols)
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        w = op.apply_adjoint(op.apply(v))
        s = np.linalg.norm(w)
        if s == 0.0:
            return 0.0
        v = w / s
    return float(np.sqrt(s))


def common_kernel_check(F, transform: SparsifyingTransform, tol: float = 1e-8) -> bool:
    """Numerically test ``ker(F) & ker(R) = {0}``.

    Small problems use the singular values of the stacked matrix ``[F; R]``.
    Larger ones test that ``F W`` has full column rank relative to a
    power-iteration estimate of ``||F||``.
    """
    F = aslinearoperator(F)
    if F.cols != transform.cols:
        return False
    if transform.kernel_dim == 0:
        return True
    if (F.rows + transform.rows) * F.cols <= MAX_DENSE_ENTRIES and F.cols <= 2000:
        A = np.vstack([to_dense(F), transform.matrix.toarray()])
        if A.shape[0] < A.shape[1]:
            return False
        s = np.linalg.svd(A, compute_uv=False)
        return bool(s[-1] > tol * s[0])
    FW = np.column_stack([F.apply(w) for w in transform.W.T])
    s = np.linalg.svd(FW, compute_uv=False)
    scale = max(_norm_estimate(F), float(np.linalg.norm(transform.matrix.data, np.inf)))
    return bool(s[-1] > tol * scale)
