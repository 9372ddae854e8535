"""The x-update: plain stacked least squares and the priorconditioned form.

For fixed ``(theta, nu)`` the x-update minimises

    ||F x - y||^2 / (2 nu) + ||R_theta x||^2 / 2.

The priorconditioned route splits ``x = x_ker + x_perp`` with
``x_ker = W (F W)^+ y`` in ``ker(R)`` and ``x_perp = R_theta^# w``, where

    R_theta^# = (I - W (F W)^+ F) R_theta^+

is the F-weighted oblique pseudoinverse. ``w`` then solves the standard-form
problem ``min ||nu^{-1/2} (F R_theta^# w - y)||^2 + ||w||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .krylov import BandedDeltaPinv, CGPinv, SolveReport, SolverError, cgls
from .operators import LinearOperator, aslinearoperator, stack_scaled
from .transforms import SparsifyingTransform, WeightedTransform, weight

__all__ = [
    "CommonKernelError",
    "KernelFactorization",
    "ObliquePinv",
    "precompute_kernel_qr",
    "x_kernel_component",
    "make_pinv",
    "oblique_apply",
    "oblique_adjoint",
    "whitened_x_update",
    "plain_x_update",
    "normal_equations_residual",
]

RANK_TOL = 1e-10


class CommonKernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelFactorization:
    """Economic QR ``F W = Q R`` of the forward operator restricted to ``ker(R)``."""

    W: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def kernel_dim(self) -> int:
        return self.W.shape[1]

    def fw_pinv(self, v: np.ndarray) -> np.ndarray:
        """``(F W)^+ v = R^{-1} Q^T v``."""
        if self.kernel_dim == 0:
            return np.zeros(0)
        return scipy.linalg.solve_triangular(self.R, self.Q.T @ v, lower=False)

    def fw_pinv_adjoint(self, c: np.ndarray) -> np.ndarray:
        """``((F W)^+)^T c = Q R^{-T} c``."""
        if self.kernel_dim == 0:
            return np.zeros(self.Q.shape[0])
        return self.Q @ scipy.linalg.solve_triangular(self.R, c, trans="T", lower=False)


def precompute_kernel_qr(F, W: np.ndarray) -> KernelFactorization:
    """Factor ``F W`` once; the result does not depend on ``theta``."""
    F = aslinearoperator(F)
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] != F.cols:
        raise ValueError(f"W has {W.shape[0]} rows, F has {F.cols} columns")
    P = W.shape[1]
    if P == 0:
        Q, R = np.zeros((F.rows, 0)), np.zeros((0, 0))
    else:
        FW = np.column_stack([F.apply(w) for w in W.T])
        Q, R = np.linalg.qr(FW, mode="reduced")
        d = np.abs(np.diag(R))
        scale = max(np.linalg.norm(FW, 2), np.finfo(float).tiny)
        if d.min() <= RANK_TOL * scale:
            raise CommonKernelError("common kernel condition violated: F W is rank deficient")
    for a in (W, Q, R):
        a.setflags(write=False)
    return KernelFactorization(W, Q, R)


def x_kernel_component(kf: KernelFactorization, y) -> np.ndarray:
    """``x_ker = W (F W)^+ y``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (kf.Q.shape[0],):
        raise ValueError(f"y must have length {kf.Q.shape[0]}, got {y.shape}")
    if kf.kernel_dim == 0:
        return np.zeros(kf.W.shape[0])
    return kf.W @ kf.fw_pinv(y)


def make_pinv(
    rt: WeightedTransform,
    strategy: str = "banded",
    delta: float = 1e-8,
    precond=None,
    tol: float = 1e-8,
    maxit: int | None = None,
):
    """Pseudoinverse applier for ``R_theta``: ``"banded"`` (delta-regularised
    Cholesky) or ``"cg"`` (restricted CG, optionally preconditioned)."""
    if strategy == "banded":
        return BandedDeltaPinv(rt, delta)
    if strategy == "cg":
        return CGPinv(rt, precond=precond, tol=tol, maxit=maxit)
    raise ValueError(f"unknown pseudoinverse strategy {strategy!r}")


class ObliquePinv:
    """``R_theta^# = (I - W (F W)^+ F) R_theta^+`` and its transpose."""

    def __init__(self, F: LinearOperator, kf: KernelFactorization, pinv):
        self.F = F
        self.kf = kf
        self.pinv = pinv
        self.rt = pinv.rt

    @property
    def rows(self) -> int:
        return self.rt.cols

    @property
    def cols(self) -> int:
        return self.rt.rows

    def apply(self, w) -> np.ndarray:
        z = self.pinv.apply(w)
        if self.kf.kernel_dim:
            z = z - self.kf.W @ self.kf.fw_pinv(self.F.apply(z))
        return z

    def apply_adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.kf.kernel_dim:
            v = v - self.F.apply_adjoint(self.kf.fw_pinv_adjoint(self.kf.W.T @ v))
        return self.pinv.apply_adjoint(v)

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.rows, self.cols, self.apply, self.apply_adjoint, name="R_theta^#")


def oblique_apply(op: ObliquePinv, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (op.cols,):
        raise ValueError(f"expected vector of length {op.cols}, got {w.shape}")
    return op.apply(w)


def oblique_adjoint(op: ObliquePinv, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (op.rows,):
        raise ValueError(f"expected vector of length {op.rows}, got {v.shape}")
    return op.apply_adjoint(v)


def whitened_x_update(
    F,
    rt: WeightedTransform,
    kf: KernelFactorization,
    nu: float,
    y,
    tol: float = 1e-4,
    maxit: int | None = None,
    w0=None,
    pinv=None,
    certify: bool = True,
) -> tuple[np.ndarray, SolveReport]:
    """x-update through the whitened system ``[nu^{-1/2} F R^#; I] w = [nu^{-1/2} y; 0]``.

    ``pinv`` is an applier from :func:`make_pinv`; by default the banded
    strategy is used when the transform has a bandwidth, CG otherwise.
    ``w0`` is the CGLS starting vector, typically ``R_theta x_prev``.

    The whitened residual test alone can pass while the x-space normal
    equations are still far from solved, because ``R^#`` rescales the
    gradient by up to ``max(theta)/min(theta)``. With ``certify`` the
    candidate is accepted only once the relative x-space residual (the
    quantity plain CGLS stops on) is also below ``tol``, or that residual
    stops improving.
    """
    F = aslinearoperator(F)
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    y = np.asarray(y, dtype=np.float64)
    if pinv is None:
        strategy = "banded" if rt.base.bandwidth is not None else "cg"
        pinv = make_pinv(rt, strategy)
    obl = ObliquePinv(F, kf, pinv)
    A = stack_scaled(F @ obl.as_operator(), nu**-0.5, _identity_like(rt.rows), 1.0)
    b = np.concatenate([nu**-0.5 * y, np.zeros(rt.rows)])
    x_ker = x_kernel_component(kf, y)

    def x_residual(w_):
        return normal_equations_residual(F, rt, nu, y, x_ker + obl.apply(w_))

    before = pinv.inner_iterations
    try:
        w, rep = cgls(A, b, x0=w0, tol=tol, maxit=maxit, certify=x_residual if certify else None)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"whitened x-update failed: {exc}") from exc
    x = x_ker + obl.apply(w)
    rep.inner_iterations = pinv.inner_iterations - before
    return x, rep


def _identity_like(n: int) -> LinearOperator:
    return LinearOperator(n, n, lambda v: v, lambda v: v, name=f"I_{n}")


def plain_x_update(
    F,
    R: SparsifyingTransform | WeightedTransform,
    theta,
    nu: float,
    y,
    tol: float = 1e-4,
    maxit: int | None = None,
    x0=None,
) -> tuple[np.ndarray, SolveReport]:
    """x-update by CGLS on ``[nu^{-1/2} F; D_theta^{-1/2} R] x = [nu^{-1/2} y; 0]``."""
    F = aslinearoperator(F)
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    rt = R if isinstance(R, WeightedTransform) else weight(R, theta)
    y = np.asarray(y, dtype=np.float64)
    A = stack_scaled(F, nu**-0.5, rt.R, 1.0)
    b = np.concatenate([nu**-0.5 * y, np.zeros(rt.rows)])
    return cgls(A, b, x0=x0, tol=tol, maxit=maxit)


def normal_equations_residual(F, rt: WeightedTransform, nu: float, y, x) -> float:
    """Relative residual of ``(F^T F / nu + R_theta^T R_theta) x = F^T y / nu``."""
    F = aslinearoperator(F)
    rhs = F.apply_adjoint(y) / nu
    lhs = F.apply_adjoint(F.apply(x)) / nu + rt.apply_adjoint(rt.apply(x))
    ref = np.linalg.norm(rhs)
    return float(np.linalg.norm(lhs - rhs) / ref) if ref > 0 else float(np.linalg.norm(lhs))
