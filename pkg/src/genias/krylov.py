"""Krylov solvers and pseudoinverse appliers.

``cg`` and ``cgls`` are plain textbook recurrences with explicit stopping
rules. ``pcg_singular`` runs preconditioned CG on a singular symmetric
system with a singular preconditioner ``M^+`` whose column space matches
that of the system matrix; started in ``col(A)`` it converges to ``A^+ b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp

from .operators import LinearOperator
from .transforms import SparsifyingTransform, WeightedTransform, neumann_gradient_2d

__all__ = [
    "SolveReport",
    "SolverError",
    "SpectralPreconditioner",
    "cg",
    "cgls",
    "pcg_singular",
    "pinv_apply",
    "pinv_adjoint_apply",
    "dct_preconditioner",
    "BandedDeltaPinv",
    "banded_delta_pinv",
    "banded_pinv_preconditioner",
    "CGPinv",
]

Applier = Union[LinearOperator, Callable[[np.ndarray], np.ndarray]]

BREAKDOWN_TOL = 1e-14
# Checks without progress after which a certified CGLS solve gives up.
CERTIFY_PATIENCE = 50
# Relative shift that keeps a banded Cholesky of a singular Gram matrix definite
DELTA_ROUNDING_FLOOR = 1e3 * np.finfo(np.float64).eps


class SolverError(RuntimeError):
    pass


@dataclass
class SolveReport:
    iterations: int
    final_relative_residual: float
    termination: str  # "converged" | "max_iter" | "breakdown"
    residual_history: list[float] = field(default_factory=list, repr=False)
    inner_iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


def _as_callable(A: Applier) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(A, LinearOperator):
        return A.apply
    return A


def cg(
    A: Applier,
    b,
    x0=None,
    tol: float = 1e-8,
    maxit: int | None = None,
    precond: Applier | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """(Preconditioned) conjugate gradients for a symmetric PSD ``A``.

    Stops when ``||b - A x|| / ||b|| <= tol``. ``precond`` applies an
    approximation of ``A^{-1}`` (or ``A^+``). ``project``, if given, is the
    orthogonal projector onto ``col(A)`` and is applied to the recursive
    residual to remove rounding drift into ``ker(A)``.
    """
    matvec = _as_callable(A)
    psolve = _as_callable(precond) if precond is not None else None
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    maxit = 10 * n if maxit is None else maxit
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, "converged", [0.0])

    r = b - matvec(x) if np.any(x) else b.copy()
    if project is not None:
        r = project(r)
    res = np.linalg.norm(r) / bnorm
    history = [res]
    if res <= tol:
        return x, SolveReport(0, res, "converged", history)

    z = psolve(r) if psolve else r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxit + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= BREAKDOWN_TOL * (p @ p):
            return x, SolveReport(k - 1, res, "breakdown", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res <= tol:
            return x, SolveReport(k, res, "converged", history)
        z = psolve(r) if psolve else r
        rz_new = r @ z
        if rz_new <= 0.0:
            return x, SolveReport(k, res, "breakdown", history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(maxit, res, "max_iter", history)


def cgls(
    A: LinearOperator,
    b,
    x0=None,
    tol: float = 1e-4,
    maxit: int | None = None,
    certify: Callable[[np.ndarray], float] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """CGLS for ``min ||A x - b||``.

    Stops on the relative normal-equations residual
    ``||A^T (b - A x)|| / ||A^T b|| <= tol``. If ``certify`` is given, an
    iterate passing that test is returned only when ``certify(x) <= tol``
    as well, where ``certify`` evaluates a second residual measure of the
    caller's choosing. Iteration continues otherwise, and stops with
    termination ``"unverified"`` once the certified residual has not dropped
    by 10% over ``CERTIFY_PATIENCE`` checks or rounding stalls CGLS.
    ``residual_history`` of the report tracks ``||b - A x_k||``, which CGLS
    decreases monotonically.
    """
    b = np.asarray(b, dtype=np.float64)
    maxit = 10 * A.cols if maxit is None else maxit
    x = np.zeros(A.cols) if x0 is None else np.array(x0, dtype=np.float64, copy=True)

    ref = np.linalg.norm(A.apply_adjoint(b))
    if ref == 0.0:
        return np.zeros(A.cols), SolveReport(0, 0.0, "converged", [float(np.linalg.norm(b))])

    best, stale = np.inf, 0

    def verdict(k):
        # None: keep iterating; otherwise the termination label
        nonlocal best, stale
        if res > tol:
            return None
        if certify is None:
            return "converged"
        c = certify(x)
        if c <= tol:
            return "converged"
        if c < 0.9 * best:
            best, stale = c, 0
        else:
            stale += 1
        # ||b - A x|| is monotone in exact arithmetic; growth means rounding
        # has taken over and further steps cannot improve the iterate.
        if stale >= CERTIFY_PATIENCE or (k and history[-1] > history[-2]):
            return "unverified"
        return None

    r = b - A.apply(x) if np.any(x) else b.copy()
    s = A.apply_adjoint(r)
    gamma = s @ s
    res = np.sqrt(gamma) / ref
    history = [float(np.linalg.norm(r))]
    if (v := verdict(0)) is not None:
        return x, SolveReport(0, res, v, history)
    p = s.copy()
    for k in range(1, maxit + 1):
        q = A.apply(p)
        qq = q @ q
        if qq <= BREAKDOWN_TOL * (p @ p):
            return x, SolveReport(k - 1, res, "breakdown", history)
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = A.apply_adjoint(r)
        gamma_new = s @ s
        res = np.sqrt(gamma_new) / ref
        history.append(float(np.linalg.norm(r)))
        if (v := verdict(k)) is not None:
            return x, SolveReport(k, res, v, history)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, SolveReport(maxit, res, "max_iter", history)


def pcg_singular(
    A: Applier,
    b,
    pinv_precond: Applier | None = None,
    x0=None,
    tol: float = 1e-8,
    maxit: int | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` for ``x`` in ``col(A)`` with a singular preconditioner.

    Contract (not checked): ``A`` and ``pinv_precond`` are symmetric PSD with
    the same column space, ``b`` and ``x0`` lie in ``col(A)``. The iterate
    then stays in ``col(A)`` and converges to ``A^+ b``. A start outside
    ``col(A)`` shows up as residual stagnation.
    """
    return cg(A, b, x0=x0, tol=tol, maxit=maxit, precond=pinv_precond, project=project)


@dataclass(frozen=True, eq=False)
class SpectralPreconditioner:
    """``M^+ = B^T Lambda^+ B`` for the unweighted 2D Neumann Laplacian ``R^T R``.

    ``B`` is the orthonormal type-II 2D DCT.
    """

    N1: int
    N2: int
    eigenvalues: np.ndarray
    pseudo_eigenvalues: np.ndarray

    def apply(self, v) -> np.ndarray:
        V = np.asarray(v, dtype=np.float64).reshape(self.N1, self.N2)
        C = scipy.fft.dctn(V, type=2, norm="ortho")
        C *= self.pseudo_eigenvalues
        return scipy.fft.idctn(C, type=2, norm="ortho").ravel()

    __call__ = apply

    def apply_gram(self, v) -> np.ndarray:
        """``B^T Lambda B v``, i.e. ``R^T R v`` through the spectral factorization."""
        V = np.asarray(v, dtype=np.float64).reshape(self.N1, self.N2)
        C = scipy.fft.dctn(V, type=2, norm="ortho")
        C *= self.eigenvalues
        return scipy.fft.idctn(C, type=2, norm="ortho").ravel()


def dct_preconditioner(N1: int, N2: int, transform: SparsifyingTransform | None = None) -> SpectralPreconditioner:
    """Eigenvalues of ``R^T R`` by probing with the DCT.

    With ``v`` all ones, ``Lambda = (B R^T R B^T v) / v`` componentwise.
    Values at rounding level are set to exactly zero.
    """
    if N1 < 2 or N2 < 2:
        raise ValueError("grid must be at least 2x2")
    R = (transform or neumann_gradient_2d(N1, N2)).matrix
    probe = np.ones((N1, N2))
    u = scipy.fft.idctn(probe, type=2, norm="ortho").ravel()
    Mu = R.T @ (R @ u)
    lam = scipy.fft.dctn(Mu.reshape(N1, N2), type=2, norm="ortho") / probe
    lam[np.abs(lam) <= 1e-12 * np.abs(lam).max()] = 0.0
    lam = np.maximum(lam, 0.0)
    lam_pinv = np.zeros_like(lam)
    pos = lam > 0
    lam_pinv[pos] = 1.0 / lam[pos]
    lam.setflags(write=False)
    lam_pinv.setflags(write=False)
    return SpectralPreconditioner(N1, N2, lam, lam_pinv)


def _gram_operator(rt: WeightedTransform) -> Callable[[np.ndarray], np.ndarray]:
    G = rt.gram()
    return G.dot


def _kernel_projector(W: np.ndarray) -> Callable[[np.ndarray], np.ndarray] | None:
    """``v -> (I - W W^T) v``, or None for a trivial kernel."""
    if W.shape[1] == 0:
        return None
    return lambda v: v - W @ (W.T @ v)


def pinv_apply(
    rt: WeightedTransform,
    v,
    precond: Applier | None = None,
    tol: float = 1e-8,
    maxit: int | None = None,
    reports: list | None = None,
) -> np.ndarray:
    """``R_theta^+ v`` via CG on ``R_theta^T R_theta z = R_theta^T v`` from ``z = 0``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (rt.rows,):
        raise ValueError(f"expected vector of length {rt.rows}, got {v.shape}")
    b = rt.apply_adjoint(v)
    z, rep = pcg_singular(_gram_operator(rt), b, precond, None, tol, maxit, _kernel_projector(rt.W))
    if reports is not None:
        reports.append(rep)
    return z


def pinv_adjoint_apply(
    rt: WeightedTransform,
    v,
    W: np.ndarray | None = None,
    precond: Applier | None = None,
    tol: float = 1e-8,
    maxit: int | None = None,
    reports: list | None = None,
) -> np.ndarray:
    """``(R_theta^+)^T v = R_theta u`` with ``R_theta^T R_theta u = (I - W W^T) v``.

    Reuses the same system (and preconditioner) as :func:`pinv_apply`.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (rt.cols,):
        raise ValueError(f"expected vector of length {rt.cols}, got {v.shape}")
    W = rt.W if W is None else W
    project = _kernel_projector(W)
    b = project(v) if project else v
    u, rep = pcg_singular(_gram_operator(rt), b, precond, None, tol, maxit, project)
    if reports is not None:
        reports.append(rep)
    return rt.apply(u)


class CGPinv:
    """Pseudoinverse applier for a weighted transform backed by singular PCG."""

    def __init__(
        self,
        rt: WeightedTransform,
        precond: Applier | None = None,
        tol: float = 1e-8,
        maxit: int | None = None,
    ):
        self.rt = rt
        self.precond = precond
        self.tol = tol
        self.maxit = maxit
        self._gram = _gram_operator(rt)
        self._project = _kernel_projector(rt.W)
        self.reports: list[SolveReport] = []

    @property
    def inner_iterations(self) -> int:
        return sum(r.iterations for r in self.reports)

    def apply(self, v) -> np.ndarray:
        b = self.rt.apply_adjoint(v)
        z, rep = pcg_singular(self._gram, b, self.precond, None, self.tol, self.maxit, self._project)
        self.reports.append(rep)
        return z

    def apply_adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        b = self._project(v) if self._project else v
        u, rep = pcg_singular(self._gram, b, self.precond, None, self.tol, self.maxit, self._project)
        self.reports.append(rep)
        return self.rt.apply(u)


class BandedDeltaPinv:
    """``R_theta^+ ~ (R_theta^T R_theta + delta I)^{-1} R_theta^T`` via banded Cholesky.

    ``delta`` is raised to ``DELTA_ROUNDING_FLOOR * max(diag(R_theta^T R_theta))``
    when smaller, since a shift below the rounding level of the Gram matrix
    does not keep the factorization positive definite. The shift actually
    used is ``delta_used``.
    """

    def __init__(self, rt: WeightedTransform, delta: float):
        if rt.base.bandwidth is None:
            raise ValueError("transform has no banded Gram matrix")
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.rt = rt
        self.delta = float(delta)
        p = rt.base.bandwidth
        gram = rt.gram()
        # below this shift the singular Gram matrix is indefinite in floating point
        floor = DELTA_ROUNDING_FLOOR * float(np.abs(gram.diagonal()).max(initial=0.0))
        self.delta_used = max(self.delta, floor)
        G = (gram + self.delta_used * sp.identity(rt.cols)).todia()
        n = rt.cols
        ab = np.zeros((p + 1, n))
        for off, row in zip(G.offsets, G.data):
            if 0 <= off <= p:
                # dia storage: row[j] holds G[j - off, j]
                ab[p - off, off:] = row[off:]
            elif off > p or off < -p:
                if np.any(row):
                    raise ValueError("Gram matrix exceeds declared bandwidth")
        try:
            self._factor = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"banded Cholesky failed: {exc}") from exc
        self.reports: list[SolveReport] = []

    @property
    def bandwidth(self) -> int:
        return self.rt.base.bandwidth

    @property
    def inner_iterations(self) -> int:
        return 0

    def _solve(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve_banded((self._factor, False), v, check_finite=False)

    def apply(self, v) -> np.ndarray:
        # exact solutions lie in col(R^T); rounding leaks kernel components scaled by 1/delta
        z = self._solve(self.rt.apply_adjoint(v))
        W = self.rt.W
        return z - W @ (W.T @ z) if W.shape[1] else z

    def apply_adjoint(self, v) -> np.ndarray:
        return self.rt.apply(self._solve(np.asarray(v, dtype=np.float64)))


def banded_delta_pinv(rt: WeightedTransform, delta: float) -> BandedDeltaPinv:
    return BandedDeltaPinv(rt, delta)


def banded_pinv_preconditioner(rt: WeightedTransform, delta: float = 1e-8) -> Callable[[np.ndarray], np.ndarray]:
    """``P (R_theta^T R_theta + delta I)^{-1} P`` with ``P = I - W W^T``.

    A singular preconditioner for the restricted CG whose column space is
    ``col(R^T)``; with small ``delta`` it is nearly the exact pseudoinverse,
    so PCG converges in a handful of steps.
    """
    fac = BandedDeltaPinv(rt, delta)
    W = rt.W

    def project(v):
        return v - W @ (W.T @ v) if W.shape[1] else v

    return lambda v: project(fac._solve(project(np.asarray(v, dtype=np.float64))))
