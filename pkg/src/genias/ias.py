"""Objective, block coordinate descent driver and related helpers.

The objective over ``(x, theta, nu)`` is

    G = ||F x - y||^2 / (2 nu) + ||D_theta^{-1/2} R x||^2 / 2
        + (nu / vt~)^r~ + sum_i (theta_i / vt_i)^r
        - eta~ log(nu) - eta sum_i log(theta_i)

on ``theta > 0, nu > 0`` and ``+inf`` elsewhere. With the noise variance held
fixed the ``nu`` terms are dropped. One outer iteration updates ``theta``,
then ``nu`` (when learned), then ``x``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .krylov import SolveReport, SolverError, cgls, dct_preconditioner
from .operators import LinearOperator, aslinearoperator, stack_scaled
from .priorcond import (
    KernelFactorization,
    make_pinv,
    plain_x_update,
    precompute_kernel_qr,
    whitened_x_update,
)
from .transforms import SparsifyingTransform, common_kernel_check, weight
from .updates import (
    HyperPriorSpec,
    NoisePriorSpec,
    nu_lower_bound,
    theta_lower_bound,
    update_nu,
    update_theta,
)

__all__ = [
    "Problem",
    "Priors",
    "IasConfig",
    "IterationRecord",
    "IasState",
    "ConvexityReport",
    "objective",
    "objective_parts",
    "run_ias",
    "stopping_check",
    "tikhonov_init",
    "classify_convexity",
    "dp_residual",
    "relative_changes",
]


@dataclass(frozen=True, eq=False)
class Problem:
    """Linear model ``y = F x + noise`` with sparsifying transform ``R``."""

    F: LinearOperator
    transform: SparsifyingTransform
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", aslinearoperator(self.F))
        y = np.array(self.y, dtype=np.float64, copy=True)
        if y.shape != (self.F.rows,):
            raise ValueError(f"y must have length {self.F.rows}, got {y.shape}")
        if self.F.cols != self.transform.cols:
            raise ValueError("F and R must act on the same space")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.F.cols

    @property
    def M(self) -> int:
        return self.F.rows

    @property
    def K(self) -> int:
        return self.transform.rows


@dataclass(frozen=True)
class Priors:
    """Hyper-prior on ``theta`` and, if the noise variance is learned, on ``nu``."""

    theta: HyperPriorSpec
    noise: NoisePriorSpec | None = None


InitKind = Literal["zeros", "ones", "tikhonov", "custom"]


@dataclass(frozen=True)
class IasConfig:
    eps_ias: float = 1e-3
    eps_cgls: float = 1e-4
    delta_pinv: float = 1e-8
    max_outer: int = 200
    max_inner: int | None = None
    priorconditioned: bool = True
    learn_nu: bool = True
    fixed_nu: float | None = None
    nonneg_projection: bool = False
    init: InitKind = "tikhonov"
    tikhonov_lambda: float = 1.0
    pinv_strategy: Literal["auto", "banded", "cg"] = "auto"
    pinv_tol: float | None = None
    pinv_maxit: int | None = None

    def __post_init__(self):
        for name in ("eps_ias", "eps_cgls", "delta_pinv", "tikhonov_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not self.learn_nu and (self.fixed_nu is None or not self.fixed_nu > 0):
            raise ValueError("fixed_nu must be a positive number when learn_nu is false")
        if self.init not in ("zeros", "ones", "tikhonov", "custom"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.pinv_strategy not in ("auto", "banded", "cg"):
            raise ValueError(f"unknown pinv_strategy {self.pinv_strategy!r}")

    @property
    def inner_pinv_tol(self) -> float:
        """Pseudoinverse CG tolerance, one order tighter than a 1e-4 CGLS by default."""
        return self.pinv_tol if self.pinv_tol is not None else 1e-8 * (self.eps_cgls / 1e-4)


@dataclass(frozen=True)
class IterationRecord:
    outer_iter: int
    objective: float
    nu: float
    inner_iters: int
    pinv_iters: int
    theta_min: float
    theta_max: float
    dtheta: float
    dnu: float
    x_termination: str
    iterate_norm: float


@dataclass
class IasState:
    x: np.ndarray
    theta: np.ndarray
    nu: float
    iteration: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    descent_trace: list[tuple[int, str, float]] = field(default_factory=list)
    termination: str = ""
    wall_time: float = 0.0

    @property
    def total_inner_iterations(self) -> int:
        return sum(h.inner_iters for h in self.history)

    @property
    def objective_history(self) -> list[float]:
        return [h.objective for h in self.history]


@dataclass(frozen=True)
class ConvexityReport:
    regime: Literal["global_strict", "local", "none"]
    theta_threshold: np.ndarray | float | None = None
    nu_threshold: float | None = None


def objective_parts(x, theta, nu, F, R, priors: Priors, y) -> dict[str, float]:
    """Individual terms of the objective (finite inputs assumed)."""
    F = aslinearoperator(F)
    Rop = R.R if isinstance(R, SparsifyingTransform) else aslinearoperator(R)
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    res = F.apply(x) - y
    Rx = Rop.apply(x)
    tp = priors.theta
    vt = tp.vartheta_vector(theta.size)
    parts = {
        "misfit": float(res @ res) / (2.0 * nu),
        "prior": 0.5 * float(np.sum(Rx * Rx / theta)),
        "hyper": float(np.sum((theta / vt) ** tp.r)),
        "log_theta": -tp.eta * float(np.sum(np.log(theta))),
    }
    if priors.noise is not None:
        npr = priors.noise
        parts["noise_hyper"] = (nu / npr.vartheta) ** npr.r
        parts["log_nu"] = -npr.eta * np.log(nu)
    return parts


def objective(x, theta, nu, F, R, priors: Priors, y) -> float:
    """Objective value; ``+inf`` if any ``theta_i <= 0`` or ``nu <= 0``."""
    theta = np.asarray(theta, dtype=np.float64)
    if not nu > 0 or not np.all(theta > 0):
        return np.inf
    return float(sum(objective_parts(x, theta, nu, F, R, priors, y).values()))


def dp_residual(F, x, y, nu: float, tau: float = 1.01) -> float:
    """Discrepancy ``||F x - y||^2 - tau * nu * M``."""
    F = aslinearoperator(F)
    if not nu > 0:
        raise ValueError("nu must be positive")
    res = F.apply(x) - y
    return float(res @ res) - tau * nu * res.size


def relative_changes(theta_prev, theta, nu_prev, nu) -> tuple[float, float]:
    dtheta = float(np.linalg.norm(theta - theta_prev) / np.linalg.norm(theta_prev))
    dnu = abs(nu - nu_prev) / nu_prev
    return dtheta, dnu


def stopping_check(prev: IasState, curr: IasState, eps: float, learn_nu: bool = True) -> bool:
    """Both relative changes of ``theta`` and of ``nu`` below ``eps``."""
    dtheta, dnu = relative_changes(prev.theta, curr.theta, prev.nu, curr.nu)
    return dtheta < eps and (dnu < eps or not learn_nu)


def tikhonov_init(F, R, lam: float, y, tol: float = 1e-6, maxit: int | None = None) -> np.ndarray:
    """``argmin ||F x - y||^2 + lam ||R x||^2`` by CGLS on ``[F; sqrt(lam) R]``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    F = aslinearoperator(F)
    Rop = R.R if isinstance(R, SparsifyingTransform) else aslinearoperator(R)
    A = stack_scaled(F, 1.0, Rop, np.sqrt(lam))
    b = np.concatenate([np.asarray(y, dtype=np.float64), np.zeros(Rop.rows)])
    x, _ = cgls(A, b, tol=tol, maxit=maxit)
    return x


def _local_threshold(vt, r: float, eta: float):
    return vt * (eta / (r * abs(r - 1))) ** (1.0 / r)


def _block_kind(r: float, eta: float) -> str:
    if r >= 1 and eta > 0:
        return "global"
    if (0 < r < 1 and eta > 0) or r < 0:
        return "local"
    return "none"


def classify_convexity(theta_prior: HyperPriorSpec, noise_prior: NoisePriorSpec | None = None) -> ConvexityReport:
    """Convexity regime of the objective for the given hyper-priors.

    ``noise_prior=None`` means a fixed noise variance. Local regimes carry
    the thresholds below which the objective is locally convex.
    """
    tk = _block_kind(theta_prior.r, theta_prior.eta)
    theta_thr = None
    if tk == "local":
        theta_thr = _local_threshold(np.asarray(theta_prior.vartheta, dtype=np.float64), theta_prior.r, theta_prior.eta)
    if noise_prior is None:
        if tk == "global":
            return ConvexityReport("global_strict")
        return ConvexityReport(tk, theta_thr)
    nk = _block_kind(noise_prior.r, noise_prior.eta)
    nu_thr = None
    if nk == "local":
        nu_thr = float(_local_threshold(noise_prior.vartheta, noise_prior.r, noise_prior.eta))
    if tk == "global" and nk == "global":
        return ConvexityReport("global_strict")
    if tk == "local" and nk == "local":
        return ConvexityReport("local", theta_thr, nu_thr)
    return ConvexityReport("none", theta_thr, nu_thr)


class _XUpdater:
    """Holds the theta-independent precomputation for the x-update."""

    def __init__(self, problem: Problem, config: IasConfig):
        self.problem = problem
        self.config = config
        T = problem.transform
        self.kf: KernelFactorization | None = None
        self.strategy = config.pinv_strategy
        if self.strategy == "auto":
            banded = T.bandwidth is not None and T.bandwidth <= 8
            self.strategy = "banded" if banded else "cg"
        self.dct = None
        if config.priorconditioned:
            self.kf = precompute_kernel_qr(problem.F, T.W)
            if self.strategy == "cg" and T.name == "neumann2d" and T.grid is not None:
                self.dct = dct_preconditioner(*T.grid, transform=T)

    def __call__(self, x_prev, theta, nu) -> tuple[np.ndarray, SolveReport]:
        p, cfg = self.problem, self.config
        rt = weight(p.transform, theta)
        if not cfg.priorconditioned:
            return plain_x_update(p.F, rt, theta, nu, p.y, cfg.eps_cgls, cfg.max_inner, x0=x_prev)
        pinv = make_pinv(
            rt,
            self.strategy,
            delta=cfg.delta_pinv,
            precond=self.dct,
            tol=cfg.inner_pinv_tol,
            maxit=cfg.pinv_maxit,
        )
        w0 = rt.apply(x_prev)
        return whitened_x_update(p.F, rt, self.kf, nu, p.y, cfg.eps_cgls, cfg.max_inner, w0=w0, pinv=pinv)


def _initial_x(problem: Problem, config: IasConfig, x0) -> np.ndarray:
    if x0 is not None:
        x = np.array(x0, dtype=np.float64, copy=True)
        if x.shape != (problem.N,):
            raise ValueError(f"initial x must have length {problem.N}")
        return x
    if config.init == "zeros":
        return np.zeros(problem.N)
    if config.init == "ones":
        return np.ones(problem.N)
    if config.init == "tikhonov":
        return tikhonov_init(problem.F, problem.transform, config.tikhonov_lambda, problem.y, tol=config.eps_cgls * 1e-2)
    raise ValueError("init 'custom' requires an explicit x0")


def run_ias(problem: Problem, priors: Priors, config: IasConfig, x0=None) -> IasState:
    """Generalized IAS: alternate exact updates of ``theta``, ``nu`` and ``x``.

    Terminates when the relative changes of ``theta`` and ``nu`` both drop
    below ``eps_ias`` (checked from the second iteration on) or after
    ``max_outer`` iterations.
    """
    if config.learn_nu and priors.noise is None:
        raise ValueError("learning nu requires a noise prior")
    if config.learn_nu and priors.noise.M != problem.M:
        raise ValueError(f"noise prior built for M={priors.noise.M}, problem has M={problem.M}")
    if not common_kernel_check(problem.F, problem.transform):
        raise ValueError("common kernel condition violated")
    noise_prior = priors.noise if config.learn_nu else None
    obj_priors = Priors(priors.theta, noise_prior)

    t0 = time.perf_counter()
    F, T, y = problem.F, problem.transform, problem.y
    x = _initial_x(problem, config, x0)
    update_x = _XUpdater(problem, config)

    def G(x_, th_, nu_):
        return objective(x_, th_, nu_, F, T, obj_priors, y)

    theta_prev = None
    nu_prev = None
    nu = config.fixed_nu if not config.learn_nu else None
    state = IasState(x=x, theta=np.full(problem.K, np.nan), nu=np.nan)
    for k in range(1, config.max_outer + 1):
        theta = update_theta(T.apply(x), priors.theta)
        if nu is not None:
            state.descent_trace.append((k, "theta", G(x, theta, nu)))
        if config.learn_nu:
            nu = update_nu(float(np.linalg.norm(F.apply(x) - y)), priors.noise)
            state.descent_trace.append((k, "nu", G(x, theta, nu)))
        try:
            x, rep = update_x(x, theta, nu)
        except (SolverError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"x-update failed at outer iteration {k}: {exc}") from exc
        if config.nonneg_projection:
            np.maximum(x, 0.0, out=x)
        g = G(x, theta, nu)
        state.descent_trace.append((k, "x", g))

        if theta_prev is None:
            dtheta, dnu = np.inf, np.inf
        else:
            dtheta, dnu = relative_changes(theta_prev, theta, nu_prev, nu)
        state.history.append(
            IterationRecord(
                outer_iter=k,
                objective=g,
                nu=float(nu),
                inner_iters=rep.iterations,
                pinv_iters=rep.inner_iterations,
                theta_min=float(theta.min()),
                theta_max=float(theta.max()),
                dtheta=dtheta,
                dnu=dnu if config.learn_nu else 0.0,
                x_termination=rep.termination,
                iterate_norm=float(np.sqrt(x @ x + theta @ theta + nu * nu)),
            )
        )
        state.x, state.theta, state.nu, state.iteration = x, theta, float(nu), k
        if theta_prev is not None and dtheta < config.eps_ias and (dnu < config.eps_ias or not config.learn_nu):
            state.termination = "converged"
            break
        theta_prev, nu_prev = theta, nu
    else:
        state.termination = "max_outer"
    state.wall_time = time.perf_counter() - t0
    return state


def state_lower_bounds(priors: Priors, K: int) -> tuple[np.ndarray, float | None]:
    nu_lb = nu_lower_bound(priors.noise) if priors.noise is not None else None
    return theta_lower_bound(priors.theta, K), nu_lb
