"""Numerical checks of descent, stationarity, boundedness and local convexity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ias import IasState, Priors, Problem
from .operators import to_dense
from .priorcond import normal_equations_residual
from .transforms import weight
from .updates import update_nu, update_theta

__all__ = [
    "CoordinateResiduals",
    "check_coordinatewise_minimizer",
    "descent_violations",
    "block_descent_violations",
    "max_iterate_norm",
    "check_hessian_psd",
    "numerical_hessian",
]


@dataclass(frozen=True)
class CoordinateResiduals:
    theta: float
    nu: float | None
    x: float

    def max(self) -> float:
        vals = [self.theta, self.x] + ([self.nu] if self.nu is not None else [])
        return max(vals)


def check_coordinatewise_minimizer(
    state: IasState, problem: Problem, priors: Priors, learn_nu: bool = True
) -> CoordinateResiduals:
    """Relative block-optimality residuals at ``(x, theta, nu)``.

    ``theta``: ``||theta - update_theta(R x)|| / ||theta||``;
    ``nu``: ``|nu - update_nu(||F x - y||)| / nu`` (None for fixed ``nu``);
    ``x``: relative residual of the x-update normal equations.
    """
    x, theta, nu = state.x, state.theta, state.nu
    T, F, y = problem.transform, problem.F, problem.y
    th_opt = update_theta(T.apply(x), priors.theta)
    r_theta = float(np.linalg.norm(theta - th_opt) / np.linalg.norm(theta))
    r_nu = None
    if learn_nu and priors.noise is not None:
        nu_opt = update_nu(float(np.linalg.norm(F.apply(x) - y)), priors.noise)
        r_nu = abs(nu - nu_opt) / nu
    r_x = normal_equations_residual(F, weight(T, theta), nu, y, x)
    return CoordinateResiduals(r_theta, r_nu, r_x)


def descent_violations(objectives, slack: float) -> list[int]:
    """Indices ``k`` with ``G_k > G_{k-1} + slack |G_{k-1}|``."""
    g = np.asarray(objectives, dtype=np.float64)
    bad = g[1:] > g[:-1] + slack * np.abs(g[:-1])
    return [int(k) + 1 for k in np.flatnonzero(bad)]


def block_descent_violations(state: IasState, slack: float) -> list[int]:
    """Same test over the per-block trace (after each theta, nu and x update)."""
    return descent_violations([g for _, _, g in state.descent_trace], slack)


def max_iterate_norm(state: IasState) -> float:
    return max(h.iterate_norm for h in state.history)


def _objective_ld(z, Fd, Rd, y, priors: Priors, N: int, K: int, learn_nu: bool, fixed_nu):
    """Objective in extended precision on a dense problem; ``z = [x, theta, (nu)]``."""
    ld = np.longdouble
    x = z[:N]
    theta = z[N : N + K]
    nu = z[N + K] if learn_nu else ld(fixed_nu)
    if nu <= 0 or np.any(theta <= 0):
        return ld(np.inf)
    res = Fd @ x - y
    Rx = Rd @ x
    tp = priors.theta
    vt = np.asarray(tp.vartheta_vector(K), dtype=ld)
    g = (res @ res) / (2 * nu) + ld(0.5) * np.sum(Rx * Rx / theta)
    g += np.sum((theta / vt) ** ld(tp.r)) - ld(tp.eta) * np.sum(np.log(theta))
    if learn_nu:
        npr = priors.noise
        g += (nu / ld(npr.vartheta)) ** ld(npr.r) - ld(npr.eta) * np.log(nu)
    return g


def numerical_hessian(f, z: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Hessian of ``f`` at ``z`` with per-coordinate steps."""
    n = z.size
    H = np.zeros((n, n), dtype=z.dtype)
    f0 = f(z)
    for i in range(n):
        ei = np.zeros(n, dtype=z.dtype)
        ei[i] = steps[i]
        H[i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / (steps[i] * steps[i])
        for j in range(i):
            ej = np.zeros(n, dtype=z.dtype)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)
            ) / (4 * steps[i] * steps[j])
    return H


def check_hessian_psd(
    point: tuple, problem: Problem, priors: Priors, learn_nu: bool = True, fixed_nu: float | None = None,
    rel_step: float = 1e-5,
) -> float:
    """Smallest eigenvalue of the finite-difference Hessian of the objective.

    ``point`` is ``(x, theta, nu)``. The objective is evaluated in extended
    precision so that rounding stays well below the curvature being tested.
    Steps are ``rel_step * max(|z_i|, 1)`` for ``x`` and ``rel_step * z_i``
    for the positive variables. Intended for small dense problems.
    """
    x, theta, nu = point
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta <= 0) or (learn_nu and not nu > 0):
        raise ValueError("point outside the domain: theta and nu must be positive")
    if not learn_nu and fixed_nu is None:
        fixed_nu = nu
    ld = np.longdouble
    N, K = x.size, theta.size
    Fd = to_dense(problem.F).astype(ld)
    Rd = problem.transform.matrix.toarray().astype(ld)
    y = problem.y.astype(ld)
    parts = [x, theta] + ([np.array([nu])] if learn_nu else [])
    z = np.concatenate(parts).astype(ld)
    steps = np.concatenate(
        [rel_step * np.maximum(np.abs(x), 1.0), rel_step * theta] + ([np.array([rel_step * nu])] if learn_nu else [])
    ).astype(ld)

    def f(v):
        return _objective_ld(v, Fd, Rd, y, priors, N, K, learn_nu, fixed_nu)

    H = numerical_hessian(f, z, steps).astype(np.float64)
    return float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())
