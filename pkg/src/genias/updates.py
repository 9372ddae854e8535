"""Coordinate updates for the prior variances ``theta`` and the noise variance ``nu``.

Both blocks minimise a scalar function of the form

    g(v) = s^2 / (2 v) + (v / c)^r - eta * log(v),    v > 0,

with ``c`` the scale parameter. Writing ``v = c * phi(s / sqrt(c))``, the
stationarity condition becomes ``r phi^(r+1) - eta phi - t^2 / 2 = 0``;
differentiating in ``t`` gives the initial value problem

    phi'(t) = 2 t phi / (2 r^2 phi^(r+1) + t^2),   phi(0) = (eta / r)^(1/r).

For ``r = 1`` and ``r = -1`` the condition is a quadratic (resp. linear)
equation and is solved in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "InadmissiblePrior",
    "HyperPriorSpec",
    "NoisePriorSpec",
    "phi_solve",
    "update_theta",
    "theta_lower_bound",
    "update_nu",
    "nu_lower_bound",
]

ODE_RTOL = 1e-8
ODE_ATOL = 1e-10


class InadmissiblePrior(ValueError):
    pass


def _check_regime(r: float, eta: float, negative_cut: float, label: str) -> None:
    if r == 0:
        raise InadmissiblePrior(f"{label}: r must be nonzero")
    if r > 0 and not eta > 0:
        raise InadmissiblePrior(f"{label}: r > 0 requires eta > 0, got eta = {eta}")
    if r < 0 and not eta < negative_cut:
        raise InadmissiblePrior(f"{label}: r < 0 requires eta < {negative_cut}, got eta = {eta}")


@dataclass(frozen=True)
class HyperPriorSpec:
    """Generalized gamma hyper-prior ``GG(r, beta, vartheta)`` on each ``theta_i``.

    ``vartheta`` may be a scalar (broadcast) or a vector of length ``K``.
    """

    r: float
    beta: float
    vartheta: float | np.ndarray

    def __post_init__(self):
        if not self.beta > 0:
            raise InadmissiblePrior(f"beta must be positive, got {self.beta}")
        vt = np.asarray(self.vartheta, dtype=np.float64)
        if not np.all(vt > 0):
            raise InadmissiblePrior("vartheta must be positive")
        if vt.ndim:
            vt = vt.copy()
            vt.setflags(write=False)
            object.__setattr__(self, "vartheta", vt)
        else:
            object.__setattr__(self, "vartheta", float(vt))
        _check_regime(self.r, self.eta, -1.5, "theta prior")

    @property
    def eta(self) -> float:
        return self.r * self.beta - 1.5

    def vartheta_vector(self, K: int) -> np.ndarray:
        vt = np.broadcast_to(np.asarray(self.vartheta, dtype=np.float64), (K,))
        return np.array(vt)


@dataclass(frozen=True)
class NoisePriorSpec:
    """Generalized gamma hyper-prior ``GG(r~, beta~, vartheta~)`` on ``nu`` for ``M`` observations."""

    r: float
    beta: float
    vartheta: float
    M: int

    def __post_init__(self):
        if not self.beta > 0:
            raise InadmissiblePrior(f"beta must be positive, got {self.beta}")
        if not self.vartheta > 0:
            raise InadmissiblePrior(f"vartheta must be positive, got {self.vartheta}")
        if self.M < 1:
            raise InadmissiblePrior(f"M must be positive, got {self.M}")
        _check_regime(self.r, self.eta, -(self.M + 2) / 2, "noise prior")

    @property
    def eta(self) -> float:
        return self.r * self.beta - (self.M + 2) / 2


def _phi0(r: float, eta: float) -> float:
    return (eta / r) ** (1.0 / r)


def phi_solve(t_values, r: float, eta: float) -> np.ndarray:
    """Integrate the ``phi`` initial value problem once over sorted ``t_values``.

    Uses adaptive RK45 (rtol 1e-8, atol 1e-10). The result is floored at
    ``phi(0)``, which is the lower bound of the solution.
    """
    _check_regime(r, eta, -np.inf if r > 0 else -1.5, "phi")
    t = np.asarray(t_values, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("t_values must be one-dimensional")
    if np.any(t < 0):
        raise ValueError("t_values must be nonnegative")
    if np.any(np.diff(t) < 0):
        raise ValueError("t_values must be sorted ascending")
    phi0 = _phi0(r, eta)
    out = np.full(t.shape, phi0)
    if t.size == 0 or t[-1] == 0.0:
        return out

    def rhs(s, phi):
        return 2.0 * s * phi / (2.0 * r * r * phi ** (r + 1) + s * s)

    ts, inverse = np.unique(t, return_inverse=True)
    sol = solve_ivp(
        rhs,
        (0.0, ts[-1]),
        [phi0],
        method="RK45",
        t_eval=ts,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    if not sol.success:
        raise RuntimeError(f"phi ODE integration failed: {sol.message}")
    vals = np.maximum(sol.y[0], phi0)
    return vals[inverse]


def _closed_form(s2: np.ndarray, c, r: float, eta: float) -> np.ndarray:
    if r == 1:
        return 0.5 * c * (eta + np.sqrt(eta * eta + 2.0 * s2 / c))
    # r == -1
    return (0.5 * s2 + c) / abs(eta)


def _sorted_phi(t: np.ndarray, r: float, eta: float) -> np.ndarray:
    order = np.argsort(t, kind="stable")
    phi = np.empty_like(t)
    phi[order] = phi_solve(t[order], r, eta)
    return phi


def theta_lower_bound(prior: HyperPriorSpec, K: int | None = None) -> np.ndarray:
    """``vartheta_i (eta / r)^(1/r)``, a lower bound on every optimal ``theta_i``."""
    vt = np.asarray(prior.vartheta, dtype=np.float64)
    if K is not None:
        vt = np.broadcast_to(vt, (K,))
    return vt * _phi0(prior.r, prior.eta)


def update_theta(Rx, prior: HyperPriorSpec) -> np.ndarray:
    """Componentwise minimiser of the objective over ``theta`` for fixed ``R x``."""
    z = np.abs(np.asarray(Rx, dtype=np.float64))
    vt = prior.vartheta_vector(z.size)
    r, eta = prior.r, prior.eta
    if r in (1, -1):
        theta = _closed_form(z * z, vt, r, eta)
    else:
        theta = vt * _sorted_phi(z / np.sqrt(vt), r, eta)
    return np.maximum(theta, vt * _phi0(r, eta))


def nu_lower_bound(prior: NoisePriorSpec) -> float:
    return prior.vartheta * _phi0(prior.r, prior.eta)


def update_nu(residual_norm: float, prior: NoisePriorSpec) -> float:
    """Minimiser of the objective over ``nu`` given ``s = ||F x - y||``."""
    s = float(residual_norm)
    if s < 0 or not np.isfinite(s):
        raise ValueError(f"residual norm must be finite and nonnegative, got {s}")
    r, eta, c = prior.r, prior.eta, prior.vartheta
    if r in (1, -1):
        nu = float(_closed_form(np.array(s * s), c, r, eta))
    else:
        nu = c * float(phi_solve(np.array([s / np.sqrt(c)]), r, eta)[0])
    return max(nu, nu_lower_bound(prior))
