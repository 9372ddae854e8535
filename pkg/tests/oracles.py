"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, a, b, iters=200):
    """Minimise a unimodal ``f`` on ``[a, b]`` in extended precision."""
    a, b = np.longdouble(a), np.longdouble(b)
    g = np.longdouble(GOLDEN)
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        if b - a <= 1e-17 * max(1.0, abs(a)):
            break
    return (a + b) / 2


def scalar_energy(t, r, eta, vartheta):
    """``u -> t^2 / (2 e^u) + (e^u / vartheta)^r - eta u`` with ``u = log theta``."""
    t, r, eta, vt = (np.longdouble(v) for v in (t, r, eta, vartheta))

    def f(u):
        th = np.exp(u)
        return t * t / (2 * th) + (th / vt) ** r - eta * u

    return f


def golden_minimizer(t, r, eta, vartheta):
    """Minimiser of the scalar energy, found by golden section in ``log theta``.

    The bracket is grown geometrically around ``log vartheta`` until the
    energy rises on both sides.
    """
    f = scalar_energy(t, r, eta, vartheta)
    centre = np.log(np.longdouble(vartheta))
    width = np.longdouble(1.0)
    while True:
        lo, hi = centre - width, centre + width
        grid = np.linspace(lo, hi, 401)
        vals = np.array([f(u) for u in grid])
        k = int(np.argmin(vals))
        if 0 < k < grid.size - 1:
            return float(np.exp(golden_section(f, grid[k - 1], grid[k + 1])))
        width *= 4
        if width > 400:
            raise RuntimeError("no interior minimum found")


def dense_alternating_minimizer(F, R, y, nu, vartheta, eta, tol=1e-11, maxit=50_000):
    """Alternating exact minimisation for ``r = 1`` and fixed ``nu`` using
    dense linear algebra and the quadratic-formula theta update. The
    relative theta change stalls near 1e-12 from rounding, hence ``tol``."""
    F, R, y = (np.asarray(a, dtype=np.float64) for a in (F, R, y))
    x = np.zeros(F.shape[1])
    theta = None
    for _ in range(maxit):
        z = R @ x
        theta_new = 0.5 * vartheta * (eta + np.sqrt(eta * eta + 2 * z * z / vartheta))
        A = F.T @ F / nu + R.T @ (R / theta_new[:, None])
        x = np.linalg.solve(A, F.T @ y / nu)
        if theta is not None and np.linalg.norm(theta_new - theta) <= tol * np.linalg.norm(theta):
            theta = theta_new
            break
        theta = theta_new
    return x, theta
