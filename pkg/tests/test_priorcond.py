import numpy as np
import pytest
import scipy.sparse as sp

from genias.krylov import dct_preconditioner
from genias.operators import from_matrix, identity, to_dense
from genias.priorcond import (
    CommonKernelError,
    ObliquePinv,
    make_pinv,
    normal_equations_residual,
    oblique_adjoint,
    oblique_apply,
    plain_x_update,
    precompute_kernel_qr,
    whitened_x_update,
    x_kernel_component,
)
from genias.transforms import (
    SparsifyingTransform,
    derivative_operator,
    identity_transform,
    neumann_gradient_2d,
    weight,
)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def _dense_x(F, rt, nu, y):
    Fd = to_dense(F)
    Rd = rt.matrix().toarray()
    return np.linalg.solve(Fd.T @ Fd / nu + Rd.T @ Rd, Fd.T @ y / nu)


class TestKernelQR:
    def test_identity_forward(self):
        N = 6
        W = np.full((N, 1), 1 / np.sqrt(N))
        kf = precompute_kernel_qr(identity(N), W)
        np.testing.assert_allclose(np.abs(kf.Q), W, rtol=1e-14)
        assert abs(kf.R[0, 0]) == pytest.approx(1.0)

    def test_reconstruction(self):
        rng = np.random.default_rng(0)
        F = rng.standard_normal((9, 12))
        W = derivative_operator(3, 12).W
        kf = precompute_kernel_qr(from_matrix(F), W)
        assert np.abs(kf.Q @ kf.R - F @ W).max() <= 1e-10

    def test_annihilated_kernel(self):
        T = derivative_operator(1, 8)
        with pytest.raises(CommonKernelError):
            precompute_kernel_qr(T.R, T.W)


class TestKernelComponent:
    def test_mean(self):
        T = derivative_operator(1, 7)
        y = np.arange(7.0) ** 2
        kf = precompute_kernel_qr(identity(7), T.W)
        np.testing.assert_allclose(x_kernel_component(kf, y), np.full(7, y.mean()), rtol=1e-13)

    def test_zero(self):
        kf = precompute_kernel_qr(identity(5), derivative_operator(2, 5).W)
        assert not x_kernel_component(kf, np.zeros(5)).any()

    def test_in_kernel(self):
        rng = np.random.default_rng(1)
        T = derivative_operator(3, 20)
        kf = precompute_kernel_qr(from_matrix(rng.standard_normal((15, 20))), T.W)
        xk = x_kernel_component(kf, rng.standard_normal(15))
        assert np.linalg.norm(T.apply(xk)) <= 1e-10 * np.linalg.norm(xk)


class TestOblique:
    def _dense_oblique(self, F, rt):
        Fd = to_dense(F)
        W = rt.W
        Rp = np.linalg.pinv(rt.matrix().toarray(), rcond=1e-13)
        P = np.eye(Fd.shape[1]) - W @ np.linalg.pinv(Fd @ W) @ Fd if W.shape[1] else np.eye(Fd.shape[1])
        return P @ Rp

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_dense_assembly(self, order):
        rng = np.random.default_rng(order)
        T = derivative_operator(order, 14)
        F = from_matrix(rng.standard_normal((10, 14)))
        rt = weight(T, rng.uniform(0.5, 4, T.rows))
        op = ObliquePinv(F, precompute_kernel_qr(F, T.W), make_pinv(rt, "cg", tol=1e-14))
        D = self._dense_oblique(F, rt)
        w, v = rng.standard_normal(T.rows), rng.standard_normal(14)
        assert _rel(oblique_apply(op, w), D @ w) <= 1e-8
        assert _rel(oblique_adjoint(op, v), D.T @ v) <= 1e-8

    def test_invertible_transform(self):
        rng = np.random.default_rng(5)
        T = identity_transform(6)
        F = from_matrix(rng.standard_normal((4, 6)))
        theta = rng.uniform(1, 3, 6)
        rt = weight(T, theta)
        op = ObliquePinv(F, precompute_kernel_qr(F, T.W), make_pinv(rt, "banded", delta=1e-14))
        w = rng.standard_normal(6)
        np.testing.assert_allclose(op.apply(w), np.sqrt(theta) * w, rtol=1e-10)

    def test_full_column_rank_transform(self):
        rng = np.random.default_rng(6)
        M = sp.csr_matrix(rng.standard_normal((9, 5)))
        T = SparsifyingTransform(M, np.zeros((5, 0)), name="tall")
        F = from_matrix(rng.standard_normal((3, 5)))
        rt = weight(T, np.ones(9))
        op = ObliquePinv(F, precompute_kernel_qr(F, T.W), make_pinv(rt, "cg", tol=1e-14))
        w = rng.standard_normal(9)
        assert _rel(op.apply(w), np.linalg.pinv(M.toarray()) @ w) <= 1e-8

    def test_shape_checks(self):
        T = derivative_operator(1, 5)
        rt = weight(T, np.ones(4))
        op = ObliquePinv(identity(5), precompute_kernel_qr(identity(5), T.W), make_pinv(rt))
        with pytest.raises(ValueError):
            oblique_apply(op, np.ones(5))
        with pytest.raises(ValueError):
            oblique_adjoint(op, np.ones(4))


def _problem(kind, rng):
    if kind == "neumann2d":
        T = neumann_gradient_2d(6, 7)
    else:
        T = derivative_operator(int(kind[1]), 40)
    N = T.cols
    F = from_matrix(rng.standard_normal((N - 5, N)) / np.sqrt(N))
    x = rng.standard_normal(N).cumsum()
    y = F.apply(x) + 0.01 * rng.standard_normal(F.rows)
    theta = rng.uniform(0.1, 10, T.rows)
    return T, F, y, theta


class TestXUpdates:
    def test_identity_tikhonov(self):
        rng = np.random.default_rng(0)
        T = identity_transform(10)
        y = rng.standard_normal(10)
        rt = weight(T, np.ones(10))
        kf = precompute_kernel_qr(identity(10), T.W)
        xw, _ = whitened_x_update(identity(10), rt, kf, 1.0, y, tol=1e-12, pinv=make_pinv(rt, "banded", delta=1e-15))
        xp, _ = plain_x_update(identity(10), T, np.ones(10), 1.0, y, tol=1e-12)
        np.testing.assert_allclose(xw, y / 2, rtol=1e-8)
        np.testing.assert_allclose(xp, y / 2, rtol=1e-8)

    @pytest.mark.parametrize("kind", ["d1", "d2", "d3", "neumann2d"])
    def test_whitened_matches_dense(self, kind):
        rng = np.random.default_rng(["d1", "d2", "d3", "neumann2d"].index(kind))
        T, F, y, theta = _problem(kind, rng)
        rt = weight(T, theta)
        kf = precompute_kernel_qr(F, T.W)
        strategy = "banded" if T.bandwidth <= 8 else "cg"
        pinv = make_pinv(rt, strategy, delta=1e-10, tol=1e-13)
        x, rep = whitened_x_update(F, rt, kf, 0.5, y, tol=1e-12, pinv=pinv)
        assert _rel(x, _dense_x(F, rt, 0.5, y)) <= 1e-6
        assert normal_equations_residual(F, rt, 0.5, y, x) <= 1e-6

    def test_denoising_r1_agrees_with_plain(self):
        rng = np.random.default_rng(2)
        T = derivative_operator(1, 50)
        y = np.repeat([0.0, 3.0], 25) + 0.1 * rng.standard_normal(50)
        theta = rng.uniform(0.01, 1, 49)
        rt = weight(T, theta)
        kf = precompute_kernel_qr(identity(50), T.W)
        xw, _ = whitened_x_update(identity(50), rt, kf, 0.01, y, tol=1e-10)
        xp, _ = plain_x_update(identity(50), T, theta, 0.01, y, tol=1e-10)
        assert _rel(xw, xp) <= 1e-6

    def test_large_noise_limit_is_kernel_component(self):
        T = derivative_operator(2, 30)
        F = identity(30)
        y = 2.0 + 0.5 * np.linspace(-1, 1, 30)
        rt = weight(T, np.ones(28))
        kf = precompute_kernel_qr(F, T.W)
        x, _ = whitened_x_update(F, rt, kf, 1e6, y, tol=1e-12)
        np.testing.assert_allclose(x, x_kernel_component(kf, y), atol=1e-6)

    def test_plain_unregularised_limit(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((8, 8)) + 4 * np.eye(8)
        y = rng.standard_normal(8)
        x, _ = plain_x_update(from_matrix(A), derivative_operator(1, 8), np.full(7, 1e12), 1.0, y, tol=1e-14)
        assert _rel(x, np.linalg.solve(A, y)) <= 1e-6

    def test_plain_dense(self):
        rng = np.random.default_rng(4)
        T, F, y, theta = _problem("d2", rng)
        x, _ = plain_x_update(F, T, theta, 2.0, y, tol=1e-13)
        assert _rel(x, _dense_x(F, weight(T, theta), 2.0, y)) <= 1e-8

    def test_joint_rescaling_invariance(self):
        rng = np.random.default_rng(5)
        T, F, y, theta = _problem("d1", rng)
        a, _ = plain_x_update(F, T, theta, 0.3, y, tol=1e-13)
        b, _ = plain_x_update(F, T, 7 * theta, 2.1, y, tol=1e-13)
        assert _rel(b, a) <= 1e-8

    def test_dct_preconditioned_pinv(self):
        rng = np.random.default_rng(6)
        T, F, y, theta = _problem("neumann2d", rng)
        rt = weight(T, theta)
        kf = precompute_kernel_qr(F, T.W)
        pinv = make_pinv(rt, "cg", precond=dct_preconditioner(6, 7), tol=1e-13)
        x, rep = whitened_x_update(F, rt, kf, 0.5, y, tol=1e-12, pinv=pinv)
        assert rep.inner_iterations > 0
        assert _rel(x, _dense_x(F, rt, 0.5, y)) <= 1e-6

    def test_rejects_nonpositive_nu(self):
        T = derivative_operator(1, 5)
        with pytest.raises(ValueError):
            plain_x_update(identity(5), T, np.ones(4), 0.0, np.ones(5))

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            make_pinv(weight(derivative_operator(1, 5), np.ones(4)), "svd")
