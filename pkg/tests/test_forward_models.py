import numpy as np
import pytest

from genias.forward_models import (
    SynthesisSpec,
    block_average,
    ct_noise_variance,
    piecewise_function,
    piecewise_signal,
    radon_matrix,
    radon_parallel,
    read_csv_vector,
    read_pgm,
    shepp_logan,
    synthesize_data,
    write_csv_vector,
    write_pgm,
)
from genias.operators import identity


def _clip_length(p0, d, lo, hi):
    """Liang-Barsky chord length of the line p0 + t d through a box."""
    t0, t1 = -np.inf, np.inf
    for k in range(2):
        if abs(d[k]) < 1e-15:
            if not lo[k] < p0[k] < hi[k]:
                return 0.0
            continue
        a, b = (lo[k] - p0[k]) / d[k], (hi[k] - p0[k]) / d[k]
        t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
    return max(t1 - t0, 0.0)


class TestPiecewise:
    def test_values(self):
        assert piecewise_function(0.0) == 0.0
        assert piecewise_function(0.5) == pytest.approx(62.5, abs=1e-12)

    def test_jump_at_07(self):
        eps = 1e-12
        jump = piecewise_function(0.7) - piecewise_function(0.7 - eps)
        assert jump == pytest.approx(70.0, abs=1e-6)

    def test_sampling(self):
        s = piecewise_signal(1000)
        assert s.shape == (1000,) and s[0] == 0.0 and s[-1] == pytest.approx(145.0)


class TestSheppLogan:
    def test_corners_zero_and_range(self):
        P = shepp_logan(64)
        assert P[0, 0] == P[-1, -1] == P[0, -1] == P[-1, 0] == 0.0
        assert P.min() >= 0.0 and P.max() <= 1.0

    def test_centre_value(self):
        # centre lies in the outer ellipse (1.0), the brain (-0.8); every
        # other ellipse misses it, so the value is 0.2
        P = shepp_logan(65)
        assert P[32, 32] == pytest.approx(0.2)

    def test_refinement_consistency(self):
        coarse, fine = shepp_logan(64), shepp_logan(128)
        assert np.mean(np.abs(block_average(fine, 2) - coarse)) <= 0.05

    def test_too_small(self):
        with pytest.raises(ValueError):
            shepp_logan(8)


class TestRadon:
    def test_column_sums_vs_clipping_oracle(self):
        n, P, Q = 8, 13, 7
        A = radon_matrix(n, P, Q).toarray()
        span = np.sqrt(2.0) * n
        offsets = -span / 2 + (np.arange(P) + 0.5) * span / P
        for q in range(Q):
            th = q * np.pi / Q
            d = np.array([-np.sin(th), np.cos(th)])
            e = np.array([np.cos(th), np.sin(th)])
            for j, s in enumerate(offsets):
                row = A[q * P + j]
                for pix in np.flatnonzero(row > 1e-12)[:5]:
                    r, c = divmod(pix, n)
                    lo = np.array([-n / 2 + c, n / 2 - r - 1])
                    hi = lo + 1.0
                    assert row[pix] == pytest.approx(_clip_length(s * e, d, lo, hi), abs=1e-10)
                total = _clip_length(s * e, d, np.array([-n / 2, -n / 2]), np.array([n / 2, n / 2]))
                assert row.sum() == pytest.approx(total, abs=1e-10)

    def test_vertical_ray_constant_image(self):
        n, P = 10, 14
        A = radon_matrix(n, P, 1)
        proj = A @ np.ones(n * n)
        inside = np.abs(-np.sqrt(2) * n / 2 + (np.arange(P) + 0.5) * np.sqrt(2) * n / P) < n / 2
        np.testing.assert_allclose(proj[inside], n * 1.0, rtol=1e-12)
        np.testing.assert_array_equal(proj[~inside], 0.0)

    def test_adjoint(self):
        F = radon_parallel(16, 23, 9)
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal(256), rng.standard_normal(23 * 9)
        a, b = F.apply(x) @ y, x @ F.apply_adjoint(y)
        assert abs(a - b) <= 1e-10 * abs(a)

    def test_point_traces_sinusoid(self):
        n, P, Q = 32, 45, 60
        img = np.zeros((n, n))
        img[8, 24] = 1.0  # off-centre pixel
        sino = (radon_matrix(n, P, Q) @ img.ravel()).reshape(Q, P)
        x0, y0 = -n / 2 + 24.5, n / 2 - 8.5
        span = np.sqrt(2) * n
        for q in range(Q):
            th = q * np.pi / Q
            s = x0 * np.cos(th) + y0 * np.sin(th)
            hit = np.flatnonzero(sino[q] > 0)
            centres = -span / 2 + (hit + 0.5) * span / P
            assert hit.size and np.min(np.abs(centres - s)) <= span / P

    def test_width_rescales(self):
        A = radon_matrix(6, 9, 4, width=1.0)
        B = radon_matrix(6, 9, 4)
        np.testing.assert_allclose(A.toarray() * 6.0, B.toarray(), rtol=1e-12, atol=1e-14)


class TestSynthesis:
    def test_noiseless(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(synthesize_data(identity(5), x, SynthesisSpec(1, 0.0, 3)), x)

    def test_noise_variance(self):
        y = synthesize_data(identity(100_000), np.zeros(100_000), SynthesisSpec(1, 2.5, 7))
        assert abs(y.var() / 2.5 - 1) <= 0.02

    def test_deterministic(self):
        a = synthesize_data(identity(50), np.ones(50), SynthesisSpec(1, 1.0, 11))
        b = synthesize_data(identity(50), np.ones(50), SynthesisSpec(1, 1.0, 11))
        assert a.tobytes() == b.tobytes()

    def test_ct_variance_fraction(self):
        assert ct_noise_variance(np.array([1.0, 10.0, 4.0])) == pytest.approx(0.3)

    def test_rejects_bad_spec(self):
        with pytest.raises(ValueError):
            SynthesisSpec(0)
        with pytest.raises(ValueError):
            SynthesisSpec(2, -1.0)


class TestFiles:
    def test_pgm_roundtrip(self, tmp_path):
        img = np.linspace(-1, 3, 35).reshape(5, 7)
        vmin, vmax = write_pgm(tmp_path / "a.pgm", img)
        back = read_pgm(tmp_path / "a.pgm", vmin, vmax)
        np.testing.assert_allclose(back, img, atol=(vmax - vmin) / 65535)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n65535\n")

    def test_csv_roundtrip_exact(self, tmp_path):
        v = np.random.default_rng(0).standard_normal(20)
        write_csv_vector(tmp_path / "v.csv", v)
        assert read_csv_vector(tmp_path / "v.csv").tobytes() == v.tobytes()
