"""Test problems: piecewise signal, Shepp-Logan phantom, parallel-beam projector.

Also data synthesis and the PGM/CSV readers and writers used by the CLI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .operators import LinearOperator, from_matrix

__all__ = [
    "SynthesisSpec",
    "piecewise_signal",
    "piecewise_function",
    "shepp_logan",
    "SHEPP_LOGAN_ELLIPSES",
    "radon_parallel",
    "radon_matrix",
    "ct_noise_variance",
    "synthesize_data",
    "block_average",
    "write_pgm",
    "read_pgm",
    "write_csv_vector",
    "read_csv_vector",
]


def piecewise_function(x) -> np.ndarray:
    """``2 sin(50 pi x) + 25 x`` plus jumps of 0, 50 and 120 on
    ``[0, 0.4)``, ``[0.4, 0.7)`` and ``[0.7, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    base = 2.0 * np.sin(50.0 * np.pi * x) + 25.0 * x
    jump = np.where(x < 0.4, 0.0, np.where(x < 0.7, 50.0, 120.0))
    return base + jump


def piecewise_signal(N: int) -> np.ndarray:
    """The piecewise test signal sampled at ``N`` equispaced points in ``[0, 1]``."""
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    return piecewise_function(np.linspace(0.0, 1.0, N))


# Ellipse table: (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees).
# Intensities are the contrast-enhanced ("modified") values; with the original
# ones (2, -0.98, -0.02, ...) clipping to [0, 1] flattens the interior to a
# single grey level and the inner features vanish.
SHEPP_LOGAN_ELLIPSES = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ]
)


def _ellipse_sum(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    img = np.zeros_like(X)
    for A, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        c, s = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
        u = (X - x0) * c + (Y - y0) * s
        v = -(X - x0) * s + (Y - y0) * c
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += A
    return img


def shepp_logan(n: int) -> np.ndarray:
    """``n x n`` Shepp-Logan phantom sampled at pixel centres, values in ``[0, 1]``.

    Row 0 is the top of the image (largest ``y``).
    """
    if n < 16:
        raise ValueError(f"n must be at least 16, got {n}")
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    X, Y = np.meshgrid(c, c[::-1])
    return np.clip(_ellipse_sum(X, Y), 0.0, 1.0)


def block_average(img: np.ndarray, factor: int) -> np.ndarray:
    n1, n2 = img.shape
    if n1 % factor or n2 % factor:
        raise ValueError("image size must be divisible by the factor")
    return img.reshape(n1 // factor, factor, n2 // factor, factor).mean(axis=(1, 3))


def _siddon_ray(p0: np.ndarray, d: np.ndarray, n: int, width: float):
    """Pixel indices and intersection lengths of the line ``p0 + t d`` with
    an ``n x n`` grid covering ``[-width/2, width/2]^2``.

    ``d`` is a unit vector; row 0 of the grid is at the top.
    """
    h = width / n
    half = width / 2.0
    edges = -half + h * np.arange(n + 1)
    ts = []
    t_lo, t_hi = -np.inf, np.inf
    for k in range(2):
        if abs(d[k]) < 1e-15:
            if p0[k] <= -half or p0[k] >= half:
                return np.empty(0, dtype=np.int64), np.empty(0)
            continue
        ta = (-half - p0[k]) / d[k]
        tb = (half - p0[k]) / d[k]
        t_lo = max(t_lo, min(ta, tb))
        t_hi = min(t_hi, max(ta, tb))
        ts.append((edges - p0[k]) / d[k])
    if not t_hi > t_lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    t = np.concatenate([[t_lo, t_hi]] + ts)
    t = np.unique(t[(t >= t_lo) & (t <= t_hi)])
    seg = np.diff(t)
    keep = seg > 1e-12 * h
    tm = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    px = p0[0] + tm * d[0]
    py = p0[1] + tm * d[1]
    col = np.clip(np.floor((px + half) / h).astype(np.int64), 0, n - 1)
    row = np.clip(np.floor((half - py) / h).astype(np.int64), 0, n - 1)
    return row * n + col, seg


def radon_matrix(n: int, detectors: int, angles: int, width: float | None = None) -> sp.csr_matrix:
    """Sparse parallel-beam projection matrix (rows: angle-major, then detector).

    The image covers ``[-w/2, w/2]^2`` with ``w = width`` (default ``n``, unit
    pixels). The detector array spans the image diagonal ``sqrt(2) w`` with
    ``detectors`` equal cells; ray ``j`` passes through the cell centre.
    Angle ``q`` is ``q pi / angles``, measured from the positive y-axis, so
    ``q = 0`` gives vertical rays. Entries are exact ray-pixel intersection
    lengths.
    """
    if n < 1 or detectors < 1 or angles < 1:
        raise ValueError("n, detectors and angles must be positive")
    width = float(n) if width is None else float(width)
    span = np.sqrt(2.0) * width
    offsets = -span / 2.0 + (np.arange(detectors) + 0.5) * span / detectors
    rows, cols, vals = [], [], []
    for q in range(angles):
        th = q * np.pi / angles
        d = np.array([-np.sin(th), np.cos(th)])
        e = np.array([np.cos(th), np.sin(th)])
        for j, s in enumerate(offsets):
            idx, seg = _siddon_ray(s * e, d, n, width)
            if idx.size:
                rows.append(np.full(idx.size, q * detectors + j))
                cols.append(idx)
                vals.append(seg)
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.empty(0, dtype=np.int64)
        v = np.empty(0)
    A = sp.coo_matrix((v, (r, c)), shape=(angles * detectors, n * n)).tocsr()
    A.sum_duplicates()
    return A


def radon_parallel(n: int, detectors: int, angles: int, width: float | None = None) -> LinearOperator:
    """Ray-driven parallel-beam projector as a :class:`LinearOperator`."""
    return from_matrix(radon_matrix(n, detectors, angles, width), name=f"radon{n}")


@dataclass(frozen=True)
class SynthesisSpec:
    fine_factor: int = 3
    noise_variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.fine_factor < 1:
            raise ValueError("fine_factor must be at least 1")
        if not self.noise_variance >= 0:
            raise ValueError("noise variance must be nonnegative")


def ct_noise_variance(clean: np.ndarray, fraction: float = 0.03) -> float:
    """Noise variance set to ``fraction`` times the largest noiseless datum."""
    return float(fraction * np.max(clean))


def synthesize_data(forward_fine: LinearOperator, x_fine, spec: SynthesisSpec) -> np.ndarray:
    """``y = F x + e`` with ``e ~ N(0, nu I)`` drawn from ``default_rng(seed)``."""
    x_fine = np.asarray(x_fine, dtype=np.float64).ravel()
    clean = forward_fine.apply(x_fine)
    if spec.noise_variance == 0:
        return clean
    rng = np.random.default_rng(spec.seed)
    return clean + np.sqrt(spec.noise_variance) * rng.standard_normal(clean.size)


def write_pgm(path, img: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> tuple[float, float]:
    """Write a 16-bit binary PGM (P5, big-endian) with linear min/max scaling.

    Returns the ``(vmin, vmax)`` used so that values can be recovered.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be two-dimensional")
    vmin = float(img.min()) if vmin is None else float(vmin)
    vmax = float(img.max()) if vmax is None else float(vmax)
    scale = 65535.0 / (vmax - vmin) if vmax > vmin else 0.0
    data = np.clip(np.rint((img - vmin) * scale), 0, 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    return vmin, vmax


def read_pgm(path, vmin: float = 0.0, vmax: float | None = None) -> np.ndarray:
    """Read a binary PGM (8 or 16 bit). Values map linearly to ``[vmin, vmax]``;
    by default the raw integer levels are returned."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise ValueError(f"not a binary PGM: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.float64)
    if vmax is None:
        return data
    return vmin + data / maxval * (vmax - vmin)


def write_csv_vector(path, v) -> None:
    """One value per line, full double precision."""
    v = np.asarray(v, dtype=np.float64).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for val in v:
            w.writerow([repr(float(val))])


def read_csv_vector(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row[0]) for row in csv.reader(fh) if row], dtype=np.float64)
