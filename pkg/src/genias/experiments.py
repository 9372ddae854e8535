"""End-to-end runners for the denoising, CT and custom experiments."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import ExperimentConfig, PriorParams
from .forward_models import (
    SynthesisSpec,
    ct_noise_variance,
    piecewise_signal,
    radon_parallel,
    read_csv_vector,
    shepp_logan,
    synthesize_data,
    write_csv_vector,
    write_pgm,
)
from .ias import IasState, Priors, Problem, dp_residual, run_ias, tikhonov_init
from .metrics import rre, ssim
from .operators import identity
from .transforms import SparsifyingTransform, derivative_operator, neumann_gradient_2d
from .updates import HyperPriorSpec, NoisePriorSpec

__all__ = [
    "DIAGNOSTICS_HEADER",
    "SWEEP_HEADER",
    "CT_SUMMARY_HEADER",
    "DenoiseData",
    "CtData",
    "make_transform",
    "make_priors",
    "denoise_data",
    "ct_data",
    "run_denoise",
    "run_ct",
    "run_custom",
    "run_experiment",
    "emit_diagnostics",
]

DIAGNOSTICS_HEADER = (
    "outer_iter", "objective", "nu", "inner_iters", "pinv_iters",
    "theta_min", "theta_max", "rel_change_theta", "rel_change_nu",
)
SWEEP_HEADER = ("vartheta", "nu_hat", "n_inner", "n_pinv", "outer_iters", "rre", "ssim", "dp", "termination")
CT_SUMMARY_HEADER = ("run", "learn_nu", "init", "nu_hat", "nu_bar", "rre", "ssim", "dp", "outer_iters", "n_inner", "termination")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _write_rows(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_diagnostics(state: IasState, path) -> None:
    """Per-outer-iteration CSV: objective, nu, inner iteration counts,
    theta extrema and the two relative changes used by the stopping rule."""
    _write_rows(
        Path(path),
        DIAGNOSTICS_HEADER,
        (
            (h.outer_iter, h.objective, h.nu, h.inner_iters, h.pinv_iters, h.theta_min, h.theta_max, h.dtheta, h.dnu)
            for h in state.history
        ),
    )


def make_transform(name: str, N: int | None = None, grid: tuple[int, int] | None = None) -> SparsifyingTransform:
    if name in ("d1", "d2", "d3"):
        return derivative_operator(int(name[1]), N)
    if name == "neumann2d":
        return neumann_gradient_2d(*grid)
    raise ValueError(f"unknown transform {name!r}")


def make_priors(prior: PriorParams, noise: PriorParams, M: int, vartheta: float | None = None, learn_nu: bool = True) -> Priors:
    vt = prior.vartheta if vartheta is None else vartheta
    return Priors(
        HyperPriorSpec(prior.r, prior.beta, vt),
        NoisePriorSpec(noise.r, noise.beta, noise.vartheta, M) if learn_nu else None,
    )


@dataclass(frozen=True)
class DenoiseData:
    truth: np.ndarray
    y: np.ndarray
    noise_variance: float


def denoise_data(N: int, noise_variance: float, seed: int) -> DenoiseData:
    truth = piecewise_signal(N)
    y = synthesize_data(identity(N), truth, SynthesisSpec(1, noise_variance, seed))
    return DenoiseData(truth, y, noise_variance)


def _one_denoise(args) -> tuple[dict, IasState]:
    cfg, vt, y, truth, transform_name, fixed_nu = args
    N = y.size
    T = make_transform(transform_name, N=N)
    ias = cfg.ias
    if not ias.learn_nu and ias.fixed_nu is None:
        ias = replace(ias, fixed_nu=fixed_nu)
    priors = make_priors(cfg.prior, cfg.noise_prior, N, vt, ias.learn_nu)
    problem = Problem(identity(N), T, y)
    state = run_ias(problem, priors, ias)
    row = {
        "vartheta": vt,
        "nu_hat": state.nu,
        "n_inner": state.total_inner_iterations,
        "n_pinv": sum(h.pinv_iters for h in state.history),
        "outer_iters": state.iteration,
        "rre": rre(state.x, truth) if truth is not None else None,
        "ssim": ssim(state.x, truth) if truth is not None else None,
        "dp": dp_residual(problem.F, state.x, y, state.nu, cfg.tau),
        "termination": state.termination,
        "wall_time": state.wall_time,
    }
    return row, state


def _sweep_points(cfg: ExperimentConfig) -> tuple[float, ...]:
    return cfg.sweep if cfg.sweep is not None else (cfg.prior.vartheta,)


def _run_1d(cfg: ExperimentConfig, y: np.ndarray, truth: np.ndarray | None, fixed_nu: float, jobs: int) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = _sweep_points(cfg)
    tasks = [(cfg, vt, y, truth, cfg.transform, fixed_nu) for vt in points]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_denoise, tasks))
    else:
        results = [_one_denoise(t) for t in tasks]
    rows = []
    for i, (row, state) in enumerate(results):
        write_csv_vector(out / f"recon_{i:02d}.csv", state.x)
        emit_diagnostics(state, out / f"diagnostics_{i:02d}.csv")
        rows.append(row)
    _write_rows(out / "sweep.csv", SWEEP_HEADER, ([r[k] for k in SWEEP_HEADER] for r in rows))
    _write_rows(out / "timings.csv", ("vartheta", "wall_time_s"), ((r["vartheta"], r["wall_time"]) for r in rows))
    write_csv_vector(out / "data.csv", y)
    if truth is not None:
        write_csv_vector(out / "truth.csv", truth)
    (out / "run.json").write_text(json.dumps({"config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    return {"rows": rows, "states": [s for _, s in results], "output_dir": str(out)}


def run_denoise(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Denoising of the piecewise signal; one CSV row per vartheta (ascending)."""
    N = cfg.problem["N"]
    data = denoise_data(N, cfg.problem["noise_variance"], cfg.seed)
    return _run_1d(cfg, data.y, data.truth, data.noise_variance, jobs)


def run_custom(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Identity forward operator with data (and optionally truth) read from CSV."""
    y = read_csv_vector(cfg.problem["data_csv"])
    truth = read_csv_vector(cfg.problem["truth_csv"]) if cfg.problem.get("truth_csv") else None
    if truth is not None and truth.shape != y.shape:
        raise ValueError("truth and data lengths differ")
    fixed = cfg.ias.fixed_nu if cfg.ias.fixed_nu is not None else 1.0
    return _run_1d(cfg, y, truth, fixed, jobs)


@dataclass(frozen=True)
class CtData:
    truth: np.ndarray  # n x n
    F: object
    y: np.ndarray
    noise_variance: float
    n: int
    detectors: int
    angles: int


def ct_data(n: int, detectors: int, angles: int, fine_factor: int, noise_fraction: float, seed: int) -> CtData:
    """Phantom, reconstruction operator, and data from a ``fine_factor`` finer grid."""
    truth = shepp_logan(n)
    F = radon_parallel(n, detectors, angles)
    fine = shepp_logan(n * fine_factor)
    F_fine = radon_parallel(n * fine_factor, detectors, angles, width=n)
    assert F_fine.cols != F.cols, "data must not be generated with the reconstruction operator"
    clean = F_fine.apply(fine.ravel())
    nu_bar = ct_noise_variance(clean, noise_fraction)
    y = synthesize_data(F_fine, fine, SynthesisSpec(fine_factor, nu_bar, seed))
    return CtData(truth, F, y, nu_bar, n, detectors, angles)


def _pgm(out: Path, name: str, img: np.ndarray) -> None:
    vmin, vmax = write_pgm(out / f"{name}.pgm", img)
    (out / f"{name}.txt").write_text(f"min {vmin!r}\nmax {vmax!r}\n")


def run_ct(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """CT reconstructions for every configured run, plus the Tikhonov baseline.

    Runs execute in order because ``init = previous`` chains them.
    """
    p = cfg.problem
    data = ct_data(p["n"], p["detectors"], p["angles"], p["fine_factor"], p["noise_fraction"], cfg.seed)
    n = data.n
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = neumann_gradient_2d(n, n)
    problem = Problem(data.F, T, data.y)
    truth = data.truth.ravel()
    x_tik = tikhonov_init(data.F, T, cfg.ias.tikhonov_lambda, data.y, tol=cfg.ias.eps_cgls * 1e-2)
    rows = [("tikhonov", None, None, None, data.noise_variance, rre(x_tik, truth),
             ssim(x_tik.reshape(n, n), data.truth), None, None, None, None)]
    _pgm(out, "truth", data.truth)
    _pgm(out, "sinogram", data.y.reshape(data.angles, data.detectors))
    _pgm(out, "tikhonov", x_tik.reshape(n, n))
    write_csv_vector(out / "data.csv", data.y)
    states: dict[str, IasState] = {}
    for run in cfg.runs:
        ias = replace(cfg.ias, learn_nu=run.learn_nu, fixed_nu=None if run.learn_nu else data.noise_variance)
        priors = make_priors(run.prior, run.noise_prior, data.F.rows, learn_nu=run.learn_nu)
        x0 = {
            "tikhonov": x_tik,
            "ones": np.ones(n * n),
            "zeros": np.zeros(n * n),
        }.get(run.init)
        if run.init == "previous":
            x0 = states[run.source].x
        state = run_ias(problem, priors, ias, x0=x0)
        states[run.name] = state
        emit_diagnostics(state, out / f"diagnostics_{run.name}.csv")
        write_csv_vector(out / f"{run.name}.csv", state.x)
        _pgm(out, run.name, state.x.reshape(n, n))
        th = state.theta.reshape(2, n, n)
        _pgm(out, f"{run.name}_log_theta", np.log(np.sqrt(th[0] ** 2 + th[1] ** 2)))
        rows.append((
            run.name, run.learn_nu, run.init, state.nu, data.noise_variance, rre(state.x, truth),
            ssim(state.x.reshape(n, n), data.truth), dp_residual(data.F, state.x, data.y, state.nu, cfg.tau),
            state.iteration, state.total_inner_iterations, state.termination,
        ))
    _write_rows(out / "summary.csv", CT_SUMMARY_HEADER, rows)
    _write_rows(out / "timings.csv", ("run", "wall_time_s"), ((k, s.wall_time) for k, s in states.items()))
    (out / "run.json").write_text(json.dumps({"config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    return {"rows": rows, "states": states, "tikhonov": x_tik, "data": data, "output_dir": str(out)}


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    runner = {"denoise": run_denoise, "ct": run_ct, "custom": run_custom}[cfg.experiment]
    return runner(cfg, jobs)
