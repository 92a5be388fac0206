"""Relative L2 error, pointwise slices, DFT spectra and rate fitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .models import ModelSpec, count_params, evaluate
from .problems import Problem, eval_grid

__all__ = [
    "EvalReport",
    "SpectrumReport",
    "GAMMAS",
    "as_predictor",
    "rel_l2",
    "rel_l2_values",
    "evaluate_report",
    "dft",
    "spectrum",
    "spectrum_2d",
    "fit_rate",
    "slice_errors",
    "write_report_csv",
    "write_spectrum_csv",
    "write_slice_csv",
    "REPORT_COLUMNS",
    "report_row",
]

GAMMAS = (2, 4, 8, 16)
DFT_SIZE = 100

Predictor = Callable[[np.ndarray], np.ndarray]
ModelLike = Union[Predictor, tuple]


def as_predictor(model: ModelLike) -> Predictor:
    """Accept a callable on (n, d) arrays or a ``(spec, params)`` pair."""
    if callable(model):
        return model
    spec, params = model
    return lambda X: evaluate(spec, params, X)


def rel_l2_values(u, u_star) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    u_star = np.asarray(u_star, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(u_star))
    if norm == 0:
        raise ValueError("relative error is undefined: exact solution has zero norm")
    return float(np.linalg.norm(u - u_star)) / norm


def rel_l2(model: ModelLike, problem: Problem, grid: np.ndarray | None = None) -> float:
    """``||u - u*||_2 / ||u*||_2`` on the problem's evaluation grid."""
    X = eval_grid(problem) if grid is None else grid
    return rel_l2_values(as_predictor(model)(X), problem.exact(X))


@dataclass
class EvalReport:
    rel_l2: float
    points: np.ndarray
    abs_err: np.ndarray
    meta: dict = field(default_factory=dict)


def evaluate_report(model: ModelLike, problem: Problem, **meta) -> EvalReport:
    X = eval_grid(problem)
    u, u_star = as_predictor(model)(X), problem.exact(X)
    return EvalReport(rel_l2_values(u, u_star), X, np.abs(u - u_star), dict(meta))


# ---------------------------------------------------------------------------
# frequency analysis


def dft(values, gammas: Sequence[float] = GAMMAS) -> np.ndarray:
    """``(1/n) sum_j f(x_j) exp(-2 pi i x_j gamma)`` with ``x_j = j/n``.

    ``values`` has shape (n,) or (m, n); the transform runs along the last axis.
    """
    f = np.asarray(values, dtype=np.float64)
    n = f.shape[-1]
    x = np.arange(n) / n
    kernel = np.exp(-2j * np.pi * np.outer(x, np.asarray(gammas, dtype=np.float64)))
    return f @ kernel / n


@dataclass
class SpectrumReport:
    gammas: np.ndarray
    target: np.ndarray
    model: np.ndarray

    @property
    def diff_complex(self) -> np.ndarray:
        """``|F[f] - F[u]|`` of the complex coefficients."""
        return np.abs(self.target - self.model)

    @property
    def diff_magnitude(self) -> np.ndarray:
        """``| |F[f]| - |F[u]| |``."""
        return np.abs(np.abs(self.target) - np.abs(self.model))


def _check_n(n: int) -> None:
    if n < 64:
        raise ValueError("DFT grid needs n >= 64")


def spectrum(target: Callable, model: Callable, n: int = DFT_SIZE, gammas: Sequence[float] = GAMMAS) -> SpectrumReport:
    """1D spectra of ``target`` and ``model`` sampled at ``x_j = j/n``."""
    _check_n(n)
    x = np.arange(n) / n
    return SpectrumReport(np.asarray(gammas), dft(target(x), gammas), dft(model(x), gammas))


def spectrum_2d(target: Predictor, model: Predictor, n: int = DFT_SIZE, gammas: Sequence[float] = GAMMAS, d: int = 2) -> SpectrumReport:
    """Spectra along the first coordinate, averaged over the second.

    Both functions are sampled on the ``n x n`` grid ``(j/n, k/n)``; for
    ``d > 2`` the remaining coordinates are fixed at 1/2.  The complex
    coefficients are averaged over ``k``.
    """
    _check_n(n)
    x = np.arange(n) / n
    A, B = np.meshgrid(x, x, indexing="ij")  # A varies along axis 0
    pts = np.column_stack([A.ravel(), B.ravel()] + [np.full(n * n, 0.5)] * (d - 2))

    def coeffs(fn):
        vals = np.asarray(fn(pts), dtype=np.float64).reshape(n, n)  # [j, k]
        return dft(vals.T, gammas).mean(axis=0)

    return SpectrumReport(np.asarray(gammas), coeffs(target), coeffs(model))


# ---------------------------------------------------------------------------
# rates and slices


def fit_rate(xs, errs) -> float:
    """Least-squares slope of ``log(err)`` against ``log(size)``."""
    xs = np.asarray(xs, dtype=np.float64)
    errs = np.asarray(errs, dtype=np.float64)
    if xs.shape != errs.shape or xs.ndim != 1:
        raise ValueError("sizes and errors must be 1-D and of equal length")
    if len(xs) < 3:
        raise ValueError("need at least 3 points to fit a rate")
    if np.any(xs <= 0) or np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("sizes and errors must be positive")
    lx, ly = np.log(xs), np.log(errs)
    lx -= lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def slice_errors(model: ModelLike, problem: Problem, coords: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rows ``(x_a, x_b, |u - u*|)`` on the evaluation grid, in grid order.

    ``coords`` are 0-based coordinate indices of the plotted slice.
    """
    a, b = coords
    if problem.d < 2 or not (0 <= a < problem.d and 0 <= b < problem.d) or a == b:
        raise ValueError(f"bad slice coordinates {coords} for d={problem.d}")
    X = eval_grid(problem)
    err = np.abs(as_predictor(model)(X) - problem.exact(X))
    return np.column_stack([X[:, a], X[:, b], err])


# ---------------------------------------------------------------------------
# CSV emitters

REPORT_COLUMNS = ("problem", "method", "p", "params", "params_sci", "seed", "epochs", "rel_min", "rel_final")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def report_row(problem_id: str, spec: ModelSpec, seed: int, epochs: int, rel_min: float, rel_final: float) -> dict:
    n = count_params(spec)
    return {
        "problem": problem_id,
        "method": spec.family.value,
        "p": "" if spec.p is None or spec.family.value == "PINN" else spec.p,
        "params": n,
        "params_sci": f"{n:.4E}",
        "seed": seed,
        "epochs": epochs,
        "rel_min": rel_min,
        "rel_final": rel_final,
    }


def write_report_csv(path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return path


def write_spectrum_csv(path, report: SpectrumReport) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("gamma", "target", "model", "diff_complex", "diff_magnitude"))
        for g, t, m, dc, dm in zip(report.gammas, np.abs(report.target), np.abs(report.model), report.diff_complex, report.diff_magnitude):
            w.writerow([_fmt(g), _fmt(t), _fmt(m), _fmt(dc), _fmt(dm)])
    return path


def write_slice_csv(path, rows: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x1", "x2", "abs_err"))
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path
