"""Losses, Adam, the step-decay schedule, resampling and beta annealing."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffengine as de
from ._runtime import tune_allocator
from .models import ModelParams, ModelSpec, build, check_params, evaluate, forward_jet, layer_shapes, make_rng
from .problems import Kind, Problem, eval_grid, sample

__all__ = [
    "TrainConfig",
    "TrainRecord",
    "TrainingAborted",
    "Adam",
    "learning_rate",
    "anneal_beta",
    "fit_loss",
    "fit_loss_and_grad",
    "pde_loss",
    "pde_loss_and_grads",
    "rel_l2_on",
    "train",
    "SAMPLE_STREAM",
]

# Philox stream for collocation sampling; stream 0 initializes weights.
SAMPLE_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.  ``beta`` is the fixed weight or the annealing start."""

    epochs: int = 50000
    lr0: float = 4e-3
    decay: float = 0.9
    decay_every: int = 1000
    n_f: int = 5000
    n_b: int = 1000
    beta_mode: str = "annealed"
    beta: float = 1.0
    anneal_every: int = 10
    anneal_alpha: float = 0.1
    anneal_stats: str = "layerwise"
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500
    threads: int = 1
    chunk: int = 8192

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if self.anneal_stats not in ("global", "layerwise"):
            raise ValueError(f"anneal_stats must be 'global' or 'layerwise', got {self.anneal_stats!r}")
        if self.beta_mode not in ("annealed", "fixed"):
            raise ValueError(f"beta_mode must be 'annealed' or 'fixed', got {self.beta_mode!r}")
        if self.lr0 <= 0 or not 0 < self.decay <= 1 or self.decay_every < 1:
            raise ValueError("need lr0 > 0, 0 < decay <= 1 and decay_every >= 1")
        if self.n_f < 1 or self.n_b < 0:
            raise ValueError("need n_f >= 1 and n_b >= 0")
        if self.beta < 0 or not 0 <= self.anneal_alpha <= 1 or self.anneal_every < 1:
            raise ValueError("bad beta annealing settings")
        if self.eval_every < 1 or self.threads < 1 or self.chunk < 1:
            raise ValueError("eval_every, threads and chunk must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """``lr0 * decay ** floor(epoch / decay_every)`` for the 0-based ``epoch``."""
    return config.lr0 * config.decay ** (epoch // config.decay_every)


class Adam:
    """Adam with bias correction, over a list of arrays."""

    def __init__(self, shapes, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            out.append(p - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def anneal_beta(beta: float, grad_f_max: float, grad_b_mean: float, alpha: float = 0.1) -> float:
    """One annealing update.

    ``grad_b_mean`` is the mean absolute gradient of the weighted boundary
    term ``beta * L_b``.  The estimate ``grad_f_max / grad_b_mean * beta``
    is blended in with weight ``alpha``; a zero mean leaves ``beta`` alone.
    """
    if not grad_b_mean > 0:
        return beta
    return (1.0 - alpha) * beta + alpha * (grad_f_max / grad_b_mean * beta)


def _grad_stats(gf, gb, beta, how):
    """``(max |grad L_f|, mean |grad (beta L_b)|)`` for :func:`anneal_beta`.

    "global" pools every parameter.  "layerwise" uses weight matrices only
    and averages the per-layer means, as in the reference implementation of
    the annealing method.
    """
    if how == "global":
        return max(float(np.max(np.abs(g))) for g in gf), float(np.mean(np.abs(beta * np.concatenate([g.ravel() for g in gb]))))
    weights = range(0, len(gf), 2)
    return max(float(np.max(np.abs(gf[i]))) for i in weights), float(np.mean([np.mean(np.abs(beta * gb[i])) for i in weights]))


# ---------------------------------------------------------------------------
# losses


def _n_inner(spec: ModelSpec) -> int:
    return len(layer_shapes(spec)[0])


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _reduce(parts):
    """Sum (loss, grads) pairs in order, so the result ignores thread count."""
    loss = 0.0
    grads = None
    for value, g in parts:
        loss += value
        grads = [a.copy() for a in g] if grads is None else [a + b for a, b in zip(grads, g)]
    return loss, grads


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _value_loss_and_grad(spec, arrays, X, y, total, n_inner, chunk, threads):
    """Gradient of ``sum((u(X) - y)^2) / total`` over row chunks."""

    def part(sl):
        def fn(leaves):
            u = forward_jet(spec, leaves, X[sl], False, n_inner)
            return de.mean_square(de.sub(de.values(u), y[sl]), weight=(sl.stop - sl.start) / total)

        return de.value_and_grad(fn, arrays)

    return _reduce(_map(part, _chunks(len(X), chunk), threads))


def _residual_loss_and_grad(spec, arrays, problem, X, f, total, n_inner, chunk, threads):
    def part(sl):
        def fn(leaves):
            u = forward_jet(spec, leaves, X[sl], True, n_inner)
            r = de.pde_residual(u, problem.operator, f[sl], problem.k)
            return de.mean_square(r, weight=(sl.stop - sl.start) / total)

        return de.value_and_grad(fn, arrays)

    return _reduce(_map(part, _chunks(len(X), chunk), threads))


def fit_loss(spec: ModelSpec, params: ModelParams, X, y) -> float:
    """Mean squared error ``mean((y - u(X))^2)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise ValueError("empty batch")
    if len(y) != len(X):
        raise ValueError("X and y have different lengths")
    r = evaluate(spec, params, X) - y
    return float(np.mean(r * r))


def fit_loss_and_grad(spec: ModelSpec, params: ModelParams, X, y, chunk: int = 8192, threads: int = 1):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise ValueError("empty batch")
    return _value_loss_and_grad(spec, params.arrays(), X, y, len(X), _n_inner(spec), chunk, threads)


def pde_loss_and_grads(spec: ModelSpec, params: ModelParams, problem: Problem, batch, chunk: int = 8192, threads: int = 1):
    """``(L_f, grad L_f, L_b, grad L_b)`` for a sampled batch."""
    if len(batch.interior) == 0 or len(batch.boundary) == 0:
        raise ValueError("PDE loss needs non-empty interior and boundary sets")
    arrays, n_inner = params.arrays(), _n_inner(spec)
    lf, gf = _residual_loss_and_grad(spec, arrays, problem, batch.interior, batch.f, len(batch.interior), n_inner, chunk, threads)
    lb, gb = _value_loss_and_grad(spec, arrays, batch.boundary, batch.g, len(batch.boundary), n_inner, chunk, threads)
    return lf, gf, lb, gb


def pde_loss(spec: ModelSpec, params: ModelParams, problem: Problem, batch, beta: float) -> tuple[float, float, float]:
    """``(L_f + beta L_b, L_f, L_b)``."""
    lf, _, lb, _ = pde_loss_and_grads(spec, params, problem, batch)
    return lf + beta * lb, lf, lb


def rel_l2_on(spec: ModelSpec, params: ModelParams, X: np.ndarray, exact: np.ndarray) -> float:
    norm = float(np.linalg.norm(exact))
    if norm == 0:
        raise ValueError("exact solution vanishes on the evaluation set")
    return float(np.linalg.norm(evaluate(spec, params, X) - exact)) / norm


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainRecord:
    """Per-epoch log.  ``rel`` is NaN on epochs without an evaluation."""

    epoch: list[int] = field(default_factory=list)
    loss_f: list[float] = field(default_factory=list)
    loss_b: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    rel: list[float] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    COLUMNS = ("epoch", "L_f", "L_b", "beta", "lr", "REL")

    def append(self, epoch, lf, lb, beta, lr, rel, wall):
        self.epoch.append(int(epoch))
        self.loss_f.append(float(lf))
        self.loss_b.append(float(lb))
        self.beta.append(float(beta))
        self.lr.append(float(lr))
        self.rel.append(float(rel))
        self.wall.append(float(wall))

    @property
    def evaluations(self) -> list[tuple[int, float]]:
        return [(e, r) for e, r in zip(self.epoch, self.rel) if not math.isnan(r)]

    @property
    def min_rel(self) -> float:
        ev = [r for _, r in self.evaluations]
        return min(ev) if ev else math.nan

    @property
    def final_rel(self) -> float:
        ev = self.evaluations
        return ev[-1][1] if ev else math.nan

    def write_csv(self, path) -> Path:
        """Write ``epoch, L_f, L_b, beta, lr, REL``; wall time is left out so
        reruns are byte-identical."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in zip(self.epoch, self.loss_f, self.loss_b, self.beta, self.lr, self.rel):
                w.writerow([row[0]] + [repr(v) for v in row[1:]])
        return path


class TrainingAborted(RuntimeError):
    """Non-finite loss.  Carries the last finite parameters and the record."""

    def __init__(self, message: str, params: ModelParams, record: TrainRecord):
        super().__init__(message)
        self.params = params
        self.record = record


def train(
    spec: ModelSpec,
    problem: Problem | None,
    config: TrainConfig,
    params: ModelParams | None = None,
    data: tuple[np.ndarray, np.ndarray] | None = None,
    callback: Callable[[int, ModelParams, TrainRecord], None] | None = None,
) -> tuple[ModelParams, TrainRecord]:
    """Train with Adam and the step-decay schedule.

    Fitting problems minimize the MSE on ``n_f`` fresh points per epoch (or
    on the fixed ``data`` if given).  PDE problems minimize
    ``L_f + beta L_b`` on fresh interior and boundary points.  REL on the
    problem's evaluation grid is logged every ``eval_every`` epochs and at
    the last epoch.
    """
    if problem is None and data is None:
        raise ValueError("need a problem or fixed data")
    if problem is not None and problem.d != spec.d:
        raise ValueError(f"model d={spec.d} does not match problem d={problem.d}")
    if params is None:
        params = build(spec, config.seed)
    check_params(spec, params)
    tune_allocator()
    pde = problem is not None and problem.kind is not Kind.FIT and data is None
    if pde and config.n_b < 1:
        raise ValueError("PDE training needs n_b >= 1")

    rng = make_rng(config.seed, SAMPLE_STREAM)
    grid = exact = None
    if problem is not None:
        grid = eval_grid(problem)
        exact = problem.exact(grid)
    n_inner = _n_inner(spec)
    arrays = params.arrays()
    adam = Adam([a.shape for a in arrays], config.adam_b1, config.adam_b2, config.adam_eps)
    beta = config.beta
    record = TrainRecord()
    start = time.perf_counter()

    for t in range(config.epochs):
        lr = learning_rate(config, t)
        if pde:
            batch = sample(problem, config.n_f, config.n_b, rng)
            lf, gf = _residual_loss_and_grad(spec, arrays, problem, batch.interior, batch.f, config.n_f, n_inner, config.chunk, config.threads)
            lb, gb = _value_loss_and_grad(spec, arrays, batch.boundary, batch.g, config.n_b, n_inner, config.chunk, config.threads)
            if config.beta_mode == "annealed" and t % config.anneal_every == 0:
                fmax, bmean = _grad_stats(gf, gb, beta, config.anneal_stats)
                beta = anneal_beta(beta, fmax, bmean, config.anneal_alpha)
            grads = [a + beta * b for a, b in zip(gf, gb)]
        else:
            if data is not None:
                X, y = data
            else:
                batch = sample(problem, config.n_f, 0, rng)
                X, y = batch.interior, batch.f
            lf, grads = _value_loss_and_grad(spec, arrays, X, y, len(X), n_inner, config.chunk, config.threads)
            lb = 0.0

        if not (math.isfinite(lf) and math.isfinite(lb) and all(np.all(np.isfinite(g)) for g in grads)):
            record.aborted = True
            record.message = f"non-finite loss at epoch {t + 1}: L_f={lf}, L_b={lb}"
            record.append(t + 1, lf, lb, beta, lr, math.nan, time.perf_counter() - start)
            raise TrainingAborted(record.message, ModelParams.from_arrays(arrays, n_inner), record)

        arrays = adam.step(arrays, grads, lr)
        epoch = t + 1
        rel = math.nan
        if grid is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            rel = rel_l2_on(spec, ModelParams.from_arrays(arrays, n_inner), grid, exact)
        record.append(epoch, lf, lb, beta, lr, rel, time.perf_counter() - start)
        if callback is not None:
            callback(epoch, ModelParams.from_arrays(arrays, n_inner), record)

    return ModelParams.from_arrays(arrays, n_inner), record
