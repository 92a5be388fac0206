"""Constructive approximants behind the K-HOrderDNN approximation results.

The inner functions of the superposition theorem are not constructible, so
everything here works with synthetic stand-ins: clipped polynomials on the
GLL Lagrange basis, ReLU linear splines and small tanh networks for the
outer function, the composite ``K_{p,n}`` evaluator, its parameter counts,
and an empirical rate experiment driven by real training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .basis import eval_lagrange, gll_nodes
from .diagnostics import fit_rate
from .diffengine import Activation, DenseLayer
from .models import Family, ModelParams, ModelSpec

__all__ = [
    "clip_relu",
    "clip_tanh",
    "default_w",
    "ClippedPolynomial",
    "SplineOuter",
    "TanhOuter",
    "KpnModel",
    "build_spline_interpolant",
    "kpn_eval",
    "kpn_network",
    "kpn_param_count",
    "RateTable",
    "rate_experiment",
    "write_rates_csv",
]


# ---------------------------------------------------------------------------
# clipping


def _two_sum(a, b):
    """Error-free ``a + b = s + e`` (Knuth)."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def clip_relu(t):
    """``1 - relu(1 - relu(t))``, evaluated exactly.

    The inner difference ``1 - relu(t)`` is kept as an unevaluated pair
    ``hi + lo``, so the result equals ``min(max(t, 0), 1)`` bit for bit.
    """
    t = np.asarray(t, dtype=np.float64)
    r = np.maximum(t, 0.0)
    hi, lo = _two_sum(1.0, -r)
    positive = (hi > 0) | ((hi == 0) & (lo > 0))
    hi = np.where(positive, hi, 0.0)
    lo = np.where(positive, lo, 0.0)
    out = (1.0 - hi) - lo  # 1 - hi is exact by Sterbenz when hi is in [1/2, 2]
    small = positive & (hi < 0.5)
    # hi < 1/2 means r > 1/2, where 1 - r is already exact and lo == 0.
    out = np.where(small, 1.0 - hi, out)
    return float(out) if out.ndim == 0 else out


def clip_tanh(t, w: float, delta: float):
    """``w tanh((t + delta) / (w (1 + 2 delta)))``."""
    if not (w > 0 and delta > 0):
        raise ValueError("need w > 0 and delta > 0")
    out = w * np.tanh((np.asarray(t, dtype=np.float64) + delta) / (w * (1.0 + 2.0 * delta)))
    return float(out) if np.ndim(out) == 0 else out


_W_GRID = np.geomspace(1e-2, 1e9, 4401)


def default_w(delta: float) -> float:
    """Smallest ``w`` on a fixed geometric grid with ``1 - w tanh(1/w) <= delta``.

    ``1 - w tanh(1/w)`` decreases to 0 as ``w`` grows, so such a ``w`` exists
    for every ``delta > 0``; the grid covers ``delta`` down to about 1e-18.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    gap = 1.0 - _W_GRID * np.tanh(1.0 / _W_GRID)
    ok = np.nonzero(gap <= delta)[0]
    if ok.size == 0:
        raise ValueError(f"delta={delta} is below the resolution of the w grid")
    return float(_W_GRID[ok[0]])


# ---------------------------------------------------------------------------
# inner and outer approximants


@dataclass(frozen=True)
class ClippedPolynomial:
    """``2d+1`` degree-``p`` polynomials on the GLL Lagrange basis of [0, 1], clipped.

    ``coefficients[j, q]`` multiplies ``psi_j``.  Mode "relu" clips to
    [0, 1]; mode "tanh" applies :func:`clip_tanh` with ``w`` and ``delta``.
    """

    coefficients: np.ndarray
    mode: str = "relu"
    w: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] % 2 == 0:
            raise ValueError("coefficients must have shape (p+1, 2d+1) with p >= 1")
        if self.mode not in ("relu", "tanh"):
            raise ValueError(f"unknown clip mode {self.mode!r}")
        if self.mode == "tanh" and not (self.w > 0 and self.delta > 0):
            raise ValueError("tanh clipping needs w > 0 and delta > 0")
        object.__setattr__(self, "coefficients", a)

    @property
    def p(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def width(self) -> int:
        return self.coefficients.shape[1]

    def raw(self, x) -> np.ndarray:
        """Unclipped ``L_q(x)``, shape (n, 2d+1)."""
        psi = eval_lagrange(gll_nodes(self.p), np.asarray(x, dtype=np.float64).reshape(-1))
        return psi @ self.coefficients

    def __call__(self, x) -> np.ndarray:
        L = self.raw(x)
        return clip_relu(L) if self.mode == "relu" else clip_tanh(L, self.w, self.delta)


@dataclass(frozen=True)
class SplineOuter:
    """Linear spline on ``[0, d]`` in ReLU form.

    ``S(z) = offset + slope0 relu(z) + sum_k weights[k] relu(z - knots[k])``.
    The ``n`` interior knots and their weights are the spline parameters;
    ``offset`` and ``slope0`` carry the affine part an interpolant needs.
    """

    knots: np.ndarray
    weights: np.ndarray
    offset: float = 0.0
    slope0: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        z = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if z.shape != w.shape:
            raise ValueError("knots and weights differ in length")
        if np.any(np.diff(z) <= 0) or (z.size and (z[0] < 0 or z[-1] > self.upper)):
            raise ValueError("knots must be strictly increasing inside [0, upper]")
        object.__setattr__(self, "knots", z)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.knots.size

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = self.offset + self.slope0 * np.maximum(z, 0.0)
        out = out + (np.maximum(z[..., None] - self.knots, 0.0) * self.weights).sum(axis=-1)
        return float(out) if out.ndim == 0 else out


def build_spline_interpolant(g: Callable, n: int, d: float) -> SplineOuter:
    """Interpolatory linear spline of ``g`` on ``[0, d]`` with ``n`` equally
    spaced interior knots (``n + 1`` intervals).

    Hat-function values are converted to ReLU weights by slope differences,
    ``w_k = s_k - s_{k-1}``.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be an integer >= 1")
    if not d > 0:
        raise ValueError("d must be positive")
    t = np.linspace(0.0, d, int(n) + 2)
    v = np.asarray(g(t), dtype=np.float64)
    slopes = np.diff(v) / np.diff(t)
    return SplineOuter(knots=t[1:-1], weights=np.diff(slopes), offset=float(v[0]), slope0=float(slopes[0]), upper=float(d))


@dataclass(frozen=True)
class TanhOuter:
    """Univariate tanh network ``1 -> N-1 -> 6N -> 1``."""

    layers: tuple[DenseLayer, DenseLayer, DenseLayer]

    @classmethod
    def random(cls, N: int, seed: int = 0, scale: float = 1.0) -> "TanhOuter":
        if N <= 5:
            raise ValueError("the tanh outer network needs N > 5")
        rng = np.random.default_rng(seed)
        dims = [1, N - 1, 6 * N, 1]
        return cls(tuple(DenseLayer(scale * rng.standard_normal((o, i)) / math.sqrt(i), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])))

    @property
    def N(self) -> int:
        return self.layers[0].weight.shape[0] + 1

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        h = z.reshape(-1, 1)
        for i, layer in enumerate(self.layers):
            h = h @ layer.weight.T + layer.bias
            if i < 2:
                h = np.tanh(h)
        out = h.reshape(z.shape)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KpnModel:
    """``sum_q outer(sum_i lambda_i inner_q(x_i))``."""

    inner: ClippedPolynomial
    lam: np.ndarray
    outer: SplineOuter | TanhOuter
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64).reshape(-1)
        if np.any(lam <= 0) or np.any(lam > 1):
            raise ValueError("lambda entries must lie in (0, 1]")
        if self.inner.width != 2 * lam.size + 1:
            raise ValueError("inner width must be 2d+1")
        object.__setattr__(self, "lam", lam)

    @property
    def d(self) -> int:
        return self.lam.size

    @property
    def variant(self) -> str:
        return "relu" if isinstance(self.outer, SplineOuter) else "tanh"

    def param_count(self) -> int:
        """Walk the stored arrays: inner coefficients, lambdas, outer parameters.

        The count quoted for the tanh class treats the outer network as one
        network on the ``2d+1`` sums and leaves the lambdas out; the walk
        follows the same convention.
        """
        n = self.inner.coefficients.size
        if isinstance(self.outer, SplineOuter):
            return n + self.lam.size + self.outer.knots.size + self.outer.weights.size
        N = self.outer.N
        return n + (self.inner.width * (N - 1) + (N - 1)) + sum(l.size for l in self.outer.layers[1:])


def kpn_eval(model: KpnModel, x) -> np.ndarray | float:
    """Composite value at a ``d``-vector or at each row of an (n, d) array."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    n, d = X.shape
    if d != model.d:
        raise ValueError(f"expected d={model.d}, got {d}")
    inner = model.inner(X.reshape(-1)).reshape(n, d, -1)  # [point, i, q]
    z = np.einsum("i,niq->nq", model.lam, inner)
    out = model.outer(z).sum(axis=1)
    return float(out[0]) if single else out


def kpn_network(model: KpnModel) -> tuple[ModelSpec, ModelParams]:
    """The ReLU ``K_{p,n}`` member as K-HOrderDNN weights.

    Inner: ``relu(A psi)``, ``relu(1 - .)``, linear ``1 - .``; the
    clip therefore takes ``hd = 2`` hidden layers of width ``2d + 1``.
    Outer: one ReLU layer with a unit per (q, knot) including the fixed knot
    at 0, then a linear read-out whose bias carries ``(2d+1) * offset``.
    """
    if model.variant != "relu" or model.inner.mode != "relu":
        raise ValueError("only the ReLU variant has an exact network form")
    d, m = model.d, model.inner.width
    spline = model.outer
    eye = np.eye(m)
    inner = (
        DenseLayer(model.inner.coefficients.T.copy(), np.zeros(m)),
        DenseLayer(-eye, np.ones(m)),
        DenseLayer(-eye, np.ones(m)),
    )
    knots = np.concatenate([[0.0], spline.knots])
    weights = np.concatenate([[spline.slope0], spline.weights])
    K = knots.size
    W1 = np.zeros((m * K, d * m))
    for q in range(m):
        for i in range(d):
            W1[q * K : (q + 1) * K, i * m + q] = model.lam[i]
    b1 = -np.tile(knots, m)
    W2 = np.tile(weights, m)[None, :]
    b2 = np.array([m * spline.offset])
    spec = ModelSpec(Family.KHORDER, d=d, p=model.inner.p, activation=Activation.RELU, hd=2, hw=m, gd=1, gw=m * K)
    return spec, ModelParams(inner=inner, outer=(DenseLayer(W1, b1), DenseLayer(W2, b2)))


def kpn_param_count(p: int, n: int, d: int, variant: str = "relu") -> int:
    """Parameter count of ``K_{p,n}``; for the tanh variant ``n`` is ``N``."""
    if min(p, n, d) < 1:
        raise ValueError("p, n and d must be >= 1")
    inner = (p + 1) * (2 * d + 1)
    if variant == "relu":
        return 2 * n + d + inner
    if variant == "tanh":
        return (2 * d + 6 * n + 14) * (n - 1) + 13 + inner
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# empirical rates


SWEEPS = ("vary_n", "vary_p", "vary_N")


@dataclass
class RateTable:
    sweep: str
    sizes: list[int]
    errors: dict[int, list[float]]  # size -> REL per seed

    @property
    def medians(self) -> list[float]:
        return [float(np.median(self.errors[s])) for s in self.sizes]

    @property
    def slope(self) -> float:
        if len(self.sizes) < 3:
            return math.nan
        return fit_rate(self.sizes, self.medians)


def _sweep_spec(base: ModelSpec, sweep: str, size: int) -> ModelSpec:
    fields_ = base.to_dict()
    if sweep == "vary_n":
        fields_.update(gw=size, activation="relu")
    elif sweep == "vary_p":
        fields_.update(p=size)
    elif sweep == "vary_N":
        fields_.update(gw=6 * size, activation="tanh")
    else:
        raise ValueError(f"unknown sweep {sweep!r}; expected one of {SWEEPS}")
    return ModelSpec.from_dict(fields_)


def rate_experiment(
    problem,
    sweep: str,
    sizes: Sequence[int],
    base: ModelSpec,
    config,
    seeds: Sequence[int] = (0,),
    errors: dict | None = None,
) -> RateTable:
    """Train one K-HOrderDNN per (size, seed) and record its minimum REL.

    ``errors`` (size -> error or list of errors) skips training entirely,
    which is how the plumbing is checked.
    """
    from dataclasses import replace

    from .training import train

    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; expected one of {SWEEPS}")
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("empty sweep")
    table = RateTable(sweep, sizes, {})
    for size in sizes:
        if errors is not None:
            val = errors[size]
            table.errors[size] = [float(v) for v in np.atleast_1d(val)]
            continue
        spec = _sweep_spec(base, sweep, size)
        table.errors[size] = []
        for seed in seeds:
            _, record = train(spec, problem, replace(config, seed=int(seed)))
            table.errors[size].append(record.min_rel)
    return table


def write_rates_csv(path, table: RateTable) -> Path:
    path = Path(path)
    slope = table.slope
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("size", "REL", "slope"))
        for size, med in zip(table.sizes, table.medians):
            w.writerow([size, repr(med), repr(slope)])
    return path
