"""Targets, exact solutions, right-hand sides, domains and samplers.

Exact solutions are written against a list of coordinate columns so that the
same closed form can be evaluated on plain arrays or on :class:`~khorder.diffengine.Jet`
columns; the latter gives the autodiff-manufactured right-hand side.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import diffengine as de
from .diffengine import Jet

__all__ = [
    "Domain",
    "Kind",
    "Problem",
    "SampleBatch",
    "PROBLEMS",
    "EVAL_SEED",
    "get_problem",
    "target_g1",
    "lshape_solution",
    "sample",
    "eval_grid",
    "allocate",
]

EVAL_SEED = 20240917
GRID_SIZE = 100


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Domain:
    """Unit cube ``[0,1]^d`` or the 2D L-shape ``(-1,1)^2 minus [0,1]x[-1,0]``."""

    kind: str
    d: int

    def __post_init__(self):
        if self.kind not in ("cube", "lshape"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "lshape" and self.d != 2:
            raise ValueError("the L-shape is two-dimensional")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @classmethod
    def cube(cls, d: int) -> "Domain":
        return cls("cube", d)

    @classmethod
    def lshape(cls) -> "Domain":
        return cls("lshape", 2)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "cube":
            return np.zeros(self.d), np.ones(self.d)
        return -np.ones(2), np.ones(2)

    def _closed(self, X):
        lo, hi = self.bbox
        inside = np.all((X >= lo) & (X <= hi), axis=1)
        if self.kind == "lshape":
            inside &= ~((X[:, 0] > 0) & (X[:, 1] < 0))
        return inside

    def contains(self, X) -> np.ndarray:
        """Open-interior predicate for points of shape (n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        lo, hi = self.bbox
        inside = np.all((X > lo) & (X < hi), axis=1)
        if self.kind == "lshape":
            inside &= ~((X[:, 0] >= 0) & (X[:, 1] <= 0))
        return inside

    def on_boundary(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self._closed(X) & ~self.contains(X)

    def segments(self) -> list[tuple[int, float, np.ndarray, np.ndarray]]:
        """Boundary pieces as ``(pinned axis, value, lower, upper)`` boxes.

        Cube: the ``2d`` faces.  L-shape: six axis-aligned segments, listed
        counterclockwise from the bottom edge.
        """
        if self.kind == "cube":
            out = []
            for axis in range(self.d):
                for value in (0.0, 1.0):
                    lo, hi = np.zeros(self.d), np.ones(self.d)
                    lo[axis] = hi[axis] = value
                    out.append((axis, value, lo, hi))
            return out
        pieces = [
            (1, -1.0, (-1.0, 0.0)),  # bottom of the left leg
            (0, 0.0, (-1.0, 0.0)),  # reentrant vertical edge
            (1, 0.0, (0.0, 1.0)),  # reentrant horizontal edge
            (0, 1.0, (0.0, 1.0)),  # right edge
            (1, 1.0, (-1.0, 1.0)),  # top edge
            (0, -1.0, (-1.0, 1.0)),  # left edge
        ]
        out = []
        for axis, value, (a, b) in pieces:
            lo, hi = np.empty(2), np.empty(2)
            lo[axis] = hi[axis] = value
            lo[1 - axis], hi[1 - axis] = a, b
            out.append((axis, value, lo, hi))
        return out

    def segment_measures(self) -> np.ndarray:
        out = []
        for axis, _, lo, hi in self.segments():
            free = np.delete(hi - lo, axis)
            out.append(float(np.prod(free)) if free.size else 1.0)
        return np.array(out)


def allocate(total: int, weights) -> np.ndarray:
    """Split ``total`` proportionally to ``weights`` by largest remainder.

    Ties in the fractional part go to the earlier piece.
    """
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("need total >= 0 and non-negative weights with positive sum")
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    rest = total - counts.sum()
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


# ---------------------------------------------------------------------------
# closed forms


def target_g1(x, jmax: int = 5):
    """``sum_{j=0}^{jmax} sin(2^j pi x)``; accepts arrays or Jets."""
    out = 0.0
    for j in range(jmax + 1):
        out = out + de.sin((2.0**j * math.pi) * x)
    return out


def _prod(terms):
    out = 1.0
    for t in terms:
        out = out * t
    return out


def _triple_sum(cols, fn, count):
    vals = [fn(c) for c in cols[: count + 2]]
    out = 0.0
    for i in range(count):
        out = out + vals[i] * vals[i + 1] * vals[i + 2]
    return out


def _polar_angle(x1, x2):
    """Polar angle in ``[0, 2pi)``, so the L-shape sees ``[0, 3pi/2]``."""
    theta = de.atan2(x2, x1)
    if isinstance(theta, Jet):
        shift = np.where(theta.value < 0, 2.0 * math.pi, 0.0)
        return Jet(theta.value + shift, theta.d1, theta.d2)
    return np.where(theta < 0, theta + 2.0 * math.pi, theta)


def _lshape_cols(cols):
    x1, x2 = cols
    r23 = de.power(x1 * x1 + x2 * x2, 1.0 / 3.0)
    return r23 * de.sin((2.0 / 3.0) * _polar_angle(x1, x2)) + x2 * de.cos(4.0 * math.pi * (x1 + 2.0 * x2))


def lshape_solution(x1, x2):
    """``r^(2/3) sin(2 theta/3) + x2 cos(4 pi (x1 + 2 x2))`` on the closed L-shape."""
    a, b = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    pts = np.stack(np.broadcast_arrays(a, b), axis=-1).reshape(-1, 2)
    if not np.all(Domain.lshape()._closed(pts)):
        raise ValueError("point outside the L-shaped domain")
    out = _lshape_cols([a, b])
    return float(out) if np.ndim(out) == 0 else out


def _lshape_rhs(X):
    x1, x2 = X[:, 0], X[:, 1]
    phi = 4.0 * math.pi * (x1 + 2.0 * x2)
    return 80.0 * math.pi**2 * x2 * np.cos(phi) + 16.0 * math.pi * np.sin(phi)


# ---------------------------------------------------------------------------
# problems


class Kind(str, enum.Enum):
    FIT = "fit"
    POISSON = "poisson"
    HELMHOLTZ = "helmholtz"


@dataclass(frozen=True)
class Problem:
    """A fitting target or a Dirichlet problem with a known exact solution.

    ``solution`` maps a list of ``d`` coordinate columns (arrays or Jets) to
    the solution value.  ``analytic_rhs`` is an optional hand-derived
    right-hand side on an (n, d) array.
    """

    id: str
    kind: Kind
    domain: Domain
    solution: Callable[[Sequence[Any]], Any]
    k: float = 0.0
    analytic_rhs: Callable[[np.ndarray], np.ndarray] | None = None
    options: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def operator(self) -> str:
        return self.kind.value

    def _points(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ValueError(f"expected points of shape (n, {self.d}), got {X.shape}")
        return X

    def exact(self, X) -> np.ndarray:
        X = self._points(X)
        out = self.solution([X[:, i] for i in range(self.d)])
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (len(X),)).copy()

    def laplacian(self, X) -> np.ndarray:
        """Laplacian of the exact solution by one jet pass per coordinate."""
        X = self._points(X)
        lap = np.zeros(len(X))
        for k in range(self.d):
            cols = [Jet.variable(X[:, i]) if i == k else X[:, i] for i in range(self.d)]
            lap += Jet.lift(self.solution(cols)).d2
        return lap

    def rhs(self, X, mode: str = "auto") -> np.ndarray:
        """Right-hand side ``f``: "analytic", "autodiff" or "auto" (analytic if known)."""
        if self.kind is Kind.FIT:
            raise ValueError(f"{self.id} is a fitting problem and has no right-hand side")
        X = self._points(X)
        if mode == "auto":
            mode = "analytic" if self.analytic_rhs is not None else "autodiff"
        if mode == "analytic":
            if self.analytic_rhs is None:
                raise ValueError(f"{self.id} has no analytic right-hand side")
            return np.asarray(self.analytic_rhs(X), dtype=np.float64)
        if mode != "autodiff":
            raise ValueError(f"unknown rhs mode {mode!r}")
        lap = self.laplacian(X)
        if self.kind is Kind.POISSON:
            return -lap
        return lap + self.k**2 * self.exact(X)

    def boundary_values(self, X) -> np.ndarray:
        return self.exact(X)


@dataclass(frozen=True)
class SampleBatch:
    interior: np.ndarray
    boundary: np.ndarray
    f: np.ndarray
    g: np.ndarray


def _sample_interior(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = domain.bbox
    parts, have = [], 0
    while have < n:
        m = max(n - have, 16) if domain.kind == "cube" else int(1.4 * (n - have)) + 16
        X = lo + (hi - lo) * rng.random((m, domain.d))
        X = X[domain.contains(X)]
        parts.append(X)
        have += len(X)
    return np.concatenate(parts)[:n] if parts else np.zeros((0, domain.d))


def _sample_boundary(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros((0, domain.d))
    counts = allocate(n, domain.segment_measures())
    parts = []
    for (axis, value, lo, hi), m in zip(domain.segments(), counts):
        X = lo + (hi - lo) * rng.random((m, domain.d))
        X[:, axis] = value
        parts.append(X)
    return np.concatenate(parts)


def sample(problem: Problem, n_f: int, n_b: int, rng: np.random.Generator) -> SampleBatch:
    """Fresh interior and boundary points with their ``f`` and ``g`` values.

    For fitting problems ``f`` holds the target values and the boundary set
    is empty.
    """
    if n_f < 0 or n_b < 0:
        raise ValueError("sample counts must be non-negative")
    interior = _sample_interior(problem.domain, n_f, rng)
    if problem.kind is Kind.FIT:
        return SampleBatch(interior, np.zeros((0, problem.d)), problem.exact(interior), np.zeros(0))
    boundary = _sample_boundary(problem.domain, n_b, rng)
    f = problem.rhs(interior) if n_f else np.zeros(0)
    g = problem.boundary_values(boundary) if n_b else np.zeros(0)
    return SampleBatch(interior, boundary, f, g)


def eval_grid(problem: Problem, n: int = GRID_SIZE, seed: int = EVAL_SEED) -> np.ndarray:
    """Fixed evaluation points: an ``n x n`` grid on the bounding box of the
    first two coordinates, restricted to the closed domain.

    For ``d > 2`` every grid point gets one draw of ``(x_3, ..., x_d)`` from
    a generator seeded with ``seed``.  Points are ordered with ``x_1`` varying
    slowest.
    """
    domain = problem.domain
    if domain.d < 2:
        raise ValueError("the evaluation grid needs d >= 2")
    lo, hi = domain.bbox
    a = np.linspace(lo[0], hi[0], n)
    b = np.linspace(lo[1], hi[1], n)
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = np.column_stack([A.ravel(), B.ravel()])
    if domain.d > 2:
        rng = np.random.Generator(np.random.Philox(key=seed))
        extra = lo[2:] + (hi[2:] - lo[2:]) * rng.random((len(pts), domain.d - 2))
        pts = np.column_stack([pts, extra])
    return pts[domain._closed(pts)]


# ---------------------------------------------------------------------------
# registry


def _fit2d(d, jmax):
    return Problem("fit2d_eq41", Kind.FIT, Domain.cube(2), lambda c: target_g1(c[0], jmax) * target_g1(c[1], jmax), options={"jmax": jmax})


def _fit_eq43(d, jmax):
    if d < 3:
        raise ValueError("fit_eq43 needs d >= 3")
    return Problem("fit_eq43", Kind.FIT, Domain.cube(d), lambda c: _triple_sum(c, lambda x: target_g1(x, jmax), d - 2), options={"jmax": jmax})


def _poisson2d_eq41(d, jmax):
    return Problem("poisson2d_eq41", Kind.POISSON, Domain.cube(2), lambda c: target_g1(c[0], jmax) * target_g1(c[1], jmax), options={"jmax": jmax})


def _poisson2d_sin8(d, jmax):
    w = 8.0 * math.pi
    return Problem(
        "poisson2d_sin8",
        Kind.POISSON,
        Domain.cube(2),
        lambda c: de.sin(w * c[0]) * de.sin(w * c[1]),
        analytic_rhs=lambda X: 2.0 * w * w * np.sin(w * X[:, 0]) * np.sin(w * X[:, 1]),
    )


def _poisson_lshape(d, jmax):
    return Problem("poisson_lshape", Kind.POISSON, Domain.lshape(), _lshape_cols, analytic_rhs=_lshape_rhs)


def _sine_product(c):
    return _prod(de.sin(math.pi * x) for x in c)


def _eq45(kind, pid):
    def build(d, jmax):
        if kind is Kind.POISSON:
            rhs = lambda X: d * math.pi**2 * np.prod(np.sin(math.pi * X), axis=1)  # noqa: E731
            k = 0.0
        else:
            k = 5.0
            rhs = lambda X: (k * k - d * math.pi**2) * np.prod(np.sin(math.pi * X), axis=1)  # noqa: E731
        return Problem(pid, kind, Domain.cube(d), _sine_product, k=k, analytic_rhs=rhs)

    return build


def _eq46(d, jmax):
    def sol(c):
        out = 0.0
        for x in c:
            out = out + target_g1(x, jmax)
        return out

    def rhs(X):
        out = np.zeros(len(X))
        for j in range(jmax + 1):
            w = 2.0**j * math.pi
            out += w * w * np.sin(w * X).sum(axis=1)
        return out

    return Problem("poisson10d_eq46", Kind.POISSON, Domain.cube(d), sol, analytic_rhs=rhs, options={"jmax": jmax})


def _need_ten(d, pid):
    if d < 10:
        raise ValueError(f"{pid} uses coordinates up to x_10 and needs d >= 10")


def _eq47(d, jmax):
    _need_ten(d, "poisson10d_eq47")
    return Problem("poisson10d_eq47", Kind.POISSON, Domain.cube(d), lambda c: _triple_sum(c, lambda x: de.sin(10.0 * math.pi * x), 8))


def _eq48(kind, pid):
    def build(d, jmax):
        _need_ten(d, pid)
        k = 5.0 if kind is Kind.HELMHOLTZ else 0.0
        return Problem(pid, kind, Domain.cube(d), lambda c: _triple_sum(c, lambda x: target_g1(x, jmax), 8), k=k, options={"jmax": jmax})

    return build


def _helmholtz2d(d, jmax):
    w, k = 25.0 * math.pi, 5.0
    return Problem(
        "helmholtz2d_eq410",
        Kind.HELMHOLTZ,
        Domain.cube(2),
        lambda c: de.sin(w * c[0]) * de.sin(w * c[1]),
        k=k,
        analytic_rhs=lambda X: (k * k - 2.0 * w * w) * np.sin(w * X[:, 0]) * np.sin(w * X[:, 1]),
    )


def _tensor(d, jmax):
    def sol(c):
        out = 0.0
        for k in range(len(c)):
            out = out + de.sin(2.0 * math.pi * c[k]) * _prod(de.sin(math.pi * x) for i, x in enumerate(c) if i != k)
        return out

    def rhs(X):
        S = np.sin(math.pi * X)
        u = sum(np.sin(2.0 * math.pi * X[:, k]) * np.prod(np.delete(S, k, axis=1), axis=1) for k in range(X.shape[1]))
        return (X.shape[1] + 3) * math.pi**2 * u

    return Problem("poisson_tensor_dD", Kind.POISSON, Domain.cube(d), sol, analytic_rhs=rhs)


def _nontensor(d, jmax):
    if d < 2:
        raise ValueError("poisson_nontensor_dD needs d >= 2")

    def sol(c):
        out = 0.0
        for i in range(len(c) - 1):
            out = out + de.sin(16.0 * math.pi * c[i] * c[i + 1])
        return out

    return Problem("poisson_nontensor_dD", Kind.POISSON, Domain.cube(d), sol)


# id -> (builder, default d, whether d may be overridden)
PROBLEMS: dict[str, tuple[Callable[[int, int], Problem], int, bool]] = {
    "fit2d_eq41": (_fit2d, 2, False),
    "fit_eq43": (_fit_eq43, 10, True),
    "poisson2d_eq41": (_poisson2d_eq41, 2, False),
    "poisson2d_sin8": (_poisson2d_sin8, 2, False),
    "poisson_lshape": (_poisson_lshape, 2, False),
    "poisson10d_eq45": (_eq45(Kind.POISSON, "poisson10d_eq45"), 10, True),
    "poisson10d_eq46": (_eq46, 10, True),
    "poisson10d_eq47": (_eq47, 10, True),
    "poisson10d_eq48": (_eq48(Kind.POISSON, "poisson10d_eq48"), 10, True),
    "helmholtz2d_eq410": (_helmholtz2d, 2, False),
    "helmholtz10d_eq45": (_eq45(Kind.HELMHOLTZ, "helmholtz10d_eq45"), 10, True),
    "helmholtz10d_eq48": (_eq48(Kind.HELMHOLTZ, "helmholtz10d_eq48"), 10, True),
    "poisson_tensor_dD": (_tensor, 5, True),
    "poisson_nontensor_dD": (_nontensor, 5, True),
}


def get_problem(pid: str, d: int | None = None, jmax: int = 5) -> Problem:
    """Look up a problem by its registry id.

    ``d`` overrides the dimension where the problem allows it; ``jmax`` caps
    the frequency ladder of targets built from ``target_g1``.
    """
    if pid not in PROBLEMS:
        raise KeyError(f"unknown problem {pid!r}; known: {', '.join(sorted(PROBLEMS))}")
    if int(jmax) != jmax or jmax < 0:
        raise ValueError("jmax must be a non-negative integer")
    builder, default_d, free = PROBLEMS[pid]
    if d is None:
        d = default_d
    elif d != default_d and not free:
        raise ValueError(f"{pid} is fixed at d={default_d}")
    return builder(int(d), int(jmax))
