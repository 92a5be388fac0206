"""Gauss-Lobatto-Legendre nodes and Lagrange interpolation bases.

Tensor-product bases are ordered lexicographically with the last coordinate
varying fastest, i.e. basis index ``(j_1, ..., j_d)`` maps to the flat index
``sum_k j_k * (p+1)**(d-k)``.  Trained model weights depend on this order.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BasisSet",
    "CapacityError",
    "gll_nodes",
    "eval_lagrange",
    "eval_lagrange_jet",
    "tensor_basis",
    "tensor_basis_jet",
]


class CapacityError(ValueError):
    """Raised when a tensor-product basis is too large to materialize.

    The would-be basis (or parameter) count is kept on ``count`` so callers
    can report it instead of a bare failure.
    """

    def __init__(self, count: int, limit: int, what: str = "tensor basis size"):
        self.count = int(count)
        self.limit = int(limit)
        super().__init__(f"{what} {self.count} exceeds the limit {self.limit}")


@dataclass(frozen=True)
class BasisSet:
    """Order-``p`` Lagrange basis on ``[a, b]`` interpolating at GLL nodes."""

    order: int
    interval: tuple[float, float]
    nodes: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)

    @property
    def size(self) -> int:
        return self.order + 1


def _legendre(p: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_p(x), P_{p-1}(x))`` by the three-term recurrence."""
    prev = np.ones_like(x)
    cur = x.copy()
    for k in range(2, p + 1):
        prev, cur = cur, ((2 * k - 1) * x * cur - (k - 1) * prev) / k
    return cur, prev


def _gll_reference(p: int) -> np.ndarray:
    if p == 1:
        return np.array([-1.0, 1.0])
    # Chebyshev-Gauss-Lobatto initial guess, ascending.
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    for _ in range(100):
        lp, lpm1 = _legendre(p, x)
        # Newton step on (1 - x^2) P_p'(x), written with P_p and P_{p-1}.
        dx = (x * lp - lpm1) / ((p + 1) * lp)
        x = x - dx
        if np.max(np.abs(dx)) < 1e-16:
            break
    x[0], x[-1] = -1.0, 1.0
    x = 0.5 * (x - x[::-1])
    if p % 2 == 0:
        x[p // 2] = 0.0
    lp, lpm1 = _legendre(p, x[1:-1])
    resid = p * (lpm1 - x[1:-1] * lp)  # (1 - x^2) P_p'(x)
    if resid.size and np.max(np.abs(resid)) > 1e-13 * max(1.0, p * p):
        raise RuntimeError(f"GLL root-finding did not converge for p={p}")
    return x


def gll_nodes(p: int, a: float = 0.0, b: float = 1.0) -> BasisSet:
    """Return the ``p+1`` Gauss-Lobatto-Legendre nodes on ``[a, b]``.

    The interior nodes are the roots of ``P_p'`` on ``[-1, 1]`` found by
    Newton iteration, then mapped affinely.  Endpoints are exact and the node
    set is symmetrized about the midpoint.
    """
    if int(p) != p or p < 1:
        raise ValueError(f"order p must be an integer >= 1, got {p!r}")
    a, b = float(a), float(b)
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    ref = _gll_reference(int(p))
    nodes = a + (b - a) * (ref + 1.0) / 2.0
    nodes[0], nodes[-1] = a, b
    return BasisSet(order=int(p), interval=(a, b), nodes=nodes)


def _as_points(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("evaluation points must be finite")
    return arr.reshape(-1), arr.ndim == 0


def eval_lagrange(basis: BasisSet, x):
    """Values ``psi_j(x)`` of every basis function, shape ``(..., p+1)``.

    Accepts a scalar or a 1-D array of points.  Outside ``[a, b]`` the global
    interpolating polynomial is evaluated.
    """
    pts, scalar = _as_points(x)
    nodes = basis.nodes
    out = np.ones((pts.size, nodes.size))
    for i, xi in enumerate(nodes):
        denom = nodes - xi
        denom[i] = 1.0
        f = (pts[:, None] - xi) / denom[None, :]
        f[:, i] = 1.0
        out *= f
    return out[0] if scalar else out


def eval_lagrange_jet(basis: BasisSet, x):
    """Values, first and second derivatives of every basis function.

    Returns an array of shape ``(3, n, p+1)`` (or ``(3, p+1)`` for a scalar
    point) holding ``psi_j``, ``psi_j'`` and ``psi_j''``.  Derivatives come
    from the product rule applied factor by factor, so they are exact at the
    nodes too.
    """
    pts, scalar = _as_points(x)
    nodes = basis.nodes
    n, m = pts.size, nodes.size
    v = np.ones((n, m))
    d1 = np.zeros((n, m))
    d2 = np.zeros((n, m))
    for i, xi in enumerate(nodes):
        denom = nodes - xi
        denom[i] = 1.0
        slope = 1.0 / denom
        slope[i] = 0.0
        f = (pts[:, None] - xi) * slope[None, :]
        f[:, i] = 1.0
        d2 = d2 * f + 2.0 * d1 * slope
        d1 = d1 * f + v * slope
        v = v * f
    out = np.stack([v, d1, d2])
    return out[:, 0] if scalar else out


def _check_capacity(count: int, limit: int | None = None) -> None:
    limit = sys.maxsize if limit is None else limit
    if count > limit:
        raise CapacityError(count, limit)


def tensor_basis(basis: BasisSet, point, limit: int | None = None):
    """All ``(p+1)**d`` tensor-product basis values at one or many points.

    ``point`` is a ``d``-vector or an ``(n, d)`` array.  Products are laid out
    with the last coordinate varying fastest.  A ``CapacityError`` carrying
    the would-be count is raised when ``(p+1)**d`` exceeds ``limit``
    (default: the platform's maximum index).
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n, d = pts.shape
    if d < 1:
        raise ValueError("point dimension must be >= 1")
    _check_capacity(basis.size**d, limit)
    out = np.ones((n, 1))
    for k in range(d):
        vals = eval_lagrange(basis, pts[:, k])
        out = (out[:, :, None] * vals[:, None, :]).reshape(n, -1)
    return out[0] if single else out


def tensor_basis_jet(basis: BasisSet, points, limit: int | None = None) -> np.ndarray:
    """Tensor basis with per-coordinate partials and its Laplacian.

    Returns shape ``(d + 2, n, (p+1)**d)``: channel 0 holds the values,
    channels ``1..d`` the partials along ``x_1..x_d`` and channel ``d + 1``
    the sum of the pure second partials.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = pts.shape
    _check_capacity(basis.size**d, limit)
    jets = [eval_lagrange_jet(basis, pts[:, k]) for k in range(d)]

    def product(axis, order):
        out = np.ones((n, 1))
        for k in range(d):
            vals = jets[k][order if k == axis else 0]
            out = (out[:, :, None] * vals[:, None, :]).reshape(n, -1)
        return out

    channels = [product(-1, 0)]
    channels += [product(axis, 1) for axis in range(d)]
    channels.append(sum(product(axis, 2) for axis in range(d)))
    return np.stack(channels)
