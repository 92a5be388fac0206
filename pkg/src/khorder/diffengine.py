"""Dense-network evaluation with jets and reverse-mode parameter gradients.

Two mechanisms live here:

* A small tape (``Var``) whose primitives act on whole batches.  Network
  inputs are carried as *jet stacks*: arrays of shape ``(C, B, n)`` where
  channel 0 holds values and, for ``m`` seeded coordinate directions,
  channels ``1..m`` hold first directional derivatives and channel
  ``m+1`` the sum of the second directional derivatives (the Laplacian).
  Second derivatives enter every layer linearly, so one summed channel is
  exact.  Back-propagating through a jet pass yields gradients of losses
  that contain input Laplacians.
* ``Jet``: an eager forward-mode (value, d1, d2) number for closed-form
  functions such as exact PDE solutions.

All arithmetic is float64.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Activation",
    "DenseLayer",
    "Var",
    "constant",
    "parameter",
    "backward",
    "value_and_grad",
    "seed_jet",
    "jet_affine",
    "jet_activation",
    "kst_merge",
    "values",
    "laplacian",
    "pde_residual",
    "mean_square",
    "forward",
    "input_laplacian",
    "param_gradient",
    "Jet",
    "sin",
    "cos",
    "exp",
    "atan2",
    "power",
]


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"

    def derivs(self, z: np.ndarray, order: int = 2):
        """Return ``[s(z), s'(z), ..., s^(order)(z)]``.

        ReLU uses ``s'(0) = 0`` and ``s'' = s''' = 0``.
        """
        if self is Activation.TANH:
            t = np.tanh(z)
            out = [t]
            if order >= 1:
                sech2 = 1.0 - t * t
                out.append(sech2)
            if order >= 2:
                out.append(-2.0 * t * sech2)
            if order >= 3:
                out.append((6.0 * t * t - 2.0) * sech2)
            return out
        if self is Activation.RELU:
            pos = z > 0
            out = [np.where(pos, z, 0.0)]
            if order >= 1:
                out.append(pos.astype(np.float64))
            zero = np.zeros_like(z)
            out.extend([zero] * max(0, order - 1))
            return out
        out = [z]
        if order >= 1:
            out.append(np.ones_like(z))
        zero = np.zeros_like(z)
        out.extend([zero] * max(0, order - 1))
        return out

    def __call__(self, z):
        return self.derivs(np.asarray(z, dtype=np.float64), order=0)[0]


@dataclass(frozen=True)
class DenseLayer:
    """Affine map ``x -> weight @ x + bias`` with ``weight`` of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"inconsistent layer shapes: weight {w.shape}, bias {b.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size


# ---------------------------------------------------------------------------
# tape


class Var:
    """A node of the reverse-mode tape."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=None):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    def accumulate(self, g, owned: bool = False):
        """Add ``g`` to the gradient; ``owned`` arrays may be kept without copying."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if owned else np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        shape = getattr(self.value, "shape", ())
        return f"Var(shape={shape}, requires_grad={self.requires_grad})"


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64), requires_grad=False)


def parameter(value) -> Var:
    return Var(np.array(value, dtype=np.float64), requires_grad=True)


def _topological(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Var, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every parameter."""
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(_topological(root)):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def value_and_grad(fn: Callable[[list[Var]], Var], arrays: Sequence[np.ndarray]):
    """Evaluate scalar ``fn`` on parameter leaves and return (value, grads)."""
    leaves = [parameter(a) for a in arrays]
    out = fn(leaves)
    backward(out)
    grads = [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in leaves]
    return float(out.value), grads


# ---------------------------------------------------------------------------
# jet primitives


def seed_jet(x: np.ndarray, directions: bool = True) -> np.ndarray:
    """Jet stack for raw inputs ``x`` of shape (B, d).

    With ``directions`` every coordinate axis is seeded, giving ``d + 2``
    channels (value, d partials, Laplacian); otherwise only the value
    channel is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    if not directions:
        return x[None]
    B, d = x.shape
    out = np.zeros((d + 2, B, d))
    out[0] = x
    for k in range(d):
        out[1 + k, :, k] = 1.0
    return out


def jet_affine(x: Var, weight: Var, bias: Var) -> Var:
    """Apply ``W`` to every channel and add ``b`` to the value channel only."""
    X, W, b = x.value, weight.value, bias.value
    if X.shape[-1] != W.shape[1]:
        raise ValueError(f"input width {X.shape[-1]} does not match layer input {W.shape[1]}")
    C, B, n = X.shape
    Z = (X.reshape(C * B, n) @ W.T).reshape(C, B, W.shape[0])
    Z[0] += b

    def back(G):
        G2 = G.reshape(C * B, -1)
        if weight.requires_grad:
            weight.accumulate(G2.T @ X.reshape(C * B, n), owned=True)
        if bias.requires_grad:
            bias.accumulate(G[0].sum(axis=0), owned=True)
        if x.requires_grad:
            x.accumulate((G2 @ W).reshape(C, B, n), owned=True)

    return Var(Z, (x, weight, bias), back)


def jet_activation(z: Var, activation: Activation) -> Var:
    """Chain rule for values, directional first derivatives and the Laplacian.

    With first-derivative channels ``z_k`` and Laplacian channel ``z_S``:
    ``a = s(z)``, ``a_k = s'(z) z_k``, ``a_S = s'(z) z_S + s''(z) sum_k z_k**2``.
    """
    act = Activation(activation)
    if act is Activation.IDENTITY:
        return z
    Z = z.value
    shape = Z.shape
    Z2 = Z.reshape(shape[0], -1)

    if act is Activation.RELU:
        # s'' = 0: every channel is masked by the sign of the value channel.
        mask = Z2[0] > 0
        out = np.maximum(Z2, 0.0) if shape[0] == 1 else Z2 * mask

        def back_relu(G):
            z.accumulate((G.reshape(Z2.shape) * mask).reshape(shape), owned=True)

        return Var(out.reshape(shape), (z,), back_relu)

    if shape[0] == 1:
        t = np.tanh(Z2[0])

        def back_value(G):
            z.accumulate(_kernels.tanh_value_bwd(t, G.reshape(-1)).reshape(shape), owned=True)

        return Var(t.reshape(shape), (z,), back_value)

    t = np.tanh(Z2[0])
    out = _kernels.tanh_fwd(Z2, t)

    def back(G):
        G2 = np.ascontiguousarray(G).reshape(Z2.shape)
        z.accumulate(_kernels.tanh_bwd(Z2, t, G2).reshape(shape), owned=True)

    return Var(out.reshape(shape), (z,), back)


def kst_merge(h: Var, weight: Var, bias: Var) -> Var:
    """Concatenate per-coordinate inner outputs and apply the first outer layer.

    ``h`` holds the shared inner subnetwork's output for every coordinate as
    an array of shape ``(C, B, d, r)`` with ``C`` = 1 (values) or 3 (value,
    d/dx, d2/dx2 of the univariate input).  The derivative along ``x_k`` of
    the concatenation is nonzero only in block ``k``, so output channel
    ``1 + k`` uses only the ``k``-th column block of ``weight``; the
    Laplacian channel is the second-derivative blocks pushed through the
    whole layer.
    """
    H, W, b = h.value, weight.value, bias.value
    C, B, d, r = H.shape
    if W.shape[1] != d * r:
        raise ValueError(f"outer layer expects {W.shape[1]} inputs, got {d * r}")
    o = W.shape[0]
    Z = np.empty((1 if C == 1 else d + 2, B, o))
    Z[0] = H[0].reshape(B, d * r) @ W.T
    Z[0] += b
    if C == 3:
        for k in range(d):
            Z[1 + k] = H[1][:, k, :] @ W[:, k * r : (k + 1) * r].T
        Z[1 + d] = H[2].reshape(B, d * r) @ W.T

    def back(G):
        if weight.requires_grad:
            gW = G[0].T @ H[0].reshape(B, d * r)
            if C == 3:
                gW += G[1 + d].T @ H[2].reshape(B, d * r)
                for k in range(d):
                    gW[:, k * r : (k + 1) * r] += G[1 + k].T @ H[1][:, k, :]
            weight.accumulate(gW, owned=True)
        if bias.requires_grad:
            bias.accumulate(G[0].sum(axis=0), owned=True)
        if h.requires_grad:
            gH = np.empty_like(H)
            gH[0] = (G[0] @ W).reshape(B, d, r)
            if C == 3:
                for k in range(d):
                    gH[1][:, k, :] = G[1 + k] @ W[:, k * r : (k + 1) * r]
                gH[2] = (G[1 + d] @ W).reshape(B, d, r)
            h.accumulate(gH, owned=True)

    return Var(Z, (h, weight, bias), back)


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return Var(x.value.reshape(shape), (x,), lambda G: x.accumulate(G.reshape(old)))


def values(u: Var) -> Var:
    """Value channel of a scalar-output jet stack, shape (B,)."""
    C, B, _ = u.value.shape

    def back(G):
        g = np.zeros((C, B, 1))
        g[0, :, 0] = G
        u.accumulate(g, owned=True)

    return Var(u.value[0, :, 0].copy(), (u,), back)


def laplacian(u: Var) -> Var:
    """Sum of second directional derivatives of a scalar-output jet stack."""
    C, B, _ = u.value.shape
    if C == 1:
        raise ValueError("jet stack carries no derivative channels")

    def back(G):
        g = np.zeros((C, B, 1))
        g[-1, :, 0] = G
        u.accumulate(g, owned=True)

    return Var(u.value[-1, :, 0].copy(), (u,), back)


def pde_residual(u: Var, operator: str, target: np.ndarray, k: float = 0.0) -> Var:
    """``L u - f`` for ``L = -Laplacian`` ("poisson") or ``Laplacian + k^2`` ("helmholtz")."""
    C, B, _ = u.value.shape
    if C == 1:
        raise ValueError("jet stack carries no derivative channels")
    lap = u.value[-1, :, 0]
    if operator == "poisson":
        lap_coef, val_coef = -1.0, 0.0
    elif operator == "helmholtz":
        lap_coef, val_coef = 1.0, k * k
    else:
        raise ValueError(f"unknown operator {operator!r}")
    r = lap_coef * lap + val_coef * u.value[0, :, 0] - target

    def back(G):
        g = np.zeros((C, B, 1))
        g[0, :, 0] = val_coef * G
        g[-1, :, 0] = lap_coef * G
        u.accumulate(g, owned=True)

    return Var(r, (u,), back)


def sub(a: Var, target: np.ndarray) -> Var:
    return Var(a.value - target, (a,), lambda G: a.accumulate(G))


def mean_square(r: Var, weight: float = 1.0) -> Var:
    """``weight * mean(r**2)`` as a scalar node."""
    R = r.value
    n = R.size
    if n == 0:
        raise ValueError("mean over an empty batch")
    val = weight * float(np.mean(R * R))
    return Var(np.asarray(val), (r,), lambda G: r.accumulate((2.0 * weight / n) * float(G) * R))


def add(*terms: Var) -> Var:
    val = sum(float(t.value) for t in terms)

    def back(G):
        for t in terms:
            t.accumulate(G)

    return Var(np.asarray(val), terms, back)


# ---------------------------------------------------------------------------
# plain layer stacks


Layers = Sequence[tuple[DenseLayer, Activation]]


def stack_forward(x: Var, layers: Sequence[tuple[Var, Var, Activation]]) -> Var:
    for W, b, act in layers:
        x = jet_activation(jet_affine(x, W, b), act)
    return x


def _check_stack(layers: Layers, d: int) -> None:
    width = d
    for i, (layer, _) in enumerate(layers):
        if layer.weight.shape[1] != width:
            raise ValueError(f"layer {i} expects {layer.weight.shape[1]} inputs, got {width}")
        width = layer.weight.shape[0]


def _const_stack(layers: Layers):
    return [(constant(l.weight), constant(l.bias), Activation(a)) for l, a in layers]


def forward(layers: Layers, x) -> np.ndarray:
    """Evaluate an alternating affine/activation stack.

    ``x`` is a single input vector or a (B, n) batch.  The activation paired
    with the last layer is applied as given; networks built in this package
    pair it with ``Activation.IDENTITY``.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    _check_stack(layers, arr.shape[1])
    out = stack_forward(constant(arr[None]), _const_stack(layers)).value[0]
    return out[0] if single else out


def input_laplacian(layers: Layers, point) -> np.ndarray | float:
    """Laplacian in the inputs of a scalar-output stack, by forward jets."""
    arr = np.asarray(point, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    _check_stack(layers, arr.shape[1])
    u = stack_forward(constant(seed_jet(arr)), _const_stack(layers))
    lap = laplacian(u).value
    return float(lap[0]) if single else lap


def param_gradient(layers: Layers, loss_fn: Callable[[Var], Var], batch) -> tuple[float, list[DenseLayer]]:
    """Reverse-mode gradient of ``loss_fn`` w.r.t. every weight and bias.

    ``loss_fn`` receives the network's output jet stack (with derivative
    channels seeded along every input axis) and must return a scalar ``Var``
    that averages over the batch.  Returns ``(loss, grads)`` with ``grads``
    shaped like ``layers``.
    """
    arr = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    _check_stack(layers, arr.shape[1])
    flat = []
    for layer, _ in layers:
        flat.extend([layer.weight, layer.bias])
    acts = [Activation(a) for _, a in layers]

    def fn(leaves):
        stack = [(leaves[2 * i], leaves[2 * i + 1], acts[i]) for i in range(len(acts))]
        return loss_fn(stack_forward(constant(seed_jet(arr)), stack))

    loss, grads = value_and_grad(fn, flat)
    return loss, [DenseLayer(grads[2 * i], grads[2 * i + 1]) for i in range(len(acts))]


# ---------------------------------------------------------------------------
# eager forward jets for closed-form functions


class Jet:
    """Value with first and second derivatives along one input coordinate."""

    __slots__ = ("value", "d1", "d2")
    # Make ``ndarray * Jet`` defer to the Jet's reflected operators.
    __array_ufunc__ = None

    def __init__(self, value, d1=0.0, d2=0.0):
        self.value = np.asarray(value, dtype=np.float64)
        self.d1 = np.broadcast_to(np.asarray(d1, dtype=np.float64), self.value.shape)
        self.d2 = np.broadcast_to(np.asarray(d2, dtype=np.float64), self.value.shape)

    @classmethod
    def variable(cls, x):
        return cls(x, 1.0, 0.0)

    @staticmethod
    def lift(x):
        return x if isinstance(x, Jet) else Jet(x)

    def __add__(self, other):
        o = Jet.lift(other)
        return Jet(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-Jet.lift(other))

    def __rsub__(self, other):
        return Jet.lift(other) - self

    def __mul__(self, other):
        o = Jet.lift(other)
        return Jet(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Jet.lift(other)
        return self * _chain(o, 1.0 / o.value, -1.0 / o.value**2, 2.0 / o.value**3)

    def __rtruediv__(self, other):
        return Jet.lift(other) / self

    def __pow__(self, exponent):
        return power(self, exponent)


def _chain(x: Jet, f0, f1, f2) -> Jet:
    return Jet(f0, f1 * x.d1, f1 * x.d2 + f2 * x.d1 * x.d1)


def sin(x):
    if isinstance(x, Jet):
        s, c = np.sin(x.value), np.cos(x.value)
        return _chain(x, s, c, -s)
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        s, c = np.sin(x.value), np.cos(x.value)
        return _chain(x, c, -s, -c)
    return np.cos(x)


def exp(x):
    if isinstance(x, Jet):
        e = np.exp(x.value)
        return _chain(x, e, e, e)
    return np.exp(x)


def power(x, a: float):
    if isinstance(x, Jet):
        v = x.value
        with np.errstate(divide="ignore", invalid="ignore"):
            return _chain(x, v**a, a * v ** (a - 1), a * (a - 1) * v ** (a - 2))
    return np.power(x, a)


def atan2(y, x):
    """Polar angle; the derivative of ``atan2`` is branch independent."""
    if not (isinstance(x, Jet) or isinstance(y, Jet)):
        return np.arctan2(y, x)
    x, y = Jet.lift(x), Jet.lift(y)
    num = x.value * y.d1 - y.value * x.d1
    den = x.value**2 + y.value**2
    dnum = x.value * y.d2 - y.value * x.d2
    dden = 2.0 * (x.value * x.d1 + y.value * y.d1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = num / den
        d2 = (dnum * den - num * dden) / den**2
    return Jet(np.arctan2(y.value, x.value), d1, d2)
