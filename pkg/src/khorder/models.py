"""PINN, HOrderDNN and K-HOrderDNN: specs, initialization, evaluation.

Depth conventions:

* PINN / HOrderDNN: ``L`` hidden layers of width ``W``.  The first hidden
  layer maps the input (raw coordinates, or the ``(p+1)**d`` tensor basis)
  to ``W``; a final affine layer maps ``W`` to the scalar output.
* K-HOrderDNN: the shared inner subnetwork ``h_p`` maps one coordinate
  through the ``p+1`` univariate basis functions, ``hd`` hidden layers of
  width ``hw`` and a linear ``2d+1``-wide output layer.  Its outputs for all
  ``d`` coordinates are concatenated (coordinate-major) and fed to the outer
  subnetwork: ``G1`` (``d(2d+1) -> gw``), ``gd - 1`` further hidden layers of
  width ``gw`` and the scalar output layer ``G2``.

Flat parameter order (used by checkpoints and gradients): inner layers
first, then outer layers; within a layer the weight (row-major) precedes the
bias.
"""

from __future__ import annotations

import enum
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffengine as de
from .basis import BasisSet, CapacityError, eval_lagrange_jet, gll_nodes, tensor_basis, tensor_basis_jet
from .diffengine import Activation, DenseLayer

__all__ = [
    "Family",
    "ModelSpec",
    "ModelParams",
    "DEFAULT_MAX_PARAMS",
    "make_rng",
    "count_params",
    "is_tractable",
    "layer_shapes",
    "build",
    "forward_jet",
    "evaluate",
    "evaluate_laplacian",
    "save_checkpoint",
    "load_checkpoint",
    "check_params",
    "with_params",
    "zero_outer",
]

# Parameter budget above which a spec is reported as intractable.  With this
# budget the tractable/intractable split of the HOrderDNN rows in the
# high-dimensional fitting table (d = 10, 20, 50) is reproduced exactly.
DEFAULT_MAX_PARAMS = 10**8

CHECKPOINT_VERSION = 1


class Family(str, enum.Enum):
    PINN = "PINN"
    HORDER = "HOrderDNN"
    KHORDER = "KHOrderDNN"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor.  Unused size fields are ignored per family."""

    family: Family
    d: int
    p: int | None = None
    activation: Activation = Activation.TANH
    L: int = 0
    W: int = 0
    hd: int = 0
    hw: int = 0
    gd: int = 0
    gw: int = 0
    interval: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "interval", tuple(float(v) for v in self.interval))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.family is Family.PINN:
            _need(self, L=1, W=1)
        elif self.family is Family.HORDER:
            _need(self, p=1, L=1, W=1)
        else:
            _need(self, p=1, hd=1, hw=1, gd=1, gw=1)
        a, b = self.interval
        if not a < b:
            raise ValueError(f"bad basis interval {self.interval}")

    @property
    def inner_width(self) -> int:
        return 2 * self.d + 1

    def basis(self) -> BasisSet:
        return gll_nodes(self.p, *self.interval)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["family"] = self.family.value
        out["activation"] = self.activation.value
        out["interval"] = list(self.interval)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        data = dict(data)
        data["interval"] = tuple(data.get("interval", (0.0, 1.0)))
        return cls(**data)


def _need(spec: ModelSpec, **minimums) -> None:
    for name, low in minimums.items():
        value = getattr(spec, name)
        if value is None or value < low:
            raise ValueError(f"{spec.family.value} needs {name} >= {low}, got {value}")


@dataclass(frozen=True)
class ModelParams:
    """Weights of one model: shared inner stack (K-HOrderDNN only) and outer stack."""

    inner: tuple[DenseLayer, ...] = ()
    outer: tuple[DenseLayer, ...] = field(default_factory=tuple)

    @property
    def layers(self) -> tuple[DenseLayer, ...]:
        return self.inner + self.outer

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    @classmethod
    def from_arrays(cls, arrays, n_inner: int) -> "ModelParams":
        layers = [DenseLayer(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(arrays) // 2)]
        return cls(inner=tuple(layers[:n_inner]), outer=tuple(layers[n_inner:]))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(layer.size for layer in self.layers)


def layer_shapes(spec: ModelSpec) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """(out, in) weight shapes of the inner and outer stacks.

    HOrderDNN shapes may involve astronomically large integers; they are
    plain Python ints.
    """
    if spec.family is Family.KHORDER:
        inner = [spec.p + 1] + [spec.hw] * spec.hd + [spec.inner_width]
        outer = [spec.d * spec.inner_width] + [spec.gw] * spec.gd + [1]
    else:
        first = spec.d if spec.family is Family.PINN else (spec.p + 1) ** spec.d
        inner = []
        outer = [first] + [spec.W] * spec.L + [1]
    pairs = lambda w: [(b, a) for a, b in zip(w[:-1], w[1:])]  # noqa: E731
    return pairs(inner) if inner else [], pairs(outer)


def count_params(spec: ModelSpec) -> int:
    """Exact number of trainable scalars (big-integer safe)."""
    inner, outer = layer_shapes(spec)
    return sum(o * i + o for o, i in inner + outer)


def is_tractable(spec: ModelSpec, max_params: int = DEFAULT_MAX_PARAMS) -> bool:
    return count_params(spec) <= max_params


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    # Philox is counter based: the draw sequence depends only on (seed, stream).
    return np.random.Generator(np.random.Philox(key=(int(seed) % 2**64) * 2**64 + stream))


def _xavier(rng: np.random.Generator, out_dim: int, in_dim: int) -> DenseLayer:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return DenseLayer(rng.uniform(-bound, bound, size=(out_dim, in_dim)), np.zeros(out_dim))


def build(spec: ModelSpec, seed: int = 0, max_params: int = DEFAULT_MAX_PARAMS) -> ModelParams:
    """Xavier-uniform weights and zero biases, drawn layer by layer in flat order."""
    total = count_params(spec)
    if total > max_params:
        raise CapacityError(total, max_params, what="parameter count")
    rng = make_rng(seed)
    inner, outer = layer_shapes(spec)
    return ModelParams(
        inner=tuple(_xavier(rng, o, i) for o, i in inner),
        outer=tuple(_xavier(rng, o, i) for o, i in outer),
    )


def check_params(spec: ModelSpec, params: ModelParams) -> None:
    inner, outer = layer_shapes(spec)
    got_inner = [l.weight.shape for l in params.inner]
    got_outer = [l.weight.shape for l in params.outer]
    if got_inner != [tuple(s) for s in inner] or got_outer != [tuple(s) for s in outer]:
        raise ValueError(f"parameters do not match {spec.family.value} spec shapes")


def _acts(spec: ModelSpec, n: int) -> list[Activation]:
    return [spec.activation] * (n - 1) + [Activation.IDENTITY]


def forward_jet(spec: ModelSpec, leaves, X: np.ndarray, derivatives: bool, n_inner: int | None = None):
    """Build the tape for a batch ``X`` of shape (B, d).

    ``leaves`` are ``Var`` objects in flat parameter order.  Returns the
    output jet stack of shape ``(C, B, 1)`` with ``C = d + 2`` when
    ``derivatives`` is set and 1 otherwise.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d:
        raise ValueError(f"expected points of shape (B, {spec.d}), got {X.shape}")
    B, d = X.shape
    if n_inner is None:
        n_inner = len(layer_shapes(spec)[0])
    pairs = [(leaves[2 * i], leaves[2 * i + 1]) for i in range(len(leaves) // 2)]
    inner, outer = pairs[:n_inner], pairs[n_inner:]

    if spec.family is Family.PINN:
        x = de.constant(de.seed_jet(X, derivatives))
    elif spec.family is Family.HORDER:
        basis = spec.basis()
        if derivatives:
            x = de.constant(tensor_basis_jet(basis, X))
        else:
            x = de.constant(tensor_basis(basis, X)[None])
    else:
        basis = spec.basis()
        jet = eval_lagrange_jet(basis, X.reshape(-1))  # (3, B*d, p+1)
        h = de.constant(jet if derivatives else jet[:1])
        h = de.stack_forward(h, [(W, b, a) for (W, b), a in zip(inner, _acts(spec, len(inner)))])
        h = de.reshape(h, (h.value.shape[0], B, d, spec.inner_width))
        W1, b1 = outer[0]
        x = de.jet_activation(de.kst_merge(h, W1, b1), spec.activation)
        rest = outer[1:]
        return de.stack_forward(x, [(W, b, a) for (W, b), a in zip(rest, _acts(spec, len(rest)))])

    return de.stack_forward(x, [(W, b, a) for (W, b), a in zip(outer, _acts(spec, len(outer)))])


def _leaves(params: ModelParams):
    return [de.constant(a) for a in params.arrays()]


def _points(spec: ModelSpec, point):
    arr = np.asarray(point, dtype=np.float64)
    single = arr.ndim == 1
    arr = arr.reshape(-1, spec.d)
    return arr, single


def evaluate(spec: ModelSpec, params: ModelParams, point, chunk: int = 65536):
    """Network output at one point (d-vector) or a batch of shape (B, d)."""
    check_params(spec, params)
    X, single = _points(spec, point)
    leaves = _leaves(params)
    out = np.concatenate(
        [forward_jet(spec, leaves, X[i : i + chunk], False).value[0, :, 0] for i in range(0, max(len(X), 1), chunk)]
    ) if len(X) else np.zeros(0)
    return float(out[0]) if single else out


def evaluate_laplacian(spec: ModelSpec, params: ModelParams, point, chunk: int = 16384):
    """Input Laplacian of the network at one point or a batch."""
    check_params(spec, params)
    X, single = _points(spec, point)
    leaves = _leaves(params)
    parts = [de.laplacian(forward_jet(spec, leaves, X[i : i + chunk], True)).value for i in range(0, len(X), chunk)]
    out = np.concatenate(parts) if parts else np.zeros(0)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, spec: ModelSpec, params: ModelParams, extra: dict | None = None) -> Path:
    """Write an ``.npz`` container: format version, spec JSON, arrays ``p000...``.

    Arrays are stored in flat parameter order, so loading is bitwise exact.
    """
    path = Path(path)
    meta = {"version": CHECKPOINT_VERSION, "spec": spec.to_dict(), "n_inner": len(params.inner)}
    if extra:
        meta["extra"] = extra
    arrays = {f"p{i:03d}": a for i, a in enumerate(params.arrays())}
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path) -> tuple[ModelSpec, ModelParams, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        keys = sorted(k for k in data.files if k.startswith("p"))
        arrays = [data[k].copy() for k in keys]
    spec = ModelSpec.from_dict(meta["spec"])
    params = ModelParams.from_arrays(arrays, meta["n_inner"])
    check_params(spec, params)
    return spec, params, meta.get("extra", {})


def with_params(params: ModelParams, arrays) -> ModelParams:
    return ModelParams.from_arrays(list(arrays), len(params.inner))


def zero_outer(params: ModelParams) -> ModelParams:
    """Copy of ``params`` with every outer weight and bias set to zero."""
    outer = tuple(DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.outer)
    return ModelParams(inner=params.inner, outer=outer)
