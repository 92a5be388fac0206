import numpy as np
import pytest

from khorder.basis import CapacityError
from khorder.models import (
    Family,
    ModelParams,
    ModelSpec,
    build,
    check_params,
    count_params,
    evaluate,
    evaluate_laplacian,
    is_tractable,
    layer_shapes,
    load_checkpoint,
    save_checkpoint,
    zero_outer,
)
from oracles import gradient_errors, random_small_models


def _walk(spec):
    inner, outer = layer_shapes(spec)
    return sum(o * i + o for o, i in inner + outer)


def test_count_by_hand():
    # PINN d=2, L=1, W=3: (2*3+3) + (3+1)
    assert count_params(ModelSpec("PINN", d=2, L=1, W=3)) == 13
    # HOrderDNN d=2, p=1: 4 basis inputs
    assert count_params(ModelSpec("HOrderDNN", d=2, p=1, L=1, W=3)) == 4 * 3 + 3 + 4
    # K-HOrderDNN d=1, p=1, hd=1, hw=2, gd=1, gw=2: inner 2->2->3, outer 3->2->1
    assert count_params(ModelSpec("KHOrderDNN", d=1, p=1, hd=1, hw=2, gd=1, gw=2)) == (4 + 2) + (6 + 3) + (6 + 2) + (2 + 1)


@pytest.mark.parametrize("spec", random_small_models(9, seed=5))
def test_count_equals_shape_walk_and_build(spec):
    assert count_params(spec) == _walk(spec) == build(spec).size


def test_table_examples():
    assert count_params(ModelSpec("PINN", d=10, L=4, W=210)) == 135451
    assert f"{count_params(ModelSpec('KHOrderDNN', d=2, p=9, hd=3, hw=45, gd=2, gw=90)):.4E}" == "1.4136E+04"
    big = ModelSpec("HOrderDNN", d=50, p=9, L=4, W=202)
    assert f"{count_params(big):.4E}" == "2.0200E+52"
    assert not is_tractable(big)
    with pytest.raises(CapacityError):
        build(big)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("PINN", d=2, L=0, W=5)
    with pytest.raises(ValueError):
        ModelSpec("KHOrderDNN", d=2, p=3, hd=1, hw=4, gd=1, gw=0)
    with pytest.raises(ValueError):
        ModelSpec("HOrderDNN", d=0, p=1, L=1, W=1)
    with pytest.raises(ValueError):
        ModelSpec("PINN", d=2, L=1, W=1, interval=(1.0, 0.0))


def test_spec_dict_round_trip():
    spec = ModelSpec("KHOrderDNN", d=3, p=4, activation="relu", hd=2, hw=5, gd=1, gw=7, interval=(-1, 1))
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_xavier_bounds_and_zero_bias():
    spec = ModelSpec("KHOrderDNN", d=2, p=3, hd=2, hw=8, gd=2, gw=16)
    params = build(spec, seed=3)
    for layer in params.layers:
        out_dim, in_dim = layer.weight.shape
        assert np.all(np.abs(layer.weight) <= np.sqrt(6 / (in_dim + out_dim)))
        assert not np.any(layer.bias)


def test_build_deterministic_and_seed_dependent():
    spec = ModelSpec("PINN", d=2, L=2, W=6)
    assert np.array_equal(build(spec, 1).flat(), build(spec, 1).flat())
    assert not np.array_equal(build(spec, 1).flat(), build(spec, 2).flat())


def test_check_params_rejects_wrong_shapes():
    spec = ModelSpec("PINN", d=2, L=1, W=3)
    other = build(ModelSpec("PINN", d=2, L=1, W=4))
    with pytest.raises(ValueError):
        check_params(spec, other)


def test_khorder_uses_one_shared_inner_net():
    spec = ModelSpec("KHOrderDNN", d=3, p=2, hd=1, hw=3, gd=1, gw=4)
    params = build(spec)
    x = np.array([[0.2, 0.5, 0.9]])
    # permuting coordinates permutes the inner blocks, so an outer layer that
    # sums the blocks sees the same input
    w = params.outer[0].weight
    m = spec.inner_width
    tied = w[:, :m]
    sym = ModelParams(params.inner, (type(params.outer[0])(np.tile(tied, (1, 3)), params.outer[0].bias),) + params.outer[1:])
    np.testing.assert_allclose(evaluate(spec, sym, x), evaluate(spec, sym, x[:, ::-1]), atol=1e-14)


@pytest.mark.parametrize("spec", random_small_models(6, seed=11))
def test_gradients_and_laplacian_against_fd(spec):
    e_fit, e_res, e_lap = gradient_errors(spec, seed=1)
    assert e_fit < 1e-4 and e_res < 1e-4 and e_lap < 1e-5


def test_evaluate_single_point_and_chunking():
    spec = ModelSpec("HOrderDNN", d=2, p=3, L=2, W=5)
    params = build(spec)
    X = np.random.default_rng(0).random((50, 2))
    full = evaluate(spec, params, X)
    np.testing.assert_allclose(evaluate(spec, params, X, chunk=7), full, atol=0)
    assert np.isscalar(evaluate(spec, params, X[3])) or np.ndim(evaluate(spec, params, X[3])) == 0
    np.testing.assert_allclose(evaluate_laplacian(spec, params, X, chunk=9), evaluate_laplacian(spec, params, X), atol=0)


def test_checkpoint_round_trip_bitwise(tmp_path):
    spec = ModelSpec("KHOrderDNN", d=2, p=3, activation="relu", hd=1, hw=4, gd=2, gw=5)
    params = build(spec, seed=9)
    path = save_checkpoint(tmp_path / "c.npz", spec, params, {"note": "x"})
    spec2, params2, extra = load_checkpoint(path)
    assert spec2 == spec and extra == {"note": "x"}
    assert np.array_equal(params2.flat(), params.flat())


def test_zero_outer_gives_zero_output():
    spec = ModelSpec("KHOrderDNN", d=2, p=5, hd=1, hw=3, gd=2, gw=4)
    params = zero_outer(build(spec))
    assert not np.any(evaluate(spec, params, np.random.default_rng(0).random((10, 2))))
    assert spec.family is Family.KHORDER
