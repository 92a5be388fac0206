import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khorder.diagnostics import (
    GAMMAS,
    dft,
    evaluate_report,
    fit_rate,
    rel_l2,
    rel_l2_values,
    report_row,
    slice_errors,
    spectrum,
    spectrum_2d,
    write_report_csv,
    write_slice_csv,
    write_spectrum_csv,
)
from khorder.models import ModelSpec, build
from khorder.problems import eval_grid, get_problem
from oracles import naive_dft


def test_rel_l2_basics():
    assert rel_l2_values([1, 2], [1, 2]) == 0
    assert rel_l2_values([0, 0], [3, 4]) == 1
    assert rel_l2_values([3, 4], [0, 5]) == pytest.approx(np.sqrt(9 + 1) / 5)
    with pytest.raises(ValueError):
        rel_l2_values([1.0], [0.0])


def test_rel_l2_on_problem_grid():
    pb = get_problem("fit2d_eq41", jmax=1)
    assert rel_l2(pb.exact, pb) == 0
    assert rel_l2(lambda X: 2 * pb.exact(X), pb) == pytest.approx(1.0)
    rep = evaluate_report(lambda X: np.zeros(len(X)), pb, tag="zero")
    assert rep.rel_l2 == pytest.approx(1.0) and rep.meta == {"tag": "zero"} and len(rep.points) == 10000


def test_dft_single_tone_and_constant():
    n = 100
    x = np.arange(n) / n
    for g in GAMMAS:
        c = dft(np.cos(2 * np.pi * g * x))
        for gamma, val in zip(GAMMAS, c):
            assert abs(val - (0.5 if gamma == g else 0.0)) < 1e-10
        s = dft(np.sin(2 * np.pi * g * x))
        assert abs(s[list(GAMMAS).index(g)] - (-0.5j)) < 1e-10
    np.testing.assert_allclose(dft(np.full(n, 3.0)), 0, atol=1e-10)
    assert abs(dft(np.full(n, 3.0), [0])[0] - 3.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(64, 128), st.integers(0, 2**31 - 1))
def test_dft_matches_naive(n, seed):
    v = np.random.default_rng(seed).normal(size=n)
    np.testing.assert_allclose(dft(v), naive_dft(v, GAMMAS), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_dft_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 100))
    np.testing.assert_allclose(dft(a * u + b * v), a * dft(u) + b * dft(v), atol=1e-10)


def test_spectrum_reports():
    rep = spectrum(lambda x: np.sin(4 * np.pi * x), lambda x: np.zeros_like(x))
    np.testing.assert_allclose(rep.diff_magnitude, [0.5, 0, 0, 0], atol=1e-10)
    np.testing.assert_allclose(rep.diff_complex, rep.diff_magnitude, atol=1e-10)
    with pytest.raises(ValueError):
        spectrum(np.sin, np.sin, n=32)


def test_spectrum_2d_separable():
    f = lambda X: np.cos(2 * np.pi * 8 * X[:, 0]) * (1 + 0 * X[:, 1])  # noqa: E731
    rep = spectrum_2d(f, lambda X: np.zeros(len(X)))
    np.testing.assert_allclose(np.abs(rep.target), [0, 0, 0.5, 0], atol=1e-10)
    np.testing.assert_allclose(rep.model, 0)


def test_fit_rate():
    n = np.array([5, 15, 30, 60])
    assert fit_rate(n, 3.0 * n**-1.0) == pytest.approx(-1.0)
    assert fit_rate(n, 0.1 * n**-0.30103) == pytest.approx(-0.30103)
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, 2])


def test_slice_errors_and_csvs(tmp_path):
    pb = get_problem("poisson_tensor_dD", d=3)
    rows = slice_errors(pb.exact, pb, (0, 2))
    G = eval_grid(pb)
    assert rows.shape == (10000, 3) and not rows[:, 2].any()
    np.testing.assert_array_equal(rows[:, 1], G[:, 2])
    with pytest.raises(ValueError):
        slice_errors(pb.exact, pb, (0, 0))
    path = write_slice_csv(tmp_path / "s.csv", rows[:3])
    assert path.read_text().splitlines()[0] == "x1,x2,abs_err"

    spec = ModelSpec("KHOrderDNN", d=3, p=3, hd=1, hw=3, gd=1, gw=4)
    row = report_row("poisson_tensor_dD", spec, 0, 10, 0.5, 0.6)
    path = write_report_csv(tmp_path / "r.csv", [row])
    with path.open() as fh:
        got = list(csv.DictReader(fh))
    assert got[0]["params"] == str(build(spec).size) and got[0]["rel_min"] == "0.5"

    rep = spectrum(lambda x: np.sin(4 * np.pi * x), lambda x: 0 * x)
    lines = write_spectrum_csv(tmp_path / "f.csv", rep).read_text().splitlines()
    assert lines[0] == "gamma,target,model,diff_complex,diff_magnitude" and len(lines) == 5
