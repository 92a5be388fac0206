import configparser

import pytest

from khorder.cli import main, resolve_config


def _write(path, text):
    path.write_text(text)
    return path


SMALL_FIT = """
[run]
problem = fit2d_eq41
seeds = 0
[model]
family = KHOrderDNN
p = 3
hd = 1
hw = 4
gd = 1
gw = 8
[train]
epochs = 20
n_f = 200
eval_every = 10
"""


@pytest.mark.parametrize(
    "argv,expected",
    [
        (["--family", "PINN", "--d", "10", "--W", "210", "--L", "4"], "135451 (1.3545E+05)"),
        (["--family", "KHOrderDNN", "--p", "3", "--d", "20", "--hw", "205", "--gw", "205", "--hd", "1", "--gd", "2"], "220212 (2.2021E+05)"),
    ],
)
def test_count_params(capsys, argv, expected):
    assert main(["count-params", *argv]) == 0
    assert capsys.readouterr().out.strip() == expected


def test_count_params_intractable(capsys):
    assert main(["count-params", "--family", "HOrderDNN", "--p", "9", "--d", "50", "--W", "202", "--L", "4"]) == 0
    out = capsys.readouterr().out
    assert "(2.0200E+52)" in out and out.strip().endswith("intractable")


def test_count_params_bad_spec(capsys):
    assert main(["count-params", "--family", "PINN", "--d", "2"]) != 0


def test_fit_writes_artifacts_and_is_deterministic(tmp_path):
    cfg = _write(tmp_path / "c.ini", SMALL_FIT)
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    seed_dir = tmp_path / "a" / "seed_0"
    names = {p.name for p in seed_dir.iterdir()}
    assert {"train.csv", "report.csv", "spectrum.csv", "checkpoint.npz", "manifest.ini"} <= names
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("train.csv", "report.csv", "spectrum.csv"):
        assert (seed_dir / name).read_bytes() == (tmp_path / "b" / "seed_0" / name).read_bytes()
    # re-running from the emitted manifest reproduces the outputs
    assert main(["fit", "--config", str(seed_dir / "manifest.ini"), "--out", str(tmp_path / "m")]) == 0
    for name in ("train.csv", "report.csv", "spectrum.csv"):
        assert (seed_dir / name).read_bytes() == (tmp_path / "m" / "seed_0" / name).read_bytes()
    header = (seed_dir / "train.csv").read_text().splitlines()[0]
    assert header == "epoch,L_f,L_b,beta,lr,REL"


def test_seed_flag_and_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("KHORDER_OUT", str(tmp_path / "env"))
    cfg = _write(tmp_path / "c.ini", SMALL_FIT.replace("epochs = 20", "epochs = 2"))
    assert main(["fit", "--config", str(cfg), "--seed", "7"]) == 0
    assert (tmp_path / "env" / "seed_7" / "report.csv").exists()


def test_paper_preset_echoes_hyperparameters(tmp_path):
    cp = resolve_config(None, "paper", {("run", "problem"): "poisson2d_sin8"})
    assert cp["train"]["epochs"] == "50000" and cp["train"]["lr0"] == "0.004"
    assert cp["train"]["decay"] == "0.9" and cp["train"]["decay_every"] == "1000"
    assert cp["train"]["n_f"] == "5000" and cp["train"]["n_b"] == "1000"
    cfg = _write(tmp_path / "c.ini", "[run]\nproblem = poisson2d_sin8\npreset = paper\n[train]\nepochs = 1\nn_f = 16\nn_b = 8\n[model]\nhw = 3\ngw = 4\nhd = 1\np = 2\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    manifest = configparser.ConfigParser()
    manifest.optionxform = str
    manifest.read(tmp_path / "o" / "seed_0" / "manifest.ini")
    assert manifest["run"]["preset"] == "paper" and manifest["train"]["lr0"] == "0.004"
    assert manifest["train"]["decay_every"] == "1000" and manifest["model"]["activation"] == "tanh"


def test_unknown_keys_rejected(tmp_path, capsys):
    cfg = _write(tmp_path / "c.ini", "[run]\nproblem = fit2d_eq41\nfoo = 1\n")
    assert main(["fit", "--config", str(cfg)]) == 1
    assert "unknown key" in capsys.readouterr().err
    cfg = _write(tmp_path / "d.ini", "[extra]\nx = 1\n")
    assert main(["fit", "--config", str(cfg)]) == 1


def test_fit_and_solve_guard_problem_kind(tmp_path):
    cfg = _write(tmp_path / "c.ini", SMALL_FIT)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_abort_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path / "c.ini", SMALL_FIT + "lr0 = 1e200\n")
    with pytest.warns(RuntimeWarning):
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "aborted" in capsys.readouterr().err
    assert (tmp_path / "o" / "seed_0" / "checkpoint.npz").exists()


def test_solve_high_dimensional_writes_slice(tmp_path):
    cfg = _write(
        tmp_path / "c.ini",
        "[run]\nproblem = poisson_tensor_dD\nd = 3\n[model]\nfamily = PINN\nL = 1\nW = 4\n[train]\nepochs = 2\nn_f = 16\nn_b = 8\n",
    )
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    seed_dir = tmp_path / "o" / "seed_0"
    assert (seed_dir / "slice.csv").read_text().splitlines()[0] == "x1,x2,abs_err"
    assert not (seed_dir / "spectrum.csv").exists()


def test_spectrum_and_slice_from_checkpoint(tmp_path):
    cfg = _write(tmp_path / "c.ini", SMALL_FIT)
    main(["fit", "--config", str(cfg), "--out", str(tmp_path / "a")])
    ckpt = str(tmp_path / "a" / "seed_0" / "checkpoint.npz")
    assert main(["spectrum", "--config", str(cfg), "--checkpoint", ckpt, "--out", str(tmp_path / "s")]) == 0
    assert len((tmp_path / "s" / "spectrum.csv").read_text().splitlines()) == 5
    assert main(["slice", "--config", str(cfg), "--checkpoint", ckpt, "--out", str(tmp_path / "s")]) == 0
    assert len((tmp_path / "s" / "slice.csv").read_text().splitlines()) == 10001


def test_rates_single_point_and_synthetic(tmp_path):
    cfg = _write(tmp_path / "r.ini", "[run]\nproblem = fit2d_eq41\n[rates]\nsizes = 5\nerrors = 5:0.2\n")
    assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "one")]) == 0
    lines = (tmp_path / "one" / "rates.csv").read_text().splitlines()
    assert lines == ["size,REL,slope", "5,0.2,nan"]
    cfg = _write(tmp_path / "s.ini", "[run]\nproblem = fit2d_eq41\n[rates]\nsizes = 5,15,30\nerrors = 5:0.3,15:0.1,30:0.05\n")
    assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "three")]) == 0
    rows = (tmp_path / "three" / "rates.csv").read_text().splitlines()
    assert len(rows) == 4


def test_rates_trains_desk_sweep(tmp_path):
    cfg = _write(
        tmp_path / "r.ini",
        "[run]\nproblem = fit2d_eq41\n[model]\np = 3\nhd = 1\nhw = 3\ngd = 1\n[train]\nepochs = 3\nn_f = 50\n[rates]\nsweep = vary_n\nsizes = 5,15,30\n",
    )
    assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len((tmp_path / "o" / "rates.csv").read_text().splitlines()) == 4
