"""Command-line experiment runner.

Config files are INI text with four sections; every key is optional and
unknown sections or keys are errors::

    [run]     problem, d, jmax, seeds (comma list), preset, out
    [model]   family, p, activation, L, W, hd, hw, gd, gw
    [train]   any TrainConfig field
    [rates]   sweep, sizes (comma list), errors (size:err comma list)

Values resolve in the order preset < config file < command-line flags.
Each run writes ``<out>/seed_<s>/manifest.ini`` holding the fully resolved
config; passing it back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .diagnostics import (
    report_row,
    slice_errors,
    spectrum_2d,
    write_report_csv,
    write_slice_csv,
    write_spectrum_csv,
)
from .models import Family, ModelSpec, count_params, evaluate, is_tractable, load_checkpoint, save_checkpoint
from .problems import Kind, get_problem
from .theory import SWEEPS, rate_experiment, write_rates_csv
from .training import TrainConfig, TrainingAborted, train

__all__ = ["main", "resolve_config", "PRESETS", "OUT_ENV"]

OUT_ENV = "KHORDER_OUT"

PRESETS = {
    "paper": {
        "run": {"jmax": "5"},
        "model": {"L": "6", "W": "90", "hd": "3", "hw": "45", "gd": "2", "gw": "90"},
        "train": {"epochs": "50000", "lr0": "0.004", "decay": "0.9", "decay_every": "1000", "n_f": "5000", "n_b": "1000"},
    },
    "desk": {
        "run": {"jmax": "2"},
        "model": {"L": "6", "W": "45", "hd": "3", "hw": "22", "gd": "2", "gw": "45"},
        "train": {"epochs": "5000", "lr0": "0.004", "decay": "0.9", "decay_every": "1000", "n_f": "5000", "n_b": "1000"},
    },
}

SCHEMA = {
    "run": ("problem", "d", "jmax", "seeds", "preset", "out"),
    "model": ("family", "p", "activation", "L", "W", "hd", "hw", "gd", "gw"),
    "train": tuple(f.name for f in fields(TrainConfig)),
    "rates": ("sweep", "sizes", "errors"),
}


class ConfigError(ValueError):
    pass


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (L, W)
    return cp


def _check_keys(cp: configparser.ConfigParser, origin: str) -> None:
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]")


def resolve_config(path=None, preset: str | None = None, overrides: dict | None = None) -> configparser.ConfigParser:
    """Merge preset, config file and overrides into one validated config."""
    user = _parser()
    if path is not None:
        text = Path(path).read_text()
        user.read_string(text, source=str(path))
        _check_keys(user, str(path))
    if preset is None:
        preset = user.get("run", "preset", fallback="desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    cp = _parser()
    cp.read_dict({s: {} for s in SCHEMA})
    cp.read_dict(PRESETS[preset])
    cp.read_dict({s: dict(user[s]) for s in user.sections()})
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            cp[section][key] = str(value)
    cp["run"]["preset"] = preset
    _check_keys(cp, "resolved config")
    return cp


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _problem(cp):
    run = cp["run"]
    if "problem" not in run:
        raise ConfigError("[run] problem is required")
    d = run.getint("d") if "d" in run else None
    return get_problem(run["problem"], d=d, jmax=run.getint("jmax", 5))


def _spec(cp, problem) -> ModelSpec:
    m = cp["model"]
    family = Family(m.get("family", "KHOrderDNN"))
    activation = m.get("activation", "relu" if problem.kind is Kind.FIT else "tanh")
    kw = {"d": problem.d, "activation": activation}
    if family is not Family.PINN:
        kw["p"] = m.getint("p", 5)
    names = ("hd", "hw", "gd", "gw") if family is Family.KHORDER else ("L", "W")
    kw.update({k: m.getint(k) for k in names})
    if problem.domain.kind == "lshape":
        kw["interval"] = (-1.0, 1.0)
    return ModelSpec(family, **kw)


def _train_config(cp, seed: int) -> TrainConfig:
    t = cp["train"]
    out = {}
    for f in fields(TrainConfig):
        if f.name in t:
            kind = type(f.default)
            out[f.name] = t[f.name] if kind is str else kind(float(t[f.name])) if kind is int else kind(t[f.name])
    out["seed"] = seed
    return TrainConfig(**out)


def _out_root(cp) -> Path:
    return Path(cp["run"].get("out") or os.environ.get(OUT_ENV, "runs"))


def _manifest(cp, seed: int, spec: ModelSpec, config: TrainConfig) -> str:
    m = _parser()
    m.read_dict({s: dict(cp[s]) for s in SCHEMA})
    m["run"]["seeds"] = str(seed)
    m["run"].pop("out", None)
    m["model"]["family"] = spec.family.value
    m["model"]["activation"] = spec.activation.value
    if spec.p is not None:
        m["model"]["p"] = str(spec.p)
    m.read_dict({"train": {k: str(v) for k, v in config.to_dict().items()}})
    buf = io.StringIO()
    buf.write(f"# khorder {__version__} resolved configuration\n")
    m.write(buf)
    return buf.getvalue()


def _run_training(cp, expect_fit: bool | None) -> int:
    problem = _problem(cp)
    if expect_fit is True and problem.kind is not Kind.FIT:
        raise ConfigError(f"{problem.id} is a PDE problem; use 'solve'")
    if expect_fit is False and problem.kind is Kind.FIT:
        raise ConfigError(f"{problem.id} is a fitting problem; use 'fit'")
    spec = _spec(cp, problem)
    seeds = _int_list(cp["run"].get("seeds", "0"))
    root = _out_root(cp)
    status = 0
    for seed in seeds:
        config = _train_config(cp, seed)
        out = root / f"seed_{seed}"
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.ini").write_text(_manifest(cp, seed, spec, config))
        try:
            params, record = train(spec, problem, config)
        except TrainingAborted as exc:
            exc.record.write_csv(out / "train.csv")
            save_checkpoint(out / "checkpoint.npz", spec, exc.params, {"aborted": True})
            print(f"seed {seed}: training aborted: {exc}", file=sys.stderr)
            status = 2
            continue
        record.write_csv(out / "train.csv")
        save_checkpoint(out / "checkpoint.npz", spec, params, {"problem": problem.id, "seed": seed})
        row = report_row(problem.id, spec, seed, config.epochs, record.min_rel, record.final_rel)
        write_report_csv(out / "report.csv", [row])
        _artifacts(out, problem, spec, params)
        print(f"seed {seed}: REL min {record.min_rel:.3E} final {record.final_rel:.3E} -> {out}")
    return status


def _artifacts(out: Path, problem, spec, params) -> None:
    predictor = lambda X: evaluate(spec, params, X)  # noqa: E731
    if problem.kind is Kind.FIT and problem.d >= 2:
        write_spectrum_csv(out / "spectrum.csv", spectrum_2d(problem.exact, predictor, d=problem.d))
    if problem.d > 2:
        write_slice_csv(out / "slice.csv", slice_errors(predictor, problem))


def _from_checkpoint(args, cp):
    spec, params, _ = load_checkpoint(args.checkpoint)
    problem = _problem(cp)
    if problem.d != spec.d:
        raise ConfigError(f"checkpoint has d={spec.d}, problem has d={problem.d}")
    return problem, lambda X: evaluate(spec, params, X)


# ---------------------------------------------------------------------------
# subcommands


def cmd_count_params(args) -> int:
    kw = {k: getattr(args, k) for k in ("L", "W", "hd", "hw", "gd", "gw")}
    spec = ModelSpec(Family(args.family), d=args.d, p=args.p, **kw)
    n = count_params(spec)
    line = f"{n} ({n:.4E})"
    if not is_tractable(spec):
        line += " intractable"
    print(line)
    return 0


def cmd_fit(args, cp) -> int:
    return _run_training(cp, expect_fit=True)


def cmd_solve(args, cp) -> int:
    return _run_training(cp, expect_fit=False)


def cmd_rates(args, cp) -> int:
    problem = _problem(cp)
    r = cp["rates"]
    sweep = r.get("sweep", "vary_n")
    if sweep not in SWEEPS:
        raise ConfigError(f"unknown sweep {sweep!r}")
    sizes = _int_list(r.get("sizes", "5,15,30"))
    errors = None
    if r.get("errors"):
        errors = {}
        for item in r["errors"].split(","):
            size, err = item.split(":")
            errors[int(size)] = float(err)
    seeds = _int_list(cp["run"].get("seeds", "0"))
    base = _spec(cp, problem)
    if base.family is not Family.KHORDER:
        raise ConfigError("rate sweeps use K-HOrderDNN")
    table = rate_experiment(problem, sweep, sizes, base, _train_config(cp, seeds[0]), seeds=seeds, errors=errors)
    root = _out_root(cp)
    root.mkdir(parents=True, exist_ok=True)
    path = write_rates_csv(root / "rates.csv", table)
    print(f"{sweep}: slope {table.slope:.4f} -> {path}")
    return 0


def cmd_spectrum(args, cp) -> int:
    problem, predictor = _from_checkpoint(args, cp)
    root = _out_root(cp)
    root.mkdir(parents=True, exist_ok=True)
    path = write_spectrum_csv(root / "spectrum.csv", spectrum_2d(problem.exact, predictor, d=problem.d))
    print(path)
    return 0


def cmd_slice(args, cp) -> int:
    problem, predictor = _from_checkpoint(args, cp)
    root = _out_root(cp)
    root.mkdir(parents=True, exist_ok=True)
    path = write_slice_csv(root / "slice.csv", slice_errors(predictor, problem, tuple(args.coords)))
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="khorder", description="PINN / HOrderDNN / K-HOrderDNN experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    cp = sub.add_parser("count-params", help="print the parameter count of a model")
    cp.add_argument("--family", required=True, choices=[f.value for f in Family])
    cp.add_argument("--d", type=int, required=True)
    cp.add_argument("--p", type=int)
    for name in ("L", "W", "hd", "hw", "gd", "gw"):
        cp.add_argument(f"--{name}", type=int, default=0)
    cp.set_defaults(handler=cmd_count_params, needs_config=False)

    def runner(name, handler, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int, help="run this single seed instead of [run] seeds")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", type=Path, help=f"output root (default ${OUT_ENV} or ./runs)")
        p.add_argument("--threads", type=int)
        p.set_defaults(handler=handler, needs_config=True)
        return p

    runner("fit", cmd_fit, "train on a fitting problem")
    runner("solve", cmd_solve, "train on a PDE problem")
    runner("rates", cmd_rates, "convergence-rate sweep")
    sp = runner("spectrum", cmd_spectrum, "DFT diagnostic of a checkpoint")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sl = runner("slice", cmd_slice, "pointwise error slice of a checkpoint")
    sl.add_argument("--checkpoint", type=Path, required=True)
    sl.add_argument("--coords", type=int, nargs=2, default=(0, 1), help="0-based coordinates of the slice")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if not args.needs_config:
            return args.handler(args)
        overrides = {
            ("run", "seeds"): args.seed,
            ("run", "out"): args.out,
            ("train", "threads"): args.threads,
        }
        cp = resolve_config(args.config, args.preset, overrides)
        return args.handler(args, cp)
    except (ConfigError, ValueError, KeyError, configparser.Error, OSError) as exc:
        print(f"khorder: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
