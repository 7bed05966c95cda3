"""Command-line experiment runner.

    rknlab converge --model wave1d --tableau gl2 --n 16,32,64 --dt hfactor:1 --tfinal 1
    rknlab solve-study --model wave2d --solver gmres --pc clines-ld --n 16,32 --out its.csv

Settings may also come from a key-value file (``--config``); flags given
on the command line win. CSV goes to ``--out`` or stdout, and a JSON
metadata record goes next to it (``<out>.meta.json``) or to stderr.
"""
from __future__ import annotations

import argparse
import configparser
import json
import platform
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .experiments import ExperimentConfig, format_csv, run_experiment
from .linalg import SolverConfig
from .models import MODEL_NAMES
from .tableau import TABLEAU_NAMES

SUBCOMMANDS = {"converge": "converge", "energy": "energy", "solve-study": "solve_study", "stability": "stability"}

_DEFAULTS = {
    "model": "wave1d",
    "tableau": "gl2",
    "formulation": "rkn",
    "bc": None,
    "n": "16,32,64",
    "dt": "hfactor:1",
    "tfinal": "1.0",
    "solver": "direct",
    "pc": "clines-ld",
    "rtol": "1e-7",
    "atol": "1e-12",
    "restart": "50",
    "max_iters": "500",
    "out": None,
    "include_setup_time": "false",
    "seed": "0",
    "lumped": "false",
    "init": "auto",
    "no_timing": "false",
    "error_at": "final",
}

_TRUE = {"1", "true", "yes", "on"}


def _read_config(path: str) -> dict:
    """Flat ``key = value`` file; a leading section header is optional."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    out = {}
    for section in parser.sections():
        for key, val in parser.items(section):
            out[key.replace("-", "_")] = val
    unknown = set(out) - set(_DEFAULTS) - {"experiment"}
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rknlab", description="Runge-Kutta-Nystrom experiment runner")
    p.add_argument("--version", action="version", version=f"rknlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        # every default is None so that unset flags fall through to the config file
        s.add_argument("--config", help="key=value settings file")
        s.add_argument("--model", choices=MODEL_NAMES)
        s.add_argument("--tableau", choices=TABLEAU_NAMES)
        s.add_argument("--formulation", choices=("rkn", "rk", "central"))
        s.add_argument("--bc", choices=("ode", "dae", "ddae"))
        s.add_argument("--n", help="comma-separated mesh sizes (step counts for the oscillator)")
        s.add_argument("--dt", help="step rule: VALUE, hfactor:X or stable:X")
        s.add_argument("--tfinal")
        s.add_argument("--solver", choices=("direct", "gmres"))
        s.add_argument("--pc", choices=("none", "block-diagonal", "block-lower", "clines-ld"))
        s.add_argument("--rtol")
        s.add_argument("--atol")
        s.add_argument("--restart")
        s.add_argument("--max-iters", dest="max_iters")
        s.add_argument("--out")
        s.add_argument("--include-setup-time", action="store_const", const="true")
        s.add_argument("--seed")
        s.add_argument("--lumped", action="store_const", const="true")
        s.add_argument("--init", choices=("auto", "reference", "bump", "zero"))
        s.add_argument("--error-at", dest="error_at", choices=("final", "max"),
                       help="converge: error at t_final or maximum over all steps")
        s.add_argument("--no-timing", action="store_const", const="true",
                       help="write zero wall times so that the CSV is reproducible byte for byte")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    settings = dict(_DEFAULTS)
    if args.config:
        settings.update(_read_config(args.config))
    for key in _DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    flag = lambda k: str(settings[k]).strip().lower() in _TRUE  # noqa: E731
    solver = SolverConfig(
        method=settings["solver"],
        rtol=float(settings["rtol"]),
        atol=float(settings["atol"]),
        max_iters=int(settings["max_iters"]),
        restart=int(settings["restart"]),
        preconditioner=settings["pc"],
    )
    return ExperimentConfig(
        experiment=SUBCOMMANDS[args.command],
        model=settings["model"],
        tableau=settings["tableau"],
        formulation=settings["formulation"],
        bc=settings["bc"] or None,
        n=tuple(int(v) for v in str(settings["n"]).replace(" ", "").split(",") if v),
        dt=settings["dt"],
        t_final=float(settings["tfinal"]),
        solver=solver,
        out=settings["out"] or None,
        include_setup_time=flag("include_setup_time"),
        seed=int(settings["seed"]),
        lumped=flag("lumped"),
        init=settings["init"],
        timing=not flag("no_timing"),
        error_at=settings["error_at"],
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"rknlab: error: {exc}", file=sys.stderr)
        return 2
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        rows = run_experiment(cfg)
    except ValueError as exc:
        print(f"rknlab: error: {exc}", file=sys.stderr)
        return 2
    text = format_csv(cfg.experiment, rows)
    failed = [r for r in rows if r.get("status", "ok") != "ok"]
    meta = {
        "config": cfg.as_dict(),
        "version": __version__,
        "python": platform.python_version(),
        "started": started.isoformat(),
        "wall_clock_seconds": time.perf_counter() - t0,
        "rows": len(rows),
        "failed_rows": len(failed),
    }
    meta_text = json.dumps(meta, indent=2, default=str)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(cfg.out + ".meta.json", "w", encoding="utf-8") as fh:
            fh.write(meta_text + "\n")
    else:
        sys.stdout.write(text)
        print(meta_text, file=sys.stderr)
    return 2 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
