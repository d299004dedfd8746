"""Batch runner: ``atg run --problem test1 --algorithm atg-mild [...]``.

Writes ``<out>.csv`` (one row per level) and ``<out>.gp.dat`` (columns
``k n_dofs h1_semi_err eta`` for plotting).  Exit status: 0 on success,
1 on I/O errors, 2 when a level solve fails (the partial history is still
written), 64 on invalid usage or configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .algorithms import ALGORITHMS, RunConfig, run
from .errors import ConfigError, SolverFailure
from .mesh import write_mesh
from .problems import PROBLEMS

EXIT_OK, EXIT_IO, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 64

CSV_COLUMNS = ("k", "n_dofs", "h1_semi_err", "l2_err", "energy_err", "eta", "osc",
               "hot1", "hot2", "hot3", "e1", "e2", "solver_iters", "wall_ms")

DEFAULTS = {
    "theta": 0.25,
    "initial-n": 8,
    "max-levels": 12,
    "max-dofs": 300_000,
    "zeta-tilde": 0.5,
    "tol": 1e-10,
    "out": None,
    "dump-meshes": False,
    "timing": False,
    "gnuplot": False,
}
REQUIRED = ("problem", "algorithm")
KNOWN_KEYS = set(DEFAULTS) | set(REQUIRED)

log = logging.getLogger("atgfem")


@dataclass
class CliConfig:
    run: RunConfig
    out: Path
    dump_meshes: bool = False
    timing: bool = False
    gnuplot: bool = False
    verbosity: int = 0
    sources: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _parser():
    p = _Parser(prog="atg", description="Adaptive two-grid finite element experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment and write its convergence history")
    S = argparse.SUPPRESS
    r.add_argument("--problem", default=S, help=f"one of: {', '.join(PROBLEMS)}")
    r.add_argument("--algorithm", default=S, help=f"one of: {', '.join(ALGORITHMS)}")
    r.add_argument("--theta", type=float, default=S, help="bulk marking fraction in (0, 1) [0.25]")
    r.add_argument("--initial-n", type=int, default=S, help="initial uniform mesh n x n [8]")
    r.add_argument("--max-levels", type=int, default=S, help="number of refinement levels [12]")
    r.add_argument("--max-dofs", type=int, default=S, help="stop before exceeding this many dofs [300000]")
    r.add_argument("--zeta-tilde", type=float, default=S, help="weight of the h.o.t. sums in (0, 1) [0.5]")
    r.add_argument("--tol", type=float, default=S, help="linear/Newton tolerance [1e-10]")
    r.add_argument("--out", default=S, help="output prefix [<problem>_<algorithm>]")
    r.add_argument("--config", help="flat JSON object with the same (kebab-case) keys")
    r.add_argument("--dump-meshes", action="store_true", default=S, help="write every level mesh")
    r.add_argument("--timing", action="store_true", default=S,
                   help="record measured wall times (otherwise 0, keeping output reproducible)")
    r.add_argument("--gnuplot", action="store_true", default=S, help="also write a gnuplot script")
    r.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _load_file(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}; known: {', '.join(sorted(KNOWN_KEYS))}")
    return data


def parse_config(argv):
    """Merge defaults, the optional JSON file and command-line flags (in that order)."""
    ns = _parser().parse_args(argv)
    values = dict(DEFAULTS)
    if ns.config:
        values.update(_load_file(ns.config))
    flags = {k.replace("_", "-"): v for k, v in vars(ns).items()
             if k not in ("command", "config", "verbose")}
    values.update(flags)
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    if values["problem"] not in PROBLEMS:
        raise ConfigError(f"unknown problem {values['problem']!r}; valid ids: {', '.join(PROBLEMS)}")
    if values["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {values['algorithm']!r}; valid ids: {', '.join(ALGORITHMS)}")
    try:
        cfg = RunConfig(
            problem=values["problem"], algorithm=values["algorithm"],
            theta=float(values["theta"]), initial_n=int(values["initial-n"]),
            max_levels=int(values["max-levels"]), max_dofs=int(values["max-dofs"]),
            zeta_tilde=float(values["zeta-tilde"]), tol=float(values["tol"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid option value: {exc}") from None
    cfg.validate()
    out = values["out"] or f"{cfg.problem}_{cfg.algorithm}"
    if out.endswith(".csv"):
        out = out[:-4]
    return CliConfig(run=cfg, out=Path(out), dump_meshes=bool(values["dump-meshes"]),
                     timing=bool(values["timing"]), gnuplot=bool(values["gnuplot"]),
                     verbosity=ns.verbose, sources=values)


def _fmt(v):
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return f"{float(v):.9g}"


def format_csv(history, timing=False):
    lines = [",".join(CSV_COLUMNS)]
    for r in history.records:
        row = []
        for c in CSV_COLUMNS:
            v = getattr(r, c)
            if c == "wall_ms" and not timing:
                v = 0.0
            row.append(_fmt(v))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def format_gp(history):
    lines = ["# k n_dofs h1_semi_err eta"]
    lines += [f"{r.k} {r.n_dofs} {r.h1_semi_err:.9g} {r.eta:.9g}" for r in history.records]
    return "\n".join(lines) + "\n"


def gnuplot_script(out):
    name = out.name
    return (f"set logscale xy\nset xlabel 'degrees of freedom'\nset key bottom left\n"
            f"plot '{name}.gp.dat' using 2:3 with linespoints title 'H1 semi-norm error', \\\n"
            f"     '{name}.gp.dat' using 2:4 with linespoints title 'estimator', \\\n"
            f"     '{name}.gp.dat' using 2:(3*$2**-0.5) with lines dashtype 2 title 'slope -1/2'\n")


def write_outputs(cli, history):
    out = cli.out
    Path(f"{out}.csv").write_text(format_csv(history, cli.timing))
    Path(f"{out}.gp.dat").write_text(format_gp(history))
    if cli.gnuplot:
        Path(f"{out}.gp").write_text(gnuplot_script(out))
    if cli.dump_meshes:
        for rec, st in zip(history.records, history.states):
            Path(f"{out}.level{rec.k:03d}.mesh").write_text(write_mesh(st.mesh))


def run_experiment(cli):
    """Run and write outputs; returns the exit status."""
    cfg = cli.run
    parent = cli.out.parent if str(cli.out.parent) else Path(".")
    if not parent.is_dir():
        log.error("cannot write output %s: directory %s does not exist", cli.out, parent)
        return EXIT_IO
    if cli.dump_meshes:
        cfg.keep_states = True
    status = EXIT_OK
    try:
        history = run(cfg)
    except SolverFailure as exc:
        log.error("solver failure: %s", exc)
        history, status = exc.history, EXIT_SOLVER
    try:
        if history is not None:
            write_outputs(cli, history)
    except OSError as exc:
        log.error("cannot write output %s: %s", cli.out, exc.strerror or exc)
        return EXIT_IO
    return status


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cli = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(cli.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return run_experiment(cli)


if __name__ == "__main__":
    sys.exit(main())
