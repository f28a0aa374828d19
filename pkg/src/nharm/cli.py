"""Command line entry point: ``nharm <subcommand> [--key value ...]`` or ``nharm run --config file``.

Each run writes ``summary.json`` ({subcommand, config, results, warnings,
timings}), CSV tables and mesh/field files into the output directory, and a
``manifest.json`` with the config echo, library versions, wall time, stage
timings, mesh statistics and a SHA-256 digest per artifact.  Wall-clock values
appear only in the manifest so every other artifact is reproducible byte for
byte.

Exit status: 0 success, 2 configuration error, 3 precondition violation,
4 numerical failure.
"""

from __future__ import annotations

import os
import platform
import sys
import time
import warnings

import click
import numpy as np
import scipy

from . import __version__, io
from .config import SUBCOMMANDS, RunConfig, build_config, load_config_file
from .errors import ConfigError, NharmError, NumericalError, PreconditionError

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, PreconditionError):
        return EXIT_PRECONDITION
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return 1


def _limit_threads(threads: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def execute(cfg: RunConfig) -> int:
    """Run one configured subcommand and write its artifacts; returns the exit status."""
    from .tasks import TASKS, RunContext

    _limit_threads(cfg.threads)
    ctx = RunContext(cfg.out, cfg.threads)
    t0 = time.perf_counter()
    status, error, results = EXIT_OK, None, None
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            results = TASKS[cfg.subcommand](cfg.params, ctx)
        ctx.note(caught)
    except NharmError as exc:
        status, error = exit_code(exc), f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    config = {"subcommand": cfg.subcommand, "params": cfg.params}
    if status == EXIT_OK:
        ctx.json("summary.json", {
            "subcommand": cfg.subcommand,
            "config": config,
            "results": results,
            "warnings": ctx.warnings,
            "timings": {"stages": sorted(ctx.timings), "recorded_in": "manifest.json"},
        })
    cfg.out.mkdir(parents=True, exist_ok=True)
    io.write_json(cfg.out / "manifest.json", {
        "config": cfg.echo(),
        "versions": {"nharm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time": wall,
        "timings": ctx.timings,
        "mesh": ctx.meshes,
        "artifacts": ctx.digests(),
        "partial": status != EXIT_OK,
        "error": error,
        "exit_status": status,
    })
    if error:
        click.echo(error, err=True)
    return status


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="nharm")
def cli():
    """Numerical laboratory for free-boundary n-harmonic maps."""


def _make_command(name: str, params):
    def callback(out, threads, **kwargs):
        raw = {k: v for k, v in kwargs.items() if v is not None}
        cfg = build_config(name, raw, out, threads)
        raise SystemExit(execute(cfg))

    options = [
        click.Option(["--out", "-o"], default="nharm-out", show_default=True, help="output directory"),
        click.Option(["--threads"], type=int, default=None, help="worker threads (overrides NHARM_THREADS)"),
    ]
    for p in params:
        flag = "--" + p.name.replace("_", "-")
        options.append(click.Option([flag, p.name], type=str, default=None,
                                    help=f"{p.help} (default {p.default})".strip()))
    return click.Command(name, params=options, callback=callback, help=f"Run the {name} computation.")


for _name, _params in SUBCOMMANDS.items():
    cli.add_command(_make_command(_name, _params))


@cli.command("run")
@click.option("--config", "config_path", required=True, help="key=value config file")
@click.option("--out", "-o", default=None, help="output directory (overrides the file)")
@click.option("--threads", type=int, default=None, help="worker threads (overrides file and NHARM_THREADS)")
def run_cmd(config_path, out, threads):
    """Run the subcommand described by a config file."""
    cfg = load_config_file(config_path, out, threads)
    raise SystemExit(execute(cfg))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="nharm", standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except NharmError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
