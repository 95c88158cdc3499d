"""Command line: run the system, seed data, check config.

Exit codes: 0 ok, 1 crash-loop or startup failure, 2 config error.
"""

from __future__ import annotations

import asyncio
import logging
import signal
import sys

import click

from .config import ConfigInvalid, ConfigNotFound, _parse_bind, load_config
from .seeding import FixtureError, RefusesOverwrite, seed as run_seed
from .supervisor import COMPONENT_ORDER, run_system, run_system_processes

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_CONFIG = 2

KIND_COMPONENTS = {"esp32": "esp32", "industrial": "bridge", "environment": "env"}


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _load_or_exit(path: str):
    try:
        return load_config(path)
    except ConfigNotFound as e:
        click.echo(f"config not found: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except ConfigInvalid as e:
        click.echo("config invalid:", err=True)
        for problem in e.errors:
            click.echo(f"  - {problem}", err=True)
        sys.exit(EXIT_CONFIG)


def _run_with_signals(coro_factory) -> int:
    async def main() -> int:
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        return await coro_factory(stop)

    return asyncio.run(main())


@click.group()
def main():
    """Plant telemetry stack: broker, meters, ingest, monitoring API."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="JSON config file.")
@click.option("--all", "run_all", is_flag=True, help="Run every component.")
@click.option("--only", "only", default=None,
              help="Comma-separated subset: " + ",".join(COMPONENT_ORDER))
@click.option("--separate-processes", is_flag=True,
              help="One OS process per component instead of in-process tasks.")
@click.option("--bind", "bind", default=None,
              help="Override the broker bind address (HOST:PORT).")
def run(config_path, run_all, only, separate_processes, bind):
    """Run the system (or a subset of components)."""
    config = _load_or_exit(config_path)
    _setup_logging(config.log_level)
    if only and run_all:
        click.echo("--all and --only are mutually exclusive", err=True)
        sys.exit(EXIT_CONFIG)
    if bind:
        try:
            _parse_bind(bind)
        except ValueError as e:
            click.echo(str(e), err=True)
            sys.exit(EXIT_CONFIG)
        config.broker.bind = bind
    components = None
    if only:
        components = [c.strip() for c in only.split(",") if c.strip()]
        unknown = set(components) - set(COMPONENT_ORDER)
        if unknown:
            click.echo(f"unknown components: {sorted(unknown)}", err=True)
            sys.exit(EXIT_CONFIG)

    if separate_processes:
        code = _run_with_signals(
            lambda stop: run_system_processes(
                config, config_path, components, stop_signal=stop
            )
        )
    else:
        code = _run_with_signals(
            lambda stop: run_system(config, components, stop_signal=stop)
        )
    sys.exit(code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Replace an existing data dir.")
@click.option("--fixture", default=None,
              help="CSV of samples to load (path or bundled name, e.g. fig7-8.csv).")
def seed(config_path, force, fixture):
    """Initialize the data directory: users, streams, optional fixture rows."""
    config = _load_or_exit(config_path)
    _setup_logging(config.log_level)
    try:
        stats = run_seed(config, force=force, fixture=fixture)
    except RefusesOverwrite as e:
        click.echo(str(e), err=True)
        sys.exit(EXIT_CONFIG)
    except FixtureError as e:
        click.echo(f"fixture error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"seeded {stats.data_dir}: {stats.users} users, samples {stats.samples}")


@main.command("check-config")
@click.argument("config_path", type=click.Path())
def check_config(config_path):
    """Validate a config file and report every problem found."""
    _load_or_exit(config_path)
    click.echo("config ok")


@main.group()
def device():
    """Run a single simulated device."""


@device.command("run")
@click.option("--kind", type=click.Choice(sorted(KIND_COMPONENTS)), required=True)
@click.option("--config", "config_path", required=True, type=click.Path())
def device_run(kind, config_path):
    """Run one device (plus the meter emulator for the industrial bridge)."""
    config = _load_or_exit(config_path)
    _setup_logging(config.log_level)
    components = [KIND_COMPONENTS[kind]]
    if kind == "industrial":
        components = ["meter", "bridge"]
    code = _run_with_signals(
        lambda stop: run_system(config, components, stop_signal=stop)
    )
    sys.exit(code)


if __name__ == "__main__":
    main()
