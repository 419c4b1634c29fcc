# rwm-mpc
# Fast-gradient MPC toolkit for resistive wall mode stabilization

# Imports
import argparse
import asyncio
import importlib
import logging
import logging.handlers
import os
import random
import sys
import traceback
from glob import glob

from utils.mpc_exceptions import (
    ArtifactError,
    ConfigError,
    MpcError,
    VerificationError,
)
from utils.run_config import RunConfig, apply_overrides, read_run_config

# Exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

DEFAULT_CONFIG = "config.cfg"

# Current Running Path
path = os.getcwd()

# Source tree, for command discovery
source_dir = os.path.dirname(os.path.abspath(__file__))

# Create Root Logger
dt_fmt = "%Y-%m-%d %H:%M:%S"
logging.basicConfig(
    level=logging.INFO,
    format="[{asctime}] [{levelname:<8}] {name}: {message}",
    datefmt=dt_fmt,
    style="{",
)

# Get loggers
rootLogger = logging.getLogger()

# Make file handler
(os.mkdir("logs") if not os.path.exists("logs") else None)
handler = logging.handlers.RotatingFileHandler(
    filename="logs/rwm-mpc.log",
    encoding="utf-8",
    maxBytes=20 * 1024 * 1024,  # 20 MiB
    backupCount=5,  # Rotate through 5 files
)

# Set formatter, apply to file and console handlers
formatter = logging.Formatter(
    "[{asctime}] [{levelname:<8}] {name}: {message}", dt_fmt, style="{"
)
handler.setFormatter(formatter)
rootLogger.handlers[0].setFormatter(formatter)

# Add root logger to file handler
rootLogger.addHandler(handler)

# Quiet matplotlib's font manager
logging.getLogger("matplotlib").setLevel(logging.WARNING)


class RwmCli:
    """Command registry, parsed flags and the effective run configuration."""

    def __init__(self):
        self.path = path
        self.source_dir = source_dir
        self.commands = {}
        self.config: RunConfig | None = None
        self.args: argparse.Namespace | None = None

        # Flags shared by every subcommand
        self.common = argparse.ArgumentParser(add_help=False)
        self.common.add_argument("--config", help=f"config file (default: {DEFAULT_CONFIG})")
        self.common.add_argument("--out", help="output directory")
        self.common.add_argument("--design", help="design artifact path")
        self.common.add_argument("--backend", choices=["full", "reduced", "fwl"])
        self.common.add_argument("--imax", type=int, help="FGM iterations per solve")
        self.common.add_argument("--seed", type=int, help="surrogate model seed")
        self.common.add_argument(
            "--dump-iterates",
            action="store_true",
            help="solve: also write every iterate, its cost and restart flag as CSV",
        )
        self.common.add_argument("--verbose", action="store_true", help="debug logging")

        self.parser = argparse.ArgumentParser(
            prog="rwm-mpc",
            description="Fast-gradient MPC design, simulation and verification.",
        )
        self.subparsers = self.parser.add_subparsers(dest="command", required=True)

    async def add_command(self, command) -> None:
        sub = self.subparsers.add_parser(
            command.name, help=command.description, parents=[self.common]
        )
        command.add_arguments(sub)
        sub.set_defaults(handler=command)
        self.commands[command.name] = command

    async def load_commands(self) -> None:
        logging.debug("[INIT] Loading commands...")
        # Find all command modules in command dir
        for filename in sorted(
            glob(os.path.join(source_dir, "commands", "**"), recursive=True, include_hidden=False)
        ):
            if not os.path.isdir(filename):
                # Determine if file is a python file
                if filename.endswith(".py") and not os.path.basename(filename).startswith(
                    ("_", ".")
                ):
                    relative = os.path.relpath(filename, source_dir)
                    module_name = relative.replace("\\", "/").replace("/", ".")[:-3]

                    logging.debug(f"[INIT] Loading command module: {module_name}...")
                    module = importlib.import_module(module_name)
                    await module.setup(self)

        logging.debug(f"[INIT] Loaded {len(self.commands)} commands.")

    def read_config(self, args: argparse.Namespace) -> RunConfig:
        # Read config files
        if args.config is not None:
            cfg = read_run_config(args.config)
        elif os.path.exists(DEFAULT_CONFIG):
            cfg = read_run_config(DEFAULT_CONFIG)
        else:
            logging.info(f"[CONFIG] No {DEFAULT_CONFIG} found, using built-in defaults.")
            cfg = RunConfig()

        return apply_overrides(cfg, args.backend, args.imax, args.seed, args.out)

    def design_path(self) -> str:
        return self.args.design or self.config.design_path

    def out_path(self, *parts: str) -> str:
        return os.path.join(self.config.output.out_dir, *parts)

    async def run(self, argv: list[str] | None = None) -> int:
        await self.load_commands()

        self.args = self.parser.parse_args(argv)
        if self.args.verbose:
            rootLogger.setLevel(logging.DEBUG)

        self.config = self.read_config(self.args)
        os.makedirs(self.config.output.out_dir, exist_ok=True)

        logging.info(f"[INIT] Running '{self.args.command}'.")
        return await self.args.handler.run(self.args)


def main(argv: list[str] | None = None) -> int:
    cli = RwmCli()

    try:
        return asyncio.run(cli.run(argv))
    except (ConfigError, ArtifactError) as error:
        logging.critical(f"[INIT] {type(error).__name__}: {error}")
        return EXIT_CONFIG
    except VerificationError as error:
        logging.error(f"[VERIFY] {error}")
        return EXIT_VERIFY
    except MpcError as error:
        logging.critical(f"[INIT] {type(error).__name__}: {error}")
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        logging.info("[INIT] Interrupted.")
        return EXIT_UNEXPECTED
    except Exception:
        # Generate error ID
        error_id = "-".join(
            "".join(str(random.randint(0, 9)) for _ in range(4)) for _ in range(4)
        )

        logging.error("*** Unexpected error occurred. ***")
        logging.error("Error ID: " + error_id)
        logging.error(f"{traceback.format_exc()}\n")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
