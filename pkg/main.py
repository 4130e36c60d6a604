"""
Signalless Intersection Simulator - Command Line Entry Point
Polling-scheduled coordination of a two-lane crossing, with a traffic-light baseline.
"""

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from intersection.config import EnvironmentSettings, load_config
from intersection.errors import ConfigError
from intersection.experiment_manager import EXIT_CONFIG, ExperimentManager, apply_overrides
from intersection.verification import Injection

logger = logging.getLogger("intersection")

COMMANDS = ("simulate", "sweep", "baseline", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intersection",
        description="Simulate a signalless two-lane intersection coordinated by a polling system",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", metavar="PATH", required=name != "verify",
                         help="scenario file (TOML, dotted keys)")
        cmd.add_argument("--out", metavar="DIR", help="output directory for CSV files")
        cmd.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
        cmd.add_argument("--trajectories", action="store_true", help="also write trajectories.csv")
        cmd.add_argument("--jobs", type=int, metavar="N", help="worker processes for sweeps")
        if name == "verify":
            cmd.add_argument("--inject", action="append", default=[],
                             choices=[i.value for i in Injection],
                             help="add a fixture that is expected to fail")
    return parser


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


async def dispatch(args: argparse.Namespace, env: EnvironmentSettings) -> int:
    config = None
    if args.config:
        try:
            config = apply_overrides(load_config(args.config, env), seed=args.seed,
                                     trajectories=args.trajectories)
        except ConfigError as e:
            logger.error(f"❌ Configuration error in {args.config}: {e}")
            return EXIT_CONFIG

    out_dir = args.out or (config.output_dir if config and config.output_dir else env.output_dir)
    manager = ExperimentManager(config, out_dir=out_dir, jobs=args.jobs or env.jobs)
    if args.command == "simulate":
        return await manager.simulate()
    if args.command == "sweep":
        return await manager.sweep()
    if args.command == "baseline":
        return await manager.baseline()
    return await manager.verify(inject=args.inject, seed=args.seed or 0)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        env = EnvironmentSettings.from_env()
    except ConfigError as e:
        configure_logging("INFO")
        logger.error(f"❌ {e}")
        return EXIT_CONFIG
    configure_logging(env.log_level)
    args = build_parser().parse_args(argv)
    return asyncio.run(dispatch(args, env))


if __name__ == "__main__":
    sys.exit(main())
