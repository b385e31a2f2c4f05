"""
Resolvent - Main entry point
Low-energy resolvent expansions on exact cones: index sets, face solves,
the quasimode iteration and its verification against a direct solver
"""

import argparse
import logging
import sys
from typing import List, Optional

from config import RunConfig, get_config
from scripts.commands import COMMANDS, run_command
from scripts.errors import ConfigValidationError, ResolventError
from scripts.utils import setup_logging

logger = logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Low-energy resolvent expansions on exact cones")
    parser.add_argument("command", choices=sorted(COMMANDS), help="stage to run")
    parser.add_argument("--config", default=None, help="run file (defaults apply when omitted)")
    parser.add_argument("--output-dir", default=None, help="override [output] directory")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes over modes")
    parser.add_argument("--horizon", type=float, default=None, help="override the series horizon")
    parser.add_argument("--tolerance", type=float, default=None, help="override the solver tolerance")
    parser.add_argument("--seed", type=int, default=None, help="override the selftest seed")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = parse_args(argv)
    settings = get_config()
    setup_logging(settings.LOG_LEVEL, settings.LOG_FILE)
    try:
        logger.info("📋 Validating configuration...")
        try:
            settings.validate()
        except ValueError as e:
            raise ConfigValidationError(str(e)) from e
        logger.debug(settings.get_config_summary())
        run = RunConfig.load(args.config) if args.config else RunConfig()
        run = run.with_overrides(args.horizon, args.tolerance, args.output_dir, args.jobs, args.seed)
        logger.info(f"✅ Configuration validated ({run.source})")

        logger.info(f"🚀 Running {args.command}...")
        code = run_command(args.command, run)
        if code == 0:
            logger.info(f"✅ {args.command} finished, results in {run.output.directory}")
        return code

    except ResolventError as e:
        logger.error(f"❌ {e.stage or 'config'}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("🛑 Stopped by user")
        return 130
    except Exception as e:
        logger.error(f"❌ Fatal error: {e}")
        logger.debug("traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
