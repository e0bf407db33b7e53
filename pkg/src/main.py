import os
import sys
import signal
import atexit
import logging

sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import click
import numpy as np

from src.models.errors import AggregationError, NumericError
from src.routes.aggregate import fit_model, predict_queries, tune_bandwidth
from src.routes.benchmark import benchmark, shutdown_benchmark
from src.routes.config import config_group
from src.routes.simulate import simulate

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_USAGE = 1

logger = logging.getLogger("src.main")


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
def cli(verbose):
    """Consensual kernel aggregation of regression estimators."""
    configure_logging(verbose)


# Register commands
cli.add_command(simulate)
cli.add_command(fit_model)
cli.add_command(predict_queries)
cli.add_command(tune_bandwidth)
cli.add_command(benchmark)
cli.add_command(config_group)


# Graceful shutdown handling
def signal_handler(signum, frame):
    logger.warning("Received shutdown signal, cancelling pending work...")
    shutdown_benchmark()
    sys.exit(EXIT_USAGE)


def main(argv=None) -> int:
    """
    Run the CLI and map failures to exit codes.

    0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
    """
    try:
        result = cli.main(args=argv, prog_name="aggregate", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except AggregationError as e:
        logger.error("%s", e)
        return e.exit_code
    except np.linalg.LinAlgError as e:
        logger.error("Linear algebra failure: %s", e)
        return NumericError.exit_code
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)
    atexit.register(shutdown_benchmark)
    sys.exit(main())
