import functools
import json
import threading
from typing import Optional

import click

from src.models.aggregator import ZeroMassFallback
from src.models.config import TUNING_STRATEGIES, ConfigurationManager, TuningConfig

# Global configuration manager instance
_config_manager = None
_config_manager_lock = threading.Lock()


def get_config_manager(config_file_path: Optional[str] = None) -> ConfigurationManager:
    """Get or create the global configuration manager, loading a file when one is given."""
    global _config_manager
    with _config_manager_lock:
        if _config_manager is None:
            _config_manager = ConfigurationManager()
        if config_file_path:
            _config_manager.load_from_file(config_file_path)
    return _config_manager


def reset_config_manager():
    global _config_manager
    with _config_manager_lock:
        _config_manager = None


def config_option(command):
    """Add ``--config FILE``; the file is loaded before flag overrides apply."""

    @click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="JSON file with tuning and benchmark sections.",
    )
    @functools.wraps(command)
    def wrapper(*args, config_path=None, **kwargs):
        reset_config_manager()
        get_config_manager(config_path)
        return command(*args, **kwargs)

    return wrapper


_TUNING_FLAGS = [
    click.option("--tune", "strategy", type=click.Choice(TUNING_STRATEGIES), default=None,
                 help="Bandwidth search: grid, gd, or auto (gd for gauss/exp4)."),
    click.option("--kappa", type=int, default=None, help="Number of CV folds."),
    click.option("--grid-min", type=float, default=None),
    click.option("--grid-max", type=float, default=None),
    click.option("--grid-count", type=int, default=None),
    click.option("--h0", type=float, default=None, help="Gradient-descent start."),
    click.option("--lr", "learning_rate", type=float, default=None),
    click.option("--tol", "tolerance", type=float, default=None),
    click.option("--max-iter", type=int, default=None),
    click.option("--lr-growth", type=float, default=None,
                 help="Adaptive learning-rate growth factor (1 disables)."),
    click.option("--speed-scale", type=float, default=None),
    click.option("--fallback", "zero_mass_fallback",
                 type=click.Choice([f.value for f in ZeroMassFallback]), default=None,
                 help="Prediction for queries with zero kernel mass."),
]

TUNING_KEYS = (
    "strategy",
    "kappa",
    "grid_min",
    "grid_max",
    "grid_count",
    "h0",
    "learning_rate",
    "tolerance",
    "max_iter",
    "lr_growth",
    "speed_scale",
    "zero_mass_fallback",
)


def tuning_options(command):
    for option in reversed(_TUNING_FLAGS):
        command = option(command)
    return command


def resolve_tuning(options: dict) -> TuningConfig:
    """Pop the tuning flags from ``options`` and apply them over the loaded config."""
    overrides = {key: options.pop(key, None) for key in TUNING_KEYS}
    return get_config_manager().override_tuning(**overrides)


@click.group("config")
def config_group():
    """Inspect and write configuration files."""


@config_group.command("show")
@config_option
def show_config():
    """Print the effective configuration as JSON."""
    click.echo(json.dumps(get_config_manager().to_dict(), indent=2))


@config_group.command("init")
@click.argument("path", type=click.Path(dir_okay=False))
def init_config(path):
    """Write the default configuration to PATH."""
    reset_config_manager()
    get_config_manager().save_to_file(path)
    click.echo(f"wrote default configuration to {path}")
