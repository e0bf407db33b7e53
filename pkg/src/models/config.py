import threading
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional
import json
import os

from src.models.aggregator import ZeroMassFallback
from src.models.bandwidth import GDConfig, GridConfig
from src.models.learners import parse_roster


TUNING_STRATEGIES = ("auto", "grid", "gd")


@dataclass(frozen=True)
class TuningConfig:
    """Bandwidth tuning settings shared by tune, fit and benchmark."""

    strategy: str = "auto"
    kappa: int = 5
    grid_min: float = 1e-100
    grid_max: float = 10.0
    grid_count: int = 500
    h0: Optional[float] = None
    learning_rate: float = 0.01
    tolerance: float = 1e-6
    max_iter: int = 500
    lr_shrink: float = 0.5
    lr_growth: float = 1.5
    init_samples: int = 20
    speed_scale: Optional[float] = None
    zero_mass_fallback: str = ZeroMassFallback.ZERO.value

    def __post_init__(self):
        if self.strategy not in TUNING_STRATEGIES:
            raise ValueError(
                f"strategy must be one of {', '.join(TUNING_STRATEGIES)}, got {self.strategy!r}"
            )
        if self.kappa < 2:
            raise ValueError("kappa must be at least 2")
        ZeroMassFallback(self.zero_mass_fallback)
        # Delegate the numeric checks to the tuner configs.
        self.grid()
        self.gd()

    def grid(self) -> GridConfig:
        return GridConfig(h_min=self.grid_min, h_max=self.grid_max, count=self.grid_count)

    def gd(self, seed: int = 0) -> GDConfig:
        return GDConfig(
            h0=self.h0,
            learning_rate=self.learning_rate,
            tolerance=self.tolerance,
            max_iter=self.max_iter,
            lr_shrink=self.lr_shrink,
            init_samples=self.init_samples,
            speed_scale=self.speed_scale,
            lr_growth=self.lr_growth,
            seed=seed,
        )

    @property
    def fallback(self) -> ZeroMassFallback:
        return ZeroMassFallback(self.zero_mass_fallback)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Replication protocol of the benchmark command."""

    replications: int = 10
    threads: int = 1
    base_seed: int = 0
    roster: str = "knn:k=5,ridge:lambda=1.0,tree:max_depth=8:min_leaf=5"
    methods: str = "consensual:gauss"
    test_fraction: float = 0.2
    dk_fraction: float = 0.5
    timing: bool = True

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0 < self.dk_fraction < 1:
            raise ValueError("dk_fraction must lie in (0, 1)")
        parse_roster(self.roster)
        if not [token for token in self.methods.split(",") if token.strip()]:
            raise ValueError("at least one method is required")


def _known_fields(cls, data: Dict[str, Any], section: str) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown {section} setting(s): {', '.join(unknown)}")
    return dict(data)


class ConfigurationManager:
    """Holds the tuning and benchmark configuration, optionally backed by a JSON file."""

    def __init__(self, config_file_path: Optional[str] = None):
        self.config_file_path = config_file_path
        self._tuning = TuningConfig()
        self._benchmark = BenchmarkConfig()
        self._lock = threading.RLock()

        if config_file_path and os.path.exists(config_file_path):
            self.load_from_file(config_file_path)

    def get_tuning_config(self) -> TuningConfig:
        with self._lock:
            return self._tuning

    def set_tuning_config(self, config: TuningConfig):
        with self._lock:
            self._tuning = config

    def get_benchmark_config(self) -> BenchmarkConfig:
        with self._lock:
            return self._benchmark

    def set_benchmark_config(self, config: BenchmarkConfig):
        with self._lock:
            self._benchmark = config

    def override_tuning(self, **overrides) -> TuningConfig:
        """
        Apply command-line overrides; None values leave the current setting.

        Returns:
            The updated TuningConfig
        """
        values = {key: value for key, value in overrides.items() if value is not None}
        with self._lock:
            self._tuning = replace(self._tuning, **values)
            return self._tuning

    def override_benchmark(self, **overrides) -> BenchmarkConfig:
        values = {key: value for key, value in overrides.items() if value is not None}
        with self._lock:
            self._benchmark = replace(self._benchmark, **values)
            return self._benchmark

    def load_from_file(self, file_path: str):
        """Load configuration from a JSON file with optional "tuning" and "benchmark" sections."""
        try:
            with open(file_path, "r") as f:
                data = json.load(f)
            if not isinstance(data, dict):
                raise ValueError("top level must be a JSON object")

            with self._lock:
                if "tuning" in data:
                    values = _known_fields(TuningConfig, data["tuning"], "tuning")
                    self._tuning = replace(TuningConfig(), **values)
                if "benchmark" in data:
                    values = _known_fields(BenchmarkConfig, data["benchmark"], "benchmark")
                    self._benchmark = replace(BenchmarkConfig(), **values)

        except Exception as e:
            raise ValueError(f"Failed to load configuration from {file_path}: {e}")

    def save_to_file(self, file_path: str):
        """Save current configuration to a JSON file."""
        try:
            data = self.to_dict()
            with open(file_path, "w") as f:
                json.dump(data, f, indent=2)

        except Exception as e:
            raise ValueError(f"Failed to save configuration to {file_path}: {e}")

    def to_dict(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "tuning": asdict(self._tuning),
                "benchmark": asdict(self._benchmark),
            }
