"""Configuration manager for handling different environments."""

import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv


class Config:
    """
    Configuration manager for development, test, and production environments.

    Loads environment variables from appropriate .env file based on APP_MODE
    and exposes the tunable defaults of the analyzer and simulator.
    """

    # Valid modes
    MODES = {
        'development': '.env',
        'test': '.env.test',
        'production': '.env.production',
    }

    OUTPUT_FORMATS = ('csv', 'json')

    def __init__(self, mode: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            mode: Environment mode ('development', 'test', 'production')
                  If None, uses APP_MODE from current environment or defaults to 'development'
        """
        self.mode = mode or os.getenv('APP_MODE', 'development')

        if self.mode not in self.MODES:
            raise ValueError(
                f"Invalid APP_MODE '{self.mode}'. Must be one of: {', '.join(self.MODES.keys())}"
            )

        os.environ['ENVIRONMENT'] = self.mode
        self._load_env_file()

    def _load_env_file(self):
        """Load environment variables from the appropriate .env file."""
        # First, load .env (base/common variables)
        base_env_path = Path(__file__).parent.parent / '.env'
        if base_env_path.exists():
            load_dotenv(base_env_path, override=False)

        # Then, load mode-specific file (overrides)
        env_file = self.MODES[self.mode]
        env_path = Path(__file__).parent.parent / env_file
        if env_path.exists() and env_file != '.env':
            load_dotenv(env_path, override=True)

    @staticmethod
    def _int(name: str, default: int, minimum: int) -> int:
        raw = os.getenv(name)
        if raw is None or raw == '':
            return default
        try:
            value = int(raw.replace('_', ''))
        except ValueError:
            raise ValueError(f"{name} must be an integer, got {raw!r}")
        if value < minimum:
            raise ValueError(f"{name} must be at least {minimum}, got {value}")
        return value

    @staticmethod
    def _float(name: str, default: float) -> float:
        raw = os.getenv(name)
        if raw is None or raw == '':
            return default
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{name} must be a number, got {raw!r}")

    @staticmethod
    def is_debug() -> bool:
        """Check if debug mode is enabled."""
        return os.getenv('DEBUG', 'False').lower() in ('true', '1', 'yes')

    @staticmethod
    def get_log_level() -> str:
        """Get logging level; DEBUG=true forces DEBUG."""
        if Config.is_debug():
            return 'DEBUG'
        return os.getenv('LOG_LEVEL', 'INFO').upper()

    @staticmethod
    def get_environment() -> str:
        """Get environment name."""
        return os.getenv('ENVIRONMENT', 'development')

    @staticmethod
    def get_sim_horizon() -> int:
        """Slots per simulation run."""
        return Config._int('SIM_HORIZON', 1_000_000, 1)

    @staticmethod
    def get_sim_seed() -> int:
        return Config._int('SIM_SEED', 20160101, 0)

    @staticmethod
    def get_drift_eps() -> float:
        """Largest second-half queue slope still counted as stable."""
        value = Config._float('DRIFT_EPS', 1e-3)
        if value < 0:
            raise ValueError(f"DRIFT_EPS must be nonnegative, got {value}")
        return value

    @staticmethod
    def get_q_cap_fraction() -> float:
        """Final queue length, as a fraction of the horizon, that marks a run unstable."""
        value = Config._float('Q_CAP_FRACTION', 0.05)
        if not 0 < value <= 1:
            raise ValueError(f"Q_CAP_FRACTION must be in (0, 1], got {value}")
        return value

    @staticmethod
    def get_boundary_points() -> int:
        return Config._int('BOUNDARY_POINTS', 512, 2)

    @staticmethod
    def get_closure_splits() -> int:
        return Config._int('CLOSURE_SPLITS', 201, 2)

    @staticmethod
    def get_workers() -> int:
        """Worker processes for sweeps; 1 runs everything inline."""
        return Config._int('WORKERS', 1, 1)

    @staticmethod
    def get_output_dir() -> str:
        return os.getenv('OUTPUT_DIR', 'results')

    @staticmethod
    def get_output_format() -> str:
        value = os.getenv('OUTPUT_FORMAT', 'csv').lower()
        if value not in Config.OUTPUT_FORMATS:
            raise ValueError(f"OUTPUT_FORMAT must be one of {', '.join(Config.OUTPUT_FORMATS)}, got {value!r}")
        return value

    @staticmethod
    def experiment_defaults() -> Dict[str, object]:
        """
        Environment layer of an experiment, keyed like the CLI flags.

        q_cap_fraction is only included when Q_CAP_FRACTION is set, so that
        verification runs fall back to their own tighter cap.
        """
        defaults = {
            'horizon': Config.get_sim_horizon(),
            'seed': Config.get_sim_seed(),
            'drift_eps': Config.get_drift_eps(),
            'points': Config.get_boundary_points(),
            'splits': Config.get_closure_splits(),
            'workers': Config.get_workers(),
            'out': Config.get_output_dir(),
            'format': Config.get_output_format(),
        }
        if os.getenv('Q_CAP_FRACTION'):
            defaults['q_cap_fraction'] = Config.get_q_cap_fraction()
        return defaults

    @staticmethod
    def load_experiment_file(path) -> Dict[str, str]:
        """
        Read a flat key-value experiment file.

        Keys are the CLI flag names with underscores (p_total, sweep_from, ...).

        Args:
            path: Path to the file

        Returns:
            dict: Lower-cased keys mapped to string values

        Raises:
            ValueError: If the file does not exist
        """
        path = Path(path)
        if not path.is_file():
            raise ValueError(f"Experiment file not found: {path}")
        values = dotenv_values(path)
        return {
            key.strip().lower().replace('-', '_'): value
            for key, value in values.items()
            if value is not None
        }

    @classmethod
    def switch_mode(cls, mode: str) -> 'Config':
        """
        Switch to a different environment mode.

        Args:
            mode: New mode ('development', 'test', 'production')

        Returns:
            Config: New Config instance with switched mode
        """
        if mode not in cls.MODES:
            raise ValueError(
                f"Invalid mode '{mode}'. Must be one of: {', '.join(cls.MODES.keys())}"
            )
        return cls(mode=mode)

    def __repr__(self) -> str:
        """String representation of config."""
        return (
            f"Config(mode={self.mode}, "
            f"debug={self.is_debug()}, "
            f"log_level={self.get_log_level()})"
        )

    def get_all_settings(self) -> dict:
        """Get all current settings."""
        settings = {
            'mode': self.mode,
            'environment': self.get_environment(),
            'debug': self.is_debug(),
            'log_level': self.get_log_level(),
        }
        settings.update(self.experiment_defaults())
        return settings
