"""
Configuration Management Module

Handles loading and validation of experiment configuration files (JSON or YAML)
for the policy-gradient laboratory.
"""

import os
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy import stats

from src.models import ConfigError, MdpKind, PolicyVariant


logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "PGLAB_THREADS"
POISSON_TAIL_TOL = 1e-8

DEFAULT_BUDGETS = {
    "gridworld": {"direct": 50_000, "softmax": 50_000, "custom": 50_000},
    "car_rental": {"direct": 200_000, "softmax": 50_000, "custom": 50_000},
    "random_mdp": {"direct": 5_000, "softmax": 5_000, "custom": 5_000},
}

# eta = scale * (1 - gamma) for the benchmark environments
DEFAULT_STEP_SCALES = {
    "gridworld": {"softmax": 20.0, "custom": 2.0},
    "car_rental": {"softmax": 2.0},
}


class LoggingConfig(BaseModel):
    """Logging configuration settings."""
    level: str = Field(default="INFO")
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file: Optional[str] = None

    @field_validator('level')
    @classmethod
    def validate_log_level(cls, v):
        """Validate logging level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        if v.upper() not in valid_levels:
            raise ValueError(f"Invalid log level: {v}. Valid levels: {valid_levels}")
        return v.upper()


class OutputConfig(BaseModel):
    """Output configuration settings."""
    formats: List[str] = Field(default=["csv", "json"])
    directory: Optional[str] = Field(
        default=None,
        description="Run directory. Defaults to ./runs/<timestamp> when unset."
    )
    emit_plots: bool = Field(default=True, description="Write SVG overlay plots")
    timestamp_format: str = "%Y%m%d_%H%M%S"

    @field_validator('formats')
    @classmethod
    def validate_formats(cls, v):
        """Validate supported output formats."""
        supported_formats = {"csv", "json", "excel"}
        invalid_formats = set(v) - supported_formats
        if invalid_formats:
            raise ValueError(f"Unsupported formats: {invalid_formats}. Supported: {supported_formats}")
        return v

    @field_validator('directory')
    @classmethod
    def validate_directory(cls, v):
        """Ensure directory path is valid."""
        if v is not None and not v:
            raise ValueError("Directory cannot be empty")
        return v


class CarRentalConfig(BaseModel):
    """Two-location car rental with Poisson requests and returns."""
    capacity: int = Field(default=5, ge=1, description="Cars per location")
    max_move: int = Field(default=3, ge=0, description="Most cars moved overnight")
    excess_move_penalty: float = Field(default=30.0, ge=0.0, description="Charge per car that could not be moved")
    rental_reward: float = Field(default=10.0, description="Credit per car rented")
    move_cost: float = Field(default=2.0, ge=0.0, description="Cost per car actually moved")
    request_rates: Tuple[float, float] = Field(default=(3.0, 4.0))
    return_rates: Tuple[float, float] = Field(default=(3.0, 2.0))
    poisson_truncation: int = Field(default=20, ge=0, description="Largest enumerated event count per stream")

    @field_validator('request_rates', 'return_rates')
    @classmethod
    def validate_rates(cls, v):
        """Poisson means must be non-negative."""
        if any(rate < 0 for rate in v):
            raise ValueError(f"Poisson rates must be non-negative, got {v}")
        return v

    @model_validator(mode='after')
    def validate_truncation(self) -> "CarRentalConfig":
        """The truncated Poisson tail must stay below tolerance for every stream."""
        if self.poisson_truncation < self.capacity:
            raise ValueError(
                f"poisson_truncation ({self.poisson_truncation}) must be at least capacity ({self.capacity})"
            )
        worst_rate = max(self.request_rates + self.return_rates)
        if worst_rate > 0:
            tail = float(stats.poisson.sf(self.poisson_truncation, worst_rate))
            if tail >= POISSON_TAIL_TOL:
                raise ValueError(
                    f"poisson_truncation={self.poisson_truncation} leaves tail mass {tail:.3e} "
                    f"at rate {worst_rate}; needs < {POISSON_TAIL_TOL:g}"
                )
        return self

    @property
    def n_states(self) -> int:
        return (self.capacity + 1) ** 2

    @property
    def n_actions(self) -> int:
        return 2 * self.max_move + 1


class GridworldConfig(BaseModel):
    """Rectangular gridworld with a south-east wind and terminal cells."""
    width: int = Field(default=4, ge=1)
    height: int = Field(default=4, ge=1)
    wind_epsilon: float = Field(default=0.1, ge=0.0, le=0.5, description="Probability of each forced move")
    step_reward: float = Field(default=-1.0, description="Reward of every transition out of a non-terminal cell")
    terminal_cells: List[int] = Field(default=[0, 15], description="0-based row-major cell indices")

    @field_validator('terminal_cells')
    @classmethod
    def validate_terminals(cls, v):
        """Terminal cells must be non-empty and distinct."""
        if not v:
            raise ValueError("terminal_cells cannot be empty")
        if len(set(v)) != len(v):
            raise ValueError(f"terminal_cells must be distinct, got {v}")
        return sorted(v)

    @model_validator(mode='after')
    def validate_cells_on_grid(self) -> "GridworldConfig":
        """Terminal cells must lie on the grid and leave at least one transient cell."""
        n_cells = self.width * self.height
        off_grid = [c for c in self.terminal_cells if not 0 <= c < n_cells]
        if off_grid:
            raise ValueError(f"terminal cells {off_grid} are outside a {self.width}x{self.height} grid")
        if len(self.terminal_cells) >= n_cells:
            raise ValueError("gridworld needs at least one non-terminal cell")
        return self

    @property
    def n_cells(self) -> int:
        return self.width * self.height


class RandomMdpSpec(BaseModel):
    """Seeded random MDP used for property tests and small sweeps."""
    n_states: int = Field(default=6, ge=2)
    n_actions: int = Field(default=3, ge=1)
    kind: MdpKind = Field(default=MdpKind.CONTINUING)
    seed: int = Field(default=0, ge=0)


class EnvironmentConfig(BaseModel):
    """Which benchmark to build, plus its parameters."""
    kind: Literal["car_rental", "gridworld", "random_mdp"] = "gridworld"
    car_rental: CarRentalConfig = Field(default_factory=CarRentalConfig)
    gridworld: GridworldConfig = Field(default_factory=GridworldConfig)
    random_mdp: RandomMdpSpec = Field(default_factory=RandomMdpSpec)
    d0: Optional[List[float]] = Field(
        default=None,
        description="Initial distribution override; uniform over transient states when unset"
    )


class SamplingConfig(BaseModel):
    """Buffer-sampling study settings."""
    capacities: List[int] = Field(default=[100, 1_000, 10_000, 100_000])
    horizon_cap: int = Field(default=1_000, ge=1, description="Restart period of continuing trajectories")
    max_episode_steps: int = Field(default=1_000_000, ge=1)

    @field_validator('capacities')
    @classmethod
    def validate_capacities(cls, v):
        """Capacities must be positive and strictly increasing."""
        if not v:
            raise ValueError("capacities cannot be empty")
        if any(c <= 0 for c in v):
            raise ValueError(f"capacities must be positive, got {v}")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"capacities must be strictly increasing, got {v}")
        return v


class BoundsSuiteConfig(BaseModel):
    """Constants estimation and bound certification settings."""
    gammas: List[float] = Field(default=[0.3, 0.5, 0.7, 0.9, 0.99])
    n_random_policies: int = Field(default=100, ge=2)
    include_training_iterates: bool = True
    training_iters: int = Field(default=200, ge=1, description="Iterations of the probe training run per gamma")
    alpha_target: float = Field(default=0.9, gt=0.0, lt=1.0)

    @field_validator('gammas')
    @classmethod
    def validate_gammas(cls, v):
        """Discount factors must lie in (0, 1)."""
        return _check_gammas(v)


def _check_gammas(v: List[float]) -> List[float]:
    if not v:
        raise ValueError("gammas cannot be empty")
    bad = [g for g in v if not 0.0 < g < 1.0]
    if bad:
        raise ValueError(f"gammas must lie in (0, 1), got {bad}")
    return v


class ExperimentConfig(BaseModel):
    """Main experiment configuration."""
    name: str = "experiment"
    environment: EnvironmentConfig = Field(default_factory=EnvironmentConfig)
    gammas: List[float] = Field(default=[0.9, 0.7, 0.5, 0.3])
    parameterizations: List[PolicyVariant] = Field(default=[PolicyVariant.SOFTMAX])
    run_pairs: bool = Field(default=True, description="Train both biased and unbiased variants")
    seeds: List[int] = Field(default=[0])
    budgets: Dict[str, int] = Field(
        default_factory=dict,
        description="max_iters keyed by '<parameterization>@<gamma>' or '<parameterization>'"
    )
    step_sizes: Dict[str, float] = Field(
        default_factory=dict,
        description="eta keyed like budgets; built-in defaults apply when absent"
    )
    stop_grad_norm: float = Field(default=1e-8, ge=0.0)
    checkpoint_every: int = Field(default=1_000, ge=0, description="0 disables theta checkpoints")
    custom_theta0: float = Field(default=0.0, description="Starting parameter of the diagonal-wind family")
    value_iteration_tol: float = Field(default=1e-10, gt=0.0)
    threads: int = Field(default=1, ge=1)
    output: OutputConfig = Field(default_factory=OutputConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    bounds: BoundsSuiteConfig = Field(default_factory=BoundsSuiteConfig)

    @field_validator('gammas')
    @classmethod
    def validate_gammas(cls, v):
        """Discount factors must lie in (0, 1)."""
        return _check_gammas(v)

    @field_validator('parameterizations')
    @classmethod
    def validate_parameterizations(cls, v):
        """At least one distinct parameterization is required."""
        if not v:
            raise ValueError("parameterizations cannot be empty")
        if len(set(v)) != len(v):
            raise ValueError(f"parameterizations must be distinct, got {[p.value for p in v]}")
        return v

    @field_validator('seeds')
    @classmethod
    def validate_seeds(cls, v):
        """Seeds must be non-negative."""
        if not v:
            raise ValueError("seeds cannot be empty")
        if any(s < 0 for s in v):
            raise ValueError(f"seeds must be non-negative, got {v}")
        return v

    @field_validator('budgets')
    @classmethod
    def validate_budgets(cls, v):
        """Budgets must be positive."""
        bad = {k: n for k, n in v.items() if n < 1}
        if bad:
            raise ValueError(f"budgets must be positive, got {bad}")
        return v

    @field_validator('step_sizes')
    @classmethod
    def validate_step_sizes(cls, v):
        """Step sizes must be positive."""
        bad = {k: eta for k, eta in v.items() if not eta > 0}
        if bad:
            raise ValueError(f"step sizes must be positive, got {bad}")
        return v

    def _lookup(self, table: Dict[str, Any], variant: PolicyVariant, gamma: float) -> Optional[Any]:
        for key in (f"{variant.value}@{gamma}", f"{variant.value}@{gamma:g}", variant.value):
            if key in table:
                return table[key]
        return None

    def budget_for(self, variant: PolicyVariant, gamma: float) -> int:
        """max_iters for one (parameterization, gamma) cell."""
        budget = self._lookup(self.budgets, variant, gamma)
        return budget if budget is not None else DEFAULT_BUDGETS[self.environment.kind][variant.value]

    def step_size_for(self, variant: PolicyVariant, gamma: float) -> Optional[float]:
        """
        eta for one cell.

        A configured step size wins; otherwise the benchmark environments use
        scale * (1 - gamma) from DEFAULT_STEP_SCALES, and None leaves the
        choice to the optimizer default.
        """
        eta = self._lookup(self.step_sizes, variant, gamma)
        if eta is not None:
            return eta
        scale = DEFAULT_STEP_SCALES.get(self.environment.kind, {}).get(variant.value)
        return scale * (1.0 - gamma) if scale is not None else None


def _error_pointer(error: ValidationError) -> Tuple[str, str]:
    first = error.errors()[0]
    pointer = "/" + "/".join(str(part) for part in first["loc"])
    return pointer, first["msg"]


def config_from_dict(config_data: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a configuration mapping.

    Raises:
        ConfigError: With the JSON pointer of the first offending field
    """
    try:
        return ExperimentConfig(**config_data)
    except ValidationError as e:
        pointer, message = _error_pointer(e)
        raise ConfigError(f"Invalid configuration at {pointer}: {message}", pointer=pointer) from e


class ConfigManager:
    """
    Configuration manager for loading and validating experiment configuration files.
    """

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        """
        Initialize configuration manager.

        Args:
            config_path: Path to configuration file. If None, uses default location.
        """
        self.config_path = self._resolve_config_path(config_path)
        self._config: Optional[ExperimentConfig] = None

    def _resolve_config_path(self, config_path: Optional[Union[str, Path]]) -> Path:
        if config_path is None:
            # Default to config/experiment.yaml relative to project root
            current_dir = Path(__file__).parent.parent
            config_path = current_dir / "config" / "experiment.yaml"

        return Path(config_path)

    def load_config(self) -> ExperimentConfig:
        """
        Load and validate configuration from a JSON or YAML file.

        Returns:
            Validated ExperimentConfig object

        Raises:
            FileNotFoundError: If config file doesn't exist
            ConfigError: If parsing or validation fails
        """
        if not self.config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")

        try:
            with open(self.config_path, 'r', encoding='utf-8') as file:
                config_data = yaml.safe_load(file)
        except yaml.YAMLError as e:
            error_msg = f"Error parsing configuration: {e}"
            logger.error(error_msg)
            raise ConfigError(error_msg, pointer="") from e

        if config_data is None:
            config_data = {}
        if not isinstance(config_data, dict):
            raise ConfigError("Configuration document must be a mapping", pointer="")

        try:
            self._config = config_from_dict(config_data)
        except ConfigError as e:
            logger.error(f"Error loading configuration: {e}")
            raise

        logger.info(f"Configuration loaded successfully from {self.config_path}")
        return self._config

    def get_config(self) -> ExperimentConfig:
        """
        Get the current configuration. Loads if not already loaded.

        Returns:
            ExperimentConfig object
        """
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def create_default_config(self, output_path: Optional[Union[str, Path]] = None) -> Path:
        """
        Create a default configuration file.

        Args:
            output_path: Path where to create the config file

        Returns:
            Path to created config file
        """
        if output_path is None:
            output_path = self.config_path

        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)

        config_dict = ExperimentConfig().model_dump(mode="json")
        yaml_content = self._generate_commented_yaml(config_dict)

        with open(output_path, 'w', encoding='utf-8') as file:
            file.write(yaml_content)

        logger.info(f"Default configuration created at {output_path}")
        return output_path

    def _generate_commented_yaml(self, config_dict: Dict[str, Any]) -> str:
        """
        Generate YAML with a comment above every section.

        Args:
            config_dict: Configuration dictionary

        Returns:
            YAML string with comments
        """
        sections = [
            ("Policy-gradient experiment configuration", ["name"]),
            ("Environment (kind: car_rental | gridworld | random_mdp; d0 null = uniform over transient states)",
             ["environment"]),
            ("Discount factors and policy parameterizations (direct | softmax | custom)",
             ["gammas", "parameterizations", "run_pairs", "seeds"]),
            ("Iteration budgets and step sizes keyed by '<parameterization>@<gamma>' or '<parameterization>'",
             ["budgets", "step_sizes", "stop_grad_norm", "checkpoint_every", "custom_theta0", "value_iteration_tol"]),
            (f"Worker threads (overridden by the {THREADS_ENV_VAR} environment variable)", ["threads"]),
            ("Output Configuration (directory null = ./runs/<timestamp>)", ["output"]),
            ("Logging Configuration", ["logging"]),
            ("Buffer sampling study", ["sampling"]),
            ("Bound certification suite", ["bounds"]),
        ]

        yaml_lines: List[str] = []
        for comment, keys in sections:
            yaml_lines.append(f"# {comment}")
            chunk = {key: config_dict[key] for key in keys}
            yaml_lines.append(yaml.safe_dump(chunk, sort_keys=False, default_flow_style=None).rstrip())
            yaml_lines.append("")

        return '\n'.join(yaml_lines)

    def validate_config(self) -> bool:
        """
        Validate the current configuration.

        Returns:
            True if configuration is valid, False otherwise
        """
        try:
            config = self.get_config()
        except (FileNotFoundError, ConfigError) as e:
            logger.error(f"Configuration validation failed: {e}")
            return False

        if config.output.directory:
            output_dir = Path(config.output.directory)
            try:
                output_dir.mkdir(parents=True, exist_ok=True)
                test_file = output_dir / ".test_write"
                test_file.touch()
                test_file.unlink()
            except (OSError, PermissionError) as e:
                logger.error(f"Output directory is not writable: {e}")
                return False

        logger.info("Configuration validation successful")
        return True


def resolve_threads(config: ExperimentConfig) -> int:
    """
    Worker pool width: PGLAB_THREADS (environment or .env) over the configured value.

    Raises:
        ConfigError: If the environment variable is not a positive integer
    """
    load_dotenv()
    raw = os.getenv(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return config.threads
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}", pointer="/threads")
    logger.debug(f"Using {threads} worker threads from {THREADS_ENV_VAR}")
    return threads
