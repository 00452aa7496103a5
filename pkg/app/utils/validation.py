from typing import Any, Dict, List, Mapping, Optional
from pathlib import Path
import logging

from dotenv import dotenv_values
from pydantic import ValidationError

from app.config import (
    AUDIT_MECHANISMS, CLI_COMMANDS, INSTANCE_SOURCES, TESTER_IDS, TOY_PROTOCOLS, settings
)
from app.models.experiment import RunConfig
from app.utils.exceptions import ConfigError

# Configure logging
logger = logging.getLogger(__name__)

COMMON_KEYS = {"seed", "threads", "output"}

COMMAND_KEYS: Dict[str, set] = {
    "test": {
        "tester", "instance", "k", "alpha", "epsilon", "m", "noiseless", "repetitions",
        "decision_fraction", "distance_constant", "samples_file", "instance_file", "point_index",
    },
    "power": {
        "tester", "instance", "k", "alpha", "epsilon", "m", "trials", "noiseless",
        "distance_constant", "samples_file", "instance_file", "point_index",
    },
    "complexity": {
        "tester", "instance", "k", "alpha", "epsilon", "trials", "noiseless", "target_separation",
        "m_cap", "distance_constant", "samples_file", "instance_file", "point_index", "csv",
    },
    "curve": {
        "tester", "k_values", "alpha", "epsilon", "trials", "target_separation", "m_cap",
        "distance_constant", "csv",
    },
    "partition-exp": {"k", "n", "alpha", "trials"},
    "audit": {
        "mechanism", "epsilon", "claimed_epsilon", "trials", "confidence", "stream_a", "stream_b",
        "time", "k", "noiseless",
    },
    "bridge-demo": {"protocol", "epsilon", "trials", "stream"},
}

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "test": {
        "tester": "simple", "instance": "uniform", "alpha": 0.5, "epsilon": 1.0, "noiseless": False,
        "repetitions": 1, "decision_fraction": 0.5, "point_index": 0,
    },
    "power": {
        "tester": "simple", "instance": "far", "alpha": 0.5, "epsilon": 1.0,
        "trials": settings.power_trials, "noiseless": False, "point_index": 0,
    },
    "complexity": {
        "tester": "simple", "instance": "far", "alpha": 0.5, "epsilon": 1.0,
        "trials": settings.power_trials, "noiseless": False,
        "target_separation": settings.target_separation, "m_cap": settings.search_m_cap, "point_index": 0,
    },
    "curve": {
        "tester": "simple", "k_values": [64, 256, 1024], "alpha": 0.5, "epsilon": 1.0,
        "trials": settings.power_trials, "target_separation": settings.target_separation,
        "m_cap": settings.search_m_cap,
    },
    "partition-exp": {"k": 64, "n": 8, "alpha": 0.45, "trials": 100_000},
    "audit": {
        "mechanism": "randomized-response", "epsilon": 1.0, "trials": 10 * settings.audit_min_trials,
        "confidence": settings.audit_confidence, "stream_a": [0], "stream_b": [1], "noiseless": False,
    },
    "bridge-demo": {"protocol": "randomized-response", "epsilon": 1.0, "trials": 10_000, "stream": [1, 0, 1, 1]},
}

REQUIRED_KEYS: Dict[str, set] = {
    "test": {"k", "m"},
    "power": {"k", "m"},
    "complexity": {"k"},
}

LIST_KEYS = {"k_values", "stream_a", "stream_b", "stream"}

# Experiment commands persist by default; the rest only when asked
DEFAULT_OUTPUTS = {
    "power": "power.jsonl",
    "complexity": "complexity.jsonl",
    "curve": "curve.jsonl",
    "partition-exp": "partition.jsonl",
}


class RunConfigValidator:
    """Parses, merges and validates key=value run configuration for CLI commands"""

    @staticmethod
    def normalize_key(key: str) -> str:
        return key.strip().lower().replace("-", "_")

    @staticmethod
    def parse_config_file(path: str) -> Dict[str, Any]:
        """Read a plain key=value file"""
        file_path = Path(path)
        if not file_path.is_file():
            raise ConfigError(f"Config file not found: {path}", details={"path": path})
        values = dotenv_values(file_path)
        parsed = {
            RunConfigValidator.normalize_key(key): value
            for key, value in values.items()
            if value is not None and value != ""
        }
        logger.debug(f"Loaded {len(parsed)} keys from {path}")
        return parsed

    @staticmethod
    def coerce_list(key: str, value: Any) -> List[int]:
        """Lists arrive as comma-separated text from files and flags"""
        if isinstance(value, (list, tuple)):
            return [int(v) for v in value]
        try:
            return [int(token) for token in str(value).replace(" ", "").split(",") if token]
        except ValueError:
            raise ConfigError(
                f"{key} must be a comma-separated list of integers, got {value!r}",
                details={"key": key},
            ) from None

    @staticmethod
    def validate_choice(key: str, value: Optional[str], choices: List[str]) -> None:
        if value is not None and value not in choices:
            raise ConfigError(
                f"Invalid {key} '{value}'. Must be one of: {', '.join(choices)}",
                details={"key": key, "value": value},
            )

    @staticmethod
    def merge(command: str, file_values: Mapping[str, Any], flag_values: Mapping[str, Any]) -> Dict[str, Any]:
        """Flags override file keys, which override built-in defaults"""
        merged: Dict[str, Any] = dict(COMMAND_DEFAULTS.get(command, {}))
        merged.update(file_values)
        merged.update({k: v for k, v in flag_values.items() if v is not None})
        return merged

    @staticmethod
    def validate(command: str, values: Mapping[str, Any]) -> RunConfig:
        """Reject unknown keys and out-of-range values before any computation"""
        if command not in CLI_COMMANDS:
            raise ConfigError(f"Unknown command: {command}")
        allowed = COMMAND_KEYS[command] | COMMON_KEYS
        values = {RunConfigValidator.normalize_key(k): v for k, v in values.items()}
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(
                f"Unknown keys for '{command}': {', '.join(unknown)}",
                details={"unknown": unknown, "allowed": sorted(allowed)},
            )
        missing = sorted(REQUIRED_KEYS.get(command, set()) - set(values))
        if missing:
            raise ConfigError(f"Missing required keys for '{command}': {', '.join(missing)}")

        for key in LIST_KEYS & set(values):
            values[key] = RunConfigValidator.coerce_list(key, values[key])

        try:
            config = RunConfig(**values)
        except ValidationError as e:
            problems = [
                {"key": ".".join(str(part) for part in err["loc"]), "message": err["msg"]}
                for err in e.errors()
            ]
            first = problems[0]
            raise ConfigError(f"Invalid value for {first['key']}: {first['message']}", details=problems) from None

        RunConfigValidator.validate_choice("tester", config.tester, TESTER_IDS)
        RunConfigValidator.validate_choice("instance", config.instance, INSTANCE_SOURCES)
        RunConfigValidator.validate_choice("mechanism", config.mechanism, AUDIT_MECHANISMS)
        RunConfigValidator.validate_choice("protocol", config.protocol, TOY_PROTOCOLS)
        if config.instance == "file" and not config.samples_file:
            raise ConfigError("instance 'file' needs samples_file")
        if config.n is not None and config.k is not None and config.n > config.k:
            raise ConfigError(f"n={config.n} exceeds k={config.k}")
        return config

    @staticmethod
    def default_output(command: str) -> Optional[str]:
        name = DEFAULT_OUTPUTS.get(command)
        return str(Path(settings.results_dir) / name) if name else None
