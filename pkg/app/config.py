from pydantic_settings import BaseSettings, SettingsConfigDict
import math


class Settings(BaseSettings):
    # App Configuration
    app_name: str = "Pan-Private Uniformity Testing"
    version: str = "1.0.0"
    log_level: str = "INFO"

    # Testers
    # c_d in the effective distance c_d * alpha * sqrt(n / k) used by PanTest
    partition_distance_constant: float = 1.0 / (477.0 * math.sqrt(10.0))
    poisson_margin_sigmas: float = 6.0
    poisson_margin_offset: float = 10.0

    # Privacy audit
    audit_smoothing: float = 1.0
    audit_bootstrap_resamples: int = 200
    audit_min_observations: int = 100
    audit_min_trials: int = 10_000
    audit_bin_width_factor: float = 0.25  # times the Laplace scale 1/epsilon
    audit_confidence: float = 0.99

    # Experiments
    search_start_m: int = 16
    search_m_cap: int = 10_000_000
    search_refine_factor: float = 1.1
    target_separation: float = 0.125
    power_trials: int = 500
    min_power_trials: int = 100
    wilson_confidence: float = 0.95

    # Model bridge
    bridge_min_trials: int = 1000
    exact_enumeration_limit: int = 64

    # Execution
    threads: int = 1
    results_dir: str = "results"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="PANPRIV_",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()

# Tester registry keys
TESTER_IDS = ["simple", "pan", "pan-n2", "chi2", "constant"]

# Stream sources accepted by the CLI
INSTANCE_SOURCES = ["uniform", "exact-uniform", "paninski-far", "point-mass", "far", "file"]

# Mechanisms the audit command understands
AUDIT_MECHANISMS = ["randomized-response", "simple-pan-state"]

# Bundled toy protocols for the model bridge
TOY_PROTOCOLS = ["counter", "randomized-response", "adaptive-chooser"]

CLI_COMMANDS = [
    "test", "power", "complexity", "curve", "partition-exp", "audit", "bridge-demo"
]

# Largest supported domain; keeps k^2 / (eps^2 m) far from overflow
MAX_DOMAIN_SIZE = 2 ** 20

UINT64_MAX = 2 ** 64 - 1
