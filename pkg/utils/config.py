import os
from dataclasses import dataclass, fields, replace
from typing import Any

from dotenv import dotenv_values

from .errors import ConfigError

ENV_FILE = "dev.env"


@dataclass(frozen=True)
class Settings:
    # Clock
    tick_ms: int = 100
    cutoff_ms: int = 180_000
    sustain_ms: int = 1_000
    heuristic_interval_ms: int = 500
    bo_interval_ms: int = 2_000
    seed: int = 0
    # Paths
    log_level: str = "INFO"
    model_dir: str = "assets/models"
    results_dir: str = "results"
    runs_db: str = "sqlite:///runs.db"
    # Model-A / Model-B
    mlp_lr: float = 1e-3
    mlp_epochs: int = 40
    mlp_batch_size: int = 256
    dropout_rate: float = 0.3
    # Model-C
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.001
    noise_mu: float = 0.0
    noise_sigma: float = 0.1
    noise_decay: float = 0.99
    pool_capacity: int = 100_000
    batch_size: int = 64
    episodes: int = 300
    episode_steps: int = 200
    # Central framework
    allowable_slowdown: float = 1.0
    share_efficiency: float = 0.5
    allocate_at: str = "oaa"
    upper_policy: str = "allow"
    upper_slowdown_bound: float = 2.0
    guard_reclaim: bool = True
    # Baselines
    ei_threshold: float = 0.01
    bo_max_samples: int = 40
    bo_initial_samples: int = 3
    bo_candidates: int = 256
    heuristic_priority: str = "cores,ways,bw"

    def override(self, **changes: Any) -> "Settings":
        """Return a copy with the non-None entries of ``changes`` applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _parse(raw: str, kind: type, key: str) -> Any:
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"Invalid value for {key}: {raw!r}")


def load_settings(path: str = ENV_FILE) -> Settings:
    """
    Read settings from a dotenv file; keys are the upper-cased field names.
    A missing file yields the built-in defaults.
    """
    config = dotenv_values(path) if os.path.exists(path) else {}
    values = {}
    for f in fields(Settings):
        raw = config.get(f.name.upper())
        if raw is None or raw == "":
            continue
        values[f.name] = _parse(raw, type(f.default), f.name.upper())
    settings = Settings(**values)
    if settings.allocate_at not in ("oaa", "rcliff"):
        raise ConfigError(f"ALLOCATE_AT must be oaa or rcliff, got {settings.allocate_at}")
    if settings.upper_policy not in ("allow", "deny", "threshold"):
        raise ConfigError(f"UPPER_POLICY must be allow, deny or threshold, got {settings.upper_policy}")
    if not (0.0 <= settings.gamma <= 1.0 and 0.0 <= settings.tau <= 1.0):
        raise ConfigError("GAMMA and TAU must lie in [0, 1]")
    if settings.tick_ms <= 0:
        raise ConfigError("TICK_MS must be positive")
    return settings
