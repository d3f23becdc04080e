from typing import Literal, Optional

from sqlmodel import SQLModel, Field

SCENARIO_SCHEMA_VERSION = 1
NORMSPEC_SCHEMA_VERSION = 1


class FeatureBounds(SQLModel):
    min: float
    max: float


class NormSpecFile(SQLModel):
    schema_version: int = NORMSPEC_SCHEMA_VERSION
    platform_id: str
    version: int = 1
    features: dict[str, FeatureBounds]


class ServerOverride(SQLModel):
    n_cores: int
    n_llc_ways: int
    way_size_mb: float = 2.25
    core_ghz: float = 2.3
    mem_bw_gbps: float = 76.8


class SurfaceOverride(SQLModel):
    base_latency_ms: Optional[float] = None
    capacity_scale: Optional[float] = None
    core_knee: Optional[float] = None
    core_tail: Optional[float] = None
    cache_knee_mb: Optional[float] = None
    cache_floor: Optional[float] = None
    cliff_sharpness: Optional[float] = None
    bw_weight: Optional[float] = None


class ServiceEntry(SQLModel):
    id: str
    kind: Literal["LC", "BE"] = "LC"
    preset: str
    arrival_ms: int = 0
    qos_target_ms: Optional[float] = None
    # (start_ms, load fraction) pairs, piecewise constant
    load_schedule: list[tuple[int, float]] = Field(default_factory=lambda: [(0, 0.5)])
    surface: Optional[SurfaceOverride] = None


class ScenarioFile(SQLModel):
    schema_version: int = SCENARIO_SCHEMA_VERSION
    name: str
    platform: str = "server1"
    server: Optional[ServerOverride] = None
    seed: int = 0
    duration_ms: int = 180_000
    services: list[ServiceEntry]
