"""
Feature vectors for the three models.

Every model sees the same 14 telemetry fields in the same order; each model
uses a fixed subset of them. Values are min/max normalized per platform.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from model.schemas import NORMSPEC_SCHEMA_VERSION, FeatureBounds, NormSpecFile

from .errors import ConfigError
from .simenv import BW_UNITS, Grant, ServerSpec, ServiceTelemetry, Snapshot

logger = logging.getLogger(__name__)

FEATURE_ORDER = (
    "ipc",
    "cache_misses_per_s",
    "mbl",
    "cpu_usage_sum",
    "virt_mem",
    "res_mem",
    "allocated_cores",
    "allocated_cache",
    "core_frequency",
    "expected_cores",
    "expected_cache",
    "neighbor_cores",
    "neighbor_cache",
    "neighbor_mbl",
)

MODEL_FIELDS = {
    "A": tuple(f for f in FEATURE_ORDER if not f.startswith("expected_")),
    "B": FEATURE_ORDER,
    "C": (
        "ipc",
        "cache_misses_per_s",
        "mbl",
        "cpu_usage_sum",
        "res_mem",
        "allocated_cores",
        "allocated_cache",
        "core_frequency",
    ),
}

MAX_IPC = 3.0
MAX_MISSES_PER_S = 5e7
MAX_MEM_MB = 16384.0


def normalize(raw, spec_entry: tuple[float, float]):
    lo, hi = spec_entry
    if hi <= lo:
        raise ConfigError(f"normalization bounds need max > min, got ({lo}, {hi})")
    out = np.clip((np.asarray(raw, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def denormalize(value, spec_entry: tuple[float, float]):
    lo, hi = spec_entry
    out = lo + np.asarray(value, dtype=float) * (hi - lo)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class NormalizationSpec:
    platform_id: str
    bounds: Mapping[str, tuple[float, float]]
    version: int = 1

    def __post_init__(self):
        missing = [f for f in FEATURE_ORDER if f not in self.bounds]
        if missing:
            raise ConfigError(f"{self.platform_id}: normalization bounds missing for {', '.join(missing)}")
        for name, (lo, hi) in self.bounds.items():
            if hi <= lo:
                raise ConfigError(f"{self.platform_id}: feature {name} has max {hi} <= min {lo}")

    @property
    def spec_id(self) -> str:
        return f"{self.platform_id}-v{self.version}"

    @classmethod
    def for_server(cls, server: ServerSpec) -> "NormalizationSpec":
        """Bounds from the attainable extremes of the simulator on this platform."""
        return cls(
            platform_id=server.platform_id,
            bounds={
                "ipc": (0.0, MAX_IPC),
                "cache_misses_per_s": (0.0, MAX_MISSES_PER_S),
                "mbl": (0.0, server.mem_bw_gbps),
                "cpu_usage_sum": (0.0, 100.0 * server.n_cores),
                "virt_mem": (0.0, MAX_MEM_MB),
                "res_mem": (0.0, MAX_MEM_MB),
                "allocated_cores": (0.0, float(server.n_cores)),
                "allocated_cache": (0.0, server.cache_mb),
                "core_frequency": (0.9 * server.core_ghz, 1.1 * server.core_ghz),
                "expected_cores": (0.0, float(server.n_cores)),
                "expected_cache": (0.0, server.cache_mb),
                "neighbor_cores": (0.0, float(server.n_cores)),
                "neighbor_cache": (0.0, server.cache_mb),
                "neighbor_mbl": (0.0, server.mem_bw_gbps),
            },
        )

    def save(self, path: str) -> None:
        doc = NormSpecFile(
            platform_id=self.platform_id,
            version=self.version,
            features={k: FeatureBounds(min=lo, max=hi) for k, (lo, hi) in self.bounds.items()},
        )
        with open(path, "w") as f:
            yaml.safe_dump(doc.model_dump(), f, sort_keys=False)

    @classmethod
    def load(cls, path: str) -> "NormalizationSpec":
        try:
            with open(path) as f:
                raw = yaml.safe_load(f)
            doc = NormSpecFile.model_validate(raw)
        except (OSError, yaml.YAMLError, ValidationError) as e:
            raise ConfigError(f"cannot read normalization file {path}: {e}")
        if doc.schema_version != NORMSPEC_SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema version {doc.schema_version}, expected {NORMSPEC_SCHEMA_VERSION}")
        return cls(
            platform_id=doc.platform_id,
            version=doc.version,
            bounds={k: (b.min, b.max) for k, b in doc.features.items()},
        )

    def normalize(self, raw: Mapping[str, float], model: str) -> np.ndarray:
        return np.array([normalize(raw[name], self.bounds[name]) for name in MODEL_FIELDS[model]], dtype=float)

    def normalize_columns(self, raw: Mapping[str, np.ndarray], model: str) -> np.ndarray:
        """Stack raw feature columns into a normalized (rows, fields) matrix for ``model``."""
        return np.column_stack([normalize(raw[name], self.bounds[name]) for name in MODEL_FIELDS[model]])


def raw_features(telemetry: ServiceTelemetry, server: ServerSpec, expected: Optional[Grant] = None) -> dict[str, float]:
    raw = {name: telemetry.raw(name) for name in FEATURE_ORDER if not name.startswith("expected_")}
    if expected is not None:
        raw["expected_cores"] = float(expected.cores)
        raw["expected_cache"] = expected.ways * server.way_size_mb
    return raw


def extract(
    snapshot: Snapshot,
    service_id: str,
    model: str,
    norm: NormalizationSpec,
    server: ServerSpec,
    expected: Optional[Grant] = None,
) -> np.ndarray:
    if model not in MODEL_FIELDS:
        raise ValueError(f"unknown model {model}")
    if (expected is not None) != (model == "B"):
        raise ValueError("an expected allocation is given exactly when extracting for model B")
    return extract_telemetry(snapshot[service_id], model, norm, server, expected)


def extract_telemetry(
    telemetry: ServiceTelemetry,
    model: str,
    norm: NormalizationSpec,
    server: ServerSpec,
    expected: Optional[Grant] = None,
) -> np.ndarray:
    return norm.normalize(raw_features(telemetry, server, expected), model)


def restore(vector: np.ndarray, model: str, norm: NormalizationSpec) -> dict[str, float]:
    """Raw values back from a normalized projection."""
    return {name: float(denormalize(v, norm.bounds[name])) for name, v in zip(MODEL_FIELDS[model], vector)}


def unit_scale(server: ServerSpec) -> np.ndarray:
    """Platform totals used to scale the five OAA/RCliff outputs into [0, 1]."""
    return np.array([server.n_cores, server.n_llc_ways, BW_UNITS, server.n_cores, server.n_llc_ways], dtype=float)
